//! Per-op gradient checks against central differences (64-bit, 20 random
//! instances each) and properties of the stable softmax and cross-entropy.

use hidepet::numcore::{cross_entropy, finite_diff_check, softmax_rows, Tape, Var};
use hidepet::{Result, SplitRng, Tensor};
use proptest::prelude::*;

const INSTANCES: u64 = 20;
const EPS: f64 = 3e-5;
const TOL: f64 = 1e-6;

fn randn(rng: &mut SplitRng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::randn(&[r, c], 1.0, rng)
}

/// Reduces a node to a scalar through a fixed random weighting so that every
/// output entry carries a distinct, non-trivial upstream gradient.
fn weighted(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// Builds inputs for one instance and the op under test.
type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>, (usize, usize));

fn check_op(name: &str, make: impl Fn(&mut SplitRng) -> Case) {
    let mut worst = 0.0f64;
    for k in 0..INSTANCES {
        let mut rng = SplitRng::new(k).fork(name);
        let (inputs, op, (r, c)) = make(&mut rng);
        let w = randn(&mut rng, r, c);
        let named: Vec<(&str, Tensor<f64>)> = inputs.into_iter().map(|t| ("x", t)).collect();
        let reports = finite_diff_check(&named, EPS, |tape, vars| {
            let y = op(tape, vars)?;
            weighted(tape, y, &w)
        })
        .unwrap();
        worst = reports.iter().map(|g| g.max_rel_err).fold(worst, f64::max);
    }
    assert!(worst <= TOL, "{name}: max rel err {worst:e}");
}

#[test]
fn matmul_gradients() {
    check_op("matmul", |rng| {
        let (n, m, p) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m), randn(rng, m, p)], Box::new(|t, v| t.matmul(v[0], v[1])), (n, p))
    });
}

#[test]
fn add_and_mul_gradients() {
    check_op("add", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m), randn(rng, n, m)], Box::new(|t, v| t.add(v[0], v[1])), (n, m))
    });
    check_op("mul", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m), randn(rng, n, m)], Box::new(|t, v| t.mul(v[0], v[1])), (n, m))
    });
}

#[test]
fn bias_and_scale_gradients() {
    check_op("add_bias", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m), randn(rng, 1, m)], Box::new(|t, v| t.add_bias(v[0], v[1])), (n, m))
    });
    check_op("scale", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        let s = rng.normal();
        (vec![randn(rng, n, m)], Box::new(move |t, v| Ok(t.scale(v[0], s))), (n, m))
    });
}

#[test]
fn gelu_and_layer_norm_gradients() {
    check_op("gelu", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m)], Box::new(|t, v| Ok(t.gelu(v[0]))), (n, m))
    });
    // Two-column rows normalize to constant ±1 and have zero gradient.
    check_op("layer_norm", |rng| {
        let (n, m) = (1 + rng.below(4), 3 + rng.below(4));
        (vec![randn(rng, n, m)], Box::new(|t, v| Ok(t.layer_norm(v[0]))), (n, m))
    });
}

#[test]
fn softmax_and_cross_entropy_gradients() {
    check_op("softmax_rows", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(5));
        (vec![randn(rng, n, m)], Box::new(|t, v| t.softmax_rows(v[0])), (n, m))
    });
    check_op("cross_entropy", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(5));
        let targets: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
        (vec![randn(rng, n, m)], Box::new(move |t, v| t.cross_entropy(v[0], &targets)), (1, 1))
    });
}

#[test]
fn row_selection_gradients() {
    check_op("select_rows", |rng| {
        let (n, m) = (2 + rng.below(4), 1 + rng.below(4));
        let idx: Vec<usize> = (0..3).map(|_| rng.below(n)).collect();
        (vec![randn(rng, n, m)], Box::new(move |t, v| t.select_rows(v[0], &idx)), (3, m))
    });
    check_op("gather_cols", |rng| {
        let (n, m) = (1 + rng.below(4), 2 + rng.below(4));
        let cols: Vec<usize> = (0..2).map(|_| rng.below(m)).collect();
        (vec![randn(rng, n, m)], Box::new(move |t, v| t.gather_cols(v[0], &cols)), (n, 2))
    });
    check_op("prepend_rows", |rng| {
        let (blocks, p, s, m) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
        (
            vec![randn(rng, p, m), randn(rng, blocks * s, m)],
            Box::new(move |t, v| t.prepend_rows(v[0], v[1], blocks)),
            (blocks * (p + s), m),
        )
    });
}

#[test]
fn reductions_gradients() {
    check_op("sum", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m)], Box::new(|t, v| Ok(t.sum(v[0]))), (1, 1))
    });
    check_op("mean", |rng| {
        let (n, m) = (1 + rng.below(4), 1 + rng.below(4));
        (vec![randn(rng, n, m)], Box::new(|t, v| Ok(t.mean(v[0]))), (1, 1))
    });
}

#[test]
fn attention_gradients() {
    check_op("attention", |rng| {
        let heads = 1 + rng.below(2);
        let d = heads * (1 + rng.below(3));
        // At least two keys, so the attention weights depend on q and k.
        let (blocks, sq, sk) = (1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(3));
        (
            vec![randn(rng, blocks * sq, d), randn(rng, blocks * sk, d), randn(rng, blocks * sk, d)],
            Box::new(move |t, v| t.attention(v[0], v[1], v[2], blocks, heads)),
            (blocks * sq, d),
        )
    });
}

#[test]
fn softmax_closed_form() {
    let x = Tensor::<f64>::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = softmax_rows(&x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, &v) in y.data().iter().enumerate() {
        assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-15);
    }
}

#[test]
fn saturated_one_hot_has_zero_cross_entropy() {
    let x = Tensor::<f64>::new(&[1, 3], vec![0.0, 800.0, 0.0]).unwrap();
    assert_eq!(cross_entropy(&x, &[1]).unwrap(), 0.0);
    assert!(cross_entropy(&x, &[0]).unwrap() > 0.0);
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(n, m)| (Just(n), Just(m), prop::collection::vec(-50.0f64..50.0, n * m)))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((n, m, data) in matrix()) {
        let y = softmax_rows(&Tensor::new(&[n, m], data).unwrap()).unwrap();
        for r in 0..n {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_ignores_row_shift((n, m, data) in matrix(), c in -100.0f64..100.0) {
        let a = softmax_rows(&Tensor::new(&[n, m], data.clone()).unwrap()).unwrap();
        let b = softmax_rows(&Tensor::new(&[n, m], data.iter().map(|v| v + c).collect()).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn taped_and_direct_cross_entropy_agree((n, m, data) in matrix(), seed in 0u64..1000) {
        let mut rng = SplitRng::new(seed);
        let targets: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
        let x = Tensor::new(&[n, m], data).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(&x);
        let l = tape.cross_entropy(v, &targets).unwrap();
        let direct = cross_entropy(&x, &targets).unwrap();
        prop_assert!(direct >= 0.0);
        prop_assert!((tape.scalar(l).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn fixed_seed_ops_are_bit_identical(seed in 0u64..10_000) {
        let run = || {
            let mut rng = SplitRng::new(seed);
            let a = randn(&mut rng, 3, 4);
            let b = randn(&mut rng, 4, 2);
            let mut tape = Tape::new();
            let (va, vb) = (tape.param(&a), tape.param(&b));
            let y = tape.matmul(va, vb).unwrap();
            let y = tape.softmax_rows(y).unwrap();
            let s = tape.sum(y);
            let g = tape.backward(s).unwrap();
            (tape.to_tensor(y), g.wrt(va).unwrap().to_vec())
        };
        let (y1, g1) = run();
        let (y2, g2) = run();
        prop_assert!(y1.bit_eq(&y2));
        prop_assert!(g1.iter().zip(&g2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
