//! Property tests: metrics against a direct loop over the definitions,
//! recovery statistics, the composed-TAP chain identity, pool-size laws and
//! checkpoint persistence.

use hidepet::aka::simulate_pool;
use hidepet::backbone::{read_checkpoint, write_checkpoint, Arch, BackboneCheckpoint};
use hidepet::harness::metrics::AccuracyMatrix;
use hidepet::hide::stats::{fit_stats, Recovery, RepStats};
use hidepet::theory::{entropies, Instance, Sample, Scenario};
use hidepet::{SplitRng, Tensor};
use proptest::prelude::*;

fn lower_triangle() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..9).prop_flat_map(|t| prop::collection::vec(prop::collection::vec(0.0f64..=100.0, t), t))
}

/// `(FAA, CAA, FFM, ALA)` straight from the definitions; `a[i][s]` is the
/// accuracy on task `i` after stage `s`.
fn oracle(a: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let t = a.len();
    let aa: Vec<f64> = (0..t)
        .map(|s| {
            let mut sum = 0.0;
            for row in a.iter().take(s + 1) {
                sum += row[s];
            }
            sum / (s + 1) as f64
        })
        .collect();
    let mut caa = 0.0;
    for v in &aa {
        caa += v;
    }
    if t == 1 {
        return (aa[0], caa, 0.0, a[0][0]);
    }
    let mut ffm = 0.0;
    for i in 0..t - 1 {
        let mut best = f64::NEG_INFINITY;
        for s in i..t - 1 {
            best = best.max(a[i][s] - a[i][t - 1]);
        }
        ffm += best;
    }
    let mut ala = 0.0;
    for (i, row) in a.iter().enumerate().skip(1) {
        ala += row[i];
    }
    (aa[t - 1], caa / t as f64, ffm / (t - 1) as f64, ala / (t - 1) as f64)
}

fn reps(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = SplitRng::new(seed);
    (0..n).map(|_| (0..d).map(|_| (2.0 * rng.normal() + 1.0) as f32).collect()).collect()
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

fn cil_instance() -> impl Strategy<Value = Instance> {
    prop::collection::vec(1usize..4, 1..4).prop_flat_map(|classes| {
        let t = classes.len();
        let c2 = classes.clone();
        let sample = (0..t, 0usize..3, prop::collection::vec(0.01f64..1.0, t), prop::collection::vec(0.01f64..1.0, 12))
            .prop_map(move |(task, class, tii, pool)| {
                let mut it = pool.into_iter().cycle();
                let wtp: Vec<Vec<f64>> =
                    c2.iter().map(|&k| simplex(&(0..k).map(|_| it.next().unwrap()).collect::<Vec<_>>())).collect();
                let total: usize = c2.iter().sum();
                Sample {
                    task,
                    class: class % c2[task],
                    wtp,
                    tii: simplex(&tii),
                    tap: vec![1.0 / total as f64; total],
                    ood: vec![0.5; t],
                    gamma: (0..t).map(|i| (i == task) as u8 as f64).collect(),
                }
            });
        prop::collection::vec(sample, 1..6).prop_map(move |samples| Instance {
            scenario: Scenario::Cil,
            classes: classes.clone(),
            samples,
        })
    })
}

fn pool_stream() -> impl Strategy<Value = (Vec<Tensor<f32>>, Vec<Vec<Vec<f32>>>)> {
    (1usize..6, 2usize..5, any::<u64>()).prop_map(|(t, d, seed)| {
        let mut rng = SplitRng::new(seed);
        let mut plains = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..t {
            let shift: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let rows: Vec<f32> = (0..6 * d).map(|i| (shift[i % d] + 0.3 * rng.normal()) as f32).collect();
            plains.push(Tensor::new(&[6, d], rows).unwrap());
            let r: Vec<Vec<f32>> = (0..3)
                .map(|_| hidepet::aka::normalize(&(0..d).map(|j| (shift[j] + 0.3 * rng.normal()) as f32).collect::<Vec<_>>()))
                .collect();
            refs.push(r);
        }
        (plains, refs)
    })
}

proptest! {
    #[test]
    fn metrics_match_definitions(a in lower_triangle()) {
        let m = AccuracyMatrix::from_square(&a).unwrap().metrics(false).unwrap();
        let (faa, caa, ffm, ala) = oracle(&a);
        prop_assert_eq!((m.faa, m.caa, m.ffm, m.ala), (faa, caa, ffm, ala));
    }

    #[test]
    fn metrics_of_perfect_runs(t in 1usize..9) {
        let m = AccuracyMatrix::from_square(&vec![vec![100.0; t]; t]).unwrap().metrics(false).unwrap();
        prop_assert_eq!((m.faa, m.caa, m.ffm, m.ala), (100.0, 100.0, 0.0, 100.0));
    }

    #[test]
    fn variance_stats_hold_column_moments(n in 2usize..40, d in 1usize..8, seed in any::<u64>()) {
        let r = reps(n, d, seed);
        let f = fit_stats(&r, Recovery::Variance, &mut SplitRng::new(seed)).unwrap();
        let RepStats::Variance { mean, var } = &f.stats else { panic!("wrong statistics") };
        for j in 0..d {
            let m: f64 = r.iter().map(|x| x[j] as f64).sum::<f64>() / n as f64;
            prop_assert!((mean[j] as f64 - m).abs() <= 1e-5 * m.abs().max(1.0));
            prop_assert!(var[j] >= 0.0);
        }
        prop_assert!(f.stats.storage() <= 2 * d);
    }

    #[test]
    fn covariance_is_symmetric_with_full_storage(n in 2usize..30, d in 1usize..6, seed in any::<u64>()) {
        let f = fit_stats(&reps(n, d, seed), Recovery::Covariance, &mut SplitRng::new(seed)).unwrap();
        let RepStats::Covariance { cov, .. } = &f.stats else { panic!("wrong statistics") };
        for i in 0..d {
            prop_assert!(cov[i * d + i] >= 0.0);
            for j in 0..d {
                prop_assert_eq!(cov[i * d + j], cov[j * d + i]);
            }
        }
        prop_assert_eq!(f.stats.storage(), d * d + d);
    }

    #[test]
    fn sampled_statistics_are_finite(n in 12usize..40, d in 1usize..6, seed in any::<u64>()) {
        let r = reps(n, d, seed);
        for s in [Recovery::Prototype, Recovery::Variance, Recovery::Covariance, Recovery::MultiCentroid] {
            let mut rng = SplitRng::new(seed);
            let f = fit_stats(&r, s, &mut rng).unwrap();
            let cap = if s == Recovery::Covariance { d * d + d } else { 10 * d };
            prop_assert!(f.stats.storage() <= cap);
            for x in f.stats.sample(8, &mut rng) {
                prop_assert_eq!(x.len(), d);
                prop_assert!(x.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn product_tap_splits_into_wtp_and_tii(inst in cil_instance()) {
        for e in entropies(&inst.with_product_tap()).unwrap() {
            prop_assert!((e.tap - (e.wtp + e.tii)).abs() <= 1e-12 * e.tap.max(1.0));
        }
    }

    #[test]
    fn pool_grows_by_at_most_one_per_task((plains, refs) in pool_stream(), lambda in 0.0f64..2.5) {
        let sizes = simulate_pool(&plains, &refs, lambda).unwrap();
        prop_assert_eq!(sizes[0], 1);
        for (t, w) in sizes.windows(2).enumerate() {
            prop_assert!(w[1] == w[0] || w[1] == w[0] + 1);
            prop_assert!(w[1] <= t + 2);
        }
    }

    #[test]
    fn pool_size_falls_with_threshold((plains, refs) in pool_stream()) {
        let t = plains.len();
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let ks: Vec<usize> = grid.iter().map(|&l| *simulate_pool(&plains, &refs, l).unwrap().last().unwrap()).collect();
        prop_assert!(ks.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(ks[0], t);
        prop_assert_eq!(*ks.last().unwrap(), 1);
    }

    #[test]
    fn checkpoint_bytes_round_trip(layers in 1usize..3, heads in 1usize..3, seed in any::<u64>()) {
        let arch = Arch { layers, dim: 4 * heads, heads, tokens: 3, feat: 5, pre_ln_residual: true };
        let ck = BackboneCheckpoint::<f32>::random(&arch, seed).unwrap();
        let bytes = write_checkpoint(&ck).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.digest(), ck.digest());
        prop_assert_eq!(&back.arch, &ck.arch);
        prop_assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..200, seed in 0u64..50) {
        let arch = Arch { layers: 1, dim: 4, heads: 1, tokens: 2, feat: 3, pre_ln_residual: true };
        let bytes = write_checkpoint(&BackboneCheckpoint::<f32>::random(&arch, seed).unwrap()).unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(read_checkpoint(&bytes[..cut]).is_err());
    }
}
