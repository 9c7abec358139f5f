//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p hidepet --test acceptance -- 1 2 9`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hidepet::backbone::{digest_named, save_checkpoint, Arch, BackboneCheckpoint};
use hidepet::config::ExperimentConfig;
use hidepet::harness::experiment::{obtain_checkpoint, run_experiment, run_seed, Mode, ResultRecord};
use hidepet::harness::metrics::AccuracyMatrix;
use hidepet::harness::report::{calibrate_lambda, lambda_sweep, stream_refs};
use hidepet::harness::stream::{make_mixed_stream, make_stream, StreamConfig};
use hidepet::hide::engine::{HideState, RepState};
use hidepet::hide::stats::{fit_stats, Recovery};
use hidepet::hide::train::wtp_loss;
use hidepet::hide::{Ladder, SharedStrategy};
use hidepet::numcore::{finite_diff_check, BoundLinear, Linear};
use hidepet::pet::{pret_apply, pret_reframe, AttnWeights, PetParams, PetSpec, Technique};
use hidepet::theory::{run, LossMode, Theorem};
use hidepet::{Result, SplitRng, Tensor};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

/// Shared checkpoints, pre-trained on first use.
#[derive(Default)]
struct Fixtures {
    quick: Option<BackboneCheckpoint<f32>>,
    mixed: Option<BackboneCheckpoint<f32>>,
}

impl Fixtures {
    fn quick(&mut self) -> Result<&BackboneCheckpoint<f32>> {
        if self.quick.is_none() {
            self.quick = Some(obtain_checkpoint(&ExperimentConfig::quick())?.0);
        }
        Ok(self.quick.as_ref().unwrap())
    }

    fn mixed(&mut self) -> Result<&BackboneCheckpoint<f32>> {
        if self.mixed.is_none() {
            self.mixed = Some(obtain_checkpoint(&ExperimentConfig::mixed())?.0);
        }
        Ok(self.mixed.as_ref().unwrap())
    }
}

fn per_seed(cfg: &ExperimentConfig, ck: &BackboneCheckpoint<f32>, mode: &Mode) -> Result<Vec<Vec<ResultRecord>>> {
    SEEDS.iter().map(|&s| run_seed(cfg, ck, s, mode)).collect()
}

fn pick<'a>(recs: &'a [ResultRecord], variant: &str) -> &'a ResultRecord {
    recs.iter().find(|r| r.variant == variant).unwrap_or_else(|| panic!("no record for {variant}"))
}

fn perturbed<T: hidepet::numcore::Scalar>(mut pet: PetParams<T>, std: f64, rng: &mut SplitRng) -> PetParams<T> {
    for t in pet.tensors_mut() {
        let noise = Tensor::<T>::randn(t.shape(), std, rng);
        *t = t.zip_map(&noise, |a, b| a + b).unwrap();
    }
    pet
}

// 1. Analytic gradients of the within-task loss against central differences.
fn gradients(_: &mut Fixtures) -> Result<Verdict> {
    let start = Instant::now();
    let arch = Arch::default();
    let theta = BackboneCheckpoint::<f64>::random(&arch, 7)?;
    let techniques = [
        Technique::Prompt,
        Technique::Prefix,
        Technique::AdapterSeq,
        Technique::AdapterPar,
        Technique::Adapter,
        Technique::Lora,
    ];
    let (blocks, width) = (3, 6);
    let cols = [1, 3, 4];
    let mut worst = 0.0f64;
    let mut instances = 0;
    for tech in techniques {
        for k in 0..4u64 {
            let mut rng = SplitRng::new(100 + k).fork(&format!("{tech:?}"));
            let spec = PetSpec::for_technique(tech, arch.layers);
            let pet = perturbed(PetParams::<f64>::init(&spec, arch.dim, arch.layers, &mut rng)?, 0.1, &mut rng);
            let head = Linear::<f64>::new(arch.dim, width, 0.3, &mut rng);
            let x = Tensor::<f64>::randn(&[blocks * arch.tokens, arch.feat], 1.0, &mut rng);
            let targets: Vec<usize> = (0..blocks).map(|_| rng.below(cols.len())).collect();
            let mut params: Vec<(String, Tensor<f64>)> =
                pet.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
            let n_pet = params.len();
            params.push(("head.w".into(), head.w.clone()));
            params.push(("head.b".into(), head.b.clone()));
            let refs: Vec<(&str, Tensor<f64>)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
            let reports = finite_diff_check(&refs, 3e-5, |tape, vars| {
                let bb = theta.bind(tape, false);
                let bp = pet.bind_vars(&vars[..n_pet])?;
                let hd = BoundLinear { w: vars[n_pet], b: vars[n_pet + 1] };
                let xv = tape.constant(&x);
                wtp_loss(tape, &theta, &bb, Some(&bp), &hd, xv, blocks, &cols, &targets)
            })?;
            worst = reports.iter().map(|r| r.max_rel_err).fold(worst, f64::max);
            instances += 1;
        }
    }
    let (fast, t) = within(start, Duration::from_secs(60));
    verdict(
        worst <= 1e-4 && instances >= 20 && fast,
        format!("{instances} instances over 6 techniques, max rel err {worst:.2e} (tol 1e-4), {t}"),
    )
}

// 2. Prefix mixture rewrite, LoRA merge, zero-initialized attachments.
fn equivalences(_: &mut Fixtures) -> Result<Verdict> {
    let mut prefix_gap = 0.0f64;
    for k in 0..10u64 {
        let mut rng = SplitRng::new(200 + k);
        let d = 4 + rng.below(5);
        let (n, np) = (2 + rng.below(6), 1 + rng.below(4));
        let m = |rng: &mut SplitRng, r: usize| Tensor::<f64>::randn(&[r, d], 0.7, rng);
        let (wq, wk, wv, wo) = (m(&mut rng, d), m(&mut rng, d), m(&mut rng, d), m(&mut rng, d));
        let (pk, pv, h) = (m(&mut rng, np), m(&mut rng, np), m(&mut rng, n));
        let w = AttnWeights { wq: &wq, wk: &wk, wv: &wv, wo: &wo, heads: 1 };
        let a = pret_apply(&w, &pk, &pv, &h)?;
        let (b, _) = pret_reframe(&w, &pk, &pv, &h)?;
        prefix_gap = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(prefix_gap, f64::max);
    }

    let arch = Arch::default();
    let theta = BackboneCheckpoint::<f64>::random(&arch, 11)?;
    let mut lora_gap = 0.0f64;
    for k in 0..10u64 {
        let mut rng = SplitRng::new(300 + k);
        let spec = PetSpec::for_technique(Technique::Lora, arch.layers);
        let pet = perturbed(PetParams::<f64>::init(&spec, arch.dim, arch.layers, &mut rng)?, 0.1, &mut rng);
        let x = Tensor::<f64>::randn(&[arch.tokens, arch.feat], 1.0, &mut rng);
        let a = theta.merged(&pet)?.encode(&x, None)?;
        let b = theta.encode(&x, Some(&pet))?;
        lora_gap = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(lora_gap, f64::max);
    }

    let mut zero_exact = true;
    // Zero up-projections for bottlenecks; empty prompts and prefixes.
    let neutral: Vec<PetSpec> = [Technique::AdapterSeq, Technique::AdapterPar, Technique::Adapter, Technique::Lora]
        .into_iter()
        .map(|t| PetSpec::for_technique(t, arch.layers))
        .chain([Technique::Prompt, Technique::Prefix].map(|t| PetSpec { prompt_len: 0, ..PetSpec::for_technique(t, arch.layers) }))
        .collect();
    for spec in &neutral {
        for k in 0..5u64 {
            let mut rng = SplitRng::new(400 + k);
            let pet = PetParams::<f64>::init(spec, arch.dim, arch.layers, &mut rng)?;
            let x = Tensor::<f64>::randn(&[arch.tokens, arch.feat], 1.0, &mut rng);
            zero_exact &= theta.encode(&x, Some(&pet))?.bit_eq(&theta.encode(&x, None)?);
        }
    }
    verdict(
        prefix_gap <= 1e-8 && lora_gap <= 1e-10 && zero_exact,
        format!(
            "prefix rewrite max |d| {prefix_gap:.2e} (tol 1e-8), LoRA merge {lora_gap:.2e} (tol 1e-10), zero init bit-exact {zero_exact}"
        ),
    )
}

// 3. Monte-Carlo bound checks with tightness witnesses.
fn theorems(_: &mut Fixtures) -> Result<Verdict> {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut violations = 0;
    for th in Theorem::ALL {
        let r = run(th, 100_000, 1, LossMode::Expectation)?;
        println!("    {}", r.summary());
        violations += r.violations;
        worst_gap = worst_gap.max(r.witness.rel_gap());
        if !r.passed() {
            failed.push(th.tag());
        }
    }
    let (fast, t) = within(start, Duration::from_secs(300));
    verdict(
        failed.is_empty() && fast,
        format!(
            "{} checks x 1e5 instances, {violations} violations, worst witness gap {worst_gap:.2e} (tol 1e-2), failed {failed:?}, {t}",
            Theorem::ALL.len()
        ),
    )
}

// 4. Backbone and finished task sets never move; their outputs never change.
fn frozen_paths(fx: &mut Fixtures) -> Result<Verdict> {
    let cfg = ExperimentConfig::quick();
    let theta = fx.quick()?.clone();
    let stream = make_stream(&StreamConfig { seed: 1, ..cfg.stream.clone() })?;
    let spec = cfg.pet.to_spec(cfg.arch.layers)?;
    let rroot = HideState::root(1).fork("rep");
    let mut rep = RepState::new(&spec, &theta.arch, true, true, &rroot)?;
    let probe = &stream.tasks[0].test;
    let theta_hash = theta.digest();
    let mut hashes: Vec<String> = Vec::new();
    let mut outputs: Vec<Tensor<f32>> = Vec::new();
    let mut ok = true;
    for task in &stream.tasks {
        rep.train_task(&theta, task, &cfg.hide, &rroot)?;
        let i = rep.e.len() - 1;
        hashes.push(digest_named(&rep.e[i].named()));
        outputs.push(rep.instructed(&theta, i, probe)?);
        for j in 0..i {
            ok &= digest_named(&rep.e[j].named()) == hashes[j];
            ok &= rep.instructed(&theta, j, probe)?.bit_eq(&outputs[j]);
        }
        ok &= theta.digest() == theta_hash && theta.is_frozen();
    }
    verdict(ok, format!("{} tasks, theta and every finished e_i hash-identical, probe outputs bit-identical: {ok}", hashes.len()))
}

// 5. Component ladder ordering.
fn ladder(fx: &mut Fixtures) -> Result<Verdict> {
    let start = Instant::now();
    let cfg = ExperimentConfig::quick();
    let rungs = [Ladder::Naive, Ladder::Wtp, Ladder::WtpTii, Ladder::Full];
    let recs = per_seed(&cfg, fx.quick()?, &Mode::Ablate(rungs.to_vec()))?;
    let means: Vec<f64> = rungs
        .iter()
        .map(|l| recs.iter().map(|r| pick(r, l.tag()).metrics.faa).sum::<f64>() / SEEDS.len() as f64)
        .collect();
    let ordered = means.windows(2).all(|w| w[0] <= w[1]);
    let margin = means[3] - means[0];
    let (fast, t) = within(start, Duration::from_secs(600));
    verdict(
        ordered && margin >= 2.0 && fast,
        format!(
            "mean FAA naive {:.2} <= wtp {:.2} <= wtp+tii {:.2} <= full {:.2}: {ordered}, full - naive {margin:.2} (min 2), {t}",
            means[0], means[1], means[2], means[3]
        ),
    )
}

// 6. Shared-set strategy ordering on task identification.
fn strategies(fx: &mut Fixtures) -> Result<Verdict> {
    let cfg = ExperimentConfig::quick();
    let recs = per_seed(&cfg, fx.quick()?, &Mode::Strategies)?;
    let final_tii = |r: &[ResultRecord], s: SharedStrategy| *pick(r, s.tag()).tii.last().unwrap();
    let mut wins = 0;
    let mut rows = Vec::new();
    for r in &recs {
        let best = final_tii(r, SharedStrategy::FsaSl);
        let others = [SharedStrategy::FixTune, SharedStrategy::Fsa, SharedStrategy::Sl].map(|s| final_tii(r, s));
        wins += others.iter().all(|&o| best >= o) as usize;
        rows.push(format!("{best:.3} vs {:.3}/{:.3}/{:.3}", others[0], others[1], others[2]));
    }
    verdict(wins >= 3, format!("fsa+sl >= f&t, fsa, sl on {wins}/5 seeds (min 3); {}", rows.join("; ")))
}

// 7. Recovery strategies against none, and per-class storage.
fn recovery(fx: &mut Fixtures) -> Result<Verdict> {
    let cfg = ExperimentConfig::quick();
    let d = cfg.arch.dim;
    let recs = per_seed(&cfg, fx.quick()?, &Mode::Recovery)?;
    let strategies = [Recovery::Prototype, Recovery::Variance, Recovery::Covariance, Recovery::MultiCentroid];
    let name = |r: Recovery| format!("{r:?}").to_lowercase();
    let mut counts = Vec::new();
    for &s in &strategies {
        let wins = recs.iter().filter(|r| pick(r, &name(s)).metrics.faa >= pick(r, "none").metrics.faa).count();
        counts.push(wins);
    }
    let faa_ok = counts.iter().all(|&c| c >= 4);

    let mut rng = SplitRng::new(5).fork("storage");
    let reps: Vec<Vec<f32>> = (0..60).map(|_| (0..d).map(|_| rng.normal() as f32).collect()).collect();
    let per_class = |s: Recovery| -> Result<usize> { Ok(fit_stats(&reps, s, &mut rng.fork("fit"))?.stats.storage()) };
    let (p, v, c, m) = (
        per_class(Recovery::Prototype)?,
        per_class(Recovery::Variance)?,
        per_class(Recovery::Covariance)?,
        per_class(Recovery::MultiCentroid)?,
    );
    let mut storage_ok = p == 10 * d && v <= 2 * d && c == d * d + d && m <= 10 * d;
    // Run totals cover every class under both statistic sets.
    let sets = 2 * cfg.stream.num_classes;
    for r in &recs {
        storage_ok &= pick(r, "prototype").storage == sets * 10 * d
            && pick(r, "variance").storage <= sets * 2 * d
            && pick(r, "covariance").storage == sets * (d * d + d)
            && pick(r, "multicentroid").storage <= sets * 10 * d;
    }
    verdict(
        faa_ok && storage_ok,
        format!(
            "FAA >= none on {counts:?}/5 seeds (prototype, variance, covariance, multicentroid; min 4); per class storage {p}, {v}, {c}, {m} at d={d}: {storage_ok}"
        ),
    )
}

// 8. Pool size against the threshold and the pool's effect.
fn aka(fx: &mut Fixtures) -> Result<Verdict> {
    let mut cfg = ExperimentConfig::mixed();
    let ck = fx.mixed()?.clone();
    let grid: Vec<f64> = (0..=120).map(|i| 0.4 + i as f64 * 0.01).collect();
    let mut streams = Vec::new();
    let mut monotone = true;
    for &seed in &SEEDS {
        let stream = make_mixed_stream(&StreamConfig { seed, ..cfg.stream.clone() })?;
        let (plains, refs) = stream_refs(&ck, &stream, seed)?;
        let sweep = lambda_sweep(&plains, &refs, &grid)?;
        monotone &= sweep.windows(2).all(|w| w[1].1 <= w[0].1);
        streams.push((plains, refs));
    }
    let Some(lambda) = calibrate_lambda(&streams, &grid, 2)? else {
        return verdict(false, format!("k(lambda) monotone {monotone}, no threshold yields 2 sets on every seed"));
    };
    cfg.aka.lambda_ood = lambda;
    let recs = per_seed(&cfg, &ck, &Mode::Aka)?;
    let sizes: Vec<usize> = recs.iter().map(|r| pick(r, "aka").pool_size.unwrap_or(0)).collect();
    let faa_wins = recs.iter().filter(|r| pick(r, "aka").metrics.faa >= pick(r, "no-aka").metrics.faa).count();
    let few_wins = recs.iter().filter(|r| pick(r, "aka").transfer_few >= pick(r, "no-aka").transfer_few).count();
    let two = sizes.iter().all(|&k| k == 2);
    verdict(
        monotone && two && faa_wins >= 4 && few_wins >= 4,
        format!(
            "k(lambda) monotone {monotone}; calibrated lambda {lambda:.3} gives pool sizes {sizes:?}; AKA >= none on FAA {faa_wins}/5, few-shot {few_wins}/5 (min 4)"
        ),
    )
}

fn brute_force(a: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let t = a.len();
    let mut aa = Vec::new();
    for s in 0..t {
        let mut sum = 0.0;
        for row in a.iter().take(s + 1) {
            sum += row[s];
        }
        aa.push(sum / (s + 1) as f64);
    }
    let faa = aa[t - 1];
    let mut caa = 0.0;
    for v in &aa {
        caa += v;
    }
    caa /= t as f64;
    let mut ffm = 0.0;
    let mut ala = 0.0;
    for i in 0..t - 1 {
        let mut best = f64::NEG_INFINITY;
        for s in i..t - 1 {
            let drop = a[i][s] - a[i][t - 1];
            if drop > best {
                best = drop;
            }
        }
        ffm += best;
    }
    for (i, row) in a.iter().enumerate().skip(1) {
        ala += row[i];
    }
    (faa, caa, ffm / (t - 1) as f64, ala / (t - 1) as f64)
}

// 9. Metrics against a direct loop over the definitions.
fn metrics_oracle(_: &mut Fixtures) -> Result<Verdict> {
    let mut mismatches = 0;
    for k in 0..100u64 {
        let mut rng = SplitRng::new(900 + k);
        let t = 2 + rng.below(9);
        let a: Vec<Vec<f64>> = (0..t).map(|_| (0..t).map(|_| 100.0 * rng.uniform()).collect()).collect();
        let m = AccuracyMatrix::from_square(&a)?.metrics(false)?;
        let (faa, caa, ffm, ala) = brute_force(&a);
        mismatches += (m.faa != faa || m.caa != caa || m.ffm != ffm || m.ala != ala) as usize;
    }
    verdict(mismatches == 0, format!("100 random matrices of 2..10 tasks, {mismatches} exact mismatches"))
}

// 10. Repeated runs write identical record bytes.
fn determinism(fx: &mut Fixtures) -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let ck_path = dir.path().join("theta.bin");
    save_checkpoint(fx.quick()?, &ck_path)?;
    let mut cfg = ExperimentConfig::quick();
    cfg.checkpoint = Some(ck_path);
    cfg.seeds = vec![3];
    let mut bytes = Vec::new();
    for (i, mode) in [Mode::Run, Mode::Run].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        run_experiment(&cfg, mode, &out)?;
        bytes.push(std::fs::read(out.join("records.jsonl"))?);
    }
    let same = !bytes[0].is_empty() && bytes[0] == bytes[1];
    verdict(same, format!("two runs of seed 3, {} record bytes each, identical: {same}", bytes[0].len()))
}

type Check = fn(&mut Fixtures) -> Result<Verdict>;

fn main() -> ExitCode {
    let all: [(usize, &str, Check); 10] = [
        (1, "gradients", gradients),
        (2, "equivalences", equivalences),
        (3, "theorem suite", theorems),
        (4, "frozen paths", frozen_paths),
        (5, "component ladder", ladder),
        (6, "shared strategies", strategies),
        (7, "recovery", recovery),
        (8, "adaptive pool", aka),
        (9, "metrics oracle", metrics_oracle),
        (10, "determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut fx = Fixtures::default();
    let mut failures = 0;
    for (id, name, check) in all {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check(&mut fx).unwrap_or_else(|e| Verdict { pass: false, detail: format!("error: {e}") });
        failures += !v.pass as usize;
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
