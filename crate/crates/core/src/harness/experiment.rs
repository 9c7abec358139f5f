//! Orchestration of continual runs and their result records.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{AccuracyMatrix, Metrics};
use super::stream::{few_shot, make_mixed_stream, make_pretext, make_stream, Scenario, TaskStream};
use crate::aka::{AkaLearner, DecisionRecord, transfer_accuracy};
use crate::backbone::{load_checkpoint, pretrain, BackboneCheckpoint, PretrainReport};
use crate::config::ExperimentConfig;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::hide::engine::{evaluate, train_shared, EvalCache, HeadBranch, HideState, RepState, TaskReps};
use crate::hide::{HideConfig, Ladder, Recovery, SharedStrategy, TiiMode};
use crate::numcore::argmax;
use crate::pet::PetSpec;

/// Accuracy matrix and task-identification rates of one method variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub name: String,
    pub matrix: AccuracyMatrix,
    /// Mean task-identification rate after each stage.
    pub tii: Vec<f64>,
    /// Stored statistic floats after the last task.
    pub storage: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn check_dims(theta: &BackboneCheckpoint<f32>, stream: &TaskStream) -> Result<()> {
    let g = &stream.descriptor.generator;
    if g.tokens != theta.arch.tokens || g.feat != theta.arch.feat {
        return Err(Error::Config(format!(
            "stream samples are {}x{} but the checkpoint expects {}x{}",
            g.tokens, g.feat, theta.arch.tokens, theta.arch.feat
        )));
    }
    if !theta.is_frozen() {
        return Err(Error::Contract("the backbone must be frozen before continual training".into()));
    }
    Ok(())
}

/// Drives one representation run and updates every branch after each task,
/// evaluating all seen tasks. `train` performs the representation update.
fn drive<F>(
    theta: &BackboneCheckpoint<f32>,
    stream: &TaskStream,
    rep: &mut RepState,
    branches: &mut [HeadBranch],
    cfg: &HideConfig,
    seed: u64,
    mut train: F,
) -> Result<Vec<RunOutcome>>
where
    F: FnMut(&mut RepState, &crate::harness::stream::Task) -> Result<TaskReps>,
{
    check_dims(theta, stream)?;
    let root = HideState::root(seed);
    let mut cache = EvalCache::new();
    let mut out: Vec<RunOutcome> = branches
        .iter()
        .map(|b| RunOutcome { name: b.name.clone(), matrix: AccuracyMatrix::new(), tii: Vec::new(), storage: 0 })
        .collect();
    for (t, task) in stream.tasks.iter().enumerate() {
        let reps = train(rep, task)?;
        for b in branches.iter_mut() {
            b.update(rep, &reps, cfg, &root.fork("branch"))?;
        }
        let tests: Vec<&LabeledSet> = stream.tasks[..=t].iter().map(|t| &t.test).collect();
        let refs: Vec<&HeadBranch> = branches.iter().collect();
        let evals = evaluate(theta, rep, &refs, &tests, &mut cache)?;
        for (o, e) in out.iter_mut().zip(evals) {
            o.matrix.push_stage(e.acc.iter().map(|a| a * 100.0).collect())?;
            o.tii.push(mean(&e.tii));
        }
    }
    for (o, b) in out.iter_mut().zip(branches.iter()) {
        o.storage = b.storage();
    }
    Ok(out)
}

/// Branches for the requested ladder rungs, adapted to the scenario (task
/// identity is given in TIL).
pub fn ladder_branches(rungs: &[Ladder], recovery: Recovery, scenario: Scenario) -> Vec<HeadBranch> {
    rungs
        .iter()
        .map(|&l| {
            let mut b = HeadBranch::for_ladder(l, recovery);
            if scenario == Scenario::Til {
                b.tii = TiiMode::Oracle;
                b.all_classes = false;
            }
            b
        })
        .collect()
}

/// Trains the hierarchical representation once and every non-naive rung on
/// top of it; the naive rung gets its own representation run.
pub fn run_ladder(
    theta: &BackboneCheckpoint<f32>,
    stream: &TaskStream,
    spec: &PetSpec,
    cfg: &HideConfig,
    seed: u64,
    rungs: &[Ladder],
) -> Result<Vec<RunOutcome>> {
    let root = HideState::root(seed);
    let mut outcomes = Vec::new();
    if rungs.contains(&Ladder::Naive) {
        let mut rep = RepState::new(spec, &theta.arch, false, false, &root.fork("rep"))?;
        let mut b = ladder_branches(&[Ladder::Naive], cfg.recovery, stream.scenario);
        let rroot = root.fork("rep");
        outcomes.extend(drive(theta, stream, &mut rep, &mut b, cfg, seed, |r, t| r.train_task(theta, t, cfg, &rroot))?);
    }
    let rest: Vec<Ladder> = rungs.iter().copied().filter(|&l| l != Ladder::Naive).collect();
    if !rest.is_empty() {
        let mut rep = RepState::new(spec, &theta.arch, true, true, &root.fork("rep"))?;
        let mut b = ladder_branches(&rest, cfg.recovery, stream.scenario);
        let rroot = root.fork("rep");
        outcomes.extend(drive(theta, stream, &mut rep, &mut b, cfg, seed, |r, t| r.train_task(theta, t, cfg, &rroot))?);
    }
    let order = |n: &str| rungs.iter().position(|l| l.tag() == n).unwrap_or(usize::MAX);
    outcomes.sort_by_key(|o| order(&o.name));
    Ok(outcomes)
}

/// The full method under every recovery strategy (including none), sharing
/// one representation run.
pub fn run_recovery(
    theta: &BackboneCheckpoint<f32>,
    stream: &TaskStream,
    spec: &PetSpec,
    cfg: &HideConfig,
    seed: u64,
) -> Result<Vec<RunOutcome>> {
    let root = HideState::root(seed);
    let mut rep = RepState::new(spec, &theta.arch, true, true, &root.fork("rep"))?;
    let mut branches: Vec<HeadBranch> = Recovery::all()
        .iter()
        .map(|&r| {
            let mut b = ladder_branches(&[Ladder::Full], r, stream.scenario).remove(0);
            b.name = format!("{r:?}").to_lowercase();
            b
        })
        .collect();
    let rroot = root.fork("rep");
    drive(theta, stream, &mut rep, &mut branches, cfg, seed, |r, t| r.train_task(theta, t, cfg, &rroot))
}

/// Task-identification accuracy of the shared set alone (no task sets):
/// per stage, the mean over seen tasks.
pub fn run_strategy_tii(
    theta: &BackboneCheckpoint<f32>,
    stream: &TaskStream,
    spec: &PetSpec,
    cfg: &HideConfig,
    seed: u64,
    strategy: SharedStrategy,
) -> Result<Vec<f64>> {
    check_dims(theta, stream)?;
    let cfg = HideConfig { strategy, ..cfg.clone() };
    let root = HideState::root(seed);
    let rroot = root.fork("rep");
    let mut rep = RepState::new(spec, &theta.arch, true, true, &rroot)?;
    let mut branch = HeadBranch::new(strategy.tag(), TiiMode::Learned, false, false, cfg.recovery);
    let mut out = Vec::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        let rng = rroot.fork_idx("task", t as u64);
        let cols = rep.register(task, &rng);
        let mut g = rep.g.take().expect("shared set");
        let res = train_shared(theta, &mut g, &mut rep.psi_hat, task, &cols, &cfg, t, &rng);
        rep.g = Some(g);
        res?;
        let un = rep.uninstructed(theta, &task.train)?;
        let reps = TaskReps { labels: task.train.y.clone(), plain: un.clone(), inst: un.clone(), un };
        branch.update(&rep, &reps, &cfg, &root.fork("branch"))?;
        let omega = branch.omega.as_ref().expect("task head");
        let mut rates = Vec::new();
        for (j, prev) in stream.tasks[..=t].iter().enumerate() {
            let logits = omega.logits(&rep.uninstructed(theta, &prev.test)?)?;
            let ok = (0..prev.test.len()).filter(|&i| argmax(logits.row(i)) == j).count();
            rates.push(ok as f64 / prev.test.len().max(1) as f64);
        }
        out.push(mean(&rates));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AkaOutcome {
    pub run: RunOutcome,
    /// Pool size after the stream (1 without the pool).
    pub pool_size: usize,
    pub decisions: Vec<DecisionRecord>,
    /// Accuracy on each validation task after full-shot and few-shot
    /// transfer.
    pub transfer_full: Vec<f64>,
    pub transfer_few: Vec<f64>,
}

/// The full method on a (mixed) stream with the pool (`with_pool`) or with
/// a single shared set, plus transfer to the validation tasks.
pub fn run_aka(
    theta: &BackboneCheckpoint<f32>,
    stream: &TaskStream,
    spec: &PetSpec,
    cfg: &HideConfig,
    aka: &crate::aka::AkaConfig,
    seed: u64,
    with_pool: bool,
) -> Result<AkaOutcome> {
    let root = HideState::root(seed);
    let rroot = root.fork("rep");
    let mut branches = ladder_branches(&[Ladder::Full], cfg.recovery, stream.scenario);
    let few_k = stream.descriptor.few_shot;
    let transfer = |view: &dyn Fn(&crate::harness::stream::Task) -> Result<BackboneCheckpoint<f32>>| -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut full, mut few) = (Vec::new(), Vec::new());
        for (v, task) in stream.validation.iter().enumerate() {
            let rng = root.fork_idx("transfer", v as u64);
            let b = view(task)?;
            full.push(transfer_accuracy(&b, spec, task, cfg, aka.transfer_epochs, &rng.fork("full"))?);
            let fs = few_shot(task, few_k);
            few.push(transfer_accuracy(&b, spec, &fs, cfg, aka.transfer_epochs, &rng.fork("few"))?);
        }
        Ok((full, few))
    };
    if with_pool {
        let rep = RepState::new(spec, &theta.arch, true, false, &rroot)?;
        let mut learner = AkaLearner::new(rep, aka.lambda_ood, theta.arch.layers)?;
        let mut rep = learner.rep.clone();
        let outs = drive(theta, stream, &mut rep, &mut branches, cfg, seed, |r, t| {
            learner.rep = r.clone();
            let reps = learner.train_task(theta, t, cfg, &rroot)?;
            *r = learner.rep.clone();
            Ok(reps)
        })?;
        let (full, few) = transfer(&|task| {
            let j = learner.retrieve_for(theta, task)?;
            theta.merged(&learner.pool.sets[j])
        })?;
        Ok(AkaOutcome {
            run: outs.into_iter().next().expect("one branch"),
            pool_size: learner.pool.len(),
            decisions: learner.log,
            transfer_full: full,
            transfer_few: few,
        })
    } else {
        let mut rep = RepState::new(spec, &theta.arch, true, true, &rroot)?;
        let outs = drive(theta, stream, &mut rep, &mut branches, cfg, seed, |r, t| r.train_task(theta, t, cfg, &rroot))?;
        let (full, few) = transfer(&|_| Ok(theta.clone()))?;
        Ok(AkaOutcome {
            run: outs.into_iter().next().expect("one branch"),
            pool_size: 1,
            decisions: Vec::new(),
            transfer_full: full,
            transfer_few: few,
        })
    }
}

/// One line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub technique: String,
    /// Component set or variant name.
    pub variant: String,
    pub metrics: Metrics,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub tii: Vec<f64>,
    pub storage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_full: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_few: Option<f64>,
    /// Per-task pool decisions of the pool run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisions: Option<Vec<DecisionRecord>>,
}

/// What a run computes.
#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// The configured ladder rung.
    Run,
    Ablate(Vec<Ladder>),
    Recovery,
    Strategies,
    /// Pool versus single shared set on the mixed stream.
    Aka,
}

/// Loads the configured checkpoint or pre-trains one deterministically.
pub fn obtain_checkpoint(cfg: &ExperimentConfig) -> Result<(BackboneCheckpoint<f32>, Option<PretrainReport>)> {
    if let Some(p) = &cfg.checkpoint {
        let ck = load_checkpoint(p)?;
        if ck.arch.tokens != cfg.arch.tokens || ck.arch.feat != cfg.arch.feat || ck.arch.dim != cfg.arch.dim {
            return Err(Error::Config("checkpoint architecture differs from the configuration".into()));
        }
        return Ok((ck, None));
    }
    let ps = &cfg.pretrain;
    let pretext = make_pretext(&cfg.stream.generator, &ps.domain(), ps.classes, ps.per_class, ps.seed);
    let (ck, report) = pretrain(&cfg.arch, &pretext, &cfg.stream.downstream_classes(), &ps.to_config())?;
    Ok((ck, Some(report)))
}

fn record(cfg: &ExperimentConfig, seed: u64, scenario: Scenario, o: &RunOutcome) -> Result<ResultRecord> {
    let m = &o.matrix;
    let t = m.num_tasks();
    let square = (0..t).map(|i| (0..t).map(|s| (s >= i).then(|| m.at(i, s))).collect()).collect();
    Ok(ResultRecord {
        config_hash: cfg.hash(),
        seed,
        scenario,
        technique: format!("{:?}", cfg.pet.technique).to_lowercase(),
        variant: o.name.clone(),
        metrics: m.metrics(cfg.literal_ala)?,
        matrix: square,
        tii: o.tii.clone(),
        storage: o.storage,
        pool_size: None,
        transfer_full: None,
        transfer_few: None,
        decisions: None,
    })
}

/// Runs `mode` for one seed and returns its records.
pub fn run_seed(cfg: &ExperimentConfig, theta: &BackboneCheckpoint<f32>, seed: u64, mode: &Mode) -> Result<Vec<ResultRecord>> {
    let spec = cfg.pet.to_spec(cfg.arch.layers)?;
    let sc = crate::harness::stream::StreamConfig { seed, ..cfg.stream.clone() };
    let hide = &cfg.hide;
    match mode {
        Mode::Run | Mode::Ablate(_) | Mode::Recovery => {
            let stream = make_stream(&sc)?;
            let outs = match mode {
                Mode::Run => run_ladder(theta, &stream, &spec, hide, seed, &[hide.ladder])?,
                Mode::Ablate(r) => run_ladder(theta, &stream, &spec, hide, seed, r)?,
                _ => run_recovery(theta, &stream, &spec, hide, seed)?,
            };
            outs.iter().map(|o| record(cfg, seed, stream.scenario, o)).collect()
        }
        Mode::Strategies => {
            let stream = make_stream(&sc)?;
            let mut recs = Vec::new();
            for s in SharedStrategy::all() {
                let tii = run_strategy_tii(theta, &stream, &spec, hide, seed, s)?;
                let mut m = AccuracyMatrix::new();
                for (t, &v) in tii.iter().enumerate() {
                    m.push_stage(vec![v * 100.0; t + 1])?;
                }
                let o = RunOutcome { name: s.tag().into(), matrix: m, tii, storage: 0 };
                recs.push(record(cfg, seed, stream.scenario, &o)?);
            }
            Ok(recs)
        }
        Mode::Aka => {
            let stream = make_mixed_stream(&sc)?;
            let mut recs = Vec::new();
            for with_pool in [false, true] {
                let out = run_aka(theta, &stream, &spec, hide, &cfg.aka, seed, with_pool)?;
                let mut r = record(cfg, seed, stream.scenario, &out.run)?;
                r.variant = if with_pool { "aka".into() } else { "no-aka".into() };
                r.pool_size = Some(out.pool_size);
                r.transfer_full = Some(mean(&out.transfer_full));
                r.transfer_few = Some(mean(&out.transfer_few));
                r.decisions = with_pool.then_some(out.decisions);
                recs.push(r);
            }
            Ok(recs)
        }
    }
}

/// Runs `mode` for every configured seed, appending records to
/// `records.jsonl` and wall times to `timings.jsonl` under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, mode: &Mode, out: &Path) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let (theta, _) = obtain_checkpoint(cfg)?;
    let mut all = Vec::new();
    let mut rec_file = std::fs::OpenOptions::new().create(true).append(true).open(out.join("records.jsonl"))?;
    let mut time_file = std::fs::OpenOptions::new().create(true).append(true).open(out.join("timings.jsonl"))?;
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let recs = run_seed(cfg, &theta, seed, mode)?;
        let secs = start.elapsed().as_secs_f64();
        for r in &recs {
            writeln!(rec_file, "{}", serde_json::to_string(r)?)?;
            let t = serde_json::json!({ "config_hash": r.config_hash, "seed": seed, "variant": r.variant, "wall_time_s": secs });
            writeln!(time_file, "{t}")?;
        }
        all.extend(recs);
    }
    Ok(all)
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
