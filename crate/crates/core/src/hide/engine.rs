//! Task-by-task training and inference.
//!
//! Training is split into a representation part ([`RepState`]: task sets
//! `e_i`, shared set `g`, within-task head, task keys) and any number of head
//! branches ([`HeadBranch`]: recovered statistics plus task-identity and
//! task-adaptive heads). Several branches can ride on one representation run
//! because branch updates never feed back into it.

use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::stats::{fit_stats, Recovery, RepStats};
use super::train::{fit_head, fit_pet, FitJob};
use super::{HideConfig, Ladder, SharedStrategy, TiiMode};
use crate::backbone::{Arch, BackboneCheckpoint};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::harness::stream::Task;
use crate::numcore::{argmax, Linear, Tensor};
use crate::pet::{ensemble_init, PetParams, PetSpec};
use crate::rng::SplitRng;

const HEAD_INIT_STD: f64 = 0.02;

/// Classes of every task and the head column assigned to each
/// `(task, class)` pair, in registration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub tasks: Vec<Vec<usize>>,
    pub columns: Vec<(usize, usize)>,
}

impl Registry {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_cols(&self, task: usize) -> Vec<usize> {
        (0..self.columns.len()).filter(|&c| self.columns[c].0 == task).collect()
    }

    pub fn class_of(&self, col: usize) -> usize {
        self.columns[col].1
    }

    pub fn col_of(&self, task: usize, class: usize) -> Option<usize> {
        self.columns.iter().position(|&(t, c)| t == task && c == class)
    }

    fn register(&mut self, classes: &[usize]) -> Vec<usize> {
        let t = self.tasks.len();
        self.tasks.push(classes.to_vec());
        let start = self.columns.len();
        self.columns.extend(classes.iter().map(|&c| (t, c)));
        (start..self.columns.len()).collect()
    }
}

/// Representations of one task's training data after its training.
#[derive(Clone, Debug)]
pub struct TaskReps {
    pub labels: Vec<usize>,
    /// `f_θ(x)`.
    pub plain: Tensor<f32>,
    /// Uninstructed: `f_{θ,g}(x)`, or `f_θ(x)` without a shared set.
    pub un: Tensor<f32>,
    /// Instructed: `f_{θ,e_i}(x)` (on the task's backbone view).
    pub inst: Tensor<f32>,
}

fn rows(t: &Tensor<f32>, idx: &[usize]) -> Vec<Vec<f32>> {
    idx.iter().map(|&i| t.row(i).to_vec()).collect()
}

/// Representation side of the learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepState {
    pub spec: PetSpec,
    /// Ensemble initialization plus task-local loss, versus fresh sets and a
    /// global softmax over every observed class.
    pub hierarchical: bool,
    pub e: Vec<PetParams<f32>>,
    pub g: Option<PetParams<f32>>,
    /// Within-task head over all registered columns.
    pub psi: Linear<f32>,
    /// Head used while training `g`.
    pub psi_hat: Linear<f32>,
    /// Mean plain representation of each task's training data.
    pub keys: Vec<Vec<f32>>,
    pub registry: Registry,
    /// Optional LoRA set merged into `θ` for a task's instructed path.
    pub views: Vec<Option<PetParams<f32>>>,
}

impl RepState {
    pub fn new(spec: &PetSpec, arch: &Arch, hierarchical: bool, with_g: bool, root: &SplitRng) -> Result<Self> {
        spec.validate(arch.layers)?;
        let g = if with_g { Some(PetParams::init(spec, arch.dim, arch.layers, &mut root.fork("g-init"))?) } else { None };
        let empty = || Linear { w: Tensor::zeros(&[arch.dim, 0]), b: Tensor::zeros(&[0]) };
        Ok(Self {
            spec: spec.clone(),
            hierarchical,
            e: Vec::new(),
            g,
            psi: empty(),
            psi_hat: empty(),
            keys: Vec::new(),
            registry: Registry::default(),
            views: Vec::new(),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.registry.num_tasks()
    }

    /// Backbone of task `k`'s instructed path.
    pub fn view<'a>(&self, theta: &'a BackboneCheckpoint<f32>, k: usize) -> Result<Cow<'a, BackboneCheckpoint<f32>>> {
        match self.views.get(k) {
            Some(Some(g)) => Ok(Cow::Owned(theta.merged(g)?)),
            Some(None) => Ok(Cow::Borrowed(theta)),
            None => Err(Error::Index(format!("task {k} of {}", self.views.len()))),
        }
    }

    pub fn uninstructed(&self, theta: &BackboneCheckpoint<f32>, set: &LabeledSet) -> Result<Tensor<f32>> {
        theta.encode_all(set, self.g.as_ref())
    }

    pub fn instructed(&self, theta: &BackboneCheckpoint<f32>, k: usize, set: &LabeledSet) -> Result<Tensor<f32>> {
        let e = self.e.get(k).ok_or_else(|| Error::Index(format!("task set {k} of {}", self.e.len())))?;
        self.view(theta, k)?.encode_all(set, Some(e))
    }

    /// Adds the task's classes to the registry and widens both heads.
    pub fn register(&mut self, task: &Task, rng: &SplitRng) -> Vec<usize> {
        let cols = self.registry.register(&task.classes);
        let n = cols.len();
        self.psi.grow(n, HEAD_INIT_STD, &mut rng.fork("psi"));
        self.psi_hat.grow(n, HEAD_INIT_STD, &mut rng.fork("psi-hat"));
        cols
    }

    /// Initializes and trains `e_t` on `view` and stores it.
    pub fn train_e(
        &mut self,
        view: &BackboneCheckpoint<f32>,
        task: &Task,
        cols: &[usize],
        cfg: &HideConfig,
        rng: &SplitRng,
    ) -> Result<()> {
        let arch = &view.arch;
        let fresh = || PetParams::init(&self.spec, arch.dim, arch.layers, &mut rng.fork("e-init"));
        let mut e = if self.hierarchical {
            let prev: Vec<&PetParams<f32>> = self.e.iter().collect();
            ensemble_init(&prev, cfg.alpha, fresh)?
        } else {
            fresh()?
        };
        let t = self.registry.num_tasks() - 1;
        let (job_cols, targets): (Vec<usize>, Vec<usize>) = if self.hierarchical {
            let local = local_targets(task)?;
            (cols.to_vec(), local)
        } else {
            let all: Vec<usize> = (0..self.registry.columns.len()).collect();
            let targets = task
                .train
                .y
                .iter()
                .map(|&y| self.registry.col_of(t, y).ok_or_else(|| Error::Index(format!("class {y} not registered"))))
                .collect::<Result<_>>()?;
            (all, targets)
        };
        let job = FitJob {
            backbone: view,
            set: &task.train,
            cols: &job_cols,
            targets: &targets,
            epochs: cfg.epochs,
            frozen_epochs: 0,
            batch_size: cfg.batch_size,
            lr_pet: cfg.lr_e,
            lr_head: cfg.lr_e,
        };
        fit_pet(&job, &mut e, &mut self.psi, &rng.fork("e-fit"))?;
        self.e.push(e);
        Ok(())
    }

    /// One task of the representation side: register, update `g`, train
    /// `e_t`, store the task key, and return the task's representations.
    pub fn train_task(
        &mut self,
        theta: &BackboneCheckpoint<f32>,
        task: &Task,
        cfg: &HideConfig,
        root: &SplitRng,
    ) -> Result<TaskReps> {
        let t = self.num_tasks();
        let rng = root.fork_idx("task", t as u64);
        let cols = self.register(task, &rng);
        if let Some(mut g) = self.g.take() {
            let out = train_shared(theta, &mut g, &mut self.psi_hat, task, &cols, cfg, t, &rng);
            self.g = Some(g);
            out?;
        }
        self.views.push(None);
        self.train_e(theta, task, &cols, cfg, &rng)?;
        let reps = self.task_reps(theta, task)?;
        self.keys.push(mean_row(&reps.plain));
        Ok(reps)
    }

    pub fn task_reps(&self, theta: &BackboneCheckpoint<f32>, task: &Task) -> Result<TaskReps> {
        let t = self.num_tasks() - 1;
        Ok(TaskReps {
            labels: task.train.y.clone(),
            plain: theta.encode_all(&task.train, None)?,
            un: self.uninstructed(theta, &task.train)?,
            inst: self.instructed(theta, t, &task.train)?,
        })
    }
}

pub(crate) fn mean_row(t: &Tensor<f32>) -> Vec<f32> {
    let (n, d) = t.dims2();
    let mut m = vec![0.0f64; d];
    for i in 0..n {
        for (a, &b) in m.iter_mut().zip(t.row(i)) {
            *a += b as f64;
        }
    }
    m.into_iter().map(|v| (v / n.max(1) as f64) as f32).collect()
}

/// Per-sample index of the label within `task.classes`.
pub(crate) fn local_targets(task: &Task) -> Result<Vec<usize>> {
    task.train
        .y
        .iter()
        .map(|y| task.classes.iter().position(|c| c == y).ok_or_else(|| Error::Index(format!("label {y} outside task"))))
        .collect()
}

/// Updates the shared set on one task according to the configured strategy.
#[allow(clippy::too_many_arguments)]
pub fn train_shared(
    theta: &BackboneCheckpoint<f32>,
    g: &mut PetParams<f32>,
    psi_hat: &mut Linear<f32>,
    task: &Task,
    cols: &[usize],
    cfg: &HideConfig,
    t: usize,
    rng: &SplitRng,
) -> Result<()> {
    let Some((lr, frozen)) = cfg.shared_schedule(t) else { return Ok(()) };
    let targets = local_targets(task)?;
    let job = FitJob {
        backbone: theta,
        set: &task.train,
        cols,
        targets: &targets,
        epochs: cfg.epochs,
        frozen_epochs: frozen,
        batch_size: cfg.batch_size,
        lr_pet: lr,
        lr_head: cfg.lr_e,
    };
    if cfg.strategy == SharedStrategy::Ema {
        let mut interim = g.clone();
        fit_pet(&job, &mut interim, psi_hat, &rng.fork("g-fit"))?;
        g.axpby(1.0 - cfg.ema_momentum, &interim, cfg.ema_momentum)?;
    } else {
        fit_pet(&job, g, psi_hat, &rng.fork("g-fit"))?;
    }
    Ok(())
}

/// Statistics-fed heads and the decoding rule of one method variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadBranch {
    pub name: String,
    pub recovery: Recovery,
    pub tii: TiiMode,
    pub tap: bool,
    pub all_classes: bool,
    /// Per task, per class (in task order): uninstructed statistics.
    pub stats_un: Vec<Vec<RepStats>>,
    /// Per task, per class: instructed statistics.
    pub stats_in: Vec<Vec<RepStats>>,
    pub omega: Option<Linear<f32>>,
    pub psi_tap: Option<Linear<f32>>,
    pub warnings: Vec<String>,
}

impl HeadBranch {
    pub fn new(name: &str, tii: TiiMode, tap: bool, all_classes: bool, recovery: Recovery) -> Self {
        Self {
            name: name.into(),
            recovery,
            tii,
            tap,
            all_classes,
            stats_un: Vec::new(),
            stats_in: Vec::new(),
            omega: None,
            psi_tap: None,
            warnings: Vec::new(),
        }
    }

    pub fn for_ladder(ladder: Ladder, recovery: Recovery) -> Self {
        Self::new(ladder.tag(), ladder.tii(), ladder.tap(), ladder.all_classes(), recovery)
    }

    pub fn storage(&self) -> usize {
        self.stats_un.iter().chain(&self.stats_in).flatten().map(|s| s.storage()).sum()
    }

    /// Refits statistics and heads after the representation side finished
    /// task `t = rep.num_tasks() - 1`.
    pub fn update(&mut self, rep: &RepState, reps: &TaskReps, cfg: &HideConfig, root: &SplitRng) -> Result<()> {
        let t = rep.num_tasks() - 1;
        if self.stats_un.len() != t {
            return Err(Error::State(format!("branch {} holds {} tasks, expected {t}", self.name, self.stats_un.len())));
        }
        let rng = root.fork_idx("task", t as u64);
        let classes = &rep.registry.tasks[t];
        let d = reps.un.cols();
        let by_class: Vec<Vec<usize>> =
            classes.iter().map(|c| (0..reps.labels.len()).filter(|&i| reps.labels[i] == *c).collect()).collect();
        let (mut su, mut si) = (Vec::new(), Vec::new());
        if self.recovery != Recovery::None {
            for (k, idx) in by_class.iter().enumerate() {
                let fu = fit_stats(&rows(&reps.un, idx), self.recovery, &mut rng.fork_idx("stats-un", k as u64))?;
                let fi = fit_stats(&rows(&reps.inst, idx), self.recovery, &mut rng.fork_idx("stats-in", k as u64))?;
                self.warnings.extend(fu.warning.into_iter().chain(fi.warning));
                su.push(fu.stats);
                si.push(fi.stats);
            }
        }
        self.stats_un.push(su);
        self.stats_in.push(si);

        let spc = cfg.samples_per_class;
        if self.tii == TiiMode::Learned {
            let mut omega = self.omega.take().unwrap_or_else(|| Linear { w: Tensor::zeros(&[d, 0]), b: Tensor::zeros(&[0]) });
            omega.grow(1, HEAD_INIT_STD, &mut rng.fork("omega-grow"));
            let (xs, ys) = if self.recovery == Recovery::None {
                (rows(&reps.un, &(0..reps.labels.len()).collect::<Vec<_>>()), vec![t; reps.labels.len()])
            } else {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                let draw = rng.fork("omega-draw");
                for (k, task_stats) in self.stats_un.iter().enumerate() {
                    for (c, st) in task_stats.iter().enumerate() {
                        xs.extend(st.sample(spc, &mut draw.fork_idx("t", k as u64).fork_idx("c", c as u64)));
                        ys.extend(std::iter::repeat_n(k, spc));
                    }
                }
                (xs, ys)
            };
            fit_head(&mut omega, &xs, &ys, cfg.head_epochs, cfg.head_batch_size, cfg.lr_head, &rng.fork("omega-fit"))?;
            self.omega = Some(omega);
        }
        if self.tap {
            let mut psi = rep.psi.clone();
            let (xs, ys) = if self.recovery == Recovery::None {
                let ys = reps
                    .labels
                    .iter()
                    .map(|&y| rep.registry.col_of(t, y).ok_or_else(|| Error::Index(format!("class {y}"))))
                    .collect::<Result<Vec<_>>>()?;
                (rows(&reps.inst, &(0..reps.labels.len()).collect::<Vec<_>>()), ys)
            } else {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                let draw = rng.fork("tap-draw");
                for (k, task_stats) in self.stats_in.iter().enumerate() {
                    let cols = rep.registry.task_cols(k);
                    for (c, st) in task_stats.iter().enumerate() {
                        xs.extend(st.sample(spc, &mut draw.fork_idx("t", k as u64).fork_idx("c", c as u64)));
                        ys.extend(std::iter::repeat_n(cols[c], spc));
                    }
                }
                (xs, ys)
            };
            fit_head(&mut psi, &xs, &ys, cfg.head_epochs, cfg.head_batch_size, cfg.lr_head, &rng.fork("tap-fit"))?;
            self.psi_tap = Some(psi);
        }
        Ok(())
    }

    /// Predicted task and class of sample `i`, given per-task logits of the
    /// active head on the instructed representations.
    fn decode(
        &self,
        rep: &RepState,
        i: usize,
        true_task: usize,
        plain: &Tensor<f32>,
        task_logits: Option<&Tensor<f32>>,
        class_logits: &[Tensor<f32>],
    ) -> (usize, usize) {
        let seen = class_logits.len();
        let task = match self.tii {
            TiiMode::Oracle => true_task,
            TiiMode::Learned => argmax(task_logits.expect("task head").row(i)),
            TiiMode::Key => {
                let x = plain.row(i);
                let dist = |k: &Vec<f32>| x.iter().zip(k).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>();
                let scores: Vec<f64> = rep.keys[..seen].iter().map(|k| -dist(k)).collect();
                argmax(&scores)
            }
        };
        let row = class_logits[task].row(i);
        let col = if self.all_classes {
            argmax(row)
        } else {
            let cols = rep.registry.task_cols(task);
            let local: Vec<f32> = cols.iter().map(|&c| row[c]).collect();
            cols[argmax(&local)]
        };
        (task, rep.registry.class_of(col))
    }
}

/// Representations that stay valid across stages: plain ones and the
/// instructed ones of finished tasks.
#[derive(Default)]
pub struct EvalCache {
    plain: HashMap<usize, Tensor<f32>>,
    inst: HashMap<(usize, usize), Tensor<f32>>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plain(&mut self, theta: &BackboneCheckpoint<f32>, j: usize, set: &LabeledSet) -> Result<&Tensor<f32>> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.plain.entry(j) {
            e.insert(theta.encode_all(set, None)?);
        }
        Ok(&self.plain[&j])
    }

    pub fn instructed(
        &mut self,
        theta: &BackboneCheckpoint<f32>,
        rep: &RepState,
        j: usize,
        k: usize,
        set: &LabeledSet,
    ) -> Result<&Tensor<f32>> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.inst.entry((j, k)) {
            e.insert(rep.instructed(theta, k, set)?);
        }
        Ok(&self.inst[&(j, k)])
    }
}

/// Evaluation of one branch at one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    /// Accuracy on each evaluated test set.
    pub acc: Vec<f64>,
    /// Fraction of samples whose task was identified correctly.
    pub tii: Vec<f64>,
}

/// Predictions `(task, class)` of every sample of test set `j`.
pub fn predict(
    theta: &BackboneCheckpoint<f32>,
    rep: &RepState,
    branch: &HeadBranch,
    j: usize,
    set: &LabeledSet,
    cache: &mut EvalCache,
) -> Result<Vec<(usize, usize)>> {
    let seen = rep.num_tasks();
    if seen == 0 {
        return Err(Error::State("no task has been learned".into()));
    }
    let plain = cache.plain(theta, j, set)?.clone();
    let task_logits = match branch.tii {
        TiiMode::Learned => {
            let omega = branch.omega.as_ref().ok_or_else(|| Error::State("task head missing".into()))?;
            Some(omega.logits(&rep.uninstructed(theta, set)?)?)
        }
        _ => None,
    };
    let head = if branch.tap { branch.psi_tap.as_ref().ok_or_else(|| Error::State("adaptive head missing".into()))? } else { &rep.psi };
    let mut class_logits = Vec::with_capacity(seen);
    for k in 0..seen {
        class_logits.push(head.logits(cache.instructed(theta, rep, j, k, set)?)?);
    }
    Ok((0..set.len()).map(|i| branch.decode(rep, i, j, &plain, task_logits.as_ref(), &class_logits)).collect())
}

/// Accuracy and task-identification rate of each branch on test sets
/// `tests[j]` (task `j`).
pub fn evaluate(
    theta: &BackboneCheckpoint<f32>,
    rep: &RepState,
    branches: &[&HeadBranch],
    tests: &[&LabeledSet],
    cache: &mut EvalCache,
) -> Result<Vec<StageEval>> {
    let mut out = vec![StageEval { acc: Vec::new(), tii: Vec::new() }; branches.len()];
    for (j, set) in tests.iter().enumerate() {
        for (b, branch) in branches.iter().enumerate() {
            let preds = predict(theta, rep, branch, j, set, cache)?;
            let n = set.len().max(1) as f64;
            let acc = preds.iter().zip(&set.y).filter(|((_, c), y)| c == *y).count() as f64 / n;
            let tii = preds.iter().filter(|(t, _)| *t == j).count() as f64 / n;
            out[b].acc.push(acc);
            out[b].tii.push(tii);
        }
    }
    Ok(out)
}

/// A complete single-variant learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HideState {
    pub cfg: HideConfig,
    pub seed: u64,
    pub rep: RepState,
    pub branch: HeadBranch,
}

impl HideState {
    pub fn new(arch: &Arch, spec: &PetSpec, cfg: &HideConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let root = Self::root(seed);
        let with_g = cfg.ladder.hierarchical_wtp();
        let rep = RepState::new(spec, arch, cfg.ladder.hierarchical_wtp(), with_g, &root.fork("rep"))?;
        let branch = HeadBranch::for_ladder(cfg.ladder, cfg.recovery);
        Ok(Self { cfg: cfg.clone(), seed, rep, branch })
    }

    pub fn root(seed: u64) -> SplitRng {
        SplitRng::new(seed).fork("hide")
    }

    pub fn train_task(&mut self, theta: &BackboneCheckpoint<f32>, task: &Task) -> Result<()> {
        if !theta.is_frozen() {
            return Err(Error::Contract("the backbone must be frozen before continual training".into()));
        }
        let root = Self::root(self.seed);
        let reps = self.rep.train_task(theta, task, &self.cfg, &root.fork("rep"))?;
        self.branch.update(&self.rep, &reps, &self.cfg, &root.fork("branch"))
    }

    /// Predicted global class of every sample in `set`.
    pub fn predict_set(&self, theta: &BackboneCheckpoint<f32>, set: &LabeledSet) -> Result<Vec<usize>> {
        if self.branch.tii == TiiMode::Oracle {
            return Err(Error::Unsupported("oracle task identity needs labelled test tasks".into()));
        }
        let mut cache = EvalCache::new();
        Ok(predict(theta, &self.rep, &self.branch, 0, set, &mut cache)?.into_iter().map(|(_, c)| c).collect())
    }

    /// Class of a single `tokens × feat` sample.
    pub fn infer(&self, theta: &BackboneCheckpoint<f32>, x: &[f32]) -> Result<usize> {
        let mut set = LabeledSet::empty(theta.arch.tokens, theta.arch.feat);
        set.push(x, 0)?;
        Ok(self.predict_set(theta, &set)?[0])
    }

    /// Task-identification accuracy and the accuracy of an auxiliary
    /// all-class head trained on recovered uninstructed statistics, both
    /// averaged over `tests` (task `j` at index `j`).
    pub fn eval_tii(&self, theta: &BackboneCheckpoint<f32>, tests: &[&LabeledSet]) -> Result<(f64, f64)> {
        if self.branch.recovery == Recovery::None {
            return Err(Error::Unsupported("no statistics are kept without recovery".into()));
        }
        let mut cache = EvalCache::new();
        let evals = evaluate(theta, &self.rep, &[&self.branch], tests, &mut cache)?;
        let tii = evals[0].tii.iter().sum::<f64>() / tests.len().max(1) as f64;
        let d = theta.arch.dim;
        let mut aux = Linear::<f32>::new(d, self.rep.registry.columns.len(), HEAD_INIT_STD, &mut Self::root(self.seed).fork("aux"));
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        let draw = Self::root(self.seed).fork("aux-draw");
        for (k, task_stats) in self.branch.stats_un.iter().enumerate() {
            let cols = self.rep.registry.task_cols(k);
            for (c, st) in task_stats.iter().enumerate() {
                xs.extend(st.sample(self.cfg.samples_per_class, &mut draw.fork_idx("t", k as u64).fork_idx("c", c as u64)));
                ys.extend(std::iter::repeat_n(cols[c], self.cfg.samples_per_class));
            }
        }
        fit_head(&mut aux, &xs, &ys, self.cfg.head_epochs, self.cfg.head_batch_size, self.cfg.lr_head, &Self::root(self.seed).fork("aux-fit"))?;
        let mut acc = 0.0;
        for set in tests {
            let logits = aux.logits(&self.rep.uninstructed(theta, set)?)?;
            let ok = (0..set.len()).filter(|&i| self.rep.registry.class_of(argmax(logits.row(i))) == set.y[i]).count();
            acc += ok as f64 / set.len().max(1) as f64;
        }
        Ok((tii, acc / tests.len().max(1) as f64))
    }
}
