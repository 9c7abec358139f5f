//! Adaptive knowledge accumulation: a pool of shared LoRA sets that grows
//! when a task's data looks out-of-distribution for every earlier task and
//! otherwise retrieves the set of the most relevant earlier task. The chosen
//! set is merged into a copy of the backbone for the task's instructed path.

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneCheckpoint;
use crate::error::{Error, Result};
use crate::harness::stream::Task;
use crate::hide::engine::{local_targets, mean_row, RepState, TaskReps};
use crate::hide::stats::{fit_stats, Recovery, RepStats};
use crate::hide::train::{fit_pet, FitJob};
use crate::hide::HideConfig;
use crate::numcore::{argmax, Linear, Tensor};
use crate::pet::{PetParams, PetSpec, Technique};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AkaConfig {
    /// OOD threshold on the mean normalized distance.
    pub lambda_ood: f64,
    /// Epochs for transfer evaluation on validation tasks.
    pub transfer_epochs: usize,
}

impl Default for AkaConfig {
    fn default() -> Self {
        Self { lambda_ood: 0.7, transfer_epochs: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "set")]
pub enum Decision {
    Expand,
    Retrieve(usize),
}

/// One line of the decisions log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub task: usize,
    pub decision: String,
    pub set: usize,
    /// Fraction of samples judged OOD for every earlier task.
    pub ood_fraction: f64,
    /// Fraction of samples whose nearest earlier task is `i`.
    pub votes: Vec<f64>,
}

pub fn normalize(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (x as f64 / n) as f32).collect()
}

/// Mean Euclidean distance from normalized `x` to the (already normalized)
/// reference points of one task.
pub fn ood_score(x: &[f32], refs: &[Vec<f32>]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::State("no statistics for this task".into()));
    }
    let x = normalize(x);
    let total: f64 = refs
        .iter()
        .map(|r| x.iter().zip(r).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / refs.len() as f64)
}

/// Normalized multi-centroid references of one task, fitted per class on
/// plain-backbone representations.
pub fn fit_refs(plain: &Tensor<f32>, labels: &[usize], classes: &[usize], rng: &SplitRng) -> Result<Vec<Vec<f32>>> {
    let mut refs = Vec::new();
    for (k, c) in classes.iter().enumerate() {
        let rows: Vec<Vec<f32>> =
            (0..labels.len()).filter(|&i| labels[i] == *c).map(|i| plain.row(i).to_vec()).collect();
        let f = fit_stats(&rows, Recovery::MultiCentroid, &mut rng.fork_idx("class", k as u64))?;
        let RepStats::MultiCentroid { centroids, .. } = f.stats else { unreachable!() };
        refs.extend(centroids.iter().map(|c| normalize(c)));
    }
    Ok(refs)
}

/// Per-sample minimum score and nearest task against every earlier task.
fn nearest(plain: &Tensor<f32>, refs: &[Vec<Vec<f32>>]) -> Result<Vec<(f64, usize)>> {
    (0..plain.rows())
        .map(|i| {
            let scores = refs.iter().map(|r| ood_score(plain.row(i), r)).collect::<Result<Vec<f64>>>()?;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let j = argmax(&neg);
            Ok((scores[j], j))
        })
        .collect()
}

/// Task-level decision: expand on a strict majority of samples OOD for
/// every earlier task, otherwise retrieve the set of the majority-vote
/// nearest task (ties to the lowest index).
pub fn decide(
    plain: &Tensor<f32>,
    refs: &[Vec<Vec<f32>>],
    association: &[usize],
    lambda: f64,
) -> Result<(Decision, f64, Vec<f64>)> {
    if refs.is_empty() {
        return Ok((Decision::Expand, 1.0, Vec::new()));
    }
    if refs.len() != association.len() {
        return Err(Error::State("every earlier task needs references and a set".into()));
    }
    let near = nearest(plain, refs)?;
    let n = near.len().max(1) as f64;
    let ood = near.iter().filter(|(s, _)| *s > lambda).count() as f64 / n;
    let mut votes = vec![0.0; refs.len()];
    for (_, j) in &near {
        votes[*j] += 1.0 / n;
    }
    if ood > 0.5 {
        return Ok((Decision::Expand, ood, votes));
    }
    Ok((Decision::Retrieve(association[argmax(&votes)]), ood, votes))
}

/// Pool size after each task for a fixed threshold, from the plain
/// representations and references of every task.
pub fn simulate_pool(plains: &[Tensor<f32>], refs: &[Vec<Vec<f32>>], lambda: f64) -> Result<Vec<usize>> {
    let mut assoc = Vec::new();
    let mut k = 0;
    let mut sizes = Vec::new();
    for (t, plain) in plains.iter().enumerate() {
        let (d, _, _) = decide(plain, &refs[..t], &assoc, lambda)?;
        let j = match d {
            Decision::Expand => {
                k += 1;
                k - 1
            }
            Decision::Retrieve(j) => j,
        };
        assoc.push(j);
        sizes.push(k);
    }
    Ok(sizes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedPool {
    pub sets: Vec<PetParams<f32>>,
    /// Whether the set has only seen the task that created it.
    pub first_task: Vec<bool>,
    pub lambda_ood: f64,
    /// Set index of every learned task.
    pub association: Vec<usize>,
}

impl SharedPool {
    pub fn new(lambda_ood: f64) -> Self {
        Self { sets: Vec::new(), first_task: Vec::new(), lambda_ood, association: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Continual learner whose shared knowledge lives in a [`SharedPool`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AkaLearner {
    pub rep: RepState,
    pub pool: SharedPool,
    pub g_spec: PetSpec,
    /// Normalized references per task.
    pub refs: Vec<Vec<Vec<f32>>>,
    pub log: Vec<DecisionRecord>,
}

impl AkaLearner {
    pub fn new(rep: RepState, lambda_ood: f64, num_layers: usize) -> Result<Self> {
        if rep.g.is_some() {
            return Err(Error::Config("the pool replaces the single shared set".into()));
        }
        let g_spec = PetSpec::for_technique(Technique::Lora, num_layers);
        Ok(Self { rep, pool: SharedPool::new(lambda_ood), g_spec, refs: Vec::new(), log: Vec::new() })
    }

    pub fn train_task(
        &mut self,
        theta: &BackboneCheckpoint<f32>,
        task: &Task,
        cfg: &HideConfig,
        root: &SplitRng,
    ) -> Result<TaskReps> {
        let t = self.rep.num_tasks();
        let rng = root.fork_idx("task", t as u64);
        let plain = theta.encode_all(&task.train, None)?;
        let (decision, ood, votes) = decide(&plain, &self.refs, &self.pool.association, self.pool.lambda_ood)?;
        let cols = self.rep.register(task, &rng);
        let (j, lr) = match decision {
            Decision::Expand => {
                let g = PetParams::init(&self.g_spec, theta.arch.dim, theta.arch.layers, &mut rng.fork("g-init"))?;
                self.pool.sets.push(g);
                self.pool.first_task.push(true);
                (self.pool.sets.len() - 1, cfg.lr_big)
            }
            Decision::Retrieve(j) => {
                self.pool.first_task[j] = false;
                (j, cfg.lr_small)
            }
        };
        let targets = local_targets(task)?;
        let job = FitJob {
            backbone: theta,
            set: &task.train,
            cols: &cols,
            targets: &targets,
            epochs: cfg.epochs,
            frozen_epochs: 0,
            batch_size: cfg.batch_size,
            lr_pet: lr,
            lr_head: cfg.lr_e,
        };
        fit_pet(&job, &mut self.pool.sets[j], &mut self.rep.psi_hat, &rng.fork("g-fit"))?;
        let snapshot = self.pool.sets[j].clone();
        let view = theta.merged(&snapshot)?;
        self.rep.views.push(Some(snapshot));
        self.rep.train_e(&view, task, &cols, cfg, &rng)?;
        self.pool.association.push(j);
        self.refs.push(fit_refs(&plain, &task.train.y, &task.classes, &rng.fork("refs"))?);
        self.rep.keys.push(mean_row(&plain));
        self.log.push(DecisionRecord {
            task: t,
            decision: match decision {
                Decision::Expand => "expand".into(),
                Decision::Retrieve(_) => "retrieve".into(),
            },
            set: j,
            ood_fraction: ood,
            votes,
        });
        let inst = view.encode_all(&task.train, self.rep.e.last())?;
        Ok(TaskReps { labels: task.train.y.clone(), un: plain.clone(), plain, inst })
    }

    /// Set retrieved for unseen data (never expands).
    pub fn retrieve_for(&self, theta: &BackboneCheckpoint<f32>, task: &Task) -> Result<usize> {
        let plain = theta.encode_all(&task.train, None)?;
        match decide(&plain, &self.refs, &self.pool.association, f64::INFINITY)?.0 {
            Decision::Retrieve(j) => Ok(j),
            Decision::Expand => Err(Error::State("no task learned yet".into())),
        }
    }
}

/// Test accuracy of a fresh task set and head trained on `task.train` over
/// `view`; used to compare transfer with and without a retrieved set.
pub fn transfer_accuracy(
    view: &BackboneCheckpoint<f32>,
    spec: &PetSpec,
    task: &Task,
    cfg: &HideConfig,
    epochs: usize,
    rng: &SplitRng,
) -> Result<f64> {
    let mut e = PetParams::init(spec, view.arch.dim, view.arch.layers, &mut rng.fork("e-init"))?;
    let mut head = Linear::<f32>::new(view.arch.dim, task.classes.len(), 0.02, &mut rng.fork("head"));
    let cols: Vec<usize> = (0..task.classes.len()).collect();
    let targets = local_targets(task)?;
    let job = FitJob {
        backbone: view,
        set: &task.train,
        cols: &cols,
        targets: &targets,
        epochs,
        frozen_epochs: 0,
        batch_size: cfg.batch_size,
        lr_pet: cfg.lr_e,
        lr_head: cfg.lr_e,
    };
    fit_pet(&job, &mut e, &mut head, &rng.fork("fit"))?;
    let logits = head.logits(&view.encode_all(&task.test, Some(&e))?)?;
    let ok = (0..task.test.len()).filter(|&i| task.classes[argmax(logits.row(i))] == task.test.y[i]).count();
    Ok(ok as f64 / task.test.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_zero_at_centroid() {
        let c = normalize(&[3.0, 4.0]);
        assert_eq!(ood_score(&[6.0, 8.0], &[c]).unwrap(), 0.0);
        assert!(ood_score(&[1.0], &[]).is_err());
    }

    #[test]
    fn thresholds_at_extremes() {
        let plain = Tensor::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        let refs = vec![vec![normalize(&[1.0, 1.0])]];
        assert_eq!(decide(&plain, &refs, &[0], f64::INFINITY).unwrap().0, Decision::Retrieve(0));
        assert_eq!(decide(&plain, &refs, &[0], 0.0).unwrap().0, Decision::Expand);
        let plains = vec![plain.clone(), plain.clone(), plain];
        let refs3 = vec![refs[0].clone(); 3];
        assert_eq!(simulate_pool(&plains, &refs3, f64::INFINITY).unwrap(), vec![1, 1, 1]);
        assert_eq!(simulate_pool(&plains, &refs3, 0.0).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn vote_ties_go_to_lowest_task() {
        let plain = Tensor::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        let refs = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let (d, ood, votes) = decide(&plain, &refs, &[0, 1], 10.0).unwrap();
        assert_eq!(d, Decision::Retrieve(0));
        assert_eq!(ood, 0.0);
        assert_eq!(votes, vec![0.5, 0.5]);
    }
}
