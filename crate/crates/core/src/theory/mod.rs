//! Monte-Carlo verification of the hierarchical decomposition bounds.
//!
//! An [`Instance`] is a batch of samples, each carrying explicit predictors
//! as distributions: within-task (WTP), task identity (TII), task-adaptive
//! (TAP) and one OOD Bernoulli per task. [`entropies`] evaluates their
//! cross-entropies, [`draw_case`] builds random instances that satisfy a
//! theorem's hypotheses, [`evaluate`] computes the asserted inequality and
//! [`run`] sweeps many instances in parallel.

mod check;
mod draw;

pub use check::{evaluate, run, witness, Bin, Outcome, Report, Theorem};
pub use draw::{draw_case, Budgets, Case};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::harness::stream::Scenario;

/// Ground-truth mass floor applied to randomly drawn distributions.
pub const MASS_FLOOR: f64 = 1e-12;

/// Tolerance on normalization of stored distributions.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Ground-truth task and within-task class.
    pub task: usize,
    pub class: usize,
    /// Within-task distribution of every task. CIL and TIL read the
    /// ground-truth task only; DIL mixes all of them.
    pub wtp: Vec<Vec<f64>>,
    /// Task-identity distribution.
    pub tii: Vec<f64>,
    /// Task-adaptive distribution over all observed classes (TIL: over the
    /// classes of the given task).
    pub tap: Vec<f64>,
    /// Per-task OOD probabilities `P_i(x in X_i)`.
    pub ood: Vec<f64>,
    /// Domain-membership simplex used by DIL; one-hot on `task` elsewhere.
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub scenario: Scenario,
    /// Classes per task; every entry is equal under DIL.
    pub classes: Vec<usize>,
    pub samples: Vec<Sample>,
}

/// Cross-entropies of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Entropies {
    pub wtp: f64,
    pub tii: f64,
    pub tap: f64,
    pub ood: Vec<f64>,
}

/// How per-sample values are aggregated over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Hypotheses and loss use batch expectations.
    #[default]
    Expectation,
    /// Hypotheses and loss hold for every sample (batch supremum).
    Pointwise,
}

impl LossMode {
    pub fn agg(self, xs: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            Self::Expectation => {
                let (mut s, mut n) = (0.0, 0usize);
                for x in xs {
                    s += x;
                    n += 1;
                }
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            }
            Self::Pointwise => xs.into_iter().fold(0.0, f64::max),
        }
    }
}

/// `-ln p`; `+inf` at zero.
pub fn nll(p: f64) -> f64 {
    -p.ln()
}

/// `-sum_k p_k ln q_k`, skipping zero weights.
pub fn cross(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * nll(*b)).sum()
}

impl Instance {
    pub fn num_tasks(&self) -> usize {
        self.classes.len()
    }

    pub fn total_classes(&self) -> usize {
        match self.scenario {
            Scenario::Dil => self.classes.first().copied().unwrap_or(0),
            _ => self.classes.iter().sum(),
        }
    }

    /// Index of the sample's label in its TAP distribution.
    pub fn label(&self, s: &Sample) -> usize {
        match self.scenario {
            Scenario::Cil => self.classes[..s.task].iter().sum::<usize>() + s.class,
            Scenario::Dil | Scenario::Til => s.class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.num_tasks();
        if t == 0 || self.classes.contains(&0) {
            return Err(Error::Contract("every task needs at least one class".into()));
        }
        if self.scenario == Scenario::Dil && self.classes.iter().any(|&k| k != self.classes[0]) {
            return Err(Error::Contract("DIL tasks share one label space".into()));
        }
        for (n, s) in self.samples.iter().enumerate() {
            let bad = |what: &str| Err(Error::Contract(format!("sample {n}: {what}")));
            if s.task >= t || s.class >= self.classes[s.task] {
                return bad("ground truth out of range");
            }
            if s.wtp.len() != t || s.tii.len() != t || s.ood.len() != t || s.gamma.len() != t {
                return bad("per-task lengths differ from the task count");
            }
            for (i, w) in s.wtp.iter().enumerate() {
                if w.len() != self.classes[i] || !is_categorical(w) {
                    return bad("within-task distribution");
                }
            }
            let tap_len = if self.scenario == Scenario::Til { self.classes[s.task] } else { self.total_classes() };
            if s.tap.len() != tap_len || !is_categorical(&s.tap) {
                return bad("task-adaptive distribution");
            }
            if !is_categorical(&s.tii) || !is_categorical(&s.gamma) {
                return bad("task-identity or membership distribution");
            }
            if s.ood.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("OOD probability outside [0, 1]");
            }
        }
        Ok(())
    }

    /// Per-sample `(joint, tap)` losses: the negative log-probability of the
    /// ground truth under the WTP-TII composition and under TAP.
    pub fn sample_losses(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| {
                let joint = match self.scenario {
                    Scenario::Dil => nll((0..self.num_tasks()).map(|i| s.wtp[i][s.class] * s.tii[i]).sum()),
                    _ => nll(s.tii[s.task] * s.wtp[s.task][s.class]),
                };
                (joint, nll(s.tap[self.label(s)]))
            })
            .collect()
    }

    /// Loss error: the larger of the aggregated joint and TAP losses.
    pub fn loss(&self, mode: LossMode) -> f64 {
        let l = self.sample_losses();
        mode.agg(l.iter().map(|x| x.0)).max(mode.agg(l.iter().map(|x| x.1)))
    }

    /// Copy whose TII is defined by the OOD detectors, `P_i / sum_j P_j`.
    pub fn with_ood_tii(&self) -> Instance {
        let mut c = self.clone();
        for s in &mut c.samples {
            let z: f64 = s.ood.iter().sum();
            s.tii = s.ood.iter().map(|p| p / z).collect();
        }
        c
    }

    /// TAP replaced by the product `P(i) P(j | i)` of the composition.
    pub fn with_product_tap(&self) -> Instance {
        let mut c = self.clone();
        for s in &mut c.samples {
            s.tap = match self.scenario {
                Scenario::Cil => s.tii.iter().zip(&s.wtp).flat_map(|(p, w)| w.iter().map(move |q| p * q)).collect(),
                Scenario::Dil => (0..self.total_classes()).map(|j| (0..s.tii.len()).map(|i| s.tii[i] * s.wtp[i][j]).sum()).collect(),
                Scenario::Til => s.wtp[s.task].clone(),
            };
        }
        c
    }
}

fn is_categorical(p: &[f64]) -> bool {
    !p.is_empty() && p.iter().all(|x| (0.0..=1.0).contains(x)) && (p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL
}

/// Cross-entropies of every sample. DIL weights the within-task and
/// task-identity terms by the sample's membership simplex.
pub fn entropies(inst: &Instance) -> Result<Vec<Entropies>> {
    inst.validate()?;
    Ok(inst
        .samples
        .iter()
        .map(|s| {
            let (wtp, tii) = match inst.scenario {
                Scenario::Dil => {
                    let w: Vec<f64> = s.wtp.iter().map(|w| w[s.class]).collect();
                    (cross(&s.gamma, &w), cross(&s.gamma, &s.tii))
                }
                _ => (nll(s.wtp[s.task][s.class]), nll(s.tii[s.task])),
            };
            let ood = s.ood.iter().enumerate().map(|(i, &p)| if i == s.task { nll(p) } else { nll(1.0 - p) }).collect();
            Entropies { wtp, tii, tap: nll(s.tap[inst.label(s)]), ood }
        })
        .collect())
}

/// Sufficiency bound of the OOD-to-TII direction for a sample of `task`:
/// `e^{eps_task} * sum_{i != task} (1 - e^{-eps_i})`.
pub fn ood_tii_bound(eps: &[f64], task: usize) -> f64 {
    let other: f64 = eps.iter().enumerate().filter(|(i, _)| *i != task).map(|(_, e)| 1.0 - (-e).exp()).sum();
    eps[task].exp() * other
}
