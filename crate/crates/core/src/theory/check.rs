//! Theorem checks, tightness witnesses and the Monte-Carlo sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_case, entropies, ood_tii_bound, Budgets, Case, Entropies, Instance, LossMode, Sample, Scenario};
use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Relative tolerance for floating-point comparisons against a bound.
pub const TOL: f64 = 1e-9;

/// Histogram resolution of the slack report.
const BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// WTP, TII and TAP budgets bound the loss error.
    Thm1,
    /// A loss-error budget bounds WTP, TII and TAP.
    Thm2,
    /// Per-task OOD budgets bound TII.
    Thm3Sufficiency,
    /// A TII budget bounds derived per-task OOD detectors.
    Thm3Necessity,
    /// Domain-incremental form with the `log t` term.
    Dil,
    /// Task-incremental form with oracle task identity.
    Til,
    /// WTP, TAP and OOD budgets bound the loss error.
    OodSufficiency,
    /// A loss-error budget bounds WTP, TII, TAP and derived OOD detectors.
    OodNecessity,
}

impl Theorem {
    pub const ALL: [Theorem; 8] = [
        Self::Thm1,
        Self::Thm2,
        Self::Thm3Sufficiency,
        Self::Thm3Necessity,
        Self::Dil,
        Self::Til,
        Self::OodSufficiency,
        Self::OodNecessity,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Thm1 => "1",
            Self::Thm2 => "2",
            Self::Thm3Sufficiency => "3-ood-to-tii",
            Self::Thm3Necessity => "3-tii-to-ood",
            Self::Dil => "dil",
            Self::Til => "til",
            Self::OodSufficiency => "ood-suff",
            Self::OodNecessity => "ood-nec",
        }
    }

    /// Command-line selector; `3` names both directions and `all` every check.
    pub fn parse_group(s: &str) -> Result<Vec<Theorem>> {
        match s.to_ascii_lowercase().as_str() {
            "3" => Ok(vec![Self::Thm3Sufficiency, Self::Thm3Necessity]),
            "all" => Ok(Self::ALL.to_vec()),
            other => Self::ALL
                .iter()
                .find(|t| t.tag() == other)
                .map(|t| vec![*t])
                .ok_or_else(|| Error::Config(format!("unknown theorem {other:?}"))),
        }
    }
}

/// Value of the bounded quantity and the bound it must respect.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub value: f64,
    pub bound: f64,
}

impl Outcome {
    pub fn slack(&self) -> f64 {
        self.bound - self.value
    }

    pub fn holds(&self) -> bool {
        le(self.value, self.bound)
    }

    /// Relative distance to the bound.
    pub fn rel_gap(&self) -> f64 {
        (self.bound - self.value).abs() / self.bound.abs()
    }
}

fn le(a: f64, b: f64) -> bool {
    a <= b + TOL * b.abs().max(1.0)
}

fn hyp(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!("hypothesis not met: {what}")))
    }
}

fn ood_sums_at_least_one(inst: &Instance) -> bool {
    inst.samples.iter().all(|s| s.ood.iter().sum::<f64>() >= 1.0 - TOL)
}

/// Checks the hypotheses of `theorem` on `case` and returns the asserted
/// inequality. Theorems that define TII through OOD detectors derive it
/// from the case's detectors.
pub fn evaluate(theorem: Theorem, case: &Case, mode: LossMode) -> Result<Outcome> {
    let via_ood = matches!(
        theorem,
        Theorem::Thm3Sufficiency | Theorem::Thm3Necessity | Theorem::OodSufficiency | Theorem::OodNecessity
    );
    let inst = if via_ood { case.inst.with_ood_tii() } else { case.inst.clone() };
    let e = entropies(&inst)?;
    let b = &case.budgets;
    let agg = |f: fn(&Entropies) -> f64| mode.agg(e.iter().map(f));
    let sup = |f: fn(&Entropies) -> f64| LossMode::Pointwise.agg(e.iter().map(f));
    let ood_ok = || e.iter().all(|x| x.ood.iter().zip(&b.eps_task).all(|(h, eps)| le(*h, *eps)));
    let worst_ood = |x: &Entropies| x.ood.iter().copied().fold(0.0, f64::max);
    let t = inst.num_tasks();
    match theorem {
        Theorem::Thm1 | Theorem::Dil => {
            hyp(le(agg(|x| x.wtp), b.delta), "WTP budget")?;
            hyp(le(agg(|x| x.tii), b.eps), "TII budget")?;
            hyp(le(agg(|x| x.tap), b.eta), "TAP budget")?;
            let log_t = if theorem == Theorem::Dil { (t as f64).ln() } else { 0.0 };
            Ok(Outcome { value: inst.loss(mode), bound: (b.delta + b.eps + log_t).max(b.eta) })
        }
        Theorem::Thm2 => {
            hyp(le(inst.loss(mode), b.xi), "loss-error budget")?;
            let value = agg(|x| x.wtp).max(agg(|x| x.tii)).max(agg(|x| x.tap));
            Ok(Outcome { value, bound: b.xi })
        }
        Theorem::Til => {
            hyp(le(agg(|x| x.wtp), b.delta), "WTP budget")?;
            let degenerate = e.iter().all(|x| x.tii == 0.0) && inst.samples.iter().all(|s| s.tap == s.wtp[s.task]);
            let value = if degenerate { inst.loss(mode) } else { f64::INFINITY };
            Ok(Outcome { value, bound: b.delta })
        }
        Theorem::Thm3Sufficiency => {
            hyp(b.eps_task.len() == t && ood_ok(), "per-task OOD budgets")?;
            let worst = inst
                .samples
                .iter()
                .zip(&e)
                .map(|(s, x)| Outcome { value: x.tii, bound: ood_tii_bound(&b.eps_task, s.task) })
                .min_by(|a, b| a.slack().total_cmp(&b.slack()))
                .ok_or_else(|| Error::Contract("empty instance".into()))?;
            Ok(worst)
        }
        Theorem::Thm3Necessity => {
            hyp(ood_sums_at_least_one(&inst), "detector mass at least one")?;
            hyp(le(sup(|x| x.tii), b.eps), "pointwise TII budget")?;
            Ok(Outcome { value: e.iter().map(worst_ood).fold(0.0, f64::max), bound: b.eps })
        }
        Theorem::OodSufficiency => {
            hyp(le(sup(|x| x.wtp), b.delta), "pointwise WTP budget")?;
            hyp(le(sup(|x| x.tap), b.eta), "pointwise TAP budget")?;
            hyp(b.eps_task.len() == t && ood_ok(), "per-task OOD budgets")?;
            let tii_bound = mode.agg(inst.samples.iter().map(|s| ood_tii_bound(&b.eps_task, s.task)));
            Ok(Outcome { value: inst.loss(mode), bound: (b.delta + tii_bound).max(b.eta) })
        }
        Theorem::OodNecessity => {
            hyp(ood_sums_at_least_one(&inst), "detector mass at least one")?;
            hyp(le(inst.loss(mode), b.xi), "loss-error budget")?;
            let ood = (0..t).map(|i| mode.agg(e.iter().map(|x| x.ood[i]))).fold(0.0, f64::max);
            let value = agg(|x| x.wtp).max(agg(|x| x.tii)).max(agg(|x| x.tap)).max(ood);
            Ok(Outcome { value, bound: b.xi })
        }
    }
}

/// Distribution over `k` entries with `mass` on `g` and the rest spread evenly.
fn two_level(k: usize, g: usize, mass: f64) -> Vec<f64> {
    (0..k).map(|i| if i == g { mass } else { (1.0 - mass) / (k - 1) as f64 }).collect()
}

fn e(x: f64) -> f64 {
    (-x).exp()
}

/// Constructed case on which the bound of `theorem` is attained to within 1%.
pub fn witness(theorem: Theorem) -> Case {
    let cil = |wtp: Vec<Vec<f64>>, tii: Vec<f64>, tap: Vec<f64>, ood: Vec<f64>, classes: Vec<usize>| Instance {
        scenario: Scenario::Cil,
        samples: vec![Sample { task: 0, class: 1.min(classes[0] - 1), wtp, tii, tap, ood, gamma: vec![1.0, 0.0] }],
        classes,
    };
    // Detectors whose induced TII sits just below the first-order bound.
    let near_ood = (vec![1e-3, 1e-2], vec![e(1e-3), 1.0 - e(1e-2)]);
    let joint = |xi: f64| cil(vec![two_level(2, 1, e(xi)), vec![0.5; 2]], vec![1.0, 0.0], two_level(4, 1, e(xi)), vec![1.0, 0.0], vec![2, 2]);
    match theorem {
        Theorem::Thm1 => Case {
            inst: cil(vec![two_level(2, 1, e(0.7)), vec![0.5; 2]], two_level(2, 0, e(0.4)), two_level(4, 1, e(0.9)), vec![1.0, 0.0], vec![2, 2]),
            budgets: Budgets { delta: 0.7, eps: 0.4, eta: 0.9, ..Default::default() },
        },
        Theorem::Thm2 => Case { inst: joint(0.8), budgets: Budgets { xi: 0.8, ..Default::default() } },
        Theorem::OodNecessity => Case { inst: joint(0.8), budgets: Budgets { xi: 0.8, ..Default::default() } },
        Theorem::Thm3Sufficiency => Case {
            inst: cil(vec![vec![1.0], vec![1.0]], vec![1.0, 0.0], vec![1.0, 0.0], near_ood.1, vec![1, 1]),
            budgets: Budgets { eps_task: near_ood.0, ..Default::default() },
        },
        Theorem::Thm3Necessity => Case {
            inst: cil(vec![vec![1.0], vec![1.0]], vec![1.0, 0.0], vec![1.0, 0.0], vec![e(0.5), 1.0 - e(0.5)], vec![1, 1]),
            budgets: Budgets { eps: 0.5, ..Default::default() },
        },
        Theorem::OodSufficiency => Case {
            inst: cil(vec![two_level(2, 1, e(0.5)), vec![0.5; 2]], vec![1.0, 0.0], two_level(4, 1, e(0.3)), near_ood.1, vec![2, 2]),
            budgets: Budgets { delta: 0.5, eta: 0.3, eps_task: near_ood.0, ..Default::default() },
        },
        // With a single domain the `log t` term vanishes and the bound is exact.
        Theorem::Dil => Case {
            inst: Instance {
                scenario: Scenario::Dil,
                classes: vec![2],
                samples: vec![Sample {
                    task: 0,
                    class: 0,
                    wtp: vec![two_level(2, 0, e(0.6))],
                    tii: vec![1.0],
                    tap: two_level(2, 0, e(0.5)),
                    ood: vec![1.0],
                    gamma: vec![1.0],
                }],
            },
            budgets: Budgets { delta: 0.6, eps: 0.0, eta: 0.5, ..Default::default() },
        },
        Theorem::Til => {
            let w = two_level(3, 2, e(0.7));
            Case {
                inst: Instance {
                    scenario: Scenario::Til,
                    classes: vec![2, 3],
                    samples: vec![Sample {
                        task: 1,
                        class: 2,
                        wtp: vec![vec![0.5; 2], w.clone()],
                        tii: vec![0.0, 1.0],
                        tap: w,
                        ood: vec![0.0, 1.0],
                        gamma: vec![0.0, 1.0],
                    }],
                },
                budgets: Budgets { delta: 0.7, ..Default::default() },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub theorem: Theorem,
    pub mode: LossMode,
    pub n: usize,
    pub seed: u64,
    pub violations: usize,
    pub min_slack: f64,
    pub mean_slack: f64,
    pub max_slack: f64,
    /// Batch draws spent on rejection across all instances.
    pub draws: usize,
    pub witness: Outcome,
    /// First violating case in instance order.
    pub first_violation: Option<Case>,
    pub histogram: Vec<Bin>,
}

impl Report {
    /// No violation and a witness within 1% of its bound.
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.witness.holds() && self.witness.rel_gap() <= 0.01
    }

    pub fn summary(&self) -> String {
        format!(
            "theorem {} [{}]: {} instances, {} violations, slack min {:.3e} mean {:.3e} max {:.3e}, witness {:.6} <= {:.6} (gap {:.2e})",
            self.theorem.tag(),
            if self.passed() { "pass" } else { "FAIL" },
            self.n,
            self.violations,
            self.min_slack,
            self.mean_slack,
            self.max_slack,
            self.witness.value,
            self.witness.bound,
            self.witness.rel_gap()
        )
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("theorem,lo,hi,count\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{:.6e},{:.6e},{}\n", self.theorem.tag(), b.lo, b.hi, b.count));
        }
        s
    }
}

fn histogram(xs: &[f64]) -> Vec<Bin> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() || !(hi - lo).is_finite() {
        return Vec::new();
    }
    if hi == lo {
        return vec![Bin { lo, hi, count: xs.len() }];
    }
    let w = (hi - lo) / BINS as f64;
    let mut bins: Vec<Bin> = (0..BINS).map(|i| Bin { lo: lo + i as f64 * w, hi: lo + (i + 1) as f64 * w, count: 0 }).collect();
    for &x in xs {
        bins[(((x - lo) / w) as usize).min(BINS - 1)].count += 1;
    }
    bins
}

/// Checks `n` random cases of `theorem`. Case `k` draws from its own stream
/// forked from `seed`, so the report does not depend on thread scheduling.
pub fn run(theorem: Theorem, n: usize, seed: u64, mode: LossMode) -> Result<Report> {
    let root = SplitRng::new(seed).fork("theory").fork(theorem.tag());
    let rows = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = root.fork_idx("case", k as u64);
            let (case, draws) = draw_case(theorem, &mut rng, mode);
            let o = evaluate(theorem, &case, mode)?;
            Ok((o.slack(), draws, (!o.holds()).then_some(case)))
        })
        .collect::<Result<Vec<_>>>()?;
    let slacks: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let w = evaluate(theorem, &witness(theorem), mode)?;
    Ok(Report {
        theorem,
        mode,
        n,
        seed,
        violations: rows.iter().filter(|r| r.2.is_some()).count(),
        min_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
        mean_slack: slacks.iter().sum::<f64>() / n.max(1) as f64,
        max_slack: slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        draws: rows.iter().map(|r| r.1).sum(),
        witness: w,
        first_violation: rows.into_iter().find_map(|r| r.2),
        histogram: histogram(&slacks),
    })
}
