//! Random instances that satisfy a theorem's hypotheses.
//!
//! Distributions are Dirichlet draws with a random temperature, floored at
//! [`MASS_FLOOR`] on the ground truth. A batch that misses its budget is
//! redrawn and mixed further toward the ground truth; the final attempt is
//! the one-hot (or membership) distribution, which meets any feasible budget.

use serde::{Deserialize, Serialize};

use super::{entropies, Instance, LossMode, Sample, Scenario, Theorem, MASS_FLOOR};
use crate::rng::SplitRng;

/// Redraw attempts per batch, the last one exact.
pub const RETRY_CAP: usize = 1000;
/// Per-attempt decay of the remaining random mass.
const SHARPEN: f64 = 0.98;
/// Upper end of the uniform budget draws.
const BUDGET_SCALE: f64 = 3.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub delta: f64,
    pub eps: f64,
    pub eta: f64,
    pub xi: f64,
    /// Per-task OOD budgets.
    pub eps_task: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub inst: Instance,
    pub budgets: Budgets,
}

fn one_hot(k: usize, g: usize) -> Vec<f64> {
    (0..k).map(|i| if i == g { 1.0 } else { 0.0 }).collect()
}

fn dirichlet(rng: &mut SplitRng, k: usize) -> Vec<f64> {
    let tau = 10f64.powf(2.0 * rng.uniform() - 1.0);
    let g: Vec<f64> = (0..k).map(|_| rng.gamma(tau)).collect();
    let s: f64 = g.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return vec![1.0 / k as f64; k];
    }
    g.iter().map(|x| x / s).collect()
}

fn floor_at(q: &mut [f64], g: usize) {
    if q[g] >= MASS_FLOOR {
        return;
    }
    let rest: f64 = q.iter().enumerate().filter(|(i, _)| *i != g).map(|(_, x)| x).sum();
    for (i, x) in q.iter_mut().enumerate() {
        *x = if i == g { MASS_FLOOR } else { *x * (1.0 - MASS_FLOOR) / rest };
    }
}

fn toward(q: &[f64], target: &[f64], w: f64) -> Vec<f64> {
    q.iter().zip(target).map(|(a, b)| (1.0 - w) * a + w * b).collect()
}

/// Dirichlet draw mixed with weight `w` toward `target`, whose support
/// contains `g`.
fn categorical(rng: &mut SplitRng, target: &[f64], g: usize, w: f64) -> Vec<f64> {
    let mut q = dirichlet(rng, target.len());
    floor_at(&mut q, g);
    toward(&q, target, w)
}

fn detector(rng: &mut SplitRng, member: bool, w: f64) -> f64 {
    let p = rng.uniform();
    if member {
        ((1.0 - w) * p + w).max(MASS_FLOOR)
    } else {
        ((1.0 - w) * p).min(1.0 - MASS_FLOOR)
    }
}

/// Redraws with growing sharpening until `ok` accepts; returns the attempt
/// count alongside.
fn escalate(rng: &mut SplitRng, mut make: impl FnMut(&mut SplitRng, f64) -> Instance, ok: impl Fn(&Instance) -> bool) -> (Instance, usize) {
    let mut last = None;
    for r in 0..RETRY_CAP {
        let w = if r + 1 == RETRY_CAP { 1.0 } else { 1.0 - SHARPEN.powi(r as i32) };
        let inst = make(rng, w);
        if ok(&inst) {
            return (inst, r + 1);
        }
        last = Some(inst);
    }
    (last.expect("at least one attempt"), RETRY_CAP)
}

/// Random task/class layout with one-hot predictors.
fn template(rng: &mut SplitRng, scenario: Scenario) -> Instance {
    let t = match scenario {
        Scenario::Dil => [2, 3, 5][rng.below(3)],
        _ => 1 + rng.below(5),
    };
    let classes: Vec<usize> = match scenario {
        Scenario::Dil => vec![1 + rng.below(4); t],
        _ => (0..t).map(|_| 1 + rng.below(4)).collect(),
    };
    let n = 1 + rng.below(8);
    let mut inst = Instance { scenario, classes, samples: Vec::with_capacity(n) };
    for _ in 0..n {
        let task = rng.below(t);
        let class = rng.below(inst.classes[task]);
        let gamma = if scenario == Scenario::Dil { dirichlet(rng, t) } else { one_hot(t, task) };
        let mut s = Sample {
            task,
            class,
            wtp: inst.classes.iter().map(|&k| one_hot(k, class.min(k - 1))).collect(),
            tii: if scenario == Scenario::Dil { gamma.clone() } else { one_hot(t, task) },
            tap: Vec::new(),
            ood: one_hot(t, task),
            gamma,
        };
        let tap_len = if scenario == Scenario::Til { inst.classes[task] } else { inst.total_classes() };
        s.tap = one_hot(tap_len, inst.label(&s));
        inst.samples.push(s);
    }
    inst
}

fn set_wtp(base: &Instance, rng: &mut SplitRng, w: f64) -> Instance {
    let mut c = base.clone();
    let dil = c.scenario == Scenario::Dil;
    for s in &mut c.samples {
        for (i, dist) in s.wtp.iter_mut().enumerate() {
            *dist = if i == s.task || dil {
                categorical(rng, &one_hot(dist.len(), s.class), s.class, w)
            } else {
                dirichlet(rng, dist.len())
            };
        }
    }
    c
}

fn set_tii(base: &Instance, rng: &mut SplitRng, w: f64) -> Instance {
    let mut c = base.clone();
    for s in &mut c.samples {
        s.tii = categorical(rng, &s.gamma, s.task, w);
    }
    c
}

fn set_tap(base: &Instance, rng: &mut SplitRng, w: f64) -> Instance {
    let mut c = base.clone();
    let labels: Vec<usize> = c.samples.iter().map(|s| c.label(s)).collect();
    for (s, y) in c.samples.iter_mut().zip(labels) {
        s.tap = categorical(rng, &one_hot(s.tap.len(), y), y, w);
    }
    c
}

fn set_ood(base: &Instance, rng: &mut SplitRng, w: f64) -> Instance {
    let mut c = base.clone();
    for s in &mut c.samples {
        let task = s.task;
        s.ood = (0..s.ood.len()).map(|i| detector(rng, i == task, w)).collect();
    }
    c
}

/// CIL predictors derived from one joint distribution over all cells.
fn set_joint(base: &Instance, rng: &mut SplitRng, w: f64) -> Instance {
    let mut c = set_tap(base, rng, w);
    let classes = c.classes.clone();
    let total: usize = classes.iter().sum();
    for s in &mut c.samples {
        let cell = classes[..s.task].iter().sum::<usize>() + s.class;
        let joint = categorical(rng, &one_hot(total, cell), cell, w);
        let mut off = 0;
        for (i, &k) in classes.iter().enumerate() {
            let block = &joint[off..off + k];
            let m: f64 = block.iter().sum();
            s.tii[i] = m;
            s.wtp[i] = if m > 0.0 { block.iter().map(|x| x / m).collect() } else { vec![1.0 / k as f64; k] };
            off += k;
        }
        let z: f64 = s.tii.iter().sum();
        s.tii.iter_mut().for_each(|x| *x /= z);
    }
    c
}

/// OOD detectors `S * P(x in X_i)` with `S` drawn from `[1, S_max]`, the
/// range on which the induced TII is unchanged and the necessity bound holds.
fn set_scaled_detectors(base: &Instance, rng: &mut SplitRng) -> Instance {
    let mut c = base.clone();
    for s in &mut c.samples {
        let g = s.task;
        let q = &s.tii;
        let mut s_max = 1.0 / q[g];
        for (i, &qi) in q.iter().enumerate() {
            if i != g && qi > 0.0 {
                s_max = s_max.min((1.0 - q[g]) / qi);
            }
        }
        let scale = 1.0 + rng.uniform() * (s_max - 1.0).max(0.0);
        s.ood = q.iter().map(|p| (p * scale).clamp(0.0, 1.0)).collect();
    }
    c
}

fn aggregate(inst: &Instance, mode: LossMode, f: impl Fn(&super::Entropies) -> f64) -> f64 {
    mode.agg(entropies(inst).expect("drawn instances are valid").iter().map(f))
}

fn pointwise_ood_ok(inst: &Instance, eps: &[f64]) -> bool {
    entropies(inst).expect("drawn instances are valid").iter().all(|e| e.ood.iter().zip(eps).all(|(h, b)| h <= b))
}

/// A random case satisfying the hypotheses of `theorem`, plus the number of
/// batch draws it took.
pub fn draw_case(theorem: Theorem, rng: &mut SplitRng, mode: LossMode) -> (Case, usize) {
    let scenario = match theorem {
        Theorem::Dil => Scenario::Dil,
        Theorem::Til => Scenario::Til,
        _ => Scenario::Cil,
    };
    let base = template(rng, scenario);
    let t = base.num_tasks();
    let mut b = Budgets::default();
    let mut draws = 0;
    let mut step = |inst: &Instance, rng: &mut SplitRng, make: fn(&Instance, &mut SplitRng, f64) -> Instance, ok: &dyn Fn(&Instance) -> bool| {
        let (next, n) = escalate(rng, |r, w| make(inst, r, w), ok);
        draws += n;
        next
    };
    let inst = match theorem {
        Theorem::Thm1 | Theorem::Dil => {
            b.delta = BUDGET_SCALE * rng.uniform();
            b.eta = BUDGET_SCALE * rng.uniform();
            // Under DIL the TII cross-entropy cannot drop below the entropy of
            // the membership simplex, which the template's TII equals.
            let floor = aggregate(&base, mode, |e| e.tii);
            b.eps = floor + BUDGET_SCALE * rng.uniform();
            let (d, e, h) = (b.delta, b.eps, b.eta);
            let i = step(&base, rng, set_wtp, &|x| aggregate(x, mode, |e| e.wtp) <= d);
            let i = step(&i, rng, set_tii, &|x| aggregate(x, mode, |e| e.tii) <= e);
            let i = step(&i, rng, set_tap, &|x| aggregate(x, mode, |e| e.tap) <= h);
            set_ood(&i, rng, 0.0)
        }
        Theorem::Til => {
            b.delta = BUDGET_SCALE * rng.uniform();
            let d = b.delta;
            let mut i = step(&base, rng, set_wtp, &|x| aggregate(x, mode, |e| e.wtp) <= d);
            for s in &mut i.samples {
                s.tap = s.wtp[s.task].clone();
            }
            set_ood(&i, rng, 0.0)
        }
        Theorem::Thm2 | Theorem::OodNecessity => {
            b.xi = BUDGET_SCALE * rng.uniform();
            let xi = b.xi;
            let i = step(&base, rng, set_joint, &|x| x.loss(mode) <= xi);
            if theorem == Theorem::OodNecessity {
                set_scaled_detectors(&i, rng)
            } else {
                set_ood(&i, rng, 0.0)
            }
        }
        Theorem::Thm3Sufficiency => {
            b.eps_task = (0..t).map(|_| 2.0 * rng.uniform()).collect();
            let eps = b.eps_task.clone();
            let i = step(&base, rng, set_ood, &|x| pointwise_ood_ok(x, &eps));
            let i = set_tap(&set_wtp(&i, rng, 0.0), rng, 0.0);
            i.with_ood_tii()
        }
        Theorem::Thm3Necessity => {
            b.eps = BUDGET_SCALE * rng.uniform();
            let e = b.eps;
            let i = step(&base, rng, set_tii, &|x| aggregate(x, LossMode::Pointwise, |h| h.tii) <= e);
            let i = set_tap(&set_wtp(&i, rng, 0.0), rng, 0.0);
            set_scaled_detectors(&i, rng)
        }
        Theorem::OodSufficiency => {
            b.delta = BUDGET_SCALE * rng.uniform();
            b.eta = BUDGET_SCALE * rng.uniform();
            b.eps_task = (0..t).map(|_| 2.0 * rng.uniform()).collect();
            let (d, h, eps) = (b.delta, b.eta, b.eps_task.clone());
            let i = step(&base, rng, set_wtp, &|x| aggregate(x, LossMode::Pointwise, |e| e.wtp) <= d);
            let i = step(&i, rng, set_tap, &|x| aggregate(x, LossMode::Pointwise, |e| e.tap) <= h);
            let i = step(&i, rng, set_ood, &|x| pointwise_ood_ok(x, &eps));
            i.with_ood_tii()
        }
    };
    (Case { inst, budgets: b }, draws)
}
