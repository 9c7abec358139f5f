use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub param_name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Denominator floor for relative errors. Components whose analytic and
/// numeric values are both below it in magnitude are effectively judged by
/// absolute error scaled by the floor.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares tape gradients of `f` against central differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)` for every element of every parameter.
///
/// `f` receives a fresh tape and one leaf per parameter, in order, and must
/// return a scalar node.
pub fn finite_diff_check<T, F>(params: &[(&str, Tensor<T>)], eps: f64, f: F) -> Result<Vec<GradReport>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out)?.f64())
    };

    let mut values: Vec<Tensor<T>> = params.iter().map(|(_, t)| t.clone()).collect();
    let base_a = eval(&values)?;
    let base_b = eval(&values)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::Contract(format!("procedure is not deterministic: {base_a} vs {base_b}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut reports = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let n = values[pi].len();
        let zeros = vec![T::zero(); n];
        let analytic: Vec<f64> = grads.wrt(vars[pi]).unwrap_or(&zeros).iter().map(|v| v.f64()).collect();
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for e in 0..n {
            let orig = values[pi].data()[e];
            values[pi].data_mut()[e] = T::c(orig.f64() + eps);
            let plus = eval(&values)?;
            values[pi].data_mut()[e] = T::c(orig.f64() - eps);
            let minus = eval(&values)?;
            values[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let abs = (analytic[e] - numeric).abs();
            let rel = abs / analytic[e].abs().max(numeric.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        reports.push(GradReport { param_name: name.to_string(), max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(reports)
}
