use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Adam with bias correction. One moment pair per registered tensor slot.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every tensor carrying a
    /// gradient, then zeroes those gradients. The slice order must be the
    /// same on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], lr: f64) {
        if self.m.len() < params.len() {
            for p in params.iter().skip(self.m.len()) {
                self.m.push(vec![T::zero(); p.len()]);
                self.v.push(vec![T::zero(); p.len()]);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let step_size = T::c(lr / bc1);
        let (sbc2, eps) = (T::c(bc2.sqrt()), T::c(self.eps));
        for (slot, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(|g| g.to_vec()) else { continue };
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                *x -= step_size * m[i] / (v[i].sqrt() / sbc2 + eps);
            }
            p.zero_grad();
        }
    }
}

/// Cosine decay from `lr` to zero over `total` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub lr: f64,
    pub total: usize,
}

impl Cosine {
    pub fn at(&self, step: usize) -> f64 {
        if self.total <= 1 {
            return self.lr;
        }
        let p = (step.min(self.total) as f64) / (self.total as f64);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_quadratic() {
        let mut x = Tensor::<f64>::filled(&[1], 5.0);
        let mut opt = Adam::new();
        for _ in 0..500 {
            let g = 2.0 * x.data()[0];
            x.accumulate_grad(&[g]).unwrap();
            opt.step(&mut [&mut x], 0.05);
        }
        assert!(x.data()[0].abs() < 1e-2);
        assert_eq!(x.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn cosine_endpoints() {
        let c = Cosine { lr: 1.0, total: 10 };
        assert_eq!(c.at(0), 1.0);
        assert!(c.at(10).abs() < 1e-12);
        assert!(c.at(5) > c.at(6));
    }
}
