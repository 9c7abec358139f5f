use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::scalar::{gemm_into, Scalar};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};
use crate::rng::SplitRng;

/// Single affine layer `x W + b` whose output width can grow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl<T: Scalar> Linear<T> {
    pub fn new(d_in: usize, d_out: usize, std: f64, rng: &mut SplitRng) -> Self {
        Self { w: Tensor::randn(&[d_in, d_out], std, rng), b: Tensor::zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.b.len()
    }

    /// Appends `extra` freshly initialized output columns; existing columns
    /// are preserved exactly.
    pub fn grow(&mut self, extra: usize, std: f64, rng: &mut SplitRng) {
        let (d, c) = (self.d_in(), self.d_out());
        let nc = c + extra;
        let mut w = Vec::with_capacity(d * nc);
        for r in 0..d {
            w.extend_from_slice(&self.w.data()[r * c..(r + 1) * c]);
            for _ in 0..extra {
                w.push(T::c(rng.normal() * std));
            }
        }
        let mut b = self.b.data().to_vec();
        b.resize(nc, T::zero());
        self.w = Tensor::new(&[d, nc], w).expect("grown weight shape");
        self.b = Tensor::new(&[nc], b).expect("grown bias shape");
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundLinear {
        if trainable {
            BoundLinear { w: tape.param(&self.w), b: tape.param(&self.b) }
        } else {
            BoundLinear { w: tape.constant(&self.w), b: tape.constant(&self.b) }
        }
    }

    pub fn accumulate(&mut self, bound: &BoundLinear, grads: &Gradients<T>) -> Result<()> {
        grads.accumulate_into(bound.w, &mut self.w)?;
        grads.accumulate_into(bound.b, &mut self.b)
    }

    pub fn step(&mut self, opt: &mut Adam<T>, lr: f64) {
        opt.step(&mut [&mut self.w, &mut self.b], lr);
    }

    /// Logits for an `n × d_in` matrix.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = x.dims2();
        if d != self.d_in() {
            return dim_err(format!("head expects width {}, got {d}", self.d_in()));
        }
        let c = self.d_out();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(self.b.data());
        }
        gemm_into(n, d, c, x.data(), false, self.w.data(), false, &mut out, T::one(), true);
        Tensor::new(&[n, c], out)
    }
}

impl BoundLinear {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.w)?;
        tape.add_bias(z, self.b)
    }
}
