//! Labeled token-sequence datasets.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::numcore::Tensor;

/// `n` samples of `tokens × feat` raw features, stored contiguously, with
/// global class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub tokens: usize,
    pub feat: usize,
    pub x: Vec<f32>,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn empty(tokens: usize, feat: usize) -> Self {
        Self { tokens, feat, x: Vec::new(), y: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.tokens * self.feat
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.x[i * s..(i + 1) * s]
    }

    pub fn push(&mut self, x: &[f32], y: usize) -> Result<()> {
        if x.len() != self.sample_len() {
            return dim_err(format!("sample of {} values, expected {}", x.len(), self.sample_len()));
        }
        self.x.extend_from_slice(x);
        self.y.push(y);
        Ok(())
    }

    /// Stacked `len·tokens × feat` tensor for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> Tensor<f32> {
        let s = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new(&[idx.len() * self.tokens, self.feat], data).expect("consistent sample layout")
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.y.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::empty(self.tokens, self.feat);
        for &i in idx {
            out.x.extend_from_slice(self.sample(i));
            out.y.push(self.y[i]);
        }
        out
    }

    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == class).collect()
    }

    pub fn extend(&mut self, other: &Self) -> Result<()> {
        if other.tokens != self.tokens || other.feat != self.feat {
            return dim_err("cannot merge sets with different sample layouts");
        }
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
        Ok(())
    }
}
