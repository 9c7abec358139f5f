//! Continual-learning metrics over an accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A[i][t]`: accuracy (percent) on task `i` after learning task `t`, stored
/// stage by stage: `stages[t][i]` for `i ≤ t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub stages: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub faa: f64,
    pub caa: f64,
    pub ffm: f64,
    pub ala: f64,
    /// Average accuracy after each stage.
    pub aa: Vec<f64>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the accuracies of tasks `0..=t` measured after task `t`.
    pub fn push_stage(&mut self, acc: Vec<f64>) -> Result<()> {
        if acc.len() != self.stages.len() + 1 {
            return Err(Error::Contract(format!("stage {} needs {} entries, got {}", self.stages.len(), self.stages.len() + 1, acc.len())));
        }
        if let Some(a) = acc.iter().find(|a| !(0.0..=100.0).contains(*a)) {
            return Err(Error::Contract(format!("accuracy {a} outside [0, 100]")));
        }
        self.stages.push(acc);
        Ok(())
    }

    /// Builds from a lower-triangular square matrix indexed `[i][t]`.
    pub fn from_square(a: &[Vec<f64>]) -> Result<Self> {
        let t = a.len();
        let mut m = Self::new();
        for s in 0..t {
            let col = (0..=s)
                .map(|i| a.get(i).and_then(|r| r.get(s)).copied().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Contract(format!("missing entry in stage {s}")))?;
            m.push_stage(col)?;
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.stages.len()
    }

    pub fn at(&self, i: usize, t: usize) -> f64 {
        self.stages[t][i]
    }

    fn require(&self, min: usize) -> Result<usize> {
        let t = self.stages.len();
        if t < min {
            return Err(Error::Contract(format!("metric needs at least {min} tasks, matrix has {t}")));
        }
        Ok(t)
    }

    pub fn aa(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect()
    }

    pub fn faa(&self) -> Result<f64> {
        let t = self.require(1)?;
        Ok(self.aa()[t - 1])
    }

    pub fn caa(&self) -> Result<f64> {
        let t = self.require(1)?;
        Ok(self.aa().iter().sum::<f64>() / t as f64)
    }

    /// Mean over tasks `i < t` of the largest earlier accuracy minus the
    /// final one.
    pub fn ffm(&self) -> Result<f64> {
        let t = self.require(2)?;
        let mut total = 0.0;
        for i in 0..t - 1 {
            let best = (i..t - 1).map(|s| self.at(i, s)).fold(f64::NEG_INFINITY, f64::max);
            total += best - self.at(i, t - 1);
        }
        Ok(total / (t - 1) as f64)
    }

    /// Mean of `A[i][i]` for tasks two onward; with `literal`, the mean of
    /// `A[i-1][i]` instead.
    pub fn ala(&self, literal: bool) -> Result<f64> {
        let t = self.require(2)?;
        let total: f64 = (1..t).map(|i| if literal { self.at(i - 1, i) } else { self.at(i, i) }).sum();
        Ok(total / (t - 1) as f64)
    }

    /// All metrics; forgetting and learning accuracy are zero and the
    /// diagonal entry respectively for a single task.
    pub fn metrics(&self, literal_ala: bool) -> Result<Metrics> {
        let t = self.require(1)?;
        let (ffm, ala) = if t >= 2 { (self.ffm()?, self.ala(literal_ala)?) } else { (0.0, self.at(0, 0)) };
        Ok(Metrics { faa: self.faa()?, caa: self.caa()?, ffm, ala, aa: self.aa() })
    }

    /// Parses a CSV with one row per task `i` and one column per stage `t`;
    /// cells above the diagonal may be empty.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        let c = c.trim();
                        if c.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            c.parse::<f64>().map_err(|e| Error::Config(format!("bad cell {c:?}: {e}")))
                        }
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::from_square(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let a = vec![vec![90.0, 80.0, 70.0], vec![f64::NAN, 70.0, 60.0], vec![f64::NAN, f64::NAN, 50.0]];
        let m = AccuracyMatrix::from_square(&a).unwrap().metrics(false).unwrap();
        assert_eq!(m.aa, vec![90.0, 75.0, 60.0]);
        assert_eq!(m.faa, 60.0);
        assert_eq!(m.caa, 75.0);
        assert_eq!(m.ffm, 15.0);
        assert_eq!(m.ala, 60.0);
    }

    #[test]
    fn perfect_matrix() {
        let mut a = AccuracyMatrix::new();
        for t in 0..4 {
            a.push_stage(vec![100.0; t + 1]).unwrap();
        }
        let m = a.metrics(false).unwrap();
        assert_eq!((m.faa, m.caa, m.ffm, m.ala), (100.0, 100.0, 0.0, 100.0));
    }

    #[test]
    fn missing_entry_rejected() {
        assert!(AccuracyMatrix::from_square(&[vec![90.0, 80.0], vec![f64::NAN, f64::NAN]]).is_err());
        assert!(AccuracyMatrix::new().push_stage(vec![1.0, 2.0]).is_err());
        assert!(AccuracyMatrix::new().push_stage(vec![101.0]).is_err());
    }

    #[test]
    fn csv_round() {
        let m = AccuracyMatrix::parse_csv("90,80,70\n,70,60\n,,50\n").unwrap();
        assert_eq!(m.faa().unwrap(), 60.0);
    }
}
