//! Class-conditional representation statistics used to replay old tasks
//! without raw samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recovery {
    /// Stored representation vectors, resampled uniformly.
    Prototype,
    /// Diagonal Gaussian.
    Variance,
    /// Full-covariance Gaussian.
    Covariance,
    /// k-means centroids with isotropic Gaussian noise.
    MultiCentroid,
    /// Heads only ever see the current task's own representations.
    None,
}

impl Recovery {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prototype" => Ok(Self::Prototype),
            "variance" => Ok(Self::Variance),
            "covariance" => Ok(Self::Covariance),
            "multi-centroid" | "multicentroid" => Ok(Self::MultiCentroid),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown recovery strategy {other:?}"))),
        }
    }

    pub fn all() -> [Recovery; 5] {
        [Self::None, Self::Prototype, Self::Variance, Self::Covariance, Self::MultiCentroid]
    }
}

pub const PROTOTYPES: usize = 10;
pub const KMEANS_K: usize = 10;
pub const COV_RIDGE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RepStats {
    Prototype { vectors: Vec<Vec<f32>> },
    Variance { mean: Vec<f32>, var: Vec<f32> },
    Covariance { mean: Vec<f32>, cov: Vec<f32> },
    MultiCentroid { centroids: Vec<Vec<f32>>, sigma: f32 },
}

/// Result of fitting, with a note when the fit had to degrade.
#[derive(Clone, Debug, PartialEq)]
pub struct Fitted {
    pub stats: RepStats,
    pub warning: Option<String>,
}

impl RepStats {
    pub fn dim(&self) -> usize {
        match self {
            RepStats::Prototype { vectors } => vectors.first().map_or(0, |v| v.len()),
            RepStats::Variance { mean, .. } | RepStats::Covariance { mean, .. } => mean.len(),
            RepStats::MultiCentroid { centroids, .. } => centroids.first().map_or(0, |v| v.len()),
        }
    }

    pub fn strategy(&self) -> Recovery {
        match self {
            RepStats::Prototype { .. } => Recovery::Prototype,
            RepStats::Variance { .. } => Recovery::Variance,
            RepStats::Covariance { .. } => Recovery::Covariance,
            RepStats::MultiCentroid { .. } => Recovery::MultiCentroid,
        }
    }

    /// Stored floats per class, counted in the units of the per-class
    /// parameter-cost column: vector payloads only (the multi-centroid noise
    /// scale is a single scalar and is reported by [`RepStats::scalars`]).
    pub fn storage(&self) -> usize {
        match self {
            RepStats::Prototype { vectors } => vectors.iter().map(|v| v.len()).sum(),
            RepStats::Variance { mean, var } => mean.len() + var.len(),
            RepStats::Covariance { mean, cov } => mean.len() + cov.len(),
            RepStats::MultiCentroid { centroids, .. } => centroids.iter().map(|v| v.len()).sum(),
        }
    }

    pub fn scalars(&self) -> usize {
        matches!(self, RepStats::MultiCentroid { .. }) as usize
    }

    /// Class mean implied by the statistics.
    pub fn mean(&self) -> Vec<f64> {
        let avg = |vs: &[Vec<f32>]| {
            let d = vs.first().map_or(0, |v| v.len());
            let mut m = vec![0.0; d];
            for v in vs {
                for (a, &b) in m.iter_mut().zip(v) {
                    *a += b as f64 / vs.len() as f64;
                }
            }
            m
        };
        match self {
            RepStats::Prototype { vectors } => avg(vectors),
            RepStats::Variance { mean, .. } | RepStats::Covariance { mean, .. } => mean.iter().map(|&v| v as f64).collect(),
            RepStats::MultiCentroid { centroids, .. } => avg(centroids),
        }
    }

    /// Draws `n` pseudo-representations.
    pub fn sample(&self, n: usize, rng: &mut SplitRng) -> Vec<Vec<f32>> {
        match self {
            RepStats::Prototype { vectors } => (0..n).map(|_| vectors[rng.below(vectors.len())].clone()).collect(),
            RepStats::Variance { mean, var } => (0..n)
                .map(|_| mean.iter().zip(var).map(|(&m, &v)| (m as f64 + rng.normal() * (v as f64).sqrt()) as f32).collect())
                .collect(),
            RepStats::Covariance { mean, cov } => {
                let d = mean.len();
                let mut a: Vec<f64> = cov.iter().map(|&v| v as f64).collect();
                for i in 0..d {
                    a[i * d + i] += COV_RIDGE;
                }
                let l = cholesky(&a, d);
                (0..n)
                    .map(|_| {
                        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                        (0..d)
                            .map(|i| (mean[i] as f64 + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>()) as f32)
                            .collect()
                    })
                    .collect()
            }
            RepStats::MultiCentroid { centroids, sigma } => (0..n)
                .map(|_| {
                    let c = &centroids[rng.below(centroids.len())];
                    c.iter().map(|&v| (v as f64 + rng.normal() * *sigma as f64) as f32).collect()
                })
                .collect(),
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix; tiny negative
/// pivots from rounding are clamped to zero.
fn cholesky(a: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                l[i * d + i] = (a[i * d + i] - s).max(0.0).sqrt();
            } else {
                let p = l[j * d + j];
                l[i * d + j] = if p > 0.0 { (a[i * d + j] - s) / p } else { 0.0 };
            }
        }
    }
    l
}

/// Fits `strategy` to the representations of one class.
pub fn fit_stats(reps: &[Vec<f32>], strategy: Recovery, rng: &mut SplitRng) -> Result<Fitted> {
    if reps.is_empty() {
        return Err(Error::Contract("cannot fit statistics to an empty class".into()));
    }
    let d = reps[0].len();
    if reps.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged representations".into()));
    }
    let n = reps.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| reps.iter().map(|r| r[j] as f64).sum::<f64>() / n).collect();
    let f32v = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let stats = match strategy {
        Recovery::Prototype => {
            let pick = rng.choose_distinct(reps.len(), PROTOTYPES);
            RepStats::Prototype { vectors: pick.into_iter().map(|i| reps[i].clone()).collect() }
        }
        Recovery::Variance => {
            let var: Vec<f64> =
                (0..d).map(|j| reps.iter().map(|r| (r[j] as f64 - mean[j]).powi(2)).sum::<f64>() / n).collect();
            RepStats::Variance { mean: f32v(&mean), var: f32v(&var) }
        }
        Recovery::Covariance => {
            let mut cov = vec![0.0; d * d];
            for r in reps {
                for i in 0..d {
                    let di = r[i] as f64 - mean[i];
                    for j in 0..d {
                        cov[i * d + j] += di * (r[j] as f64 - mean[j]) / n;
                    }
                }
            }
            RepStats::Covariance { mean: f32v(&mean), cov: f32v(&cov) }
        }
        Recovery::MultiCentroid => {
            if reps.len() < KMEANS_K {
                let centroids = dedup(reps.to_vec());
                let sigma = 0.0;
                return Ok(Fitted {
                    stats: RepStats::MultiCentroid { centroids, sigma },
                    warning: Some(format!("{} samples for {KMEANS_K} centroids; using every sample", reps.len())),
                });
            }
            let (centroids, assign) = kmeans(reps, KMEANS_K, rng);
            let sq: f64 = reps
                .iter()
                .zip(&assign)
                .map(|(r, &a)| r.iter().zip(&centroids[a]).map(|(&x, &c)| (x as f64 - c).powi(2)).sum::<f64>())
                .sum();
            let sigma = ((sq / n).sqrt() / (d as f64).sqrt()) as f32;
            let centroids = dedup(centroids.iter().map(|c| f32v(c)).collect());
            RepStats::MultiCentroid { centroids, sigma }
        }
        Recovery::None => return Err(Error::Config("no statistics exist for the no-recovery strategy".into())),
    };
    Ok(Fitted { stats, warning: None })
}

fn dedup(mut vs: Vec<Vec<f32>>) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(vs.len());
    for v in vs.drain(..) {
        if !out.iter().any(|o| o == &v) {
            out.push(v);
        }
    }
    out
}

fn sqdist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are dropped, so
/// fewer than `k` centroids can come back (e.g. for duplicated points).
pub fn kmeans(reps: &[Vec<f32>], k: usize, rng: &mut SplitRng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = reps[0].len();
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let mut cents: Vec<Vec<f64>> = vec![to64(&reps[rng.below(reps.len())])];
    let mut best: Vec<f64> = reps.iter().map(|r| sqdist(r, &cents[0])).collect();
    while cents.len() < k {
        let total: f64 = best.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.uniform() * total;
        let mut pick = reps.len() - 1;
        for (i, &b) in best.iter().enumerate() {
            if u < b {
                pick = i;
                break;
            }
            u -= b;
        }
        cents.push(to64(&reps[pick]));
        let c = cents.last().unwrap().clone();
        for (b, r) in best.iter_mut().zip(reps) {
            *b = b.min(sqdist(r, &c));
        }
    }
    let mut assign = vec![0usize; reps.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, r) in reps.iter().enumerate() {
            let mut bi = 0;
            let mut bd = f64::INFINITY;
            for (j, c) in cents.iter().enumerate() {
                let dd = sqdist(r, c);
                if dd < bd {
                    bd = dd;
                    bi = j;
                }
            }
            if assign[i] != bi {
                assign[i] = bi;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; cents.len()];
        let mut counts = vec![0usize; cents.len()];
        for (r, &a) in reps.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(r) {
                *s += x as f64;
            }
        }
        for (j, c) in cents.iter_mut().enumerate() {
            if counts[j] > 0 {
                for (cv, s) in c.iter_mut().zip(&sums[j]) {
                    *cv = s / counts[j] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut counts = vec![0usize; cents.len()];
    for &a in &assign {
        counts[a] += 1;
    }
    let keep: Vec<usize> = (0..cents.len()).filter(|&j| counts[j] > 0).collect();
    let remap: Vec<usize> = {
        let mut m = vec![0; cents.len()];
        for (new, &old) in keep.iter().enumerate() {
            m[old] = new;
        }
        m
    };
    let cents = keep.iter().map(|&j| cents[j].clone()).collect();
    let assign = assign.into_iter().map(|a| remap[a]).collect();
    (cents, assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: &[f32], n: usize, std: f64, rng: &mut SplitRng) -> Vec<Vec<f32>> {
        (0..n).map(|_| center.iter().map(|&c| (c as f64 + rng.normal() * std) as f32).collect()).collect()
    }

    #[test]
    fn storage_matches_cost_table() {
        let d = 32;
        let mut rng = SplitRng::new(0);
        let reps = blob(&vec![0.0; d], 200, 1.0, &mut rng);
        let st = |s| fit_stats(&reps, s, &mut rng.fork("f")).unwrap().stats.storage();
        assert_eq!(st(Recovery::Prototype), 10 * d);
        assert_eq!(st(Recovery::Variance), 2 * d);
        assert_eq!(st(Recovery::Covariance), d * d + d);
        assert!(st(Recovery::MultiCentroid) <= 10 * d);
    }

    #[test]
    fn identical_points_collapse() {
        let reps = vec![vec![1.0f32, 2.0]; 30];
        let f = fit_stats(&reps, Recovery::MultiCentroid, &mut SplitRng::new(1)).unwrap();
        match f.stats {
            RepStats::MultiCentroid { centroids, sigma } => {
                assert_eq!(centroids.len(), 1);
                assert_eq!(sigma, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn too_few_samples_fall_back_with_warning() {
        let mut rng = SplitRng::new(2);
        let reps = blob(&[0.0, 0.0], 4, 1.0, &mut rng);
        let f = fit_stats(&reps, Recovery::MultiCentroid, &mut rng).unwrap();
        assert!(f.warning.is_some());
        assert!(matches!(f.stats, RepStats::MultiCentroid { ref centroids, .. } if centroids.len() == 4));
    }

    #[test]
    fn two_clusters_recovered() {
        let mut rng = SplitRng::new(3);
        let a = [5.0f32, 0.0, 0.0];
        let b = [-5.0f32, 1.0, 2.0];
        let mut reps = blob(&a, 4000, 0.1, &mut rng);
        reps.extend(blob(&b, 4000, 0.1, &mut rng));
        let (c, _) = kmeans(&reps, 2, &mut rng);
        assert_eq!(c.len(), 2);
        for truth in [a, b] {
            let best = c
                .iter()
                .map(|ci| ci.iter().zip(&truth).map(|(x, &y)| (x - y as f64).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-2, "{best}");
        }
    }

    #[test]
    fn zero_noise_samples_are_stored_points() {
        let st = RepStats::MultiCentroid { centroids: vec![vec![1.0, 2.0], vec![3.0, 4.0]], sigma: 0.0 };
        for s in st.sample(50, &mut SplitRng::new(4)) {
            assert!(s == vec![1.0, 2.0] || s == vec![3.0, 4.0]);
        }
        let st = RepStats::Variance { mean: vec![1.5, -2.0], var: vec![0.0, 0.0] };
        assert!(st.sample(10, &mut SplitRng::new(5)).iter().all(|s| s == &vec![1.5, -2.0]));
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = SplitRng::new(6);
        let reps = blob(&[1.0, -1.0, 0.5], 300, 0.7, &mut rng);
        for s in [Recovery::Variance, Recovery::Covariance, Recovery::MultiCentroid, Recovery::Prototype] {
            let st = fit_stats(&reps, s, &mut rng).unwrap().stats;
            let n = 10_000;
            let draws = st.sample(n, &mut rng);
            let m = st.mean();
            for j in 0..3 {
                let mu: f64 = draws.iter().map(|x| x[j] as f64).sum::<f64>() / n as f64;
                let var: f64 = draws.iter().map(|x| (x[j] as f64 - mu).powi(2)).sum::<f64>() / n as f64;
                assert!((mu - m[j]).abs() <= 3.0 * var.sqrt() / (n as f64).sqrt() + 1e-6, "{s:?} dim {j}");
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let mut rng = SplitRng::new(7);
        let reps = blob(&[0.0; 6], 5, 1.0, &mut rng);
        let RepStats::Covariance { cov, .. } = fit_stats(&reps, Recovery::Covariance, &mut rng).unwrap().stats else {
            unreachable!()
        };
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cov[i * 6 + j], cov[j * 6 + i]);
            }
        }
        let mut a: Vec<f64> = cov.iter().map(|&v| v as f64).collect();
        for i in 0..6 {
            a[i * 6 + i] += COV_RIDGE;
        }
        let l = cholesky(&a, 6);
        assert!((0..6).all(|i| l[i * 6 + i] > 0.0));
    }
}
