//! Aggregation of result records into CSV tables and plot series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::ResultRecord;
use super::stream::TaskStream;
use crate::aka::{fit_refs, simulate_pool};
use crate::backbone::BackboneCheckpoint;
use crate::error::{Error, Result};
use crate::hide::HideState;
use crate::numcore::Tensor;

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, v.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub n: usize,
    pub faa: (f64, f64),
    pub caa: (f64, f64),
    pub ffm: (f64, f64),
    pub ala: (f64, f64),
    pub tii: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    /// `summary.csv`: per-variant mean and std over seeds.
    pub summary_csv: String,
    /// `series.csv`: average accuracy per stage (mean, std over seeds).
    pub series_csv: String,
}

/// Groups records by variant (in order of first appearance). Records of
/// different scenarios or techniques cannot share a table.
pub fn report(records: &[ResultRecord]) -> Result<Report> {
    let first = records.first().ok_or_else(|| Error::Grouping("no records to report".into()))?;
    if let Some(r) = records.iter().find(|r| r.scenario != first.scenario || r.technique != first.technique) {
        return Err(Error::Grouping(format!(
            "records mix {:?}/{} with {:?}/{}",
            first.scenario, first.technique, r.scenario, r.technique
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.variant) {
            order.push(r.variant.clone());
        }
        groups.entry(r.variant.clone()).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut summary = String::from("variant,n,faa_mean,faa_std,caa_mean,caa_std,ffm_mean,ffm_std,ala_mean,ala_std,tii_mean,tii_std\n");
    let mut series = String::from("variant,stage,aa_mean,aa_std\n");
    for v in &order {
        let g = &groups[v];
        let pick = |f: &dyn Fn(&ResultRecord) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let row = SummaryRow {
            variant: v.clone(),
            n: g.len(),
            faa: pick(&|r| r.metrics.faa),
            caa: pick(&|r| r.metrics.caa),
            ffm: pick(&|r| r.metrics.ffm),
            ala: pick(&|r| r.metrics.ala),
            tii: pick(&|r| r.tii.last().copied().unwrap_or(f64::NAN) * 100.0),
        };
        let _ = writeln!(
            summary,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            row.variant, row.n, row.faa.0, row.faa.1, row.caa.0, row.caa.1, row.ffm.0, row.ffm.1, row.ala.0, row.ala.1, row.tii.0, row.tii.1
        );
        let stages = g.iter().map(|r| r.metrics.aa.len()).min().unwrap_or(0);
        for s in 0..stages {
            let (m, sd) = mean_std(&g.iter().map(|r| r.metrics.aa[s]).collect::<Vec<_>>());
            let _ = writeln!(series, "{v},{},{m:.4},{sd:.4}", s + 1);
        }
        rows.push(row);
    }
    Ok(Report { rows, summary_csv: summary, series_csv: series })
}

/// Plain representations and normalized references of every task of a
/// stream, derived exactly as the pool learner derives them for `seed`.
pub fn stream_refs(theta: &BackboneCheckpoint<f32>, stream: &TaskStream, seed: u64) -> Result<(Vec<Tensor<f32>>, Vec<Vec<Vec<f32>>>)> {
    let root = HideState::root(seed).fork("rep");
    let mut plains = Vec::new();
    let mut refs = Vec::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        let plain = theta.encode_all(&task.train, None)?;
        refs.push(fit_refs(&plain, &task.train.y, &task.classes, &root.fork_idx("task", t as u64).fork("refs"))?);
        plains.push(plain);
    }
    Ok((plains, refs))
}

/// Final pool size for each threshold.
pub fn lambda_sweep(plains: &[Tensor<f32>], refs: &[Vec<Vec<f32>>], lambdas: &[f64]) -> Result<Vec<(f64, usize)>> {
    lambdas
        .iter()
        .map(|&l| Ok((l, simulate_pool(plains, refs, l)?.last().copied().unwrap_or(0))))
        .collect()
}

pub fn sweep_csv(points: &[(f64, usize)]) -> String {
    let mut s = String::from("lambda_ood,pool_size\n");
    for (l, k) in points {
        let _ = writeln!(s, "{l:.4},{k}");
    }
    s
}

/// Midpoint of the widest threshold interval on `grid` where every stream
/// ends with exactly `target` sets.
pub fn calibrate_lambda(streams: &[(Vec<Tensor<f32>>, Vec<Vec<Vec<f32>>>)], grid: &[f64], target: usize) -> Result<Option<f64>> {
    let mut ok = Vec::with_capacity(grid.len());
    for &l in grid {
        let mut all = true;
        for (p, r) in streams {
            if simulate_pool(p, r, l)?.last().copied() != Some(target) {
                all = false;
                break;
            }
        }
        ok.push(all);
    }
    let (mut best, mut cur): (Option<(usize, usize)>, Option<usize>) = (None, None);
    for i in 0..=grid.len() {
        let hit = i < grid.len() && ok[i];
        match (hit, cur) {
            (true, None) => cur = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - s > b - a) {
                    best = Some((s, i));
                }
                cur = None;
            }
            _ => {}
        }
    }
    Ok(best.map(|(a, b)| (grid[a] + grid[b - 1]) / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
