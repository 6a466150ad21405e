use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

pub fn correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Result<f64, EvalError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(EvalError::Param(format!(
            "correlation needs two equal-length series of at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Coefficients for one checkpoint trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCorrelation {
    pub run_id: String,
    pub dialect: String,
    pub points: usize,
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub trajectories: Vec<TrajectoryCorrelation>,
    pub mean_pearson: f64,
    pub mean_spearman: f64,
    pub pooled_pearson: f64,
    pub pooled_spearman: f64,
    /// Trajectories left out for having too few points or no variance.
    pub skipped: Vec<String>,
}

/// Format rate versus pass@k, per trajectory (one `(run_id, dialect)` pair
/// followed over training steps) and pooled over every point.
pub fn correlation_report(records: &[MetricsRecord]) -> Result<CorrelationReport, EvalError> {
    let mut groups: BTreeMap<(String, String), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.run_id.clone(), r.dialect.clone())).or_default().push(r);
    }
    let mut trajectories = Vec::new();
    let mut skipped = Vec::new();
    let (mut px, mut py) = (Vec::new(), Vec::new());
    for ((run_id, dialect), mut rs) in groups {
        rs.sort_by_key(|r| r.step);
        let x: Vec<f64> = rs.iter().map(|r| r.format_rate_pct).collect();
        let y: Vec<f64> = rs.iter().map(|r| r.pass_at_k_pct).collect();
        px.extend_from_slice(&x);
        py.extend_from_slice(&y);
        let coefficients = correlation(&x, &y, CorrelationKind::Pearson)
            .and_then(|p| Ok((p, correlation(&x, &y, CorrelationKind::Spearman)?)));
        match coefficients {
            Ok((pearson, spearman)) => trajectories.push(TrajectoryCorrelation {
                run_id,
                dialect,
                points: x.len(),
                pearson,
                spearman,
            }),
            Err(e) => {
                log::warn!("skipping trajectory {run_id}/{dialect}: {e}");
                skipped.push(format!("{run_id}/{dialect}"));
            }
        }
    }
    if trajectories.is_empty() {
        return Err(EvalError::UndefinedCorrelation);
    }
    let n = trajectories.len() as f64;
    Ok(CorrelationReport {
        mean_pearson: trajectories.iter().map(|t| t.pearson).sum::<f64>() / n,
        mean_spearman: trajectories.iter().map(|t| t.spearman).sum::<f64>() / n,
        pooled_pearson: correlation(&px, &py, CorrelationKind::Pearson)?,
        pooled_spearman: correlation(&px, &py, CorrelationKind::Spearman)?,
        trajectories,
        skipped,
    })
}
