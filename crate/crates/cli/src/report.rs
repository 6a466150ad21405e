//! Aggregation of metrics CSVs into the results table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use copsd::eval::{correlation_report, read_metrics_csv, MetricsRecord};

use crate::CliError;

/// The checkpoint chosen for one `(method, run_id, dialect)` trajectory:
/// best pass@k at the smallest budget (earliest step on ties), with its
/// records at every budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub method: String,
    pub run_id: String,
    pub dialect: String,
    pub step: u64,
    pub by_budget: BTreeMap<usize, MetricsRecord>,
}

pub fn select_checkpoints(records: &[MetricsRecord]) -> Vec<Selection> {
    let mut groups: BTreeMap<(String, String, String), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method.clone(), r.run_id.clone(), r.dialect.clone()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((method, run_id, dialect), rs) in groups {
        let smallest = rs.iter().map(|r| r.budget).min().unwrap();
        let mut best: Option<&MetricsRecord> = None;
        for r in rs.iter().filter(|r| r.budget == smallest) {
            best = match best {
                Some(b) if b.pass_at_k_pct > r.pass_at_k_pct => Some(b),
                Some(b) if b.pass_at_k_pct == r.pass_at_k_pct && b.step <= r.step => Some(b),
                _ => Some(r),
            };
        }
        let step = best.unwrap().step;
        let by_budget = rs
            .iter()
            .filter(|r| r.step == step)
            .map(|r| (r.budget, (*r).clone()))
            .collect();
        out.push(Selection {
            method,
            run_id,
            dialect,
            step,
            by_budget,
        });
    }
    out
}

/// One line of `report.csv`. `section` is `best`, `average` or
/// `correlation`; columns that do not apply to a section are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub method: String,
    pub dialect: String,
    pub budget: Option<usize>,
    pub steps: String,
    pub runs: usize,
    pub pass_at_k_pct: Option<f64>,
    pub format_rate_pct: Option<f64>,
    pub repeat4: Option<f64>,
    pub best: Option<bool>,
    pub rho_p_mean: Option<f64>,
    pub rho_s_mean: Option<f64>,
    pub rho_p_pool: Option<f64>,
    pub rho_s_pool: Option<f64>,
}

impl ReportRow {
    fn empty(section: &str, method: &str, dialect: &str) -> Self {
        Self {
            section: section.into(),
            method: method.into(),
            dialect: dialect.into(),
            budget: None,
            steps: String::new(),
            runs: 0,
            pass_at_k_pct: None,
            format_rate_pct: None,
            repeat4: None,
            best: None,
            rho_p_mean: None,
            rho_s_mean: None,
            rho_p_pool: None,
            rho_s_pool: None,
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn build_report(records: &[MetricsRecord]) -> Result<Vec<ReportRow>, CliError> {
    if records.is_empty() {
        return Err(CliError::Integrity("no metrics records to report".into()));
    }
    let selections = select_checkpoints(records);
    // (method, dialect, budget) -> selected records over runs
    let mut cells: BTreeMap<(String, String, usize), Vec<(&Selection, &MetricsRecord)>> = BTreeMap::new();
    for s in &selections {
        for (b, r) in &s.by_budget {
            cells.entry((s.method.clone(), s.dialect.clone(), *b)).or_default().push((s, r));
        }
    }
    let mut rows = Vec::new();
    for ((method, dialect, budget), items) in &cells {
        let mut row = ReportRow::empty("best", method, dialect);
        row.budget = Some(*budget);
        row.steps = items.iter().map(|(s, _)| s.step.to_string()).collect::<Vec<_>>().join(";");
        row.runs = items.len();
        row.pass_at_k_pct = Some(mean(items.iter().map(|(_, r)| r.pass_at_k_pct)));
        row.format_rate_pct = Some(mean(items.iter().map(|(_, r)| r.format_rate_pct)));
        row.repeat4 = Some(mean(items.iter().map(|(_, r)| r.repeat4)));
        rows.push(row);
    }
    // mark the best method per (dialect, budget)
    let mut top: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in &rows {
        let key = (r.dialect.clone(), r.budget.unwrap());
        let v = r.pass_at_k_pct.unwrap();
        let e = top.entry(key).or_insert(v);
        *e = e.max(v);
    }
    for r in &mut rows {
        r.best = Some(r.pass_at_k_pct.unwrap() == top[&(r.dialect.clone(), r.budget.unwrap())]);
    }
    // method averages over dialects
    let mut avg: BTreeMap<(String, usize), Vec<&ReportRow>> = BTreeMap::new();
    for r in &rows {
        avg.entry((r.method.clone(), r.budget.unwrap())).or_default().push(r);
    }
    let mut averages = Vec::new();
    for ((method, budget), rs) in avg {
        let mut row = ReportRow::empty("average", &method, "avg");
        row.budget = Some(budget);
        row.runs = rs.iter().map(|r| r.runs).sum();
        row.pass_at_k_pct = Some(mean(rs.iter().map(|r| r.pass_at_k_pct.unwrap())));
        row.format_rate_pct = Some(mean(rs.iter().map(|r| r.format_rate_pct.unwrap())));
        row.repeat4 = Some(mean(rs.iter().map(|r| r.repeat4.unwrap())));
        averages.push(row);
    }
    rows.extend(averages);
    // format-rate versus pass@k over each method's training trajectories
    let mut by_method: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.clone()).or_default().push(r.clone());
    }
    for (method, rs) in by_method {
        let smallest = rs.iter().map(|r| r.budget).min().unwrap();
        let at: Vec<MetricsRecord> = rs.into_iter().filter(|r| r.budget == smallest).collect();
        match correlation_report(&at) {
            Ok(c) => {
                let mut row = ReportRow::empty("correlation", &method, "all");
                row.budget = Some(smallest);
                row.runs = c.trajectories.len();
                row.rho_p_mean = Some(c.mean_pearson);
                row.rho_s_mean = Some(c.mean_spearman);
                row.rho_p_pool = Some(c.pooled_pearson);
                row.rho_s_pool = Some(c.pooled_spearman);
                rows.push(row);
            }
            Err(e) => log::warn!("no correlations for {method}: {e}"),
        }
    }
    Ok(rows)
}

/// Metrics CSV files under `dir`, found recursively, in sorted order.
pub fn find_metrics_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                let head = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                if head.starts_with("run_id,method,dialect,step,budget") {
                    out.push(path);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_all_metrics(dir: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let files = find_metrics_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Integrity(format!("no metrics CSVs under {}", dir.display())));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_metrics_csv(&f)?);
    }
    Ok(out)
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(method: &str, run: &str, dialect: &str, step: u64, budget: usize, pass: f64, format: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: run.into(),
            method: method.into(),
            dialect: dialect.into(),
            step,
            budget,
            k: 12,
            pass_at_k_pct: pass,
            format_rate_pct: format,
            repeat2: 0.1,
            repeat3: 0.1,
            repeat4: 0.1,
            repeat5: 0.1,
            repeat6: 0.1,
            lang_consistency: 1.0,
            mean_gen_len: 10.0,
        }
    }

    #[test]
    fn selection_uses_smallest_budget() {
        let rs = vec![
            rec("copsd", "a", "L1", 5, 64, 10.0, 50.0),
            rec("copsd", "a", "L1", 5, 128, 40.0, 50.0),
            rec("copsd", "a", "L1", 10, 64, 20.0, 60.0),
            rec("copsd", "a", "L1", 10, 128, 25.0, 60.0),
            rec("copsd", "a", "L1", 15, 64, 20.0, 70.0),
        ];
        let s = select_checkpoints(&rs);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].step, 10);
        assert_eq!(s[0].by_budget[&128].pass_at_k_pct, 25.0);
    }

    #[test]
    fn report_marks_best_and_averages() {
        let rs = vec![
            rec("base", "b", "L1", 0, 64, 10.0, 90.0),
            rec("copsd", "c", "L1", 5, 64, 30.0, 40.0),
            rec("copsd", "c", "L1", 10, 64, 35.0, 60.0),
            rec("copsd", "c", "L1", 15, 64, 32.0, 50.0),
            rec("base", "b", "L2", 0, 64, 20.0, 90.0),
            rec("copsd", "d", "L2", 5, 64, 15.0, 40.0),
            rec("copsd", "d", "L2", 10, 64, 12.0, 30.0),
        ];
        let rows = build_report(&rs).unwrap();
        let best: Vec<_> = rows.iter().filter(|r| r.section == "best").collect();
        let cell = |m: &str, d: &str| best.iter().find(|r| r.method == m && r.dialect == d).unwrap();
        assert_eq!(cell("copsd", "L1").best, Some(true));
        assert_eq!(cell("base", "L1").best, Some(false));
        assert_eq!(cell("base", "L2").best, Some(true));
        assert_eq!(cell("copsd", "L2").steps, "5");
        // averages recomputed from the raw records
        let avg = rows.iter().find(|r| r.section == "average" && r.method == "copsd").unwrap();
        assert!((avg.pass_at_k_pct.unwrap() - (35.0 + 15.0) / 2.0).abs() < 1e-9);
        let corr = rows.iter().find(|r| r.section == "correlation" && r.method == "copsd").unwrap();
        assert_eq!(corr.runs, 2);
        assert!(corr.rho_p_mean.is_some() && corr.rho_p_pool.is_some());
        assert!(!rows.iter().any(|r| r.section == "correlation" && r.method == "base"));
        assert!(build_report(&[]).is_err());
    }
}
