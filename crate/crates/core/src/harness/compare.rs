use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{higher_is_better, MetricsReport};

/// Reports aligned on their shared metrics; deltas are against the first.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub metrics: Vec<String>,
    /// `values[r][m]` for report `r` and metric `m`.
    pub values: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn delta(&self, report: usize, metric: usize) -> f64 {
        self.values[report][metric] - self.values[0][metric]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("report");
        for m in &self.metrics {
            s.push_str(&format!(",{m},{m}_delta"));
        }
        s.push('\n');
        for (r, label) in self.labels.iter().enumerate() {
            s.push_str(label);
            for (m, v) in self.values[r].iter().enumerate() {
                s.push_str(&format!(",{v},{}", self.delta(r, m)));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:width$}", "report");
        for m in &self.metrics {
            let arrow = if higher_is_better(m) { "↑" } else { "↓" };
            s.push_str(&format!("  {:>24}", format!("{m} {arrow}")));
        }
        s.push('\n');
        for (r, label) in self.labels.iter().enumerate() {
            s.push_str(&format!("{label:width$}"));
            for (m, v) in self.values[r].iter().enumerate() {
                let d = self.delta(r, m);
                let cell = if r == 0 { format!("{v:.4}") } else { format!("{v:.4} ({d:+.4})") };
                s.push_str(&format!("  {cell:>24}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Align reports by metric name; needs two or more reports sharing a metric.
pub fn compare_reports(reports: &[(String, MetricsReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Contract(format!("need at least two reports, got {}", reports.len())));
    }
    let maps: Vec<BTreeMap<String, f64>> = reports.iter().map(|(_, r)| r.values()).collect();
    let mut shared: BTreeSet<String> = maps[0].keys().cloned().collect();
    for m in &maps[1..] {
        shared.retain(|k| m.contains_key(k));
    }
    if shared.is_empty() {
        return Err(Error::Contract("reports share no metrics".into()));
    }
    let metrics: Vec<String> = shared.into_iter().collect();
    Ok(Comparison {
        labels: reports.iter().map(|(l, _)| l.clone()).collect(),
        values: maps.iter().map(|m| metrics.iter().map(|k| m[k]).collect()).collect(),
        metrics,
    })
}

/// Load report JSON files and label each with its config hash.
pub fn compare_report_files(paths: &[impl AsRef<Path>]) -> Result<Comparison> {
    let reports = paths
        .iter()
        .map(|p| {
            let r = MetricsReport::load(p.as_ref())?;
            let label = r.config_hash().map(str::to_string).unwrap_or_else(|| p.as_ref().display().to_string());
            Ok((label, r))
        })
        .collect::<Result<Vec<_>>>()?;
    compare_reports(&reports)
}
