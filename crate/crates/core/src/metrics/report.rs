use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub embedder: String,
    pub split: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        ensure!(row.value.is_finite(), "metric `{}` is not finite", row.metric);
        self.rows.push(row);
        Ok(())
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn values(&self) -> BTreeMap<String, f64> {
        self.rows.iter().map(|r| (r.metric.clone(), r.value)).collect()
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.rows.first().map(|r| r.config_hash.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,embedder,split,value,seed,config_hash\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.metric, r.embedder, r.split, r.value, r.seed, r.config_hash));
        }
        s
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Whether larger values of `metric` are better.
pub fn higher_is_better(metric: &str) -> bool {
    !(metric.starts_with("fad") || metric.starts_with("mkl"))
}
