//! Serializable run reports and their long-format export.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::StageReport;
use crate::harness::flexible::FlexibleReport;
use crate::harness::metrics::TransferAvgLast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Echo of the configuration that produced the run.
    pub config: serde_json::Value,
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_avg_last: Option<TransferAvgLast>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flexible: Vec<FlexibleReport>,
    /// Set when a stage failed; `stages` then holds the completed ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One `(stage, task, metric, value)` record. `value` is empty when the
/// metric is undefined, e.g. seen accuracy before any label is covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub stage: usize,
    pub task: String,
    pub metric: String,
    pub value: Option<f64>,
}

pub const EXPORT_METRICS: [&str; 3] = ["accuracy", "seen", "unseen"];

impl RunReport {
    /// The report with every wall-time field zeroed.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        r.stages.iter_mut().for_each(StageReport::clear_timing);
        r
    }

    /// Long-format rows for every stage, task (target then zero-shot) and
    /// requested metric.
    pub fn export_rows(&self, metrics: &[&str]) -> Result<Vec<ExportRow>> {
        if self.stages.is_empty() {
            return Err(Error::MalformedReport("report has no stages".into()));
        }
        if let Some(m) = metrics.iter().find(|m| !EXPORT_METRICS.contains(m)) {
            return Err(Error::InvalidConfig(format!("unknown metric {m:?}")));
        }
        let mut rows = Vec::new();
        for stage in &self.stages {
            for task in stage.target.iter().chain(&stage.zeroshot) {
                for &metric in metrics {
                    let value = match metric {
                        "accuracy" => Some(task.accuracy),
                        "seen" => task.seen,
                        _ => task.unseen,
                    };
                    rows.push(ExportRow {
                        stage: stage.stage_index,
                        task: task.task.clone(),
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
        Ok(rows)
    }

    /// Parses a report, rejecting documents without stages.
    pub fn from_json(text: &str) -> Result<RunReport> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| Error::MalformedReport(e.to_string()))?;
        if r.stages.is_empty() {
            return Err(Error::MalformedReport("report has no stages".into()));
        }
        Ok(r)
    }
}
