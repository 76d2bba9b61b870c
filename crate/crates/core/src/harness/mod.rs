//! Scenario generation, evaluation protocols, metrics and timing.

pub mod eval;
pub mod flexible;
pub mod latency;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::types::{LabelId, Sample};

pub use eval::{evaluate, run_scenario, run_scenario_with, train_on_tasks, RunSpec, StageReport, TaskAccuracy};
pub use flexible::{flexible_inference_eval, FlexibleReport, Protocol};
pub use latency::{bench_insert_latency, LatencyConfig, LatencyRow};
pub use metrics::{transfer_avg_last, transfer_avg_last_matrix, TransferAvgLast};
pub use report::{ExportRow, RunReport};
pub use scenario::{plan_scenario, ScenarioKind, ScenarioPlan, StageSpec};
pub use synth::{gen_synthetic, SynthConfig, SynthTask};

/// One classification task: its label set and labelled samples.
///
/// Label ids are global (they index the run's `LabelTable`). A task with no
/// training samples can only be used as a zero-shot task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub label_ids: Vec<LabelId>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}
