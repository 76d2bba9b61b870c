//! Task-incremental summary metrics over the stage × task accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::eval::StageReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferAvgLast {
    /// Mean accuracy on each task at the stages before it is trained.
    /// The first task in the order has no such stage and is left out;
    /// `None` for a single task.
    pub transfer: Option<f64>,
    /// Mean over tasks of the task's accuracy averaged across stages.
    pub avg: f64,
    /// Mean accuracy over tasks after the final stage.
    pub last: f64,
}

/// `matrix[s][t]` is the accuracy on task `t` after stage `s`; stage `s`
/// trains task `task_order[s]`.
pub fn transfer_avg_last_matrix(matrix: &[Vec<f64>], task_order: &[usize]) -> Result<TransferAvgLast> {
    let stages = matrix.len();
    if stages == 0 {
        return Err(Error::ShapeMismatch("no stages".into()));
    }
    let tasks = matrix[0].len();
    if tasks == 0 || matrix.iter().any(|row| row.len() != tasks) {
        return Err(Error::ShapeMismatch("ragged or empty accuracy matrix".into()));
    }
    if task_order.len() != stages {
        return Err(Error::ShapeMismatch(format!(
            "{} stages but a task order of length {}",
            stages,
            task_order.len()
        )));
    }
    let mut sorted = task_order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..tasks).collect::<Vec<_>>() {
        return Err(Error::ShapeMismatch(
            "task order must be a permutation of the tasks".into(),
        ));
    }

    let column_mean = |t: usize, upto: usize| (0..upto).map(|s| matrix[s][t]).sum::<f64>() / upto as f64;
    let transfer_terms: Vec<f64> = task_order
        .iter()
        .enumerate()
        .skip(1)
        .map(|(stage, &t)| column_mean(t, stage))
        .collect();
    let transfer =
        (!transfer_terms.is_empty()).then(|| transfer_terms.iter().sum::<f64>() / transfer_terms.len() as f64);
    let avg = (0..tasks).map(|t| column_mean(t, stages)).sum::<f64>() / tasks as f64;
    let last = matrix[stages - 1].iter().sum::<f64>() / tasks as f64;
    Ok(TransferAvgLast { transfer, avg, last })
}

pub fn transfer_avg_last(reports: &[StageReport], task_order: &[usize]) -> Result<TransferAvgLast> {
    let matrix: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| r.target.iter().map(|a| a.accuracy).collect())
        .collect();
    transfer_avg_last_matrix(&matrix, task_order)
}
