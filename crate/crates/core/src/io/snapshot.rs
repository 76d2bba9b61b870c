//! Versioned JSON snapshots of trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{RunSpec, TaskDataset};
use crate::io::{read_bytes, write_atomic};
use crate::knn::KnnModel;
use crate::linear::LinProbe;
use crate::model::{ExemplarModel, Method};
use crate::treeprobe::TreeProbe;

pub const SNAPSHOT_FORMAT: &str = "memprobe-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", content = "state", rename_all = "lowercase")]
pub enum SnapshotModel {
    Knn(KnnModel),
    LinProbe(LinProbe),
    TreeProbe(TreeProbe),
}

impl SnapshotModel {
    pub fn into_model(self) -> Box<dyn ExemplarModel> {
        match self {
            SnapshotModel::Knn(m) => Box::new(m),
            SnapshotModel::LinProbe(m) => Box::new(m),
            SnapshotModel::TreeProbe(m) => Box::new(m),
        }
    }

    pub fn as_model(&self) -> &dyn ExemplarModel {
        match self {
            SnapshotModel::Knn(m) => m,
            SnapshotModel::LinProbe(m) => m,
            SnapshotModel::TreeProbe(m) => m,
        }
    }
}

fn fitted<M: ExemplarModel>(mut model: M, tasks: &[TaskDataset]) -> Result<M> {
    for t in tasks {
        model.insert(&t.train)?;
    }
    model.fit()?;
    Ok(model)
}

/// The model `spec` describes, trained on every training sample of `tasks`
/// in task order. `None` for pure zero-shot.
pub fn fit_snapshot(tasks: &[TaskDataset], spec: &RunSpec) -> Result<Option<SnapshotModel>> {
    spec.validate()?;
    Ok(match spec.method {
        Method::ZeroShot => None,
        Method::Knn => Some(SnapshotModel::Knn(fitted(KnnModel::new(spec.knn)?, tasks)?)),
        Method::LinProbe => Some(SnapshotModel::LinProbe(fitted(LinProbe::new(spec.train)?, tasks)?)),
        Method::TreeProbe => Some(SnapshotModel::TreeProbe(fitted(
            TreeProbe::new(spec.tree_config())?,
            tasks,
        )?)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub model: SnapshotModel,
}

impl Snapshot {
    pub fn new(model: SnapshotModel) -> Self {
        Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            model,
        }
    }
}

pub fn save_snapshot(path: &Path, model: SnapshotModel) -> Result<()> {
    let bytes = serde_json::to_vec(&Snapshot::new(model))?;
    write_atomic(path, &bytes)
}

pub fn load_snapshot(path: &Path) -> Result<SnapshotModel> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let snap: Snapshot = serde_json::from_slice(&read_bytes(path)?).map_err(|e| bad(e.to_string()))?;
    if snap.format != SNAPSHOT_FORMAT {
        return Err(bad(format!("not a snapshot: format {:?}", snap.format)));
    }
    if snap.version != SNAPSHOT_VERSION {
        return Err(bad(format!("unsupported snapshot version {}", snap.version)));
    }
    if let SnapshotModel::TreeProbe(t) = &snap.model {
        t.tree().check_invariants().map_err(|e| bad(e.to_string()))?;
    }
    Ok(snap.model)
}
