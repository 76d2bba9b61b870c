//! JSON dataset manifests referencing embedding and label files.
//!
//! ```json
//! {
//!   "name": "flowers",
//!   "dim": 512,
//!   "labels": [{"id": 0, "text": "daisy"}, {"id": 1, "text": "rose"}],
//!   "text_embeddings": "text.emb",
//!   "splits": {
//!     "train": {"embeddings": "train.emb", "labels": "train.labels"},
//!     "test": {"embeddings": "test.emb", "labels": "test.labels"}
//!   }
//! }
//! ```
//!
//! Paths are relative to the manifest. `train` may be omitted for a task
//! that is only ever evaluated zero-shot. Embeddings are re-normalized on
//! load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TaskDataset;
use crate::io::embfile::{read_embeddings, read_labels, write_embeddings, write_labels, EmbeddingMatrix};
use crate::io::{read_bytes, write_atomic};
use crate::types::{EmbeddingVector, LabelEntry, LabelId, LabelTable, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLabel {
    pub id: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub embeddings: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<SplitFiles>,
    pub test: SplitFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub dim: usize,
    pub labels: Vec<ManifestLabel>,
    pub text_embeddings: PathBuf,
    pub splits: Splits,
}

/// A manifest's contents with label ids local to the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub name: String,
    pub dim: usize,
    pub labels: Vec<LabelEntry>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn manifest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn normalized_rows(m: &EmbeddingMatrix, file: &Path) -> Result<Vec<EmbeddingVector>> {
    m.rows()
        .enumerate()
        .map(|(i, r)| {
            EmbeddingVector::normalize(r).map_err(|e| Error::Format {
                path: file.to_path_buf(),
                reason: format!("row {i}: {e}"),
            })
        })
        .collect()
}

fn load_split(manifest: &Path, base: &Path, dim: usize, n_labels: usize, split: &SplitFiles) -> Result<Vec<Sample>> {
    let emb_path = base.join(&split.embeddings);
    let lbl_path = base.join(&split.labels);
    let m = read_embeddings(&emb_path)?;
    if m.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: m.dim,
        });
    }
    let labels = read_labels(&lbl_path)?;
    if labels.len() != m.count() {
        return Err(Error::Format {
            path: lbl_path,
            reason: format!("{} labels for {} embedding rows", labels.len(), m.count()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_labels) {
        return Err(Error::DanglingLabel {
            path: manifest.to_path_buf(),
            label: bad,
        });
    }
    Ok(normalized_rows(&m, &emb_path)?
        .into_iter()
        .zip(labels)
        .map(|(embedding, l)| Sample {
            embedding,
            label: LabelId(l),
        })
        .collect())
}

pub fn load_manifest(path: &Path) -> Result<LoadedDataset> {
    let text = read_bytes(path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| manifest_err(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if manifest.dim == 0 {
        return Err(manifest_err(path, "dim must be positive"));
    }
    let mut ids: Vec<u32> = manifest.labels.iter().map(|l| l.id).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
        return Err(manifest_err(path, "label ids must be dense and unique from 0"));
    }

    let text_path = base.join(&manifest.text_embeddings);
    let text_m = read_embeddings(&text_path)?;
    if text_m.dim != manifest.dim {
        return Err(Error::DimensionMismatch {
            expected: manifest.dim,
            got: text_m.dim,
        });
    }
    if text_m.count() != manifest.labels.len() {
        return Err(Error::Format {
            path: text_path,
            reason: format!(
                "{} text embeddings for {} labels",
                text_m.count(),
                manifest.labels.len()
            ),
        });
    }
    let text_vecs = normalized_rows(&text_m, &text_path)?;
    let mut labels: Vec<LabelEntry> = Vec::with_capacity(manifest.labels.len());
    for l in &manifest.labels {
        labels.push(LabelEntry {
            id: LabelId(l.id),
            text: l.text.clone(),
            text_embedding: text_vecs[l.id as usize].clone(),
        });
    }
    labels.sort_by_key(|e| e.id);

    let n = labels.len();
    let train = match &manifest.splits.train {
        Some(s) => load_split(path, base, manifest.dim, n, s)?,
        None => Vec::new(),
    };
    let test = load_split(path, base, manifest.dim, n, &manifest.splits.test)?;
    Ok(LoadedDataset {
        name: manifest.name,
        dim: manifest.dim,
        labels,
        train,
        test,
    })
}

/// Writes a dataset as `manifest.json` plus embedding and label files in
/// `dir`, returning the manifest path. Label ids must be dense from 0 and
/// text embeddings are stored in label order.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    labels: &[LabelEntry],
    train: &[Sample],
    test: &[Sample],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = LabelTable::new(labels.to_vec())?;
    let dim = table
        .dim()
        .ok_or_else(|| Error::InvalidConfig("dataset has no labels".into()))?;
    let text = EmbeddingMatrix::from_rows(dim, table.entries().iter().map(|e| e.text_embedding.as_slice()))?;
    write_embeddings(&dir.join("text.emb"), &text)?;

    let write_split = |stem: &str, samples: &[Sample]| -> Result<SplitFiles> {
        if let Some(s) = samples.iter().find(|s| table.get(s.label).is_none()) {
            return Err(Error::UnknownLabel(s.label));
        }
        let m = EmbeddingMatrix::from_rows(dim, samples.iter().map(|s| s.embedding.as_slice()))?;
        let files = SplitFiles {
            embeddings: format!("{stem}.emb").into(),
            labels: format!("{stem}.labels").into(),
        };
        write_embeddings(&dir.join(&files.embeddings), &m)?;
        let ids: Vec<u32> = samples.iter().map(|s| s.label.0).collect();
        write_labels(&dir.join(&files.labels), &ids)?;
        Ok(files)
    };
    let train_files = if train.is_empty() {
        None
    } else {
        Some(write_split("train", train)?)
    };
    let test_files = write_split("test", test)?;

    let manifest = DatasetManifest {
        name: name.to_string(),
        dim,
        labels: table
            .entries()
            .iter()
            .map(|e| ManifestLabel {
                id: e.id.0,
                text: e.text.clone(),
            })
            .collect(),
        text_embeddings: "text.emb".into(),
        splits: Splits {
            train: train_files,
            test: test_files,
        },
    };
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&path, &json)?;
    Ok(path)
}

/// Joins datasets into one label space. Labels of the `i`-th dataset are
/// shifted past those of all earlier datasets.
pub fn assemble(datasets: Vec<LoadedDataset>) -> Result<(LabelTable, Vec<TaskDataset>)> {
    let mut entries = Vec::new();
    let mut tasks = Vec::with_capacity(datasets.len());
    let mut offset: u32 = 0;
    let mut dim: Option<usize> = None;
    for d in datasets {
        match dim {
            Some(x) if x != d.dim => {
                return Err(Error::DimensionMismatch {
                    expected: x,
                    got: d.dim,
                })
            }
            _ => dim = Some(d.dim),
        }
        let shift = |s: Sample| Sample {
            embedding: s.embedding,
            label: LabelId(s.label.0 + offset),
        };
        let n = d.labels.len() as u32;
        let label_ids: Vec<LabelId> = (offset..offset + n).map(LabelId).collect();
        entries.extend(d.labels.into_iter().map(|e| LabelEntry {
            id: LabelId(e.id.0 + offset),
            ..e
        }));
        tasks.push(TaskDataset {
            name: d.name,
            label_ids,
            train: d.train.into_iter().map(shift).collect(),
            test: d.test.into_iter().map(shift).collect(),
        });
        offset += n;
    }
    Ok((LabelTable::new(entries)?, tasks))
}
