//! Common interface of the fast-learning exemplar models.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::types::{EmbeddingVector, Exemplar, ExemplarStore, LabelId, LabelTable, PredictionOutput, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "zs")]
    ZeroShot,
    Knn,
    LinProbe,
    TreeProbe,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ZeroShot => "zs",
            Method::Knn => "knn",
            Method::LinProbe => "linprobe",
            Method::TreeProbe => "treeprobe",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zs" | "zeroshot" | "zero-shot" => Ok(Method::ZeroShot),
            "knn" => Ok(Method::Knn),
            "linprobe" | "linear" => Ok(Method::LinProbe),
            "treeprobe" | "tree" => Ok(Method::TreeProbe),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Exemplar store paired with its retrieval index.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Memory {
    pub store: ExemplarStore,
    pub index: FlatIndex,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve(&mut self, additional: usize) {
        self.store.reserve(additional);
        self.index.reserve(additional);
    }

    pub fn push(&mut self, sample: &Sample) -> Result<&Exemplar> {
        let position = self.store.len();
        if let Some(d) = self.store.dim() {
            sample.embedding.check_dim(d)?;
        }
        self.index.add_vector(position, &sample.embedding)?;
        self.store.push(sample.embedding.clone(), sample.label)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

/// A model that learns from stored exemplars.
///
/// `insert` only stores; `fit` brings every classifier up to date. `learn_one`
/// is the per-sample path: store one exemplar and retrain only what it touched.
pub trait ExemplarModel: Send + Sync {
    fn method(&self) -> Method;

    fn memory(&self) -> &Memory;

    fn insert(&mut self, samples: &[Sample]) -> Result<()>;

    fn fit(&mut self) -> Result<()>;

    fn learn_one(&mut self, sample: &Sample) -> Result<()> {
        self.insert(std::slice::from_ref(sample))?;
        self.fit()
    }

    fn predict(&self, labels: &LabelTable, q: &EmbeddingVector) -> Result<PredictionOutput>;

    fn store(&self) -> &ExemplarStore {
        &self.memory().store
    }

    fn covered_labels(&self) -> BTreeSet<LabelId> {
        self.store().covered_labels()
    }

    fn is_empty(&self) -> bool {
        self.memory().is_empty()
    }
}

/// Unit-normalized weighted sum of label text embeddings.
///
/// Weights for repeated labels are merged first; a single distinct label
/// returns its text embedding unchanged.
pub(crate) fn weighted_label_embedding(labels: &LabelTable, weighted: &[(LabelId, f64)]) -> Result<EmbeddingVector> {
    let first = weighted.first().ok_or(Error::EmptyStore)?.0;
    if weighted.iter().all(|(l, _)| *l == first) {
        return Ok(labels.text_embedding(first)?.clone());
    }
    let dim = labels.text_embedding(first)?.dim();
    let mut acc = vec![0.0f64; dim];
    for &(label, w) in weighted {
        let t = labels.text_embedding(label)?;
        t.check_dim(dim)?;
        for (a, &x) in acc.iter_mut().zip(t.as_slice()) {
            *a += w * x as f64;
        }
    }
    EmbeddingVector::normalize_f64(&acc)
}
