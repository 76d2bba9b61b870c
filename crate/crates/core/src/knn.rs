//! k-nearest-neighbour exemplar model: majority vote (MV), averaged label
//! embedding (AVG) and similarity-weighted label embedding (WAVG).

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{FlatIndex, RetrievalResult};
use crate::model::{weighted_label_embedding, ExemplarModel, Memory, Method};
use crate::prob::softmax;
use crate::types::{
    EmbeddingVector, ExemplarStore, LabelId, LabelTable, PredictionOutput, ProbabilityDistribution, Sample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnVariant {
    Mv,
    Avg,
    #[default]
    Wavg,
}

impl FromStr for KnnVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mv" => Ok(KnnVariant::Mv),
            "avg" => Ok(KnnVariant::Avg),
            "wavg" => Ok(KnnVariant::Wavg),
            other => Err(Error::InvalidConfig(format!("unknown knn variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub variant: KnnVariant,
    /// Scales similarities before the WAVG softmax.
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 9,
            variant: KnnVariant::Wavg,
            temperature: 100.0,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidK);
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

fn neighbors(store: &ExemplarStore, idx: &FlatIndex, q: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
    if store.is_empty() || idx.is_empty() {
        return Err(Error::EmptyStore);
    }
    idx.search(q, k)
}

fn neighbor_label(store: &ExemplarStore, position: usize) -> Result<LabelId> {
    store
        .get(position)
        .map(|e| e.label_id)
        .ok_or_else(|| Error::ShapeMismatch(format!("index refers to unknown position {position}")))
}

fn vote_distribution(store: &ExemplarStore, hits: &RetrievalResult) -> Result<ProbabilityDistribution> {
    let mut counts: BTreeMap<LabelId, usize> = BTreeMap::new();
    for p in hits.positions() {
        *counts.entry(neighbor_label(store, p)?).or_insert(0) += 1;
    }
    let k = hits.len() as f64;
    let (support, probs) = counts.into_iter().map(|(l, c)| (l, c as f64 / k)).unzip();
    ProbabilityDistribution::new(support, probs)
}

/// Similarity weights `softmax(τ·s)` over the retrieved neighbours.
pub fn similarity_weights(hits: &RetrievalResult, temperature: f64) -> Result<Vec<f64>> {
    let logits: Vec<f64> = hits.neighbors.iter().map(|n| temperature * n.similarity).collect();
    softmax(&logits)
}

/// Vote fractions over the labels of the `k` nearest exemplars.
pub fn knn_predict_proba(
    store: &ExemplarStore,
    idx: &FlatIndex,
    q: &EmbeddingVector,
    cfg: &KnnConfig,
) -> Result<ProbabilityDistribution> {
    cfg.validate()?;
    let hits = neighbors(store, idx, q, cfg.k)?;
    vote_distribution(store, &hits)
}

pub fn knn_predict_embedding(
    store: &ExemplarStore,
    labels: &LabelTable,
    idx: &FlatIndex,
    q: &EmbeddingVector,
    cfg: &KnnConfig,
) -> Result<EmbeddingVector> {
    cfg.validate()?;
    let hits = neighbors(store, idx, q, cfg.k)?;
    embedding_from_hits(store, labels, &hits, cfg)
}

fn embedding_from_hits(
    store: &ExemplarStore,
    labels: &LabelTable,
    hits: &RetrievalResult,
    cfg: &KnnConfig,
) -> Result<EmbeddingVector> {
    let neighbor_labels: Vec<LabelId> = hits
        .positions()
        .map(|p| neighbor_label(store, p))
        .collect::<Result<_>>()?;
    let weighted: Vec<(LabelId, f64)> = match cfg.variant {
        KnnVariant::Mv => {
            let label = vote_distribution(store, hits)?.argmax()?;
            vec![(label, 1.0)]
        }
        KnnVariant::Avg => {
            let w = 1.0 / neighbor_labels.len() as f64;
            neighbor_labels.iter().map(|&l| (l, w)).collect()
        }
        KnnVariant::Wavg => {
            let beta = similarity_weights(hits, cfg.temperature)?;
            neighbor_labels.iter().copied().zip(beta).collect()
        }
    };
    weighted_label_embedding(labels, &weighted)
}

/// Lazy learner: storing an exemplar is all the training there is.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnnModel {
    memory: Memory,
    cfg: KnnConfig,
}

impl KnnModel {
    pub fn new(cfg: KnnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(KnnModel {
            memory: Memory::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &KnnConfig {
        &self.cfg
    }

    pub fn reserve(&mut self, additional: usize) {
        self.memory.reserve(additional);
    }
}

impl ExemplarModel for KnnModel {
    fn method(&self) -> Method {
        Method::Knn
    }

    fn memory(&self) -> &Memory {
        &self.memory
    }

    fn insert(&mut self, samples: &[Sample]) -> Result<()> {
        for s in samples {
            self.memory.push(s)?;
        }
        Ok(())
    }

    fn fit(&mut self) -> Result<()> {
        Ok(())
    }

    fn learn_one(&mut self, sample: &Sample) -> Result<()> {
        self.memory.push(sample).map(|_| ())
    }

    fn predict(&self, labels: &LabelTable, q: &EmbeddingVector) -> Result<PredictionOutput> {
        let Memory { store, index } = &self.memory;
        let hits = neighbors(store, index, q, self.cfg.k)?;
        let dist = vote_distribution(store, &hits)?;
        let embedding = embedding_from_hits(store, labels, &hits, &self.cfg)?;
        Ok(PredictionOutput::from_distribution(dist)?.with_embedding(embedding))
    }
}
