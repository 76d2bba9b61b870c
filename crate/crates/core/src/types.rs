//! Domain types shared by every model: embeddings, labels, exemplar memory,
//! distributions and seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms closer than this to one are left untouched by [`EmbeddingVector::normalize`].
const UNIT_TOLERANCE: f64 = 1e-6;
const ZERO_NORM: f64 = 1e-12;

/// Dense label identifier, `0..L` within a [`LabelTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for LabelId {
    fn from(v: u32) -> Self {
        LabelId(v)
    }
}

/// Unit-norm embedding. Values are stored as `f32`; every reduction over them
/// accumulates in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Scales `raw` to unit L2 norm.
    ///
    /// Vectors already within `1e-6` of unit length are returned unchanged, so
    /// normalizing twice is bitwise idempotent.
    pub fn normalize(raw: &[f32]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding component"));
        }
        let norm = l2_norm(raw);
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        if (norm - 1.0).abs() <= UNIT_TOLERANCE {
            return Ok(EmbeddingVector(raw.to_vec()));
        }
        Ok(EmbeddingVector(raw.iter().map(|&x| (x as f64 / norm) as f32).collect()))
    }

    /// Normalizes a vector held in `f64`.
    pub fn normalize_f64(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding component"));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let scaled: Vec<f32> = raw.iter().map(|&x| (x / norm) as f32).collect();
        Self::normalize(&scaled)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Inner product with 64-bit accumulation.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // independent lanes let the compiler vectorize; the order is fixed
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] as f64 * y[i] as f64;
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: LabelId,
    pub text: String,
    pub text_embedding: EmbeddingVector,
}

/// Label vocabulary with exactly one text embedding per dense label id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelTable {
    entries: Vec<LabelEntry>,
}

impl LabelTable {
    pub fn new(mut entries: Vec<LabelEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id.index() != i {
                return Err(Error::InvalidConfig(format!(
                    "label ids must be dense and unique; expected {i}, found {}",
                    e.id
                )));
            }
        }
        if let Some(first) = entries.first() {
            let dim = first.text_embedding.dim();
            for e in &entries {
                e.text_embedding.check_dim(dim)?;
            }
        }
        Ok(LabelTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.text_embedding.dim())
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn get(&self, id: LabelId) -> Option<&LabelEntry> {
        self.entries.get(id.index())
    }

    pub fn text_embedding(&self, id: LabelId) -> Result<&EmbeddingVector> {
        self.get(id)
            .map(|e| &e.text_embedding)
            .ok_or(Error::MissingTextEmbedding(id))
    }
}

/// A labelled embedding that has not been stored yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub embedding: EmbeddingVector,
    pub label: LabelId,
}

/// A stored memory entry. `position` is the insertion order within its store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub position: usize,
    pub image_embedding: EmbeddingVector,
    pub label_id: LabelId,
}

/// Append-only exemplar memory.
///
/// Mutation requires `&mut self`, so readers can never observe a partially
/// appended entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExemplarStore {
    exemplars: Vec<Exemplar>,
    label_counts: BTreeMap<LabelId, usize>,
    dim: Option<usize>,
}

impl ExemplarStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        ExemplarStore {
            exemplars: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    pub fn reserve(&mut self, additional: usize) {
        self.exemplars.reserve(additional);
    }

    /// Appends an exemplar and returns a reference to the stored entry.
    pub fn push(&mut self, embedding: EmbeddingVector, label: LabelId) -> Result<&Exemplar> {
        match self.dim {
            Some(d) => embedding.check_dim(d)?,
            None => self.dim = Some(embedding.dim()),
        }
        let position = self.exemplars.len();
        self.exemplars.push(Exemplar {
            position,
            image_embedding: embedding,
            label_id: label,
        });
        *self.label_counts.entry(label).or_insert(0) += 1;
        Ok(&self.exemplars[position])
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, position: usize) -> Option<&Exemplar> {
        self.exemplars.get(position)
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    /// Union of stored labels (`Y_e`).
    pub fn covered_labels(&self) -> BTreeSet<LabelId> {
        self.label_counts.keys().copied().collect()
    }

    pub fn covers(&self, label: LabelId) -> bool {
        self.label_counts.contains_key(&label)
    }

    pub fn label_counts(&self) -> &BTreeMap<LabelId, usize> {
        &self.label_counts
    }
}

/// Distribution over an ordered, duplicate-free label support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    support: Vec<LabelId>,
    probs: Vec<f64>,
    /// Set when the mass is not required to sum to one.
    #[serde(default)]
    partial: bool,
}

impl ProbabilityDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(support: Vec<LabelId>, probs: Vec<f64>) -> Result<Self> {
        let dist = Self::partial(support, probs)?;
        let total: f64 = dist.probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbabilityDistribution { partial: false, ..dist })
    }

    /// A zero-extended or otherwise unnormalized distribution.
    pub fn partial(support: Vec<LabelId>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("probability"));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig("negative probability".into()));
        }
        let unique: BTreeSet<_> = support.iter().collect();
        if unique.len() != support.len() {
            return Err(Error::InvalidConfig("duplicate label in support".into()));
        }
        Ok(ProbabilityDistribution {
            support,
            probs,
            partial: true,
        })
    }

    /// Point mass on one label.
    pub fn point(label: LabelId) -> Self {
        ProbabilityDistribution {
            support: vec![label],
            probs: vec![1.0],
            partial: false,
        }
    }

    pub fn support(&self) -> &[LabelId] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_partial(&self) -> bool {
        self.partial
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LabelId, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    /// Probability of `label`, zero when outside the support.
    pub fn prob_of(&self, label: LabelId) -> f64 {
        self.support
            .iter()
            .position(|&l| l == label)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn argmax(&self) -> Result<LabelId> {
        crate::prob::argmax_label(self)
    }
}

/// Output of an exemplar model: a distribution, a label embedding, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub distribution: Option<ProbabilityDistribution>,
    pub embedding: Option<EmbeddingVector>,
    pub argmax_label: LabelId,
}

impl PredictionOutput {
    pub fn from_distribution(distribution: ProbabilityDistribution) -> Result<Self> {
        let argmax_label = distribution.argmax()?;
        Ok(PredictionOutput {
            distribution: Some(distribution),
            embedding: None,
            argmax_label,
        })
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

/// Root seed; every stochastic step derives its stream from one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for the stream named by `tag`.
    pub fn derive(self, tag: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let v = EmbeddingVector::normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_unit_is_identity() {
        let v = EmbeddingVector::normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            EmbeddingVector::normalize(&[0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn store_tracks_covered_labels() {
        let mut store = ExemplarStore::new();
        let e = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
        store.push(e.clone(), LabelId(3)).unwrap();
        store.push(e.clone(), LabelId(1)).unwrap();
        store.push(e, LabelId(3)).unwrap();
        assert_eq!(
            store.covered_labels().into_iter().collect::<Vec<_>>(),
            vec![LabelId(1), LabelId(3)]
        );
        let positions: Vec<_> = store.exemplars().iter().map(|e| e.position).collect();
        assert_eq!(positions, vec![0, 1, 2]);
        let wrong = EmbeddingVector::normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(store.push(wrong, LabelId(0)).is_err());
    }

    #[test]
    fn label_table_requires_dense_ids() {
        let e = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
        let entry = |id| LabelEntry {
            id: LabelId(id),
            text: format!("l{id}"),
            text_embedding: e.clone(),
        };
        assert!(LabelTable::new(vec![entry(1), entry(0)]).is_ok());
        assert!(LabelTable::new(vec![entry(0), entry(2)]).is_err());
        assert!(LabelTable::new(vec![entry(0), entry(0)]).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(ProbabilityDistribution::new(vec![LabelId(0), LabelId(1)], vec![0.5, 0.4]).is_err());
        assert!(ProbabilityDistribution::new(vec![LabelId(0), LabelId(0)], vec![0.5, 0.5]).is_err());
        let p = ProbabilityDistribution::partial(vec![LabelId(0), LabelId(1)], vec![0.5, 0.0]).unwrap();
        assert!(p.is_partial());
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(7);
        assert_ne!(s.derive(1), s.derive(2));
        assert_eq!(s.derive(1), s.derive(1));
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(v in proptest::collection::vec(-10.0f32..10.0, 1..64)) {
            prop_assume!(v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() > 1e-6);
            let once = EmbeddingVector::normalize(&v).unwrap();
            prop_assert!((once.norm() - 1.0).abs() <= 1e-6);
            let twice = EmbeddingVector::normalize(once.as_slice()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
