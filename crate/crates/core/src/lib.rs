//! Continual open-vocabulary classification over fixed embeddings.
//!
//! A zero-shot cosine classifier is combined with fast-learning exemplar
//! models (k-nearest neighbours, a global linear probe and a cluster-tree of
//! local linear probes). Adaptive fusion weights the exemplar model by the
//! zero-shot probability that a query's label is covered by the exemplars.

// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod harness;
pub mod index;
pub mod io;
pub mod knn;
pub mod linear;
pub mod model;
pub mod prob;
pub mod treeprobe;
pub mod types;

pub use error::{Error, Result};
pub use fusion::{CandidateSet, FusionConfig, FusionMode, ZeroShotConfig};
pub use index::{FlatIndex, Neighbor, RetrievalResult};
pub use knn::{KnnConfig, KnnModel, KnnVariant};
pub use linear::{LinProbe, LinearClassifier, TrainConfig};
pub use model::{ExemplarModel, Method};
pub use prob::{argmax_label, softmax};
pub use treeprobe::{ClusterTree, TreeConfig, TreeProbe};
pub use types::{
    EmbeddingVector, Exemplar, ExemplarStore, LabelEntry, LabelId, LabelTable, PredictionOutput,
    ProbabilityDistribution, RngSeed, Sample,
};
