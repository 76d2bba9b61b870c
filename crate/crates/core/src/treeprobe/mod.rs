//! Cluster tree with a linear probe in every leaf.
//!
//! Exemplars descend to the leaf whose centroids they match best. A leaf that
//! reaches capacity ψ is split in two by 2-means, so learning one exemplar
//! costs one descent plus retraining at most two leaves of size ≤ ψ.
//! Inference ensembles the leaf classifiers of the query's k nearest
//! exemplars.

pub mod kmeans;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::knn::similarity_weights;
use crate::linear::{self, LinearClassifier, TrainConfig};
use crate::model::{weighted_label_embedding, ExemplarModel, Memory, Method};
use crate::types::{
    EmbeddingVector, Exemplar, ExemplarStore, LabelId, LabelTable, PredictionOutput, ProbabilityDistribution, RngSeed,
    Sample,
};

pub use kmeans::{two_means, TwoMeans};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub node_capacity: usize,
    /// Neighbours whose leaf classifiers are ensembled at inference.
    pub k: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tolerance: f64,
    pub seed: RngSeed,
    pub train_cfg: TrainConfig,
    /// Scales neighbour similarities into embedding weights.
    pub temperature: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            node_capacity: 50_000,
            k: 9,
            kmeans_max_iters: 100,
            kmeans_tolerance: 1e-6,
            seed: RngSeed(0),
            train_cfg: TrainConfig::default(),
            temperature: 100.0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_capacity < 2 {
            return Err(Error::InvalidConfig("node capacity must be >= 2".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidK);
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        self.train_cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub positions: Vec<usize>,
    pub classifier: Option<LinearClassifier>,
    pub dirty: bool,
}

impl Leaf {
    pub fn size(&self) -> usize {
        self.positions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf(Leaf),
    Internal { left: NodeId, right: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    /// Unit-normalized mean of the subtree's embeddings.
    pub centroid: EmbeddingVector,
    sum: Vec<f64>,
    count: usize,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn leaf(&self) -> Option<&Leaf> {
        match &self.kind {
            NodeKind::Leaf(l) => Some(l),
            NodeKind::Internal { .. } => None,
        }
    }

    fn leaf_mut(&mut self) -> Option<&mut Leaf> {
        match &mut self.kind {
            NodeKind::Leaf(l) => Some(l),
            NodeKind::Internal { .. } => None,
        }
    }

    fn add(&mut self, v: &EmbeddingVector) {
        for (s, &x) in self.sum.iter_mut().zip(v.as_slice()) {
            *s += x as f64;
        }
        self.count += 1;
        // antipodal members can cancel; keep the previous direction then
        if let Ok(c) = EmbeddingVector::normalize_f64(&self.sum) {
            self.centroid = c;
        }
    }
}

/// What a single insertion changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertOutcome {
    pub leaf: NodeId,
    pub split: Option<NodeId>,
    /// Leaves whose classifiers are now stale.
    pub affected: Vec<NodeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTree {
    nodes: Vec<TreeNode>,
    root: Option<NodeId>,
    leaf_of: Vec<Option<NodeId>>,
    config: TreeConfig,
    dim: Option<usize>,
}

impl ClusterTree {
    pub fn new(config: TreeConfig) -> Result<Self> {
        config.validate()?;
        Ok(ClusterTree {
            nodes: Vec::new(),
            root: None,
            leaf_of: Vec::new(),
            config,
            dim: None,
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &Leaf)> {
        self.nodes.iter().filter_map(|n| n.leaf().map(|l| (n.id, l)))
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    pub fn len(&self) -> usize {
        self.root.map_or(0, |r| self.nodes[r].count)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf_of(&self, position: usize) -> Option<NodeId> {
        self.leaf_of.get(position).copied().flatten()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &ClusterTree, id: NodeId) -> usize {
            match t.nodes[id].kind {
                NodeKind::Leaf(_) => 1,
                NodeKind::Internal { left, right } => 1 + go(t, left).max(go(t, right)),
            }
        }
        self.root.map_or(0, |r| go(self, r))
    }

    pub fn dirty_leaves(&self) -> Vec<NodeId> {
        self.leaves()
            .filter(|(_, l)| l.dirty && l.size() > 0)
            .map(|(id, _)| id)
            .collect()
    }

    /// Leaf reached by following the child centroid with the larger dot
    /// product (ties go left).
    pub fn nearest_leaf(&self, v: &EmbeddingVector) -> Result<NodeId> {
        let root = self.root.ok_or(Error::EmptyTree)?;
        if let Some(d) = self.dim {
            v.check_dim(d)?;
        }
        Ok(self.descend_from(root, v))
    }

    fn descend_from(&self, mut id: NodeId, v: &EmbeddingVector) -> NodeId {
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf(_) => return id,
                NodeKind::Internal { left, right } => {
                    let l = v.dot(&self.nodes[left].centroid);
                    let r = v.dot(&self.nodes[right].centroid);
                    id = if l >= r { left } else { right };
                }
            }
        }
    }

    fn path_to(&self, target: NodeId, v: &EmbeddingVector) -> Vec<NodeId> {
        let mut path = Vec::new();
        let mut id = self.root.expect("non-empty tree");
        loop {
            path.push(id);
            if id == target {
                return path;
            }
            match self.nodes[id].kind {
                NodeKind::Leaf(_) => return path,
                NodeKind::Internal { left, right } => {
                    let l = v.dot(&self.nodes[left].centroid);
                    let r = v.dot(&self.nodes[right].centroid);
                    id = if l >= r { left } else { right };
                }
            }
        }
    }

    fn new_leaf(&mut self, centroid: EmbeddingVector, sum: Vec<f64>, positions: Vec<usize>) -> NodeId {
        let id = self.nodes.len();
        let count = positions.len();
        self.nodes.push(TreeNode {
            id,
            centroid,
            sum,
            count,
            kind: NodeKind::Leaf(Leaf {
                positions,
                classifier: None,
                dirty: true,
            }),
        });
        id
    }

    fn set_leaf_of(&mut self, position: usize, leaf: NodeId) {
        if self.leaf_of.len() <= position {
            self.leaf_of.resize(position + 1, None);
        }
        self.leaf_of[position] = Some(leaf);
    }

    /// Routes `e` to its nearest leaf, splitting that leaf first when it is
    /// full. The touched leaves are marked dirty but not retrained.
    pub fn insert(&mut self, store: &ExemplarStore, e: &Exemplar) -> Result<InsertOutcome> {
        let v = &e.image_embedding;
        match self.dim {
            Some(d) => v.check_dim(d)?,
            None => self.dim = Some(v.dim()),
        }
        if self.leaf_of(e.position).is_some() {
            return Err(Error::InvalidConfig(format!(
                "exemplar {} is already in the tree",
                e.position
            )));
        }

        let Some(root) = self.root else {
            let sum = v.as_slice().iter().map(|&x| x as f64).collect();
            let id = self.new_leaf(v.clone(), sum, vec![e.position]);
            self.root = Some(id);
            self.set_leaf_of(e.position, id);
            return Ok(InsertOutcome {
                leaf: id,
                split: None,
                affected: vec![id],
            });
        };

        let mut leaf = self.descend_from(root, v);
        let mut affected = Vec::new();
        let mut split = None;
        if self.nodes[leaf].leaf().map_or(0, Leaf::size) >= self.config.node_capacity {
            let (left, right) = self.split_node(store, leaf)?;
            affected.extend([left, right]);
            split = Some(leaf);
            leaf = self.descend_from(leaf, v);
        }

        for id in self.path_to(leaf, v) {
            self.nodes[id].add(v);
        }
        let l = self.nodes[leaf].leaf_mut().expect("descent ends at a leaf");
        l.positions.push(e.position);
        l.dirty = true;
        self.set_leaf_of(e.position, leaf);
        if !affected.contains(&leaf) {
            affected.push(leaf);
        }
        Ok(InsertOutcome { leaf, split, affected })
    }

    /// Splits a leaf into two non-empty children by 2-means over its members.
    pub fn split_node(&mut self, store: &ExemplarStore, leaf: NodeId) -> Result<(NodeId, NodeId)> {
        let positions = match self.nodes.get(leaf).and_then(TreeNode::leaf) {
            Some(l) if l.size() >= 2 => l.positions.clone(),
            Some(_) => return Err(Error::InvalidConfig(format!("leaf {leaf} has fewer than two members"))),
            None => return Err(Error::InvalidConfig(format!("node {leaf} is not a leaf"))),
        };
        let members: Vec<&Exemplar> = positions
            .iter()
            .map(|&p| {
                store
                    .get(p)
                    .ok_or_else(|| Error::ShapeMismatch(format!("tree refers to unknown exemplar {p}")))
            })
            .collect::<Result<_>>()?;
        let points: Vec<&[f32]> = members.iter().map(|e| e.image_embedding.as_slice()).collect();
        let seed = self.config.seed.derive(leaf as u64);
        let split = two_means(
            &points,
            self.config.kmeans_max_iters,
            self.config.kmeans_tolerance,
            seed,
        );

        let dim = points[0].len();
        let mut children = Vec::with_capacity(2);
        for cluster in 0..2u8 {
            let mut sum = vec![0.0f64; dim];
            let mut member_positions = Vec::new();
            for ((&p, pt), &a) in positions.iter().zip(&points).zip(&split.assignment) {
                if a == cluster {
                    member_positions.push(p);
                    for (s, &x) in sum.iter_mut().zip(pt.iter()) {
                        *s += x as f64;
                    }
                }
            }
            let centroid = EmbeddingVector::normalize_f64(&sum).unwrap_or_else(|_| self.nodes[leaf].centroid.clone());
            children.push(self.new_leaf(centroid, sum, member_positions));
        }
        let (left, right) = (children[0], children[1]);
        for child in [left, right] {
            let ps = self.nodes[child].leaf().expect("new leaf").positions.clone();
            for p in ps {
                self.set_leaf_of(p, child);
            }
        }
        self.nodes[leaf].kind = NodeKind::Internal { left, right };
        Ok((left, right))
    }

    /// Retrains the listed leaves on exactly their current members.
    pub fn retrain_leaves(&mut self, store: &ExemplarStore, leaves: &[NodeId]) -> Result<usize> {
        let cfg = self.config.train_cfg;
        let jobs: Vec<(NodeId, &Leaf)> = leaves
            .iter()
            .filter_map(|&id| self.nodes.get(id).and_then(|n| n.leaf().map(|l| (id, l))))
            .filter(|(_, l)| l.size() > 0)
            .collect();
        let trained: Vec<(NodeId, LinearClassifier)> = jobs
            .par_iter()
            .map(|&(id, leaf)| {
                let pairs = leaf.positions.iter().map(|&p| {
                    let e = &store.exemplars()[p];
                    (&e.image_embedding, e.label_id)
                });
                linear::train(pairs, &cfg)
                    .map(|c| (id, c))
                    .map_err(|source| Error::LeafTraining {
                        leaf: id,
                        source: Box::new(source),
                    })
            })
            .collect::<Result<_>>()?;
        let count = trained.len();
        for (id, clf) in trained {
            let leaf = self.nodes[id].leaf_mut().expect("trained a leaf");
            leaf.classifier = Some(clf);
            leaf.dirty = false;
        }
        Ok(count)
    }

    /// Trains every dirty leaf. Returns how many classifiers were fit.
    pub fn retrain_dirty(&mut self, store: &ExemplarStore) -> Result<usize> {
        let dirty = self.dirty_leaves();
        self.retrain_leaves(store, &dirty)
    }

    fn trained_classifier(&self, leaf: NodeId) -> Result<&LinearClassifier> {
        let l = self.nodes[leaf].leaf().ok_or(Error::UntrainedLeaf(leaf))?;
        match (&l.classifier, l.dirty) {
            (Some(c), false) => Ok(c),
            _ => Err(Error::UntrainedLeaf(leaf)),
        }
    }

    /// Ensemble prediction over the leaves of the query's k nearest exemplars.
    ///
    /// Each neighbour contributes its leaf's distribution, zero-extended to
    /// the covered labels, so a leaf shared by several neighbours is counted
    /// once per neighbour. The embedding output is the similarity-weighted
    /// mean of the text embeddings of each neighbour classifier's top label.
    pub fn predict(
        &self,
        store: &ExemplarStore,
        labels: &LabelTable,
        idx: &FlatIndex,
        q: &EmbeddingVector,
    ) -> Result<PredictionOutput> {
        if self.is_empty() || idx.is_empty() {
            return Err(Error::EmptyTree);
        }
        let hits = idx.search(q, self.config.k)?;

        let mut multiplicity: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut neighbor_leaves = Vec::with_capacity(hits.len());
        for p in hits.positions() {
            let leaf = self.leaf_of(p).ok_or(Error::EmptyTree)?;
            *multiplicity.entry(leaf).or_insert(0) += 1;
            neighbor_leaves.push(leaf);
        }

        let covered: Vec<LabelId> = store.label_counts().keys().copied().collect();
        let mut mass = vec![0.0f64; covered.len()];
        let mut top_label: BTreeMap<NodeId, LabelId> = BTreeMap::new();
        for (&leaf, &count) in &multiplicity {
            let dist = self.trained_classifier(leaf)?.predict_proba(q)?;
            for (label, p) in dist.iter() {
                let slot = covered.binary_search(&label).map_err(|_| Error::UnknownLabel(label))?;
                mass[slot] += count as f64 * p;
            }
            top_label.insert(leaf, dist.argmax()?);
        }
        let k = hits.len() as f64;
        mass.iter_mut().for_each(|m| *m /= k);
        let total: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|m| *m /= total);
        let distribution = ProbabilityDistribution::new(covered, mass)?;

        let beta = similarity_weights(&hits, self.config.temperature)?;
        let weighted: Vec<(LabelId, f64)> = neighbor_leaves
            .iter()
            .zip(beta)
            .map(|(leaf, b)| (top_label[leaf], b))
            .collect();
        let embedding = weighted_label_embedding(labels, &weighted)?;
        Ok(PredictionOutput::from_distribution(distribution)?.with_embedding(embedding))
    }

    /// Checks every structural invariant; used by tests and after loading
    /// snapshots.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ShapeMismatch(m));
        let mut total = 0;
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Leaf(l) => {
                    if l.size() > self.config.node_capacity {
                        return fail(format!("leaf {} holds {} > ψ", node.id, l.size()));
                    }
                    if l.size() != node.count {
                        return fail(format!("leaf {} count mismatch", node.id));
                    }
                    for &p in &l.positions {
                        if self.leaf_of(p) != Some(node.id) {
                            return fail(format!("position {p} not mapped to leaf {}", node.id));
                        }
                    }
                    total += l.size();
                }
                NodeKind::Internal { left, right } => {
                    let c = self.nodes[*left].count + self.nodes[*right].count;
                    if c != node.count {
                        return fail(format!("internal {} count {} != children {c}", node.id, node.count));
                    }
                }
            }
        }
        if total != self.len() {
            return fail(format!("leaf sizes sum to {total}, tree holds {}", self.len()));
        }
        let mapped = self.leaf_of.iter().filter(|l| l.is_some()).count();
        if mapped != total {
            return fail(format!("{mapped} mapped positions for {total} exemplars"));
        }
        Ok(())
    }
}

/// Exemplar memory plus cluster tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeProbe {
    memory: Memory,
    tree: ClusterTree,
}

impl TreeProbe {
    pub fn new(config: TreeConfig) -> Result<Self> {
        Ok(TreeProbe {
            memory: Memory::new(),
            tree: ClusterTree::new(config)?,
        })
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn reserve(&mut self, additional: usize) {
        self.memory.reserve(additional);
    }

    /// Stores one sample and returns the leaves it made stale.
    pub fn insert_one(&mut self, sample: &Sample) -> Result<InsertOutcome> {
        let e = self.memory.push(sample)?.clone();
        self.tree.insert(&self.memory.store, &e)
    }
}

impl ExemplarModel for TreeProbe {
    fn method(&self) -> Method {
        Method::TreeProbe
    }

    fn memory(&self) -> &Memory {
        &self.memory
    }

    fn insert(&mut self, samples: &[Sample]) -> Result<()> {
        for s in samples {
            self.insert_one(s)?;
        }
        Ok(())
    }

    fn fit(&mut self) -> Result<()> {
        self.tree.retrain_dirty(&self.memory.store).map(|_| ())
    }

    fn learn_one(&mut self, sample: &Sample) -> Result<()> {
        let outcome = self.insert_one(sample)?;
        self.tree
            .retrain_leaves(&self.memory.store, &outcome.affected)
            .map(|_| ())
    }

    fn predict(&self, labels: &LabelTable, q: &EmbeddingVector) -> Result<PredictionOutput> {
        self.tree.predict(&self.memory.store, labels, &self.memory.index, q)
    }
}
