//! Exact inner-product retrieval over stored exemplars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, EmbeddingVector, Exemplar};

/// Flat row-major matrix of unit vectors in insertion order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlatIndex {
    dim: usize,
    vectors: Vec<f32>,
    positions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub position: usize,
    pub similarity: f64,
}

/// Neighbors sorted by similarity descending, ties by smaller position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub neighbors: Vec<Neighbor>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.position)
    }
}

/// `a` ranks before `b`.
fn ranks_before(a: &Neighbor, b: &Neighbor) -> bool {
    a.similarity > b.similarity || (a.similarity == b.similarity && a.position < b.position)
}

impl FlatIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        FlatIndex {
            dim,
            vectors: Vec::with_capacity(dim * rows),
            positions: Vec::with_capacity(rows),
        }
    }

    pub fn reserve(&mut self, rows: usize) {
        self.vectors.reserve(rows * self.dim.max(1));
        self.positions.reserve(rows);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, e: &Exemplar) -> Result<()> {
        self.add_vector(e.position, &e.image_embedding)
    }

    pub fn add_vector(&mut self, position: usize, v: &EmbeddingVector) -> Result<()> {
        if self.is_empty() {
            self.dim = v.dim();
        } else {
            v.check_dim(self.dim)?;
        }
        self.vectors.extend_from_slice(v.as_slice());
        self.positions.push(position);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by dot product. `k` larger than the index returns every row.
    pub fn search(&self, q: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
        if k < 1 {
            return Err(Error::InvalidK);
        }
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        q.check_dim(self.dim)?;
        let k = k.min(self.len());
        let query = q.as_slice();

        // Sorted buffer of the best k seen so far; k is small in practice.
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        for (row, &position) in self.vectors.chunks_exact(self.dim).zip(&self.positions) {
            let cand = Neighbor {
                position,
                similarity: dot(query, row),
            };
            if best.len() == k && !ranks_before(&cand, &best[k - 1]) {
                continue;
            }
            let at = best.partition_point(|n| ranks_before(n, &cand));
            best.insert(at, cand);
            best.truncate(k);
        }
        Ok(RetrievalResult { neighbors: best })
    }
}
