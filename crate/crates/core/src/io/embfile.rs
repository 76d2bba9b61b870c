//! Little-endian binary embedding matrices.
//!
//! Layout: magic `EMBD`, `u32` version (1), `u64` row count, `u32` dim,
//! `u8` dtype (1 = f32), then `count × dim` row-major f32 values.
//! Label files are bare sequences of `u32` label ids, one per row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};

pub const MAGIC: &[u8; 4] = b"EMBD";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    /// Row-major values.
    pub values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form rows of dim {dim}",
                values.len()
            )));
        }
        Ok(EmbeddingMatrix { dim, values })
    }

    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut values = Vec::new();
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(DTYPE_F32);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        if bytes[20] != DTYPE_F32 {
            return Err(bad(format!("unsupported dtype {}", bytes[20])));
        }
        if dim == 0 {
            return Err(bad("dim is zero".into()));
        }
        let expected = (count as u128) * (dim as u128) * 4;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u128 != expected {
            return Err(bad(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value in row {}", i / dim)));
        }
        Ok(EmbeddingMatrix { dim, values })
    }
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    write_atomic(path, &m.to_bytes())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_bytes(&read_bytes(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    write_atomic(path, &bytes)
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of u32 labels", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = EmbeddingMatrix::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..4], b"EMBD");
        assert_eq!(b[4..8], [1, 0, 0, 0]);
        assert_eq!(b[8..16], [3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[16..20], [2, 0, 0, 0]);
        assert_eq!(b[20], 1);
        assert_eq!(b.len(), HEADER_LEN + 24);
        assert_eq!(b[21..25], 1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("x.emb");
        let good = EmbeddingMatrix::new(2, vec![1.0, 2.0]).unwrap().to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bad_magic, p),
            Err(Error::Format { .. })
        ));
        assert!(EmbeddingMatrix::from_bytes(&good[..good.len() - 1], p).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(EmbeddingMatrix::from_bytes(&bad_version, p).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[20] = 2;
        assert!(EmbeddingMatrix::from_bytes(&bad_dtype, p).is_err());
        let mut nan = good.clone();
        nan[21..25].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(EmbeddingMatrix::from_bytes(&nan, p).is_err());
        assert!(EmbeddingMatrix::from_bytes(&good[..10], p).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.emb");
        let m = EmbeddingMatrix::new(3, vec![0.1, -0.2, 0.3, 1e-30, 7.5, -0.0]).unwrap();
        write_embeddings(&p, &m).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), m);
        let lp = dir.path().join("a.labels");
        write_labels(&lp, &[0, 7, u32::MAX]).unwrap();
        assert_eq!(read_labels(&lp).unwrap(), vec![0, 7, u32::MAX]);
        std::fs::write(&lp, [1u8, 2, 3]).unwrap();
        assert!(read_labels(&lp).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bitwise(dim in 1usize..9, rows in 0usize..20, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::types::RngSeed(seed).rng();
            let values: Vec<f32> = (0..dim * rows).map(|_| f32::from_bits(rng.gen::<u32>() & 0xbf7f_ffff)).collect();
            let m = EmbeddingMatrix::new(dim, values).unwrap();
            let back = EmbeddingMatrix::from_bytes(&m.to_bytes(), Path::new("p")).unwrap();
            prop_assert_eq!(back.dim, dim);
            let same = back.values.iter().zip(&m.values).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
