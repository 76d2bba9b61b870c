//! On-disk formats: binary embedding matrices, label files, dataset
//! manifests and model snapshots.

pub mod embfile;
pub mod manifest;
pub mod snapshot;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use embfile::{read_embeddings, read_labels, write_embeddings, write_labels, EmbeddingMatrix};
pub use manifest::{assemble, load_manifest, write_dataset, DatasetManifest, LoadedDataset};
pub use snapshot::{fit_snapshot, load_snapshot, save_snapshot, Snapshot, SnapshotModel};

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
