//! File formats.
//!
//! Binary containers share one layout: 4 magic bytes, a little-endian `u16`
//! format version, a format-specific little-endian payload, and a trailing
//! CRC-32 of every preceding byte. Strings are a `u32` byte length followed
//! by UTF-8. Reals are always stored as `f64`.

mod binary;
pub mod features;
pub mod models;
pub mod scores;

pub use features::{
    inspect_features, load_features, save_features, save_features_binary, save_features_csv,
    FeatureFileHeader, Storage,
};
pub use models::{
    load_head, load_prototypes, prototypes_json, save_head, save_prototypes, save_training_log,
};
pub use scores::{read_scores_csv, write_scores_csv, write_scores_jsonl};

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(file_error(path))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(file_error(path))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
