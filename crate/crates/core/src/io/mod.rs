//! File formats: binary model container, fingerprint TSV, prediction CSV
//! and TOML run configuration.

mod config;
mod model_file;
mod text;

use std::path::Path;

pub use config::{resolve_device, RunConfig};
pub use model_file::{decode_model, encode_model, StoredModel, MAGIC, VERSION};
pub use text::{format_g9, parse_fingerprints, parse_predictions, write_fingerprints, write_predictions, PREDICTION_HEADER};

use crate::error::{Result, VmsError};
use crate::model::{Fingerprint, Prediction};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| VmsError::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| VmsError::io(path, e))
}

pub fn read_model(path: &Path) -> Result<StoredModel> {
    let bytes = std::fs::read(path).map_err(|e| VmsError::io(path, e))?;
    decode_model(&bytes, &path.display().to_string())
}

pub fn write_model(path: &Path, model: &StoredModel) -> Result<()> {
    write_file(path, encode_model(model))
}

pub fn read_fingerprints(path: &Path, n_features: Option<usize>) -> Result<Vec<Fingerprint>> {
    parse_fingerprints(&read_text(path)?, &path.display().to_string(), n_features)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    parse_predictions(&read_text(path)?, &path.display().to_string())
}
