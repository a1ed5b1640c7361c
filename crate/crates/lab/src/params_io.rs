//! Parameter blobs and their model-config sidecar.
//!
//! A parameter file is an 8-byte magic, a little-endian `u32` layout version, a
//! little-endian `u64` element count, then the values as little-endian `f64`.
//! The model config lives next to it as a flat TOML document with the same stem
//! and a `.toml` extension.

use std::fs;
use std::path::{Path, PathBuf};

use bdpo_core::{Model, ModelConfig, PolicyParameters, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"BDPOPARM";
pub const LAYOUT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

pub fn encode_params(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err("truncated header".into());
    }
    if &bytes[..8] != MAGIC {
        return Err("bad magic, not a parameter file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != LAYOUT_VERSION {
        return Err(format!("unsupported layout version {version}"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len * 8 {
        return Err(format!(
            "header announces {len} values but body holds {} bytes",
            body.len()
        ));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Flat key-value model description stored beside every parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Whitespace-separated token symbols; the first one is the BOS marker.
    pub symbols: String,
}

impl ModelFile {
    pub fn new(config: &ModelConfig, vocab: &Vocabulary) -> Self {
        Self {
            vocab_size: config.vocab_size,
            embed_dim: config.embed_dim,
            context_window: config.context_window,
            hidden_dim: config.hidden_dim,
            seed: config.seed,
            symbols: vocab.to_string(),
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            context_window: self.context_window,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let vocab = Vocabulary::new(self.symbols.split_whitespace().map(String::from).collect())?;
        if vocab.size() != self.vocab_size {
            return Err(LabError::Data(format!(
                "model file lists {} symbols but vocab_size is {}",
                vocab.size(),
                self.vocab_size
            )));
        }
        Ok(vocab)
    }
}

/// A model config, its vocabulary and a parameter vector loaded together.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub file: ModelFile,
    pub model: Model,
    pub vocab: Vocabulary,
    pub params: PolicyParameters,
}

pub fn sidecar_path(params_path: &Path) -> PathBuf {
    params_path.with_extension("toml")
}

pub fn save_model(path: &Path, file: &ModelFile, values: &[f64]) -> Result<()> {
    fs::write(path, encode_params(values)).map_err(|e| LabError::io(path, e))?;
    let side = sidecar_path(path);
    let text = toml::to_string(file).map_err(|e| LabError::Data(e.to_string()))?;
    fs::write(&side, text).map_err(|e| LabError::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| LabError::io(&side, e))?;
    let file: ModelFile =
        toml::from_str(&text).map_err(|e| LabError::Data(format!("{}: {e}", side.display())))?;
    let vocab = file.vocabulary()?;
    let model = Model::new(file.config())?;
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let values =
        decode_params(&bytes).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    let params = model
        .params_from_values(values)
        .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    Ok(LoadedModel {
        file,
        model,
        vocab,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let b = encode_params(&[1.5, -2.0]);
        assert_eq!(&b[..8], b"BDPOPARM");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..20], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[20..28], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 36);
        assert_eq!(decode_params(&b).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_damaged_blobs() {
        let b = encode_params(&[1.0, 2.0, 3.0]);
        assert!(decode_params(&b[..10]).is_err());
        assert!(decode_params(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
        let mut bad = b;
        bad[8] = 9;
        assert!(decode_params(&bad).is_err());
    }
}
