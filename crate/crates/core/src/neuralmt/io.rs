//! Model file format.
//!
//! `NLMT` magic, a little-endian `u32` format version, a `u64` header length
//! and a JSON header holding the config, both vocabularies and the ordered
//! tensor names and shapes. The tensor values follow as little-endian `f64`
//! in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::TranslationModel;
use super::params::Params;
use super::vocab::CharVocab;
use super::MtError;

pub const MODEL_MAGIC: &[u8; 4] = b"NLMT";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    source_vocab: CharVocab,
    target_vocab: CharVocab,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn model_to_bytes(model: &TranslationModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        source_vocab: model.source_vocab.clone(),
        target_vocab: model.target_vocab.clone(),
        tensors: model.params.shapes(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in model.params.tensors() {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TranslationModel, MtError> {
    let corrupt = |m: &str| MtError::CorruptFile(m.to_string());
    if bytes.len() < 16 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(MtError::IncompatibleVersion(format!("format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| MtError::CorruptFile(format!("bad header: {e}")))?;
    header.config.validate().map_err(|e| MtError::IncompatibleVersion(e.to_string()))?;
    let mut params = Params::zeros(&header.config, header.source_vocab.len(), header.target_vocab.len());
    if params.shapes() != header.tensors {
        return Err(MtError::IncompatibleVersion(
            "tensor layout does not match the configuration".into(),
        ));
    }
    let expected = header_end + 8 * params.len();
    if bytes.len() < expected {
        return Err(corrupt("truncated tensor data"));
    }
    if bytes.len() > expected {
        return Err(corrupt("trailing bytes"));
    }
    let mut values = bytes[header_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for (_, _, data) in params.tensors_mut() {
        for v in data.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(TranslationModel {
        config: header.config,
        source_vocab: header.source_vocab,
        target_vocab: header.target_vocab,
        params,
    })
}

pub fn save_model(model: &TranslationModel, path: impl AsRef<Path>) -> Result<(), MtError> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TranslationModel, MtError> {
    model_from_bytes(&fs::read(path)?)
}
