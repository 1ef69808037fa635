//! Checkpoint file format.
//!
//! ```text
//! magic            8 bytes   "TUTORBOT"
//! schema_version   u32 LE
//! header_len       u32 LE
//! header           header_len bytes of JSON: config, vocab, tensor table, meta
//! tensors          f32 LE, row-major, in layout order
//! checksum         32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::Layout;
use super::{Model, ModelConfig, ModelError, ModelMeta, ModelParams};
use crate::text::Vocab;

pub const MAGIC: &[u8; 8] = b"TUTORBOT";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    meta: ModelMeta,
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let layout = Layout::new(&model.config);
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors: layout
            .specs
            .iter()
            .zip(&model.params.tensors)
            .map(|(s, t)| TensorEntry {
                name: s.name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
        meta: model.meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + header.len() + 4 * model.params.num_parameters() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &model.params.tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model, ModelError> {
    if bytes.len() < MAGIC.len() + 8 + CHECKSUM_LEN {
        return Err(ModelError::Checksum);
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(ModelError::Checksum);
    }
    if &body[..8] != MAGIC {
        return Err(ModelError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if header_end > body.len() {
        return Err(ModelError::Corrupt("header runs past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&body[16..header_end])
        .map_err(|e| ModelError::Corrupt(format!("header: {e}")))?;
    header.config.validate()?;
    if header.vocab.len() != header.config.vocab_size {
        return Err(ModelError::ConfigMismatch(format!(
            "config vocab_size {} but checkpoint vocabulary holds {} tokens",
            header.config.vocab_size,
            header.vocab.len()
        )));
    }
    let layout = Layout::new(&header.config);
    let shapes_match = header.tensors.len() == layout.specs.len()
        && header
            .tensors
            .iter()
            .zip(&layout.specs)
            .all(|(e, s)| e.name == s.name && e.rows == s.rows && e.cols == s.cols);
    if !shapes_match {
        return Err(ModelError::ConfigMismatch(
            "tensor table does not match the model config".into(),
        ));
    }
    let mut data = &body[header_end..];
    let mut tensors = Vec::with_capacity(layout.specs.len());
    for s in &layout.specs {
        let n = s.rows * s.cols * 4;
        if data.len() < n {
            return Err(ModelError::Corrupt(format!("tensor {} is truncated", s.name)));
        }
        let values: Vec<f32> = data[..n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Array2::from_shape_vec((s.rows, s.cols), values).expect("shape checked"));
        data = &data[n..];
    }
    if !data.is_empty() {
        return Err(ModelError::Corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok(Model {
        config: header.config,
        params: ModelParams { tensors },
        vocab: header.vocab,
        meta: header.meta,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ModelError::io(path, e))?;
    }
    fs::write(path, encode_checkpoint(model)).map_err(|e| ModelError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;
    use crate::text::build_vocab_from_texts;

    fn model() -> Model {
        let vocab = build_vocab_from_texts(["read the sentence aloud please"], 1);
        let config = ModelConfig::small(vocab.len());
        Model {
            params: ModelParams::init(&config, 3),
            config,
            vocab,
            meta: ModelMeta::default(),
        }
    }

    #[test]
    fn round_trip_gives_bit_exact_outputs() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, m.params);
        assert_eq!(loaded.vocab, m.vocab);
        let src = vec![vec![7, 13, 14, 4, 5, 15]];
        let tgt = vec![vec![1, 8, 12, 16]];
        let a = forward(&m.params, &m.config, &src, &tgt).unwrap();
        let b = forward(&loaded.params, &loaded.config, &src, &tgt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let bytes = encode_checkpoint(&model());
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 100]),
            Err(ModelError::Checksum)
        ));
        assert!(matches!(decode_checkpoint(&bytes[..10]), Err(ModelError::Checksum)));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(ModelError::Checksum)));
    }

    #[test]
    fn incompatible_vocab_size_is_a_config_mismatch() {
        let mut m = model();
        m.config.vocab_size += 1;
        m.params = ModelParams::init(&m.config, 3);
        let bytes = encode_checkpoint(&m);
        assert!(matches!(decode_checkpoint(&bytes), Err(ModelError::ConfigMismatch(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_checkpoint(&model());
        bytes.truncate(bytes.len() - CHECKSUM_LEN);
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(ModelError::Version { expected: 1, found: 7 })
        ));
    }
}
