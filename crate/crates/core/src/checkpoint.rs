//! Checkpoint persistence: a JSON manifest (config, vocabulary, hash,
//! parameter names and shapes) followed by concatenated tensor blocks.
//!
//! Loading verifies the magic, the manifest, every tensor's name and shape
//! against the manifest, and the vocabulary hash against the stored token
//! list. Nothing is returned on failure — there are no partial loads. A
//! caller that already knows which vocabulary its dataset was built with
//! passes the expected hash and mismatches are refused with both hashes.

use crate::ingest::Vocab;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{Tensor, TensorIoError};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"PYCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("tensor block invalid at offset {offset}: {source}")]
    TensorBlock {
        offset: u64,
        #[source]
        source: TensorIoError,
    },
    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, dataset {dataset}")]
    VocabHashMismatch { checkpoint: String, dataset: String },
    #[error("checkpoint is internally inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: TrainConfig,
    num_classes: usize,
    vocab_hash: String,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// A trained model plus everything needed to evaluate it elsewhere.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub num_classes: usize,
    pub vocab: Arc<Vocab>,
    pub vocab_hash: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn model_config(&self) -> ModelConfig {
        self.config.model_config(self.vocab.len(), self.num_classes)
    }
}

pub fn save(
    path: &Path,
    config: &TrainConfig,
    num_classes: usize,
    vocab: &Vocab,
    params: &ModelParams,
) -> Result<(), CheckpointError> {
    let manifest = Manifest {
        format: FORMAT_VERSION,
        config: config.clone(),
        num_classes,
        vocab_hash: vocab.hash(),
        vocab: vocab.tokens().to_vec(),
        tensors: params
            .names_and_shapes()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    let mut write_err: Option<TensorIoError> = None;
    params.for_each(&mut |_, _, t| {
        if write_err.is_none() {
            if let Err(source) = t.write_to(&mut w) {
                write_err = Some(source);
            }
        }
    });
    if let Some(source) = write_err {
        return Err(CheckpointError::TensorBlock { offset: 0, source });
    }
    w.flush()?;
    Ok(())
}

/// Loads and fully validates a checkpoint. When `expected_vocab_hash` is
/// given, a differing stored hash refuses the load.
pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &mut offset, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected PYCK"),
        });
    }
    let mut len_buf = [0u8; 8];
    read_exact(&mut r, &mut len_buf, &mut offset, "manifest length")?;
    let manifest_len = u64::from_le_bytes(len_buf) as usize;
    if manifest_len == 0 || manifest_len > 1 << 30 {
        return Err(CheckpointError::Format {
            offset,
            reason: format!("implausible manifest length {manifest_len}"),
        });
    }
    let mut manifest_bytes = vec![0u8; manifest_len];
    read_exact(&mut r, &mut manifest_bytes, &mut offset, "manifest body")?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| CheckpointError::Format {
            offset,
            reason: format!("manifest does not parse: {e}"),
        })?;
    if manifest.format != FORMAT_VERSION {
        return Err(CheckpointError::Format {
            offset,
            reason: format!("unsupported format version {}", manifest.format),
        });
    }

    let vocab = Vocab::from_tokens(manifest.vocab.clone());
    let actual_hash = vocab.hash();
    if actual_hash != manifest.vocab_hash {
        return Err(CheckpointError::Inconsistent(format!(
            "stored vocabulary hashes to {actual_hash}, manifest claims {}",
            manifest.vocab_hash
        )));
    }
    if let Some(expected) = expected_vocab_hash {
        if expected != manifest.vocab_hash {
            return Err(CheckpointError::VocabHashMismatch {
                checkpoint: manifest.vocab_hash.clone(),
                dataset: expected.to_string(),
            });
        }
    }

    let model_config = manifest
        .config
        .model_config(vocab.len(), manifest.num_classes);
    model_config
        .validate()
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    let mut params = ModelParams::zeros(&model_config);
    let expected = params.names_and_shapes();
    if expected.len() != manifest.tensors.len() {
        return Err(CheckpointError::Inconsistent(format!(
            "manifest lists {} tensors, model needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(CheckpointError::Inconsistent(format!(
                "manifest entry {}{:?} does not match model tensor {}{:?}",
                entry.name, entry.shape, name, shape
            )));
        }
    }

    // read blocks in canonical order
    let mut loaded: Vec<Tensor> = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let (tensor, consumed) =
            Tensor::read_from(&mut r).map_err(|source| CheckpointError::TensorBlock {
                offset,
                source,
            })?;
        offset += consumed;
        if tensor.shape() != shape.as_slice() {
            return Err(CheckpointError::Format {
                offset,
                reason: format!(
                    "tensor {name} has shape {:?}, manifest says {shape:?}",
                    tensor.shape()
                ),
            });
        }
        loaded.push(tensor);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Format {
            offset,
            reason: "trailing bytes after final tensor block".into(),
        });
    }

    let mut iter = loaded.into_iter();
    params.for_each_mut(&mut |_, _, t| {
        *t = iter.next().expect("counted above");
    });

    Ok(Checkpoint {
        config: manifest.config,
        num_classes: manifest.num_classes,
        vocab: Arc::new(vocab),
        vocab_hash: manifest.vocab_hash,
        params,
    })
}

fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: &mut u64,
    what: &str,
) -> Result<(), CheckpointError> {
    match r.read_exact(buf) {
        Ok(()) => {
            *offset += buf.len() as u64;
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(CheckpointError::Format {
            offset: *offset,
            reason: format!("truncated while reading {what}"),
        }),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{init_params_seeded, TrainConfig};

    fn fixture() -> (TrainConfig, Vocab, ModelParams) {
        let config = TrainConfig {
            encoder_layers: 2,
            encoder_dim: 8,
            encoder_heads: 2,
            max_len: 12,
            pyramid_dim: 8,
            gnn_dims: vec![8],
            ..TrainConfig::default()
        };
        let vocab = Vocab::synthetic(20);
        let params = init_params_seeded(&config.model_config(vocab.len(), 3), 4);
        (config, vocab, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (config, vocab, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, 3, &vocab, &params).unwrap();
        let ckpt = load(&path, None).unwrap();
        assert_eq!(ckpt.params, params);
        assert_eq!(ckpt.config, config);
        assert_eq!(ckpt.num_classes, 3);
        assert_eq!(ckpt.vocab_hash, vocab.hash());
        assert_eq!(ckpt.vocab.tokens(), vocab.tokens());
    }

    #[test]
    fn truncated_file_is_refused_with_offset() {
        let (config, vocab, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, 3, &vocab, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        let err = load(&path, None).unwrap_err();
        match err {
            CheckpointError::TensorBlock { .. } | CheckpointError::Format { .. } => {}
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn corrupted_magic_is_refused() {
        let (config, vocab, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, 3, &vocab, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path, None),
            Err(CheckpointError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn wrong_vocab_hash_is_refused_with_both_hashes() {
        let (config, vocab, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, 3, &vocab, &params).unwrap();
        let other = Vocab::synthetic(21);
        let err = load(&path, Some(&other.hash())).unwrap_err();
        match err {
            CheckpointError::VocabHashMismatch { checkpoint, dataset } => {
                assert_eq!(checkpoint, vocab.hash());
                assert_eq!(dataset, other.hash());
            }
            other => panic!("expected hash mismatch, got {other}"),
        }
    }

    #[test]
    fn trailing_garbage_is_refused() {
        let (config, vocab, params) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &config, 3, &vocab, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"junk");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path, None), Err(CheckpointError::Format { .. })));
    }
}
