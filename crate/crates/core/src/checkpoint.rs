//! Self-describing binary checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a `u64`
//! header length, the JSON header, then every tensor listed in the header as
//! raw little-endian `f64` values in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::Config;
use crate::corpus::{hex_sha256, FrameOntology, PretrainedEmbeddings, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{drop_leading_rows, Model, ModelSpec};

pub const MAGIC: &[u8; 8] = b"SEGRNNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: Config,
    pub vocabulary: Vocabulary,
    pub vocab_hash: String,
    pub ontology: FrameOntology,
    pub ontology_hash: String,
    pub pretrained_words: Option<Vec<String>>,
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
    pub tensors_hash: String,
    pub tensors: Vec<TensorInfo>,
}

/// Training outcome recorded alongside the parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Selection {
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn checkpoint_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

pub fn to_bytes<M: Model>(model: &M, selection: Selection) -> Vec<u8> {
    let spec = model.spec();
    let mut tensors = Vec::new();
    let mut body = Vec::new();
    for (_, p) in model.store().iter() {
        tensors.push(TensorInfo {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        });
        for v in p.value.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        kind: M::KIND.to_string(),
        config: spec.config.clone(),
        vocab_hash: spec.vocab.hash(),
        vocabulary: spec.vocab.clone(),
        ontology_hash: spec.ontology.hash(),
        ontology: spec.ontology.clone(),
        pretrained_words: spec.pretrained.as_ref().map(|p| p.words().to_vec()),
        best_dev: selection.best_dev,
        best_epoch: selection.best_epoch,
        tensors_hash: hex_sha256(&body),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    out
}

pub fn save<M: Model>(model: &M, selection: Selection, path: &Path) -> Result<()> {
    let bytes = to_bytes(model, selection);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn split(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, Vec<Tensor<f64>>)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(checkpoint_err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(checkpoint_err(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body_start = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| checkpoint_err(path, "truncated header"))?;
    let mut header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..body_start]).map_err(|e| checkpoint_err(path, e))?;
    header.vocabulary = header.vocabulary.reindex();
    let body = &bytes[body_start..];
    if hex_sha256(body) != header.tensors_hash {
        return Err(checkpoint_err(path, "tensor data hash mismatch"));
    }
    if header.vocabulary.hash() != header.vocab_hash {
        return Err(checkpoint_err(path, "vocabulary hash mismatch"));
    }
    if header.ontology.hash() != header.ontology_hash {
        return Err(checkpoint_err(path, "ontology hash mismatch"));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut at = 0;
    for info in &header.tensors {
        let count: usize = info.shape.iter().product();
        let end = at + 8 * count;
        if end > body.len() {
            return Err(checkpoint_err(
                path,
                format!("tensor `{}` truncated", info.name),
            ));
        }
        let data = body[at..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(info.shape.clone(), data).map_err(|e| checkpoint_err(path, e))?);
        at = end;
    }
    if at != body.len() {
        return Err(checkpoint_err(path, "trailing bytes after tensors"));
    }
    Ok((header, tensors))
}

pub fn from_bytes<M: Model>(bytes: &[u8], path: &Path) -> Result<(M, CheckpointHeader)> {
    let (header, tensors) = split(bytes, path)?;
    if header.kind != M::KIND {
        return Err(checkpoint_err(
            path,
            format!("holds a `{}` model, expected `{}`", header.kind, M::KIND),
        ));
    }
    let pretrained = match &header.pretrained_words {
        Some(words) => {
            let k = header
                .tensors
                .iter()
                .position(|t| t.name.ends_with(".pretrained"))
                .ok_or_else(|| checkpoint_err(path, "pretrained table missing"))?;
            let table = &tensors[k];
            Some(PretrainedEmbeddings::from_parts(
                words.clone(),
                table.cols(),
                drop_leading_rows(table, 1),
            )?)
        }
        None => None,
    };
    let spec = ModelSpec {
        config: header.config.clone(),
        vocab: header.vocabulary.clone(),
        ontology: header.ontology.clone(),
        pretrained,
    };
    let mut model = M::build(spec)?;
    if model.store().len() != tensors.len() {
        return Err(checkpoint_err(
            path,
            format!(
                "{} tensors for a model with {} parameters",
                tensors.len(),
                model.store().len()
            ),
        ));
    }
    for (info, t) in header.tensors.iter().zip(tensors) {
        let id = model
            .store()
            .id(&info.name)
            .ok_or_else(|| checkpoint_err(path, format!("unexpected tensor `{}`", info.name)))?;
        if model.store().value(id).shape() != t.shape() {
            return Err(checkpoint_err(
                path,
                format!("tensor `{}` has the wrong shape", info.name),
            ));
        }
        *model.store_mut().value_mut(id) = t;
    }
    Ok((model, header))
}

pub fn load<M: Model>(path: &Path) -> Result<(M, CheckpointHeader)> {
    from_bytes(&read_all(path)?, path)
}

/// Header of a checkpoint after all integrity checks.
pub fn inspect(path: &Path) -> Result<CheckpointHeader> {
    Ok(split(&read_all(path)?, path)?.0)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}
