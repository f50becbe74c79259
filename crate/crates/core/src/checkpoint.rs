//! Model container: a JSON metadata file describing named tensors plus a
//! binary file of little-endian `f32` values in row-major order.
//!
//! `model.json` is paired with `model.bin` in the same directory. Offsets are
//! in bytes from the start of the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::write_file;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::reasoner::{LayerParams, ReasonerConfig, ReasonerModel};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub d: usize,
    /// Rows of the embedding table.
    pub tokens: usize,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_list: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoner: Option<ReasonerConfig>,
}

/// Models restored from a container; either part may be absent.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub encoder: Option<EncoderModel>,
    pub reasoner: Option<ReasonerModel>,
}

pub fn binary_path(meta_path: &Path) -> PathBuf {
    meta_path.with_extension("bin")
}

fn reasoner_tensors(model: &ReasonerModel) -> Vec<(String, &Matrix)> {
    let mut out = Vec::new();
    for (l, p) in model.layers().iter().enumerate() {
        out.push((format!("reasoner.layer{}.w_src", l + 1), &p.w_src));
        out.push((format!("reasoner.layer{}.w_dst", l + 1), &p.w_dst));
    }
    out.push(("reasoner.edge_types".to_string(), model.edge_types()));
    out
}

/// Writes `meta_path` and its binary twin.
pub fn save(meta_path: &Path, encoder: &EncoderModel, reasoner: Option<&ReasonerModel>) -> Result<()> {
    let mut tensors = vec![("encoder.embeddings".to_string(), encoder.table())];
    if let Some(m) = reasoner {
        if m.dim() != encoder.dim() {
            return Err(Error::Checkpoint("encoder and reasoner widths differ".into()));
        }
        tensors.extend(reasoner_tensors(m));
    }
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        entries.push(TensorEntry {
            name,
            shape: vec![m.rows(), m.cols()],
            offset: bytes.len() as u64,
        });
        for &x in m.as_slice() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let meta = Metadata {
        d: encoder.dim(),
        tokens: encoder.table().rows(),
        tensors: entries,
        token_list: encoder.tokens().to_vec(),
        reasoner: reasoner.map(|m| m.config().clone()),
    };
    let bin = binary_path(meta_path);
    if let Some(parent) = bin.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    write_file(meta_path, &(serde_json::to_string_pretty(&meta)? + "\n"))
}

fn read_tensor(bytes: &[u8], entry: &TensorEntry) -> Result<Matrix> {
    let [rows, cols] = entry.shape[..] else {
        return Err(Error::Checkpoint(format!("{} is not two-dimensional", entry.name)));
    };
    let start = entry.offset as usize;
    let end = start + rows * cols * 4;
    let raw = bytes
        .get(start..end)
        .ok_or_else(|| Error::Checkpoint(format!("{} runs past the end of the binary file", entry.name)))?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let m = Matrix::from_vec(rows, cols, data);
    if !m.is_finite() {
        return Err(Error::Checkpoint(format!("{} holds non-finite values", entry.name)));
    }
    Ok(m)
}

pub fn load(meta_path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: Metadata = serde_json::from_str(&text)?;
    let bin = binary_path(meta_path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let find = |name: &str| -> Result<Option<Matrix>> {
        meta.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| read_tensor(&bytes, t))
            .transpose()
    };

    let encoder = match find("encoder.embeddings")? {
        Some(table) => {
            if table.shape() != [meta.tokens, meta.d] || meta.token_list.len() != meta.tokens {
                return Err(Error::Checkpoint("embedding table does not match the token list".into()));
            }
            Some(EncoderModel::from_parts(meta.token_list.clone(), table))
        }
        None => None,
    };
    let reasoner = match &meta.reasoner {
        Some(config) => {
            let mut layers = Vec::with_capacity(config.steps);
            for l in 1..=config.steps {
                let w_src = find(&format!("reasoner.layer{l}.w_src"))?;
                let w_dst = find(&format!("reasoner.layer{l}.w_dst"))?;
                match (w_src, w_dst) {
                    (Some(w_src), Some(w_dst)) => layers.push(LayerParams { w_src, w_dst }),
                    _ => return Err(Error::Checkpoint(format!("missing attention matrices for step {l}"))),
                }
            }
            let edge_types = find("reasoner.edge_types")?
                .ok_or_else(|| Error::Checkpoint("missing edge-type embeddings".into()))?;
            Some(ReasonerModel::from_parts(config.clone(), layers, edge_types)?)
        }
        None => None,
    };
    Ok(Checkpoint { encoder, reasoner })
}
