use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Seq2Seq;
use super::{ModelSpec, NetError};
use crate::seqcodec::Vocabulary;
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SQGR";

/// Model weights plus everything needed to encode inputs for them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub vocab: Vocabulary,
    pub model: Seq2Seq,
    /// Optimiser steps taken when saved.
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    vocab: Vec<String>,
    fact_cap: usize,
    hop_cap: usize,
    step: usize,
    params: Vec<ParamEntry>,
}

fn err(path: &Path, message: impl Into<String>) -> NetError {
    NetError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, then all
/// parameters as little-endian `f64` in header order.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NetError> {
    let io = |e: std::io::Error| err(path, e.to_string());
    let mut offset = 0;
    let params = ckpt
        .model
        .store
        .iter()
        .map(|p| {
            let e = ParamEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                offset,
            };
            offset += e.rows * e.cols;
            e
        })
        .collect();
    let header = Header {
        spec: ckpt.spec.clone(),
        vocab: ckpt.vocab.tokens().to_vec(),
        fact_cap: ckpt.vocab.fact_cap(),
        hop_cap: ckpt.vocab.hop_cap(),
        step: ckpt.step,
        params,
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(path, e.to_string()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for p in ckpt.model.store.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NetError> {
    let io = |e: std::io::Error| err(path, e.to_string());
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(err(path, "not a checkpoint file"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(io)?;
    let version = u32::from_le_bytes(u32b);
    if version != CHECKPOINT_VERSION {
        return Err(err(
            path,
            format!("version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(io)?;
    let len = u64::from_le_bytes(u64b) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| err(path, format!("header: {e}")))?;
    let vocab = Vocabulary::from_tokens(header.vocab, header.fact_cap, header.hop_cap)
        .ok_or_else(|| err(path, "vocabulary lacks reserved tokens"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(io)?;
    let total: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    if data.len() != total * 8 {
        return Err(err(
            path,
            format!("{} data bytes, expected {}", data.len(), total * 8),
        ));
    }
    let gnn = header.spec.task.mode.uses_graph().then(|| header.spec.gnn.clone());
    let mut model = Seq2Seq::new(header.spec.model.clone(), gnn, 0)?;
    if model.store.len() != header.params.len() {
        return Err(err(
            path,
            format!(
                "{} parameters stored, model has {}",
                header.params.len(),
                model.store.len()
            ),
        ));
    }
    for e in &header.params {
        let i = model
            .store
            .index_of(&e.name)
            .ok_or_else(|| err(path, format!("unknown parameter {}", e.name)))?;
        let target = model.store.value(i);
        if target.shape() != (e.rows, e.cols) {
            return Err(err(
                path,
                format!(
                    "parameter {} is {}x{}, model expects {:?}",
                    e.name,
                    e.rows,
                    e.cols,
                    target.shape()
                ),
            ));
        }
        let bytes = &data[e.offset * 8..(e.offset + e.rows * e.cols) * 8];
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *model.store.value_mut(i) = Matrix::from_vec(e.rows, e.cols, values);
    }
    Ok(Checkpoint {
        spec: header.spec,
        vocab,
        model,
        step: header.step,
    })
}
