//! Checkpoint container.
//!
//! Layout: the 8-byte magic `CPMASKCK`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then
//! little-endian `f32` blobs in header order. The header lists every
//! tensor with its shape and element offset into the blob section;
//! parameters come first, momentum buffers (prefixed `momentum.`) after.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunningLoss, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::net::{Architecture, ModelParams};

pub const MAGIC: &[u8; 8] = b"CPMASKCK";
pub const FORMAT_VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    config: TrainConfig,
    iteration: u64,
    running: RunningLoss,
    tensors: Vec<TensorEntry>,
}

fn corrupt(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: corrupt checkpoint: {reason}", path.display()))
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::with_capacity(8 * state.params.num_values());
    let mut offset = 0;
    for (prefix, p) in [("", &state.params), (MOMENTUM_PREFIX, &state.momentum)] {
        for (name, shape, values) in p.tensors() {
            tensors.push(TensorEntry {
                name: format!("{prefix}{name}"),
                shape,
                offset,
            });
            offset += values.len();
            for &v in values {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        architecture: state.params.arch,
        config: state.config.clone(),
        iteration: state.iteration,
        running: state.running,
        tensors,
    };
    let header = serde_json::to_vec(&header)?;

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(header.len() as u64).to_le_bytes())?;
    write(&header)?;
    write(&blob)?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fixed = MAGIC.len() + 4 + 8;
    if bytes.len() < fixed {
        return Err(corrupt(path, format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version} is not supported (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = fixed
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(path, "header extends past end of file"))?;
    let header: Header =
        serde_json::from_slice(&bytes[fixed..header_end]).map_err(|e| corrupt(path, format!("header: {e}")))?;
    let blob = &bytes[header_end..];

    let mut params = ModelParams::init(header.architecture, 0)?;
    let mut momentum = params.zeros_like();
    let expected: usize = 2 * params.num_values();
    if blob.len() != 4 * expected {
        return Err(corrupt(
            path,
            format!("blob holds {} bytes, expected {}", blob.len(), 4 * expected),
        ));
    }
    let mut entries = header.tensors.iter();
    let mut fill = |prefix: &str, target: &mut ModelParams| -> Result<()> {
        let mut failure = None;
        target.for_each_mut(|name, values| {
            if failure.is_some() {
                return;
            }
            let want = format!("{prefix}{name}");
            match entries.next() {
                Some(e) if e.name == want && e.shape.iter().product::<usize>() == values.len() => {
                    if e.offset + values.len() > expected {
                        failure = Some(format!("tensor {want} overruns the blob"));
                        return;
                    }
                    let raw = &blob[4 * e.offset..4 * (e.offset + values.len())];
                    for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
                        *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
                    }
                }
                Some(e) => failure = Some(format!("expected tensor {want}, header has {} {:?}", e.name, e.shape)),
                None => failure = Some(format!("header is missing tensor {want}")),
            }
        });
        failure.map_or(Ok(()), |f| Err(corrupt(path, f)))
    };
    fill("", &mut params)?;
    fill(MOMENTUM_PREFIX, &mut momentum)?;
    if entries.next().is_some() {
        return Err(corrupt(path, "header lists extra tensors"));
    }
    Ok(TrainState {
        params,
        momentum,
        iteration: header.iteration,
        config: header.config,
        running: header.running,
    })
}
