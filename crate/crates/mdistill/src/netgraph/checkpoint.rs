//! Binary checkpoint format.
//!
//! Layout (all integers little-endian u32 unless noted):
//!
//! ```text
//! magic "MDST" (4 bytes)
//! format version = 1
//! spec fields in fixed order:
//!   architecture (0 = FSMN, 1 = LSTM), input_dim, hidden_dim, output_dim,
//!   fsmn_blocks, lookback_order, lookahead_order, stride_back,
//!   stride_ahead, lstm_layers, lstm_proj_dim
//! parameter count
//! per parameter:
//!   name length, UTF-8 name, rank (1 or 2), dims (one u32 per rank),
//!   values as f64 little-endian, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numcore::Matrix;

use super::{Architecture, ModelParams, NetworkSpec, ParamEntry};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDST";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint header inconsistency: {0}")]
    HeaderInconsistency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), CheckpointError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u64::from_le_bytes(buf))
}

fn map_eof(e: std::io::Error) -> CheckpointError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(e)
    }
}

fn spec_fields(spec: &NetworkSpec) -> [u32; 11] {
    [
        match spec.architecture {
            Architecture::Fsmn => 0,
            Architecture::Lstm => 1,
        },
        spec.input_dim as u32,
        spec.hidden_dim as u32,
        spec.output_dim as u32,
        spec.fsmn_blocks as u32,
        spec.lookback_order as u32,
        spec.lookahead_order as u32,
        spec.stride_back as u32,
        spec.stride_ahead as u32,
        spec.lstm_layers as u32,
        spec.lstm_proj_dim as u32,
    ]
}

pub fn save_checkpoint(
    params: &ModelParams,
    spec: &NetworkSpec,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    for field in spec_fields(spec) {
        write_u32(&mut w, field)?;
    }
    write_u32(&mut w, params.entries().len() as u32)?;
    for entry in params.entries() {
        write_u32(&mut w, entry.name.len() as u32)?;
        w.write_all(entry.name.as_bytes())?;
        if entry.vector {
            write_u32(&mut w, 1)?;
            write_u32(&mut w, entry.value.cols() as u32)?;
        } else {
            write_u32(&mut w, 2)?;
            write_u32(&mut w, entry.value.rows() as u32)?;
            write_u32(&mut w, entry.value.cols() as u32)?;
        }
        for &v in entry.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, NetworkSpec), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(map_eof)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }

    let mut fields = [0u32; 11];
    for f in &mut fields {
        *f = read_u32(&mut r)?;
    }
    let architecture = match fields[0] {
        0 => Architecture::Fsmn,
        1 => Architecture::Lstm,
        other => {
            return Err(CheckpointError::HeaderInconsistency(format!(
                "unknown architecture code {other}"
            )))
        }
    };
    let spec = NetworkSpec {
        architecture,
        input_dim: fields[1] as usize,
        hidden_dim: fields[2] as usize,
        output_dim: fields[3] as usize,
        fsmn_blocks: fields[4] as usize,
        lookback_order: fields[5] as usize,
        lookahead_order: fields[6] as usize,
        stride_back: fields[7] as usize,
        stride_ahead: fields[8] as usize,
        lstm_layers: fields[9] as usize,
        lstm_proj_dim: fields[10] as usize,
    };
    spec.validate()
        .map_err(|e| CheckpointError::HeaderInconsistency(e.to_string()))?;

    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::HeaderInconsistency(format!(
                "parameter name length {name_len} is implausible"
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(map_eof)?;
        let name = String::from_utf8(name_buf).map_err(|_| {
            CheckpointError::HeaderInconsistency("parameter name is not UTF-8".into())
        })?;
        let rank = read_u32(&mut r)?;
        let (rows, cols, vector) = match rank {
            1 => {
                let n = read_u32(&mut r)? as usize;
                (1, n, true)
            }
            2 => {
                let rows = read_u32(&mut r)? as usize;
                let cols = read_u32(&mut r)? as usize;
                (rows, cols, false)
            }
            other => {
                return Err(CheckpointError::HeaderInconsistency(format!(
                    "unsupported tensor rank {other}"
                )))
            }
        };
        let mut data = vec![0.0f64; rows * cols];
        for v in &mut data {
            *v = f64::from_bits(read_u64(&mut r)?);
        }
        let value = Matrix::from_vec(rows, cols, data).map_err(|e| {
            CheckpointError::HeaderInconsistency(format!("tensor {name}: {e}"))
        })?;
        entries.push(ParamEntry {
            name,
            value,
            vector,
        });
    }

    let params = ModelParams::from_entries(entries);
    let expected = ModelParams::zeros(&spec);
    if !params.same_layout(&expected) {
        return Err(CheckpointError::HeaderInconsistency(
            "parameter layout does not match the serialized spec".into(),
        ));
    }
    if !params.is_finite() {
        return Err(CheckpointError::HeaderInconsistency(
            "non-finite parameter values".into(),
        ));
    }
    Ok((params, spec))
}
