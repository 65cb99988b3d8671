//! Parameter checkpoint file. Little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "V2XC"
//! version      u32      1
//! config       12 × u32 d, heads, enc_layers, fusion_layers, dec_layers,
//!                       ffn_mult, patch, d_prime, coord_bins, horizon,
//!                       text_vocab, max_prompt_len
//! block_count  u32
//! per block:
//!   name_len   u16, then name_len bytes of UTF-8
//!   rows       u32
//!   cols       u32
//!   data       rows·cols × f32, row-major
//! ```
//!
//! Values are stored as f32 and widened back to f64 on load.

use std::path::Path;

use thiserror::Error;

use super::config::ModelConfig;
use super::network::Model;
use super::params::ParamStore;
use super::ModelError;
use crate::numerics::Tensor2D;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"V2XC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint block name is not UTF-8")]
    BadName,
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn config_fields(c: &ModelConfig) -> [usize; 12] {
    [
        c.d,
        c.heads,
        c.enc_layers,
        c.fusion_layers,
        c.dec_layers,
        c.ffn_mult,
        c.patch,
        c.d_prime,
        c.coord_bins,
        c.horizon,
        c.text_vocab,
        c.max_prompt_len,
    ]
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for f in config_fields(model.config()) {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, v) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(v.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(v.cols() as u32).to_le_bytes());
        for &x in v.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut f = [0usize; 12];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let cfg = ModelConfig {
        d: f[0],
        heads: f[1],
        enc_layers: f[2],
        fusion_layers: f[3],
        dec_layers: f[4],
        ffn_mult: f[5],
        patch: f[6],
        d_prime: f[7],
        coord_bins: f[8],
        horizon: f[9],
        text_vocab: f[10],
        max_prompt_len: f[11],
    };
    let count = r.u32()?;
    let mut params = ParamStore::default();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::BadName)?.to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or(CheckpointError::Truncated)?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor2D::from_vec(rows, cols, data).map_err(|e| ModelError::ParamMismatch(format!("{name}: {e}")))?;
        if params.id(&name).is_some() {
            return Err(ModelError::ParamMismatch(format!("duplicate block {name}")).into());
        }
        params.insert(&name, t);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::ParamMismatch("trailing bytes after last block".into()).into());
    }
    Ok(Model::from_parts(cfg, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

/// Rounds every parameter through f32, matching a save/load cycle.
pub fn quantize_f32(model: &mut Model) {
    let ids: Vec<usize> = model.params().iter().map(|(i, _, _)| i).collect();
    for id in ids {
        for v in model.params_mut().value_mut(id).data_mut() {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngSeed;

    #[test]
    fn round_trip_matches_f32_rounding() {
        let mut m = Model::init(ModelConfig::tiny(12), RngSeed(3)).unwrap();
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..4], b"V2XC");
        let back = from_bytes(&bytes).unwrap();
        quantize_f32(&mut m);
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = Model::init(ModelConfig::tiny(12), RngSeed(3)).unwrap();
        let bytes = to_bytes(&m);
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(from_bytes(&v2), Err(CheckpointError::UnsupportedVersion(2))));
    }
}
