//! `SMCK` checkpoint files.
//!
//! Layout (integers little-endian u32): magic `SMCK`, version, length of a
//! JSON config block, the block itself, tensor count, then per tensor its
//! name length, name bytes, rank, dims and `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use scenmine_core::traj::NormStats;

use crate::config::{LossConfig, MatcherConfig};
use crate::model::{init_params, Matcher};
use crate::tensor::Mat;
use crate::MatcherError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub matcher: MatcherConfig,
    pub loss: LossConfig,
    pub norm: NormStats,
}

fn err(m: impl Into<String>) -> MatcherError {
    MatcherError::Checkpoint(m.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), MatcherError> {
    let v = u32::try_from(v).map_err(|_| err("value exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Matcher, loss: &LossConfig) -> Result<Vec<u8>, MatcherError> {
    let meta = CheckpointConfig {
        matcher: model.config.clone(),
        loss: loss.clone(),
        norm: model.norm.clone(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.params.len())?;
    for p in model.params.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, 2)?;
        put_u32(&mut out, p.value.rows)?;
        put_u32(&mut out, p.value.cols)?;
        for &x in &p.value.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MatcherError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| err("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, MatcherError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint; parameter names and shapes must match the layout
/// implied by its configuration.
pub fn from_bytes(buf: &[u8]) -> Result<(Matcher, LossConfig), MatcherError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(err("bad magic"));
    }
    let version = c.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let len = c.u32()?;
    let meta: CheckpointConfig =
        serde_json::from_slice(c.take(len)?).map_err(|e| err(e.to_string()))?;
    meta.matcher.validate()?;
    let mut params = init_params(&meta.matcher, 0);
    let count = c.u32()?;
    if count != params.len() {
        return Err(err(format!(
            "expected {} tensors, found {count}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let n = c.u32()?;
        let name = std::str::from_utf8(c.take(n)?).map_err(|e| err(e.to_string()))?;
        if name != p.name {
            return Err(err(format!("expected tensor {}, found {name}", p.name)));
        }
        if c.u32()? != 2 {
            return Err(err(format!("tensor {name} is not rank 2")));
        }
        let (rows, cols) = (c.u32()?, c.u32()?);
        if (rows, cols) != p.value.shape() {
            return Err(err(format!(
                "tensor {name} has shape {rows}x{cols}, expected {:?}",
                p.value.shape()
            )));
        }
        let raw = c.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        p.value = Mat::from_vec(rows, cols, data);
    }
    if c.pos != buf.len() {
        return Err(err("trailing bytes"));
    }
    Ok((
        Matcher {
            config: meta.matcher,
            params,
            norm: meta.norm,
        },
        meta.loss,
    ))
}

pub fn save(model: &Matcher, loss: &LossConfig, path: &Path) -> Result<(), MatcherError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model, loss)?)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Matcher, LossConfig), MatcherError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
