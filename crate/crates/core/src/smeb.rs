//! `SMEB` dense-embedding files and their line-delimited sidecar index.
//!
//! Binary layout (all integers little-endian):
//!
//! | bytes | content              |
//! |-------|----------------------|
//! | 4     | magic `SMEB`         |
//! | 4     | format version (u32) |
//! | 4     | dim (u32)            |
//! | 8     | row count (u64)      |
//! | ...   | rows of `dim` f32    |
//!
//! The sidecar maps rows to frames (`log_id`, `camera_id`, `ts_ns`) or texts
//! (`query_id`). Text rows may carry a `token` position, in which case they
//! form the token matrix of that query rather than its pooled embedding.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SMEB_MAGIC: [u8; 4] = *b"SMEB";
pub const SMEB_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum SmebError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an SMEB file (bad magic)")]
    BadMagic,
    #[error("unsupported SMEB version {0} (expected {SMEB_VERSION})")]
    Version(u32),
    #[error("truncated SMEB file: expected {expected} bytes of row data, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("bad index record at line {line}: {message}")]
    Index { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, SmebError>;

/// Row-major `rows x dim` f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, v: &[f32]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(SmebError::DimMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.data.extend_from_slice(v);
        Ok(self.rows() - 1)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = u32::try_from(self.dim).map_err(|_| SmebError::DimMismatch {
            expected: u32::MAX as usize,
            found: self.dim,
        })?;
        w.write_all(&SMEB_MAGIC)?;
        w.write_all(&SMEB_VERSION.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => SmebError::Truncated {
                expected: HEADER_LEN as u64,
                found: 0,
            },
            _ => SmebError::Io(e),
        })?;
        if header[0..4] != SMEB_MAGIC {
            return Err(SmebError::BadMagic);
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != SMEB_VERSION {
            return Err(SmebError::Version(version));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let rows = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
        let expected = rows
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .ok_or(SmebError::Truncated {
                expected: u64::MAX,
                found: 0,
            })?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() as u64 != expected {
            return Err(SmebError::Truncated {
                expected,
                found: body.len() as u64,
            });
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dim, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// One sidecar line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IndexRecord {
    Frame {
        row: u64,
        log_id: String,
        camera_id: String,
        ts_ns: i64,
    },
    Text {
        row: u64,
        query_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<u32>,
    },
}

impl IndexRecord {
    pub fn row(&self) -> u64 {
        match self {
            IndexRecord::Frame { row, .. } | IndexRecord::Text { row, .. } => *row,
        }
    }
}

/// Frame and text embeddings with their lookup index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub matrix: EmbeddingMatrix,
    records: Vec<IndexRecord>,
    frames: BTreeMap<(String, String), Vec<(i64, usize)>>,
    texts: HashMap<String, usize>,
    tokens: HashMap<String, Vec<(u32, usize)>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            matrix: EmbeddingMatrix::new(dim),
            records: Vec::new(),
            frames: BTreeMap::new(),
            texts: HashMap::new(),
            tokens: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn add_frame(
        &mut self,
        log_id: &str,
        camera_id: &str,
        ts_ns: i64,
        v: &[f32],
    ) -> Result<usize> {
        let row = self.matrix.push(v)?;
        self.index(
            IndexRecord::Frame {
                row: row as u64,
                log_id: log_id.into(),
                camera_id: camera_id.into(),
                ts_ns,
            },
            0,
        )?;
        Ok(row)
    }

    pub fn add_text(&mut self, query_id: &str, v: &[f32]) -> Result<usize> {
        let row = self.matrix.push(v)?;
        self.index(
            IndexRecord::Text {
                row: row as u64,
                query_id: query_id.into(),
                token: None,
            },
            0,
        )?;
        Ok(row)
    }

    /// Appends one token row of the token matrix of `query_id`.
    pub fn add_token(&mut self, query_id: &str, position: u32, v: &[f32]) -> Result<usize> {
        let row = self.matrix.push(v)?;
        self.index(
            IndexRecord::Text {
                row: row as u64,
                query_id: query_id.into(),
                token: Some(position),
            },
            0,
        )?;
        Ok(row)
    }

    fn index(&mut self, rec: IndexRecord, line: usize) -> Result<()> {
        let row = rec.row() as usize;
        if row >= self.matrix.rows() {
            return Err(SmebError::Index {
                line,
                message: format!("row {row} out of range ({} rows)", self.matrix.rows()),
            });
        }
        match &rec {
            IndexRecord::Frame {
                log_id,
                camera_id,
                ts_ns,
                ..
            } => {
                let list = self
                    .frames
                    .entry((log_id.clone(), camera_id.clone()))
                    .or_default();
                let pos = list.partition_point(|(t, _)| *t < *ts_ns);
                if list.get(pos).is_some_and(|(t, _)| t == ts_ns) {
                    return Err(SmebError::Index {
                        line,
                        message: format!("duplicate frame {log_id}/{camera_id}@{ts_ns}"),
                    });
                }
                list.insert(pos, (*ts_ns, row));
            }
            IndexRecord::Text {
                query_id,
                token: None,
                ..
            } => {
                if self.texts.insert(query_id.clone(), row).is_some() {
                    return Err(SmebError::Index {
                        line,
                        message: format!("duplicate text {query_id}"),
                    });
                }
            }
            IndexRecord::Text {
                query_id,
                token: Some(p),
                ..
            } => {
                let list = self.tokens.entry(query_id.clone()).or_default();
                let pos = list.partition_point(|(q, _)| q < p);
                list.insert(pos, (*p, row));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.matrix.row(i)
    }

    pub fn frame(&self, log_id: &str, camera_id: &str, ts_ns: i64) -> Option<&[f32]> {
        let list = self
            .frames
            .get(&(log_id.to_string(), camera_id.to_string()))?;
        let pos = list.binary_search_by_key(&ts_ns, |(t, _)| *t).ok()?;
        Some(self.row(list[pos].1))
    }

    /// Frames of one camera of one log, sorted by timestamp.
    pub fn frames_of(&self, log_id: &str, camera_id: &str) -> &[(i64, usize)] {
        self.frames
            .get(&(log_id.to_string(), camera_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn has_log(&self, log_id: &str) -> bool {
        self.frames.keys().any(|(l, _)| l == log_id)
    }

    pub fn text(&self, query_id: &str) -> Option<&[f32]> {
        self.texts.get(query_id).map(|&r| self.row(r))
    }

    /// Token matrix of `query_id`, in token order.
    pub fn tokens(&self, query_id: &str) -> Option<Vec<&[f32]>> {
        self.tokens
            .get(query_id)
            .map(|list| list.iter().map(|&(_, r)| self.row(r)).collect())
    }

    pub fn write_index<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_parts<R: BufRead>(matrix: EmbeddingMatrix, index: R) -> Result<Self> {
        let mut store = Self {
            matrix,
            ..Self::new(0)
        };
        for (i, line) in index.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| SmebError::Index {
                line: i + 1,
                message: e.to_string(),
            })?;
            store.index(rec, i + 1)?;
        }
        Ok(store)
    }

    pub fn save(&self, bin: &Path, index: &Path) -> Result<()> {
        self.matrix.save(bin)?;
        let mut w = BufWriter::new(File::create(index)?);
        self.write_index(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(bin: &Path, index: &Path) -> Result<Self> {
        let matrix = EmbeddingMatrix::load(bin)?;
        Self::from_parts(matrix, BufReader::new(File::open(index)?))
    }
}
