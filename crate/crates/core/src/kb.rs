//! Knowledge base of validated `{query, embedding, mask, program}` triples.
//!
//! A candidate is admitted only if its program reproduces its ground-truth
//! mask exactly on the given log. Retrieval is an exact cosine scan.
//!
//! On disk a knowledge base is a directory holding `triples.jsonl`,
//! `embeddings.smeb` (row `i` belongs to line `i`) and `meta.json`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coarse::{cosine, CoarseError};
use crate::dsl::{self, ScenarioMask};
use crate::smeb::{EmbeddingMatrix, SmebError};
use crate::traj::LogManifest;

pub const KB_VERSION: u32 = 1;
const TRIPLES_FILE: &str = "triples.jsonl";
const EMBEDDINGS_FILE: &str = "embeddings.smeb";
const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Smeb(#[from] SmebError),
    #[error("malformed {file}: {message}")]
    Format { file: String, message: String },
    #[error("unsupported knowledge base version {0} (expected {KB_VERSION})")]
    Version(u32),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,
}

pub type Result<T> = std::result::Result<T, KbError>;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeTriple {
    pub triple_id: String,
    pub query_text: String,
    pub query_embedding: Vec<f32>,
    pub mask: ScenarioMask,
    pub program_source: String,
    pub validated: bool,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Parse(String),
    Mismatch {
        diff: usize,
        missing: usize,
        extra: usize,
    },
    DuplicateId(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Parse(e) => write!(f, "program does not parse: {e}"),
            RejectReason::Mismatch {
                diff,
                missing,
                extra,
            } => write!(
                f,
                "evaluation mismatch: symmetric difference {diff} ({missing} expected entries missing, {extra} unexpected entries)"
            ),
            RejectReason::DuplicateId(id) => write!(f, "duplicate triple_id `{id}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Rejected(RejectReason),
}

impl Admission {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Admission::Accepted)
    }
}

/// Runs the perfect-match gate without touching any store.
pub fn check_candidate(candidate: &KnowledgeTriple, log: &LogManifest) -> Result<Admission> {
    candidate
        .mask
        .validate_against(log)
        .map_err(|e| KbError::InvalidInput(e.to_string()))?;
    let program = match dsl::parse(&candidate.program_source) {
        Ok(p) => p,
        Err(e) => return Ok(Admission::Rejected(RejectReason::Parse(e.to_string()))),
    };
    let got = dsl::evaluate(&program, log);
    let missing = candidate.mask.entries.difference(&got.entries).count();
    let extra = got.entries.difference(&candidate.mask.entries).count();
    if missing + extra == 0 {
        Ok(Admission::Accepted)
    } else {
        Ok(Admission::Rejected(RejectReason::Mismatch {
            diff: missing + extra,
            missing,
            extra,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    dim: Option<usize>,
    triples: Vec<KnowledgeTriple>,
    ids: HashSet<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TripleRecord {
    triple_id: String,
    query_text: String,
    log_id: String,
    mask: Vec<(String, i64)>,
    program_source: String,
    validated: bool,
    provenance: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    version: u32,
    sentence_dim: usize,
    count: usize,
    checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn get(&self, triple_id: &str) -> Option<&KnowledgeTriple> {
        self.triples.iter().find(|t| t.triple_id == triple_id)
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.is_empty() {
            return Err(KbError::InvalidInput("empty query embedding".into()));
        }
        match self.dim {
            Some(d) if d != v.len() => Err(KbError::InvalidInput(format!(
                "embedding dim {} differs from store dim {d}",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Admits `candidate` iff its program reproduces its mask on `log`.
    pub fn insert_validated(
        &mut self,
        candidate: KnowledgeTriple,
        log: &LogManifest,
    ) -> Result<Admission> {
        let mut out = self.insert_batch(vec![(candidate, log)])?;
        Ok(out.pop().expect("one admission per candidate"))
    }

    /// Gates every candidate first and commits the accepted ones together.
    /// Any input error aborts the whole batch.
    pub fn insert_batch(
        &mut self,
        batch: Vec<(KnowledgeTriple, &LogManifest)>,
    ) -> Result<Vec<Admission>> {
        let mut seen: HashSet<String> = HashSet::new();
        let mut dim = self.dim;
        let mut admissions = Vec::with_capacity(batch.len());
        let mut staged = Vec::new();
        for (cand, log) in batch {
            self.check_dim(&cand.query_embedding)?;
            if let Some(d) = dim {
                if d != cand.query_embedding.len() {
                    return Err(KbError::InvalidInput(format!(
                        "embedding dim {} differs from batch dim {d}",
                        cand.query_embedding.len()
                    )));
                }
            }
            if self.ids.contains(&cand.triple_id) || seen.contains(&cand.triple_id) {
                admissions.push(Admission::Rejected(RejectReason::DuplicateId(
                    cand.triple_id.clone(),
                )));
                continue;
            }
            let adm = check_candidate(&cand, log)?;
            if adm.is_accepted() {
                dim = Some(cand.query_embedding.len());
                seen.insert(cand.triple_id.clone());
                staged.push(KnowledgeTriple {
                    validated: true,
                    ..cand
                });
            }
            admissions.push(adm);
        }
        self.dim = dim;
        for t in staged {
            self.ids.insert(t.triple_id.clone());
            self.triples.push(t);
        }
        Ok(admissions)
    }

    /// Exact top-`k` by cosine similarity, descending, ties by `triple_id`.
    pub fn knn_retrieve(&self, query: &[f32], k: usize) -> Result<Vec<(&KnowledgeTriple, f64)>> {
        if k == 0 {
            return Err(KbError::InvalidInput("k must be at least 1".into()));
        }
        if self.triples.is_empty() {
            return Ok(Vec::new());
        }
        self.check_dim(query)?;
        let q: Vec<f64> = query.iter().map(|&x| f64::from(x)).collect();
        let mut scored = Vec::with_capacity(self.triples.len());
        for t in self.triples.iter().filter(|t| t.validated) {
            let v: Vec<f64> = t.query_embedding.iter().map(|&x| f64::from(x)).collect();
            let s = match cosine(&q, &v) {
                Ok(s) => s,
                Err(CoarseError::UndefinedSimilarity) if q.iter().any(|x| *x != 0.0) => 0.0,
                Err(CoarseError::UndefinedSimilarity) => return Err(KbError::UndefinedSimilarity),
                Err(e) => return Err(KbError::InvalidInput(e.to_string())),
            };
            scored.push((t, s));
        }
        scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => a.0.triple_id.cmp(&b.0.triple_id),
            o => o,
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Re-runs the gate for every triple whose log is available.
    pub fn revalidate(&self, logs: &BTreeMap<String, LogManifest>) -> Vec<(String, bool)> {
        self.triples
            .iter()
            .filter_map(|t| {
                let log = logs.get(&t.mask.log_id)?;
                let ok = matches!(check_candidate(t, log), Ok(Admission::Accepted));
                Some((t.triple_id.clone(), ok))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut lines = Vec::new();
        let mut matrix = EmbeddingMatrix::new(self.dim.unwrap_or(0));
        for t in &self.triples {
            let rec = TripleRecord {
                triple_id: t.triple_id.clone(),
                query_text: t.query_text.clone(),
                log_id: t.mask.log_id.clone(),
                mask: t.mask.entries.iter().cloned().collect(),
                program_source: t.program_source.clone(),
                validated: t.validated,
                provenance: t.provenance.clone(),
            };
            serde_json::to_writer(&mut lines, &rec).map_err(std::io::Error::from)?;
            lines.push(b'\n');
            matrix.push(&t.query_embedding)?;
        }
        let emb = matrix.to_bytes();
        let meta = Meta {
            version: KB_VERSION,
            sentence_dim: matrix.dim,
            count: self.triples.len(),
            checksums: BTreeMap::from([
                (TRIPLES_FILE.to_string(), sha256_hex(&lines)),
                (EMBEDDINGS_FILE.to_string(), sha256_hex(&emb)),
            ]),
        };
        std::fs::write(dir.join(TRIPLES_FILE), &lines)?;
        std::fs::write(dir.join(EMBEDDINGS_FILE), &emb)?;
        let meta = serde_json::to_vec_pretty(&meta).map_err(std::io::Error::from)?;
        std::fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let fmt_err = |file: &str, message: String| KbError::Format {
            file: file.into(),
            message,
        };
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join(META_FILE))?)
            .map_err(|e| fmt_err(META_FILE, e.to_string()))?;
        if meta.version != KB_VERSION {
            return Err(KbError::Version(meta.version));
        }
        let lines = std::fs::read(dir.join(TRIPLES_FILE))?;
        let emb = std::fs::read(dir.join(EMBEDDINGS_FILE))?;
        for (name, bytes) in [(TRIPLES_FILE, &lines), (EMBEDDINGS_FILE, &emb)] {
            if meta.checksums.get(name) != Some(&sha256_hex(bytes)) {
                return Err(KbError::Checksum(name.into()));
            }
        }
        let matrix = EmbeddingMatrix::read_from(emb.as_slice())?;
        if matrix.dim != meta.sentence_dim {
            return Err(fmt_err(
                EMBEDDINGS_FILE,
                format!(
                    "dim {} differs from meta dim {}",
                    matrix.dim, meta.sentence_dim
                ),
            ));
        }
        let text = std::str::from_utf8(&lines).map_err(|e| fmt_err(TRIPLES_FILE, e.to_string()))?;
        let mut kb = Self::new();
        for (i, line) in text.lines().enumerate() {
            let rec: TripleRecord = serde_json::from_str(line)
                .map_err(|e| fmt_err(TRIPLES_FILE, format!("line {}: {e}", i + 1)))?;
            if i >= matrix.rows() {
                return Err(fmt_err(EMBEDDINGS_FILE, format!("missing row {i}")));
            }
            if !kb.ids.insert(rec.triple_id.clone()) {
                return Err(fmt_err(
                    TRIPLES_FILE,
                    format!("duplicate triple_id {}", rec.triple_id),
                ));
            }
            kb.triples.push(KnowledgeTriple {
                triple_id: rec.triple_id,
                query_text: rec.query_text,
                query_embedding: matrix.row(i).to_vec(),
                mask: ScenarioMask {
                    log_id: rec.log_id,
                    entries: rec.mask.into_iter().collect(),
                },
                program_source: rec.program_source,
                validated: rec.validated,
                provenance: rec.provenance,
            });
        }
        if kb.triples.len() != matrix.rows() || kb.triples.len() != meta.count {
            return Err(fmt_err(
                META_FILE,
                format!(
                    "count mismatch: meta {}, triples {}, embeddings {}",
                    meta.count,
                    kb.triples.len(),
                    matrix.rows()
                ),
            ));
        }
        if !kb.triples.is_empty() {
            kb.dim = Some(matrix.dim);
        }
        Ok(kb)
    }
}
