//! On-disk stores named by the configuration.

use std::collections::BTreeMap;
use std::path::Path;

use scenmine_core::kb::KnowledgeBase;
use scenmine_core::smeb::EmbeddingStore;
use scenmine_core::traj::{load_log, LogManifest};
use scenmine_matcher::checkpoint;
use scenmine_matcher::Matcher;

use crate::config::PipelineConfig;
use crate::error::{data, CliError, Result};

const EXPORTER_HINT: &str = "generate them with the embedding exporter \
(`embed-export --frames-dir <frames> --texts-file <texts> --out <embeddings.smeb>`)";

/// Ids of the logs in the configured directory, sorted.
pub fn available_logs(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let dir = &cfg.paths.logs;
    let entries = std::fs::read_dir(dir)
        .map_err(|e| data(format!("log directory {}: {e}", dir.display())))?;
    let mut ids = Vec::new();
    for e in entries {
        let p = e.map_err(data)?.path();
        if p.extension().is_some_and(|x| x == "jsonl") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_one_log(cfg: &PipelineConfig, log_id: &str) -> Result<LogManifest> {
    let path = cfg.paths.logs.join(format!("{log_id}.jsonl"));
    if !path.exists() {
        let ids = available_logs(cfg)?;
        return Err(CliError::Data(format!(
            "unknown log `{log_id}`; available: {}",
            if ids.is_empty() {
                "(none)".to_string()
            } else {
                ids.join(", ")
            }
        )));
    }
    let log = load_log(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    if log.log_id != log_id {
        return Err(data(format!(
            "{} holds log `{}`",
            path.display(),
            log.log_id
        )));
    }
    Ok(log)
}

pub fn load_logs(cfg: &PipelineConfig, ids: &[String]) -> Result<BTreeMap<String, LogManifest>> {
    ids.iter()
        .map(|id| Ok((id.clone(), load_one_log(cfg, id)?)))
        .collect()
}

pub fn load_store(cfg: &PipelineConfig) -> Result<EmbeddingStore> {
    let (bin, idx) = (&cfg.paths.embeddings, &cfg.paths.embedding_index);
    if !bin.exists() || !idx.exists() {
        return Err(data(format!(
            "embedding store {} (index {}) not found; {EXPORTER_HINT}",
            bin.display(),
            idx.display()
        )));
    }
    EmbeddingStore::load(bin, idx).map_err(|e| data(format!("{}: {e}", bin.display())))
}

pub fn require_frames(store: &EmbeddingStore, log: &LogManifest) -> Result<()> {
    if store.has_log(&log.log_id) {
        Ok(())
    } else {
        Err(data(format!(
            "no frame embeddings for log `{}`; {EXPORTER_HINT}",
            log.log_id
        )))
    }
}

/// The knowledge base, or `None` when its directory holds none yet.
pub fn load_kb(path: &Path) -> Result<Option<KnowledgeBase>> {
    if !path.join("meta.json").exists() {
        return Ok(None);
    }
    KnowledgeBase::load(path)
        .map(Some)
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Option<Matcher>> {
    if !path.exists() {
        return Ok(None);
    }
    checkpoint::load(path)
        .map(|(m, _)| Some(m))
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Text row for a query: the explicit id first, then each fallback text.
pub fn query_embedding<'a>(store: &'a EmbeddingStore, ids: &[&str]) -> Option<(String, &'a [f32])> {
    ids.iter()
        .find_map(|id| store.text(id).map(|v| (id.to_string(), v)))
}

pub fn missing_query(ids: &[&str]) -> CliError {
    let tried: Vec<String> = ids.iter().map(|s| format!("`{s}`")).collect();
    CliError::Data(format!(
        "no text embedding for query ids {}; {EXPORTER_HINT} or pass --query-id",
        tried.join(", ")
    ))
}
