//! The mining pipeline for one query over one log: coarse window filter,
//! exemplar retrieval, program synthesis with repair, sandboxed evaluation
//! and matcher re-ranking. Every stage is timed and leaves audit records.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use scenmine_core::coarse::{
    coarse_filter, query_text, restrict_tracks, Lexicons, TimeRegion, WindowScore,
};
use scenmine_core::dsl::{default_catalog, evaluate_with, EvalOptions, EvalStats};
use scenmine_core::kb::KnowledgeBase;
use scenmine_core::smeb::EmbeddingStore;
use scenmine_core::synth::{
    assemble_prompt, repair_loop_with, Exemplar, PromptBundle, SynthesisStatus, TextGenerator,
};
use scenmine_core::traj::{LogManifest, Track};
use scenmine_matcher::rank::rank_candidates;
use scenmine_matcher::{Mat, Matcher};

use crate::config::PipelineConfig;
use crate::data::{missing_query, query_embedding, require_frames};
use crate::error::{data, Result};

/// Read-only inputs shared by every mined log.
pub struct Resources {
    pub config: PipelineConfig,
    pub store: EmbeddingStore,
    pub kb: Option<KnowledgeBase>,
    pub matcher: Option<Matcher>,
    pub lexicons: Lexicons,
}

#[derive(Debug, Clone)]
pub struct MineRequest {
    pub query: String,
    pub query_id: Option<String>,
    /// Skip the coarse stage and evaluate over the whole log.
    pub no_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTrack {
    pub track_id: String,
    pub score: Option<f64>,
    pub timestamps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct Work {
    /// `(track, timestamp)` points handed to the evaluator.
    pub candidate_points: u64,
    pub point_evaluations: u64,
    pub pair_checks: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MineResult {
    pub log_id: String,
    pub query: String,
    pub status: SynthesisStatus,
    pub program: Option<String>,
    pub calls_made: usize,
    pub exemplars: Vec<String>,
    pub region: Vec<(f64, f64)>,
    pub candidate_tracks: usize,
    pub mask: Vec<(String, i64)>,
    pub ranked: Vec<RankedTrack>,
    pub work: Work,
    /// Wall-clock milliseconds per stage; the only field that varies
    /// between identical runs.
    pub timings_ms: BTreeMap<String, f64>,
}

impl MineResult {
    pub fn flagged(&self) -> bool {
        self.status == SynthesisStatus::FlaggedForReview
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn ids<'a>(explicit: Option<&'a str>, texts: [&'a str; 2]) -> Vec<&'a str> {
    match explicit {
        Some(id) => vec![id],
        None if texts[0] == texts[1] => vec![texts[0]],
        None => texts.to_vec(),
    }
}

/// Exemplars for `query` from the knowledge base, most similar first.
pub fn retrieve_exemplars(
    res: &Resources,
    query: &str,
    query_id: Option<&str>,
) -> Result<(Vec<Exemplar>, Vec<Value>)> {
    let terms = query_text(
        query,
        &res.lexicons,
        scenmine_core::coarse::QueryTextMode::Terms,
    );
    let Some(kb) = res.kb.as_ref().filter(|kb| !kb.is_empty()) else {
        return Ok((
            Vec::new(),
            vec![json!({"zero_shot": true, "reason": "knowledge base is empty or missing"})],
        ));
    };
    let Some((row_id, emb)) = query_embedding(&res.store, &ids(query_id, [query.trim(), &terms]))
    else {
        return Ok((
            Vec::new(),
            vec![json!({"zero_shot": true, "reason": "no text embedding for the query"})],
        ));
    };
    let k = res.config.synth.repair.max_exemplars;
    let hits = kb.knn_retrieve(emb, k).map_err(data)?;
    let notes = hits
        .iter()
        .map(|(t, s)| json!({"triple_id": t.triple_id, "similarity": s, "embedding_row": row_id}))
        .collect();
    let ex = hits
        .into_iter()
        .map(|(t, s)| Exemplar {
            query: t.query_text.clone(),
            program: t.program_source.clone(),
            similarity: s,
        })
        .collect();
    Ok((ex, notes))
}

pub fn prompt_bundle(res: &Resources, query: &str, exemplars: &[Exemplar]) -> Result<PromptBundle> {
    let c = default_catalog();
    assemble_prompt(
        query,
        exemplars,
        &c.render_doc(),
        &c.vocabulary.categories,
        res.config.synth.repair.max_exemplars,
    )
    .map_err(data)
}

/// Window scores and the merged region for one log.
pub fn coarse_stage(
    res: &Resources,
    log: &LogManifest,
    query: &str,
    query_id: Option<&str>,
) -> Result<(Vec<WindowScore>, TimeRegion, String)> {
    require_frames(&res.store, log)?;
    let cfg = &res.config.coarse;
    let text = query_text(query, &res.lexicons, cfg.query_text);
    let tried = ids(query_id, [&text, query.trim()]);
    let (row_id, emb) = query_embedding(&res.store, &tried).ok_or_else(|| missing_query(&tried))?;
    let q: Vec<f64> = emb.iter().map(|&x| f64::from(x)).collect();
    let (scores, region) = coarse_filter(&res.store, [log], &q, cfg).map_err(data)?;
    Ok((scores, region, row_id))
}

fn points_in(log: &LogManifest, domain: Option<&[(i64, i64)]>) -> u64 {
    log.tracks
        .iter()
        .flat_map(|t| &t.states)
        .filter(|s| domain.is_none_or(|d| d.iter().any(|&(a, b)| a <= s.ts_ns && s.ts_ns <= b)))
        .count() as u64
}

pub fn mine_log(
    res: &Resources,
    log: &LogManifest,
    req: &MineRequest,
    client: &dyn TextGenerator,
) -> Result<(MineResult, Vec<Value>)> {
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    let mut audit = Vec::new();
    let base = |stage: &str| json!({"stage": stage, "log_id": log.log_id, "query": req.query});
    let with = |mut v: Value, extra: Value| {
        if let (Some(o), Value::Object(e)) = (v.as_object_mut(), extra) {
            o.extend(e);
        }
        v
    };

    let t = Instant::now();
    let (scoped, domain, region) = if req.no_filter {
        audit.push(with(base("coarse"), json!({"skipped": true})));
        (
            log.clone(),
            None,
            TimeRegion::whole(log).for_log(&log.log_id).to_vec(),
        )
    } else {
        let (scores, region, row) = coarse_stage(res, log, &req.query, req.query_id.as_deref())?;
        let r = restrict_tracks(log, &region);
        let iv = region.for_log(&log.log_id).to_vec();
        audit.push(with(
            base("coarse"),
            json!({"embedding_row": row, "windows": scores.len(), "region": iv, "candidate_tracks": r.log.tracks.len()}),
        ));
        (r.log, Some(r.domain), iv)
    };
    timings.insert("coarse".to_string(), ms(t));

    let t = Instant::now();
    let (exemplars, notes) = retrieve_exemplars(res, &req.query, req.query_id.as_deref())?;
    audit.push(with(base("retrieval"), json!({"exemplars": notes})));
    let bundle = prompt_bundle(res, &req.query, &exemplars)?;
    timings.insert("retrieval".to_string(), ms(t));

    let t = Instant::now();
    let opts = EvalOptions {
        domain: domain.clone(),
    };
    let mut stats = EvalStats::default();
    let outcome = repair_loop_with(client, &bundle, &res.config.synth.repair, |p| {
        let (m, s) = evaluate_with(p, &scoped, &opts);
        stats = s;
        Ok(m)
    })
    .map_err(data)?;
    for mut rec in outcome.audit_records(&req.query) {
        rec["stage"] = json!("synthesis");
        rec["log_id"] = json!(log.log_id);
        audit.push(rec);
    }
    timings.insert("synthesis".to_string(), ms(t));

    let t = Instant::now();
    let mask = outcome
        .mask
        .clone()
        .unwrap_or_else(|| scenmine_core::dsl::ScenarioMask::new(&log.log_id));
    let mut per_track: BTreeMap<&str, usize> = BTreeMap::new();
    for (id, _) in &mask.entries {
        *per_track.entry(id.as_str()).or_default() += 1;
    }
    let (ranked, note) = rerank(res, log, req, &per_track)?;
    audit.push(with(base("rerank"), note));
    timings.insert("rerank".to_string(), ms(t));
    timings.insert("total".to_string(), ms(started));

    let result = MineResult {
        log_id: log.log_id.clone(),
        query: req.query.clone(),
        status: outcome.status,
        program: outcome.program.as_ref().map(|p| p.source.clone()),
        calls_made: outcome.calls_made,
        exemplars: exemplars.iter().map(|e| e.query.clone()).collect(),
        region,
        candidate_tracks: scoped.tracks.len(),
        mask: mask.entries.iter().cloned().collect(),
        ranked,
        work: Work {
            candidate_points: points_in(&scoped, domain.as_deref()),
            point_evaluations: stats.point_evaluations,
            pair_checks: stats.pair_checks,
            total: stats.total(),
        },
        timings_ms: timings.clone(),
    };
    audit.push(with(
        base("summary"),
        json!({"status": result.status, "mask_size": result.mask.len(), "work": result.work, "timings_ms": timings}),
    ));
    Ok((result, audit))
}

/// Matcher scores for the selected tracks when a checkpoint and query
/// tokens are available; otherwise tracks by id without scores.
fn rerank(
    res: &Resources,
    log: &LogManifest,
    req: &MineRequest,
    per_track: &BTreeMap<&str, usize>,
) -> Result<(Vec<RankedTrack>, Value)> {
    let unranked = || {
        per_track
            .iter()
            .map(|(id, n)| RankedTrack {
                track_id: id.to_string(),
                score: None,
                timestamps: *n,
            })
            .collect::<Vec<_>>()
    };
    let Some(model) = &res.matcher else {
        return Ok((unranked(), json!({"skipped": "no matcher checkpoint"})));
    };
    let terms = query_text(
        &req.query,
        &res.lexicons,
        scenmine_core::coarse::QueryTextMode::Terms,
    );
    let tried = ids(req.query_id.as_deref(), [req.query.trim(), &terms]);
    let Some(tokens) = tried.iter().find_map(|id| res.store.tokens(id)) else {
        return Ok((unranked(), json!({"skipped": "no query token embeddings"})));
    };
    let rows: Vec<Vec<f64>> = tokens
        .iter()
        .map(|r| r.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let tokens = Mat::from_rows(&rows);
    let tracks: Vec<&Track> = per_track.keys().filter_map(|id| log.track(id)).collect();
    let scored = rank_candidates(model, &tokens, &tracks).map_err(data)?;
    let ranked = scored
        .into_iter()
        .map(|(id, s)| RankedTrack {
            timestamps: per_track[id.as_str()],
            score: s.is_finite().then_some(s),
            track_id: id,
        })
        .collect::<Vec<_>>();
    let note = json!({"scored": ranked.len()});
    Ok((ranked, note))
}
