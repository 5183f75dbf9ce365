//! Command definitions and handlers.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use scenmine_core::coarse::{query_text, restrict_tracks, top_k};
use scenmine_core::dsl::{default_catalog, ScenarioMask};
use scenmine_core::kb::{Admission, KnowledgeBase, KnowledgeTriple};
use scenmine_core::metrics::{evaluate_logs, scenario_ranges, BoxedMask, LogEvalInput};
use scenmine_core::synth::{ProcessClient, ScriptedClient, TextGenerator};
use scenmine_core::traj::{LogManifest, Track};
use scenmine_matcher::checkpoint;
use scenmine_matcher::train::{train, TrainingPair};
use scenmine_matcher::Mat;

use crate::config::{ClientConfig, PipelineConfig};
use crate::data::{
    self, available_logs, load_checkpoint, load_kb, load_logs, load_one_log, load_store,
};
use crate::error::{config, data as data_err, CliError, Result};
use crate::pipeline::{
    coarse_stage, mine_log, prompt_bundle, retrieve_exemplars, MineRequest, Resources,
};

const DEFAULT_CONFIG: &str = "scenmine.toml";

#[derive(Debug, Parser)]
#[command(
    name = "scenmine",
    version,
    about = "Coarse-to-fine scenario mining over trajectory logs"
)]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults to ./scenmine.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine a scenario query over one or more logs.
    Mine(MineArgs),
    /// Score and merge coarse windows without running any program.
    Filter(FilterArgs),
    /// Knowledge-base maintenance.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Train the text-trajectory matcher.
    TrainMatcher(TrainArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Show intermediate artifacts.
    #[command(subcommand)]
    Inspect(InspectCommand),
    /// Print the predicate catalog.
    Catalog {
        #[arg(long)]
        json: bool,
    },
    /// Print configuration.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Debug, Args)]
pub struct LogSelection {
    /// Log id; repeat for several logs.
    #[arg(long = "log")]
    pub logs: Vec<String>,
    /// Every log in the configured directory.
    #[arg(long, conflicts_with = "logs")]
    pub all_logs: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub query: String,
    /// Embedding-store id of the query text. By default the extracted query
    /// terms and then the raw query are looked up.
    #[arg(long)]
    pub query_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[command(flatten)]
    pub logs: LogSelection,
    /// Evaluate the whole log instead of the coarse region.
    #[arg(long)]
    pub no_filter: bool,
    /// Audit file; overrides `paths.audit`.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[command(flatten)]
    pub logs: LogSelection,
    /// Stop after window ranking; otherwise also report the restricted tracks.
    #[arg(long)]
    pub coarse_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Gate candidate triples and write the accepted ones.
    Build {
        /// JSON lines `{triple_id, query_text, log_id, mask, program, provenance?, query_id?}`.
        #[arg(long)]
        candidates: PathBuf,
        /// Output directory; defaults to `paths.knowledge_base`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add to an existing knowledge base instead of starting empty.
        #[arg(long)]
        append: bool,
    },
    /// Verify checksums and re-run every program against its log.
    Validate {
        #[arg(long)]
        kb: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON lines `{text_id, log_id, track_id, start_ns?, end_ns?}`; token
    /// embeddings are read from the store under `text_id`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint path; defaults to `paths.checkpoint`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-step loss curve as JSON lines.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON lines `{log_id, mask}`, e.g. the output of `mine`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSON lines `{log_id, mask, ranges?}`.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Results file: one record per log and a summary record.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum InspectCommand {
    /// Render the synthesis prompt for a query.
    Prompt(QueryArgs),
}

#[derive(Debug, Subcommand)]
pub enum ConfigCommand {
    /// The effective configuration.
    Show,
    /// The built-in defaults.
    Default,
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None if Path::new(DEFAULT_CONFIG).exists() => {
            PipelineConfig::load(Path::new(DEFAULT_CONFIG))
        }
        None => Ok(PipelineConfig::default()),
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Mine(a) => mine(cfg, a, out),
        Command::Filter(a) => filter(cfg, a, out),
        Command::Kb(KbCommand::Build {
            candidates,
            out: dir,
            append,
        }) => kb_build(&cfg, candidates, dir.as_deref(), *append, out),
        Command::Kb(KbCommand::Validate { kb }) => kb_validate(&cfg, kb.as_deref(), out),
        Command::TrainMatcher(a) => train_matcher(&cfg, a, out),
        Command::Evaluate(a) => evaluate(&cfg, a, out),
        Command::Inspect(InspectCommand::Prompt(q)) => inspect_prompt(cfg, q, out),
        Command::Catalog { json } => {
            let c = default_catalog();
            emit(out, &if *json { c.to_json() } else { c.render_doc() })
        }
        Command::Config(ConfigCommand::Show) => emit(out, &cfg.to_toml()),
        Command::Config(ConfigCommand::Default) => emit(out, &PipelineConfig::default().to_toml()),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(data_err)?;
    if !text.ends_with('\n') {
        out.write_all(b"\n").map_err(data_err)?;
    }
    Ok(())
}

fn emit_json(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<()> {
    emit(out, &serde_json::to_string(v).map_err(data_err)?)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn selected_logs(cfg: &PipelineConfig, sel: &LogSelection) -> Result<Vec<String>> {
    if sel.all_logs {
        return available_logs(cfg);
    }
    if sel.logs.is_empty() {
        return Err(config("name at least one --log or pass --all-logs"));
    }
    Ok(sel.logs.clone())
}

/// A fresh generator for one query, so scripted replies never interleave
/// across logs mined in parallel.
pub fn client_factory(
    cfg: &PipelineConfig,
) -> Result<Box<dyn Fn() -> Box<dyn TextGenerator> + Send + Sync>> {
    match &cfg.synth.client {
        ClientConfig::None => Err(config(
            "no text-generation client configured; set [synth.client]",
        )),
        ClientConfig::Process { command, args } => {
            let c = ProcessClient::new(command.clone(), args.clone());
            Ok(Box::new(move || Box::new(c.clone())))
        }
        ClientConfig::Script { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config(format!("{}: {e}", path.display())))?;
            let replies: Vec<String> = serde_json::from_str(&text)
                .map_err(|e| config(format!("{}: {e}", path.display())))?;
            Ok(Box::new(move || {
                Box::new(ScriptedClient::new(replies.clone()))
            }))
        }
    }
}

pub fn resources(cfg: PipelineConfig) -> Result<Resources> {
    let store = load_store(&cfg)?;
    let kb = load_kb(&cfg.paths.knowledge_base)?;
    let matcher = load_checkpoint(&cfg.paths.checkpoint)?;
    let lexicons = cfg.lexicons()?;
    Ok(Resources {
        config: cfg,
        store,
        kb,
        matcher,
        lexicons,
    })
}

fn append_audit(path: &Path, records: &[Value]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(data_err)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(data_err)?;
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(data_err)
}

fn mine(cfg: PipelineConfig, a: &MineArgs, out: &mut dyn Write) -> Result<()> {
    let ids = selected_logs(&cfg, &a.logs)?;
    let make = client_factory(&cfg)?;
    let audit_path = a.audit.clone().unwrap_or_else(|| cfg.paths.audit.clone());
    let logs: Vec<LogManifest> = ids
        .iter()
        .map(|id| load_one_log(&cfg, id))
        .collect::<Result<_>>()?;
    let res = resources(cfg)?;
    let req = MineRequest {
        query: a.query.query.clone(),
        query_id: a.query.query_id.clone(),
        no_filter: a.no_filter,
    };
    let results: Vec<_> = logs
        .par_iter()
        .map(|log| mine_log(&res, log, &req, make().as_ref()))
        .collect();
    let mut flagged = Vec::new();
    let mut audit = Vec::new();
    for r in results {
        let (result, records) = r?;
        emit_json(out, &result)?;
        if result.flagged() {
            flagged.push(result.log_id.clone());
        }
        audit.extend(records);
    }
    append_audit(&audit_path, &audit)?;
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Flagged(format!(
            "query on log(s) {}",
            flagged.join(", ")
        )))
    }
}

fn filter(cfg: PipelineConfig, a: &FilterArgs, out: &mut dyn Write) -> Result<()> {
    let ids = selected_logs(&cfg, &a.logs)?;
    let logs: Vec<LogManifest> = ids
        .iter()
        .map(|id| load_one_log(&cfg, id))
        .collect::<Result<_>>()?;
    let res = resources(cfg)?;
    let text = query_text(&a.query.query, &res.lexicons, res.config.coarse.query_text);
    let results: Vec<Result<Value>> = logs
        .par_iter()
        .map(|log| {
            let (scores, region, row) =
                coarse_stage(&res, log, &a.query.query, a.query.query_id.as_deref())?;
            let best = top_k(&scores, res.config.coarse.top_k);
            let mut v = json!({
                "log_id": log.log_id,
                "query_text": text,
                "embedding_row": row,
                "windows": scores.len(),
                "top_windows": best,
                "region": region.for_log(&log.log_id),
                "covered_seconds": region.covered_seconds(),
                "duration": log.duration,
            });
            if !a.coarse_only {
                let r = restrict_tracks(log, &region);
                let inside = r
                    .log
                    .tracks
                    .iter()
                    .flat_map(|t| &t.states)
                    .filter(|s| r.domain.iter().any(|&(x, y)| x <= s.ts_ns && s.ts_ns <= y))
                    .count();
                v["candidate_tracks"] =
                    json!(r.log.tracks.iter().map(|t| &t.track_id).collect::<Vec<_>>());
                v["candidate_points"] = json!(inside);
                v["total_points"] = json!(log.point_count());
            }
            Ok(v)
        })
        .collect();
    for r in results {
        emit_json(out, &r?)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Candidate {
    triple_id: String,
    query_text: String,
    log_id: String,
    mask: Vec<(String, i64)>,
    program: String,
    #[serde(default)]
    provenance: String,
    #[serde(default)]
    query_id: Option<String>,
}

fn kb_build(
    cfg: &PipelineConfig,
    candidates: &Path,
    dir: Option<&Path>,
    append: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let dir = dir.unwrap_or(&cfg.paths.knowledge_base);
    let cands: Vec<Candidate> = read_jsonl(candidates)?;
    let store = load_store(cfg)?;
    let mut log_ids: Vec<String> = cands.iter().map(|c| c.log_id.clone()).collect();
    log_ids.sort();
    log_ids.dedup();
    let logs = load_logs(cfg, &log_ids)?;
    let mut kb = match (append, load_kb(dir)?) {
        (true, Some(kb)) => kb,
        _ => KnowledgeBase::new(),
    };
    let mut batch = Vec::with_capacity(cands.len());
    for c in &cands {
        let tried: Vec<&str> = match &c.query_id {
            Some(id) => vec![id.as_str()],
            None => vec![c.triple_id.as_str(), c.query_text.as_str()],
        };
        let (_, emb) =
            data::query_embedding(&store, &tried).ok_or_else(|| data::missing_query(&tried))?;
        let mut mask = ScenarioMask::new(&c.log_id);
        for (id, ts) in &c.mask {
            mask.insert(id.clone(), *ts);
        }
        let triple = KnowledgeTriple {
            triple_id: c.triple_id.clone(),
            query_text: c.query_text.clone(),
            query_embedding: emb.to_vec(),
            mask,
            program_source: c.program.clone(),
            validated: false,
            provenance: c.provenance.clone(),
        };
        batch.push((triple, &logs[&c.log_id]));
    }
    let admissions = kb.insert_batch(batch).map_err(data_err)?;
    let mut accepted = 0;
    for (c, adm) in cands.iter().zip(&admissions) {
        let rec = match adm {
            Admission::Accepted => {
                accepted += 1;
                json!({"triple_id": c.triple_id, "accepted": true})
            }
            Admission::Rejected(why) => {
                json!({"triple_id": c.triple_id, "accepted": false, "reason": why.to_string()})
            }
        };
        emit_json(out, &rec)?;
    }
    kb.save(dir)
        .map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
    emit_json(
        out,
        &json!({"candidates": cands.len(), "accepted": accepted, "size": kb.len(), "dir": dir}),
    )
}

fn kb_validate(cfg: &PipelineConfig, dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let dir = dir.unwrap_or(&cfg.paths.knowledge_base);
    let kb =
        load_kb(dir)?.ok_or_else(|| data_err(format!("no knowledge base in {}", dir.display())))?;
    let known = available_logs(cfg)?;
    let mut needed: Vec<String> = kb
        .triples()
        .iter()
        .map(|t| t.mask.log_id.clone())
        .filter(|id| known.contains(id))
        .collect();
    needed.sort();
    needed.dedup();
    let logs = load_logs(cfg, &needed)?;
    let checked: BTreeMap<String, bool> = kb.revalidate(&logs).into_iter().collect();
    let mut failed = 0;
    for t in kb.triples() {
        let status = match checked.get(&t.triple_id) {
            Some(true) => "ok",
            Some(false) => {
                failed += 1;
                "failed"
            }
            None => "unchecked",
        };
        emit_json(
            out,
            &json!({"triple_id": t.triple_id, "log_id": t.mask.log_id, "status": status}),
        )?;
    }
    emit_json(
        out,
        &json!({"triples": kb.len(), "checked": checked.len(), "failed": failed}),
    )?;
    if failed > 0 {
        return Err(data_err(format!(
            "{failed} triple(s) no longer reproduce their masks"
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    text_id: String,
    log_id: String,
    track_id: String,
    #[serde(default)]
    start_ns: Option<i64>,
    #[serde(default)]
    end_ns: Option<i64>,
}

fn clip(track: &Track, start: Option<i64>, end: Option<i64>) -> Result<Track> {
    let states = track
        .states
        .iter()
        .filter(|s| start.is_none_or(|a| s.ts_ns >= a) && end.is_none_or(|b| s.ts_ns <= b))
        .cloned()
        .collect();
    Track::new(track.track_id.clone(), track.category.clone(), states).map_err(data_err)
}

fn train_matcher(cfg: &PipelineConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let recs: Vec<PairRecord> = read_jsonl(&a.pairs)?;
    let store = load_store(cfg)?;
    let mut ids: Vec<String> = recs.iter().map(|r| r.log_id.clone()).collect();
    ids.sort();
    ids.dedup();
    let logs = load_logs(cfg, &ids)?;
    let mut pairs = Vec::with_capacity(recs.len());
    for r in &recs {
        let track = logs[&r.log_id]
            .track(&r.track_id)
            .ok_or_else(|| data_err(format!("log `{}` has no track `{}`", r.log_id, r.track_id)))?;
        let tokens = store
            .tokens(&r.text_id)
            .ok_or_else(|| data_err(format!("no token embeddings for text `{}`", r.text_id)))?;
        let rows: Vec<Vec<f64>> = tokens
            .iter()
            .map(|t| t.iter().map(|&x| f64::from(x)).collect())
            .collect();
        pairs.push(TrainingPair {
            text_id: r.text_id.clone(),
            track: clip(track, r.start_ns, r.end_ns)?,
            text_tokens: Mat::from_rows(&rows),
        });
    }
    let outcome = train(&pairs, &cfg.matcher, &cfg.train).map_err(|e| match e {
        scenmine_matcher::MatcherError::InvalidConfig(m) => config(m),
        other => data_err(other),
    })?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoint.clone());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(data_err)?;
    }
    checkpoint::save(&outcome.model, &cfg.train.loss, &path).map_err(data_err)?;
    if let Some(curve) = &a.curve {
        let mut buf = Vec::new();
        for s in &outcome.curve {
            serde_json::to_writer(&mut buf, s).map_err(data_err)?;
            buf.push(b'\n');
        }
        std::fs::write(curve, buf).map_err(data_err)?;
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    emit_json(
        out,
        &json!({
            "pairs": pairs.len(),
            "skipped": outcome.skipped,
            "steps": outcome.curve.len(),
            "first_loss": outcome.curve.first().map(|s| s.total),
            "last_loss": outcome.curve.last().map(|s| s.total),
            "checkpoint": path,
        }),
    )
}

#[derive(Debug, Deserialize)]
struct MaskRecord {
    log_id: String,
    #[serde(default)]
    mask: Vec<(String, i64)>,
    #[serde(default)]
    ranges: Option<Vec<(i64, i64)>>,
}

fn boxed(rec: Option<&MaskRecord>, log: &LogManifest) -> Result<BoxedMask> {
    let mut m = ScenarioMask::new(&log.log_id);
    for (id, ts) in rec.map(|r| r.mask.as_slice()).unwrap_or(&[]) {
        m.insert(id.clone(), *ts);
    }
    BoxedMask::from_mask(&m, log).map_err(data_err)
}

fn evaluate(cfg: &PipelineConfig, a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let index = |recs: Vec<MaskRecord>, what: &Path| -> Result<BTreeMap<String, MaskRecord>> {
        let mut m = BTreeMap::new();
        for r in recs {
            if m.contains_key(&r.log_id) {
                return Err(data_err(format!(
                    "{}: log `{}` appears twice",
                    what.display(),
                    r.log_id
                )));
            }
            m.insert(r.log_id.clone(), r);
        }
        Ok(m)
    };
    let pred = index(read_jsonl(&a.predictions)?, &a.predictions)?;
    let gt = index(read_jsonl(&a.ground_truth)?, &a.ground_truth)?;
    let ids: Vec<String> = gt
        .keys()
        .chain(pred.keys())
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let logs = load_logs(cfg, &ids)?;
    let mut inputs = Vec::with_capacity(ids.len());
    for id in &ids {
        let g = boxed(gt.get(id), &logs[id])?;
        let p = boxed(pred.get(id), &logs[id])?;
        let ranges = gt
            .get(id)
            .and_then(|r| r.ranges.clone())
            .unwrap_or_else(|| scenario_ranges(&g));
        inputs.push(LogEvalInput {
            log_id: id.clone(),
            pred: p,
            gt: g,
            ranges,
        });
    }
    let (per_log, summary) = evaluate_logs(&inputs, &cfg.metrics.alphas).map_err(data_err)?;
    if let Some(path) = &a.out {
        let mut buf = Vec::new();
        for m in &per_log {
            serde_json::to_writer(&mut buf, &json!({"record": "log", "metrics": m}))
                .map_err(data_err)?;
            buf.push(b'\n');
        }
        serde_json::to_writer(&mut buf, &json!({"record": "summary", "metrics": summary}))
            .map_err(data_err)?;
        buf.push(b'\n');
        std::fs::write(path, buf).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    }
    let width = ids.iter().map(String::len).max().unwrap_or(0).max(7);
    let mut t = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "log", "HOTA-T", "HOTA", "TS-F1", "Log-F1"
    );
    for m in &per_log {
        let decision = match (m.pred_positive, m.gt_positive) {
            (true, true) => "TP",
            (true, false) => "FP",
            (false, true) => "FN",
            (false, false) => "TN",
        };
        t += &format!(
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7}\n",
            m.log_id, m.hota_temporal, m.hota, m.timestamp.f1, decision
        );
    }
    t += &format!(
        "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}\n",
        "overall", summary.hota_temporal, summary.hota, summary.timestamp_f1, summary.log_f1
    );
    emit(out, &t)
}

fn inspect_prompt(cfg: PipelineConfig, q: &QueryArgs, out: &mut dyn Write) -> Result<()> {
    let kb = load_kb(&cfg.paths.knowledge_base)?;
    let store = if cfg.paths.embeddings.exists() {
        load_store(&cfg)?
    } else {
        scenmine_core::smeb::EmbeddingStore::new(1)
    };
    let lexicons = cfg.lexicons()?;
    let res = Resources {
        config: cfg,
        store,
        kb,
        matcher: None,
        lexicons,
    };
    let (ex, _) = retrieve_exemplars(&res, &q.query, q.query_id.as_deref())?;
    emit(out, &prompt_bundle(&res, &q.query, &ex)?.render())
}
