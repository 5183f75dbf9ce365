//! Pipeline configuration: one TOML file with a section per stage. Every
//! key is optional and falls back to the defaults below; relative paths
//! are taken relative to the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scenmine_core::coarse::{CoarseConfig, Lexicons};
use scenmine_core::metrics::default_alphas;
use scenmine_core::synth::SynthConfig;
use scenmine_matcher::{MatcherConfig, TrainConfig};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `<log_id>.jsonl` track logs.
    pub logs: PathBuf,
    /// Frame and text embeddings (`SMEB`).
    pub embeddings: PathBuf,
    /// Sidecar index of `embeddings`.
    pub embedding_index: PathBuf,
    pub knowledge_base: PathBuf,
    pub checkpoint: PathBuf,
    /// Audit records are appended here.
    pub audit: PathBuf,
    pub lexicons: Option<LexiconPaths>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            logs: "logs".into(),
            embeddings: "embeddings/embeddings.smeb".into(),
            embedding_index: "embeddings/index.jsonl".into(),
            knowledge_base: "kb".into(),
            checkpoint: "checkpoints/matcher.smck".into(),
            audit: "audit.jsonl".into(),
            lexicons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconPaths {
    pub colors: PathBuf,
    pub entities: PathBuf,
    pub relations: PathBuf,
}

/// Where candidate programs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientConfig {
    #[default]
    None,
    /// A command that reads one JSON request line on stdin and prints a
    /// JSON response.
    Process {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// Canned replies: a JSON array of strings, replayed from the start for
    /// every query.
    Script { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    #[serde(flatten)]
    pub repair: SynthConfig,
    pub client: ClientConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            repair: SynthConfig::default(),
            client: ClientConfig::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Localization thresholds averaged by HOTA.
    pub alphas: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub coarse: CoarseConfig,
    pub synth: SynthSection,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for f in [
            &mut p.logs,
            &mut p.embeddings,
            &mut p.embedding_index,
            &mut p.knowledge_base,
            &mut p.checkpoint,
            &mut p.audit,
        ] {
            rebase(f, base);
        }
        if let Some(l) = &mut p.lexicons {
            for f in [&mut l.colors, &mut l.entities, &mut l.relations] {
                rebase(f, base);
            }
        }
        if let ClientConfig::Script { path } = &mut self.synth.client {
            rebase(path, base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.coarse;
        if !(c.window > 0.0 && c.stride > 0.0) {
            return Err(config("coarse.window and coarse.stride must be positive"));
        }
        if c.frames_per_view == 0 || c.top_k == 0 {
            return Err(config(
                "coarse.frames_per_view and coarse.top_k must be at least 1",
            ));
        }
        if !(c.merge_slack >= 0.0) {
            return Err(config("coarse.merge_slack must be non-negative"));
        }
        let s = &self.synth.repair;
        if s.max_calls == 0 || s.max_exemplars == 0 {
            return Err(config(
                "synth.max_calls and synth.max_exemplars must be at least 1",
            ));
        }
        if !(s.temperature >= 0.0) {
            return Err(config("synth.temperature must be non-negative"));
        }
        self.matcher
            .validate()
            .map_err(|e| config(format!("matcher: {e}")))?;
        self.train
            .loss
            .validate()
            .map_err(|e| config(format!("train.loss: {e}")))?;
        if self.train.batch_size == 0 {
            return Err(config("train.batch_size must be at least 1"));
        }
        let a = &self.metrics.alphas;
        if a.is_empty() || a.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return Err(config("metrics.alphas must be a non-empty list in (0, 1]"));
        }
        Ok(())
    }

    pub fn lexicons(&self) -> Result<Lexicons> {
        match &self.paths.lexicons {
            None => Ok(Lexicons::default()),
            Some(l) => Lexicons::load(&l.colors, &l.entities, &l.relations)
                .map_err(|e| config(format!("lexicons: {e}"))),
        }
    }
}

fn rebase(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}
