//! Program synthesis with a bounded repair loop.
//!
//! Each call to the text generator yields a candidate program which is
//! parsed and executed. A failure is recorded together with its error string
//! and quoted back in the next prompt, until a program runs or the call
//! budget is spent, in which case the query is flagged for review.

pub mod client;
pub mod prompt;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    ClientError, GenerationRequest, GenerationResponse, ProcessClient, Scripted, ScriptedClient,
    TextGenerator,
};
pub use prompt::{assemble_prompt, Exemplar, PromptBundle, NO_EXEMPLARS_MARKER};

use crate::dsl::{self, EvalOptions, ScenarioMask, ScenarioProgram};
use crate::kb::RejectReason;
use crate::traj::LogManifest;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty response: no program to extract")]
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Maximum number of generator calls per query.
    pub max_calls: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_exemplars: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_calls: 5,
            temperature: 0.2,
            max_tokens: 1024,
            max_exemplars: prompt::DEFAULT_MAX_EXEMPLARS,
        }
    }
}

/// One generator call and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub number: usize,
    pub prompt: String,
    pub response: Option<String>,
    pub program_source: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisStatus {
    Success,
    FlaggedForReview,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub status: SynthesisStatus,
    pub program: Option<ScenarioProgram>,
    pub mask: Option<ScenarioMask>,
    pub attempts: Vec<Attempt>,
    pub calls_made: usize,
}

impl SynthesisOutcome {
    pub fn is_success(&self) -> bool {
        self.status == SynthesisStatus::Success
    }

    /// One audit record per attempt followed by a summary record.
    pub fn audit_records(&self, query: &str) -> Vec<serde_json::Value> {
        let mut out: Vec<serde_json::Value> = self
            .attempts
            .iter()
            .map(|a| {
                serde_json::json!({
                    "record": "attempt",
                    "query": query,
                    "attempt": a.number,
                    "prompt": a.prompt,
                    "response": a.response,
                    "program": a.program_source,
                    "error": a.error,
                })
            })
            .collect();
        out.push(serde_json::json!({
            "record": "outcome",
            "query": query,
            "status": self.status,
            "calls_made": self.calls_made,
            "program": self.program.as_ref().map(|p| p.source.clone()),
            "mask_size": self.mask.as_ref().map(ScenarioMask::len),
        }));
        out
    }

    pub fn write_audit<W: Write>(&self, query: &str, mut w: W) -> std::io::Result<()> {
        for rec in self.audit_records(query) {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// First fenced code block of `raw` if there is one, else the trimmed text.
/// The info string after the opening fence is dropped.
pub fn extract_program(raw: &str) -> Result<String, SynthError> {
    let text = match raw.find("```") {
        Some(open) => {
            let after = &raw[open + 3..];
            let body = match after.find('\n') {
                Some(nl) if !after[..nl].contains("```") => &after[nl + 1..],
                _ => after,
            };
            match body.find("```") {
                Some(close) => &body[..close],
                None => body,
            }
        }
        None => raw,
    };
    let text = text.trim();
    if text.is_empty() {
        Err(SynthError::EmptyResponse)
    } else {
        Ok(text.to_string())
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Runs the loop with a caller-supplied execution step. `execute` returns the
/// selected mask, or an error string to feed back into the next prompt.
pub fn repair_loop_with<F>(
    client: &dyn TextGenerator,
    bundle: &PromptBundle,
    cfg: &SynthConfig,
    mut execute: F,
) -> Result<SynthesisOutcome, SynthError>
where
    F: FnMut(&ScenarioProgram) -> Result<ScenarioMask, String>,
{
    if cfg.max_calls == 0 {
        return Err(SynthError::InvalidInput(
            "call budget must be at least 1".into(),
        ));
    }
    let mut attempts: Vec<Attempt> = Vec::new();
    for number in 1..=cfg.max_calls {
        let prompt = bundle.render_with_history(&attempts);
        let request = GenerationRequest {
            prompt: prompt.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        };
        let reply =
            catch_unwind(AssertUnwindSafe(|| client.generate(&request))).unwrap_or_else(|p| {
                Err(ClientError::Transport(format!(
                    "client panicked: {}",
                    panic_message(p)
                )))
            });
        let mut attempt = Attempt {
            number,
            prompt,
            response: None,
            program_source: String::new(),
            error: None,
        };
        let text = match reply {
            Ok(r) => r.text,
            Err(e) => {
                attempt.error = Some(format!("client error: {e}"));
                attempts.push(attempt);
                continue;
            }
        };
        attempt.response = Some(text.clone());
        let source = match extract_program(&text) {
            Ok(s) => s,
            Err(e) => {
                attempt.error = Some(format!("extraction error: {e}"));
                attempts.push(attempt);
                continue;
            }
        };
        attempt.program_source = source.clone();
        let program = match dsl::parse(&source) {
            Ok(p) => p,
            Err(e) => {
                attempt.error = Some(e.to_string());
                attempts.push(attempt);
                continue;
            }
        };
        match execute(&program) {
            Ok(mask) => {
                attempts.push(attempt);
                return Ok(SynthesisOutcome {
                    status: SynthesisStatus::Success,
                    program: Some(program),
                    mask: Some(mask),
                    calls_made: number,
                    attempts,
                });
            }
            Err(e) => {
                attempt.error = Some(e);
                attempts.push(attempt);
            }
        }
    }
    Ok(SynthesisOutcome {
        status: SynthesisStatus::FlaggedForReview,
        program: None,
        mask: None,
        calls_made: attempts.len(),
        attempts,
    })
}

/// Synthesizes a program for `bundle.query` that runs on `log`.
pub fn repair_loop(
    client: &dyn TextGenerator,
    bundle: &PromptBundle,
    log: &LogManifest,
    cfg: &SynthConfig,
) -> Result<SynthesisOutcome, SynthError> {
    repair_loop_in(client, bundle, log, &EvalOptions::default(), cfg)
}

/// Like [`repair_loop`], evaluating only inside `opts.domain`.
pub fn repair_loop_in(
    client: &dyn TextGenerator,
    bundle: &PromptBundle,
    log: &LogManifest,
    opts: &EvalOptions,
    cfg: &SynthConfig,
) -> Result<SynthesisOutcome, SynthError> {
    repair_loop_with(client, bundle, cfg, |p| {
        Ok(dsl::evaluate_with(p, log, opts).0)
    })
}

/// Repairs a knowledge-base candidate: a program counts as working only if it
/// reproduces `expected` exactly; mismatches are fed back as errors.
pub fn repair_candidate(
    client: &dyn TextGenerator,
    bundle: &PromptBundle,
    log: &LogManifest,
    expected: &ScenarioMask,
    cfg: &SynthConfig,
) -> Result<SynthesisOutcome, SynthError> {
    repair_loop_with(client, bundle, cfg, |p| {
        let got = dsl::evaluate(p, log);
        let missing = expected.entries.difference(&got.entries).count();
        let extra = got.entries.difference(&expected.entries).count();
        if missing + extra == 0 {
            Ok(got)
        } else {
            Err(RejectReason::Mismatch {
                diff: missing + extra,
                missing,
                extra,
            }
            .to_string())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_rules() {
        assert_eq!(
            extract_program("```\noutput(a())\n```").unwrap(),
            "output(a())"
        );
        assert_eq!(
            extract_program("Here:\n```dsl\nA\n```\nand\n```\nB\n```").unwrap(),
            "A"
        );
        assert_eq!(extract_program("  just prose \n").unwrap(), "just prose");
        assert_eq!(extract_program("```x```").unwrap(), "x");
        assert_eq!(extract_program("   "), Err(SynthError::EmptyResponse));
        assert_eq!(
            extract_program("```\n\n```"),
            Err(SynthError::EmptyResponse)
        );
    }
}
