//! Text-generation clients.
//!
//! Wire contract: a request `{prompt, temperature, max_tokens}` yields a
//! response `{text}`. [`ScriptedClient`] replays canned responses for tests;
//! [`ProcessClient`] sends the request as one JSON line to a child process
//! and reads the JSON response from its stdout.

use std::collections::VecDeque;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("script exhausted after {0} responses")]
    Exhausted(usize),
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError>;
}

/// One scripted reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Scripted {
    Text(String),
    Fail(ClientError),
    Panic(String),
}

/// Mock client consuming a script in order and recording every request.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    script: Mutex<VecDeque<Scripted>>,
    repeat_last: Option<Scripted>,
    calls: AtomicUsize,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_script(responses.into_iter().map(|s| Scripted::Text(s.into())))
    }

    pub fn from_script<I: IntoIterator<Item = Scripted>>(script: I) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            ..Self::default()
        }
    }

    /// Replays `reply` forever once the script runs out.
    pub fn repeating(mut self, reply: Scripted) -> Self {
        self.repeat_last = Some(reply);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().expect("poisoned").clone()
    }
}

impl TextGenerator for ScriptedClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("poisoned")
            .push(request.clone());
        let next = self.script.lock().expect("poisoned").pop_front();
        match next.or_else(|| self.repeat_last.clone()) {
            Some(Scripted::Text(text)) => Ok(GenerationResponse { text }),
            Some(Scripted::Fail(e)) => Err(e),
            Some(Scripted::Panic(msg)) => panic!("{msg}"),
            None => Err(ClientError::Exhausted(n)),
        }
    }
}

/// Runs an external command per request.
#[derive(Debug, Clone)]
pub struct ProcessClient {
    pub program: String,
    pub args: Vec<String>,
}

impl ProcessClient {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl TextGenerator for ProcessClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let t = |e: std::io::Error| ClientError::Transport(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(t)?;
        let body =
            serde_json::to_string(request).map_err(|e| ClientError::Transport(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin.write_all(body.as_bytes()).map_err(t)?;
            stdin.write_all(b"\n").map_err(t)?;
        }
        let out = child.wait_with_output().map_err(t)?;
        if !out.status.success() {
            return Err(ClientError::Transport(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        serde_json::from_slice(&out.stdout).map_err(|e| ClientError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> GenerationRequest {
        GenerationRequest {
            prompt: "p".into(),
            temperature: 0.2,
            max_tokens: 16,
        }
    }

    #[test]
    fn scripted_in_order_then_exhausted() {
        let c = ScriptedClient::new(["a", "b"]);
        assert_eq!(c.generate(&req()).unwrap().text, "a");
        assert_eq!(c.generate(&req()).unwrap().text, "b");
        assert_eq!(c.generate(&req()), Err(ClientError::Exhausted(2)));
        assert_eq!(c.calls(), 3);
        assert_eq!(c.requests().len(), 3);
    }

    #[cfg(unix)]
    #[test]
    fn process_client_roundtrip() {
        let c = ProcessClient::new(
            "sh",
            vec![
                "-c".into(),
                r#"cat >/dev/null; printf '{"text":"output(category(\"ANY\"))"}'"#.into(),
            ],
        );
        assert_eq!(
            c.generate(&req()).unwrap().text,
            r#"output(category("ANY"))"#
        );
        let bad = ProcessClient::new("sh", vec!["-c".into(), "cat >/dev/null; echo nope".into()]);
        assert!(matches!(
            bad.generate(&req()),
            Err(ClientError::Malformed(_))
        ));
        let gone = ProcessClient::new("/nonexistent/generator", vec![]);
        assert!(matches!(
            gone.generate(&req()),
            Err(ClientError::Transport(_))
        ));
    }
}
