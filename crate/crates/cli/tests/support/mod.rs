#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scenmine_core::traj::save_log;
use scenmine_testkit::planted::{planted_dataset, PlantedDataset, PLANTED_PROGRAM};
use tempfile::TempDir;

pub const DIM: usize = 16;

/// A scratch directory with planted logs, their embeddings and a config
/// whose client replays `replies`.
pub struct Workspace {
    pub dir: TempDir,
    pub data: PlantedDataset,
}

impl Workspace {
    pub fn planted(n_logs: usize, n_positive: usize, replies: &[&str]) -> Self {
        Self::with(n_logs, n_positive, replies, |_| {})
    }

    pub fn with(
        n_logs: usize,
        n_positive: usize,
        replies: &[&str],
        edit: impl FnOnce(&mut PlantedDataset),
    ) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut data = planted_dataset(n_logs, n_positive, 30.0, DIM, 7);
        edit(&mut data);
        let root = dir.path();
        std::fs::create_dir_all(root.join("logs")).unwrap();
        std::fs::create_dir_all(root.join("embeddings")).unwrap();
        for p in &data.logs {
            save_log(
                &p.log,
                &root.join("logs").join(format!("{}.jsonl", p.log.log_id)),
            )
            .unwrap();
        }
        data.store
            .save(
                &root.join("embeddings/embeddings.smeb"),
                &root.join("embeddings/index.jsonl"),
            )
            .unwrap();
        std::fs::write(
            root.join("replies.json"),
            serde_json::to_string(replies).unwrap(),
        )
        .unwrap();
        let ws = Self { dir, data };
        ws.write_config("");
        ws
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.root().join("scenmine.toml")
    }

    /// Writes the config with the script client and any extra TOML.
    pub fn write_config(&self, extra: &str) {
        let text = format!("[synth.client]\nkind = \"script\"\npath = \"replies.json\"\n{extra}");
        std::fs::write(self.config(), text).unwrap();
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_scenmine"))
            .arg("--config")
            .arg(self.config())
            .args(args)
            .current_dir(self.root())
            .output()
            .unwrap()
    }
}

pub fn good_replies() -> Vec<String> {
    vec![format!("```\n{PLANTED_PROGRAM}\n```")]
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json_lines(o: &Output) -> Vec<serde_json::Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
