mod support;

use serde_json::{json, Value};

use scenmine_core::kb::KnowledgeBase;
use scenmine_testkit::planted::{PLANTED_PROGRAM, PLANTED_QUERY};
use support::{good_replies, json_lines, stderr, stdout, Workspace, DIM};

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn mine(ws: &Workspace, logs: &[&str], extra: &[&str]) -> std::process::Output {
    let mut args = vec!["mine", "--query", PLANTED_QUERY, "--query-id", "q_planted"];
    for l in logs {
        args.extend(["--log", l]);
    }
    args.extend(extra);
    ws.run(&args)
}

fn truth(ws: &Workspace, i: usize) -> Value {
    json!(ws.data.logs[i].truth.entries.iter().collect::<Vec<_>>())
}

#[test]
fn mine_recovers_the_planted_mask() {
    let ws = Workspace::planted(3, 2, &refs(&good_replies()));
    let out = mine(&ws, &["log_00", "log_01", "log_02"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 3);
    for (i, r) in lines.iter().enumerate() {
        assert_eq!(r["log_id"], format!("log_{i:02}"));
        assert_eq!(r["status"], "success");
        assert_eq!(r["mask"], truth(&ws, i));
        for stage in ["coarse", "retrieval", "synthesis", "rerank", "total"] {
            assert!(r["timings_ms"][stage].as_f64().unwrap() >= 0.0);
        }
    }
    let audit = std::fs::read_to_string(ws.root().join("audit.jsonl")).unwrap();
    let recs: Vec<Value> = audit
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for stage in ["coarse", "retrieval", "synthesis", "rerank", "summary"] {
        assert_eq!(
            recs.iter()
                .filter(|r| r["stage"] == stage && r["log_id"] == "log_00")
                .count()
                .min(1),
            1,
            "{stage}"
        );
    }
}

#[test]
fn empty_knowledge_base_takes_the_zero_shot_path() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    let out = mine(&ws, &["log_00"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json_lines(&out)[0]["exemplars"], json!([]));
    let audit = std::fs::read_to_string(ws.root().join("audit.jsonl")).unwrap();
    assert!(audit.contains("\"zero_shot\":true"));
}

#[test]
fn mining_is_reproducible_apart_from_timings() {
    let ws = Workspace::planted(4, 2, &refs(&good_replies()));
    let strip = |o: &std::process::Output| {
        json_lines(o)
            .into_iter()
            .map(|mut v| {
                v.as_object_mut().unwrap().remove("timings_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    let logs = ["log_03", "log_00", "log_02", "log_01"];
    let a = mine(&ws, &logs, &[]);
    let b = mine(&ws, &logs, &[]);
    assert_eq!(strip(&a), strip(&b));
    let order: Vec<Value> = strip(&a).iter().map(|v| v["log_id"].clone()).collect();
    assert_eq!(order, logs.iter().map(|l| json!(l)).collect::<Vec<_>>());
}

#[test]
fn unknown_log_lists_available_ids() {
    let ws = Workspace::planted(2, 1, &refs(&good_replies()));
    let out = mine(&ws, &["log_99"], &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(
        err.contains("log_99") && err.contains("log_00, log_01"),
        "{err}"
    );
}

#[test]
fn missing_embeddings_name_the_exporter() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    std::fs::remove_file(ws.root().join("embeddings/embeddings.smeb")).unwrap();
    let out = mine(&ws, &["log_00"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("embed-export"), "{}", stderr(&out));

    let ws = Workspace::with(2, 1, &refs(&good_replies()), |d| {
        let mut store = scenmine_core::smeb::EmbeddingStore::new(DIM);
        store.add_text("q_planted", &d.query_embedding).unwrap();
        d.store = store;
    });
    let out = mine(&ws, &["log_01"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("no frame embeddings for log `log_01`"),
        "{}",
        stderr(&out)
    );
    assert!(stderr(&out).contains("embed-export"));
}

#[test]
fn exhausted_repairs_exit_flagged() {
    let bad = ["```\noutput(is_flying(category(\"VEHICLE\")))\n```"; 5];
    let ws = Workspace::planted(1, 1, &bad);
    let out = mine(&ws, &["log_00"], &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert_eq!(r["status"], "flagged_for_review");
    assert_eq!(r["calls_made"], 5);
    assert_eq!(r["mask"], json!([]));
}

#[test]
fn config_errors_exit_two() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    let missing = ws.root().join("nope.toml");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_scenmine"))
        .args(["--config", missing.to_str().unwrap(), "catalog"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    ws.write_config("[coarse]\nwindow = -1.0\n");
    assert_eq!(ws.run(&["catalog"]).status.code(), Some(2));

    std::fs::write(ws.config(), "").unwrap();
    let out = mine(&ws, &["log_00"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("synth.client"));
}

#[test]
fn no_filter_evaluates_more() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    let a = &json_lines(&mine(&ws, &["log_00"], &[]))[0];
    let b = &json_lines(&mine(&ws, &["log_00"], &["--no-filter"]))[0];
    assert_eq!(a["mask"], b["mask"]);
    assert_eq!(b["region"], json!([[0.0, 30.0]]));
    assert!(a["work"]["total"].as_u64().unwrap() < b["work"]["total"].as_u64().unwrap());
}

#[test]
fn filter_reports_region_around_event() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    let (a, b) = ws.data.logs[0].event.unwrap();
    let out = ws.run(&[
        "filter",
        "--query",
        PLANTED_QUERY,
        "--query-id",
        "q_planted",
        "--all-logs",
        "--coarse-only",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert_eq!(r["top_windows"].as_array().unwrap().len(), 5);
    assert!(r.get("candidate_tracks").is_none());
    let region: Vec<(f64, f64)> = serde_json::from_value(r["region"].clone()).unwrap();
    assert!(
        region.iter().any(|&(x, y)| x <= a && b <= y),
        "{region:?} vs {a}..{b}"
    );

    let out = ws.run(&[
        "filter",
        "--query",
        PLANTED_QUERY,
        "--query-id",
        "q_planted",
        "--log",
        "log_00",
    ]);
    let r = &json_lines(&out)[0];
    assert!(r["candidate_points"].as_u64().unwrap() < r["total_points"].as_u64().unwrap());
}

fn candidates(ws: &Workspace) -> String {
    let mut lines = Vec::new();
    for (i, p) in ws.data.logs.iter().enumerate() {
        let mut mask: Vec<_> = p.truth.entries.iter().cloned().collect();
        if i == 1 {
            mask.pop();
        }
        lines.push(
            json!({
                "triple_id": format!("t{i}"),
                "query_text": PLANTED_QUERY,
                "log_id": p.log.log_id,
                "mask": mask,
                "program": PLANTED_PROGRAM,
                "query_id": "q_planted",
            })
            .to_string(),
        );
    }
    lines.join("\n")
}

#[test]
fn kb_build_gates_and_validate_rechecks() {
    let ws = Workspace::planted(3, 2, &refs(&good_replies()));
    std::fs::write(ws.root().join("cands.jsonl"), candidates(&ws)).unwrap();
    let out = ws.run(&["kb", "build", "--candidates", "cands.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let recs = json_lines(&out);
    let accepted: Vec<bool> = recs[..3]
        .iter()
        .map(|r| r["accepted"].as_bool().unwrap())
        .collect();
    assert_eq!(accepted, [true, false, true]);
    assert_eq!(recs[3]["size"], 2);
    let kb = KnowledgeBase::load(&ws.root().join("kb")).unwrap();
    assert_eq!(kb.len(), 2);

    let out = ws.run(&["kb", "validate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json_lines(&out).last().unwrap()["failed"], 0);

    let out = mine(&ws, &["log_00"], &[]);
    assert_eq!(
        json_lines(&out)[0]["exemplars"].as_array().unwrap().len(),
        2
    );

    let again = ws.run(&["kb", "build", "--candidates", "cands.jsonl", "--append"]);
    assert!(again.status.success());
    assert_eq!(json_lines(&again).last().unwrap()["size"], 2);

    std::fs::remove_file(ws.root().join("logs/log_00.jsonl")).unwrap();
    let log = scenmine_core::traj::LogManifest::new(
        "log_00",
        30.0,
        vec!["ring_front_center".into()],
        10.0,
        ws.data.logs[2].log.tracks.clone(),
    )
    .unwrap();
    scenmine_core::traj::save_log(&log, &ws.root().join("logs/log_00.jsonl")).unwrap();
    let out = ws.run(&["kb", "validate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("\"status\":\"failed\""));

    let triples = ws.root().join("kb/triples.jsonl");
    let text = std::fs::read_to_string(&triples).unwrap();
    std::fs::write(&triples, text.replace("VEHICLE", "BICYCLE")).unwrap();
    let out = ws.run(&["kb", "validate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn evaluate_prints_table_and_results_file() {
    let ws = Workspace::planted(3, 2, &refs(&good_replies()));
    let out = mine(&ws, &["log_00", "log_01", "log_02"], &[]);
    std::fs::write(ws.root().join("pred.jsonl"), stdout(&out)).unwrap();
    let gt: Vec<String> = ws
        .data
        .logs
        .iter()
        .map(|p| {
            json!({"log_id": p.log.log_id, "mask": p.truth.entries.iter().collect::<Vec<_>>()})
                .to_string()
        })
        .collect();
    std::fs::write(ws.root().join("gt.jsonl"), gt.join("\n")).unwrap();
    let out = ws.run(&[
        "evaluate",
        "--predictions",
        "pred.jsonl",
        "--ground-truth",
        "gt.jsonl",
        "--out",
        "res.jsonl",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("HOTA-T") && lines[0].find("HOTA-T") < lines[0].find("TS-F1"));
    assert!(lines[1].ends_with("TP") && lines[3].ends_with("TN"));
    assert!(lines[4].starts_with("overall"));
    for col in lines[4].split_whitespace().skip(1) {
        assert_eq!(col, "1.0000", "{table}");
    }
    let res = std::fs::read_to_string(ws.root().join("res.jsonl")).unwrap();
    let recs: Vec<Value> = res
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[3]["record"], "summary");
    assert_eq!(recs[3]["metrics"]["log_f1"], 1.0);

    std::fs::write(
        ws.root().join("pred.jsonl"),
        "{\"log_id\":\"log_00\",\"mask\":[]}\n",
    )
    .unwrap();
    let out = ws.run(&[
        "evaluate",
        "--predictions",
        "pred.jsonl",
        "--ground-truth",
        "gt.jsonl",
    ]);
    let last = stdout(&out).lines().last().unwrap().to_string();
    let log_f1: f64 = last.split_whitespace().last().unwrap().parse().unwrap();
    assert!((log_f1 - 0.0).abs() < 1e-12, "{last}");
}

#[test]
fn train_matcher_writes_a_checkpoint_used_for_ranking() {
    let ws = Workspace::with(2, 2, &refs(&good_replies()), |d| {
        for (id, seed) in [("q_planted", 1.0f32), ("t_static", -1.0)] {
            for pos in 0..3u32 {
                let v: Vec<f32> = (0..DIM)
                    .map(|j| seed * ((j as f32 + pos as f32) * 0.37).sin())
                    .collect();
                d.store.add_token(id, pos, &v).unwrap();
            }
        }
    });
    ws.write_config(&format!(
        "[matcher]\nff_dim = 12\ntext_dim = {DIM}\ntext_hidden = 8\nembed_dim = 6\nkey_dim = 4\n\
         [matcher.patch]\npatch_len = 4\npatch_stride = 2\ntoken_dim = 6\nlayers = 1\nheads = 2\nd_model = 8\n\
         [train]\nbatch_size = 4\nmax_steps = 3\nwarmup_epochs = 0\n"
    ));
    let pairs = [
        json!({"text_id": "q_planted", "log_id": "log_00", "track_id": "veh"}),
        json!({"text_id": "t_static", "log_id": "log_00", "track_id": "bus", "start_ns": 0, "end_ns": 5_000_000_000i64}),
        json!({"text_id": "q_planted", "log_id": "log_01", "track_id": "veh"}),
        json!({"text_id": "t_static", "log_id": "log_01", "track_id": "ped_behind"}),
    ];
    let text: Vec<String> = pairs.iter().map(Value::to_string).collect();
    std::fs::write(ws.root().join("pairs.jsonl"), text.join("\n")).unwrap();
    let out = ws.run(&[
        "train-matcher",
        "--pairs",
        "pairs.jsonl",
        "--curve",
        "curve.jsonl",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert_eq!(
        (r["pairs"].as_u64(), r["steps"].as_u64()),
        (Some(4), Some(3))
    );
    assert!(ws.root().join("checkpoints/matcher.smck").exists());
    assert_eq!(
        std::fs::read_to_string(ws.root().join("curve.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out = mine(&ws, &["log_00"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ranked = &json_lines(&out)[0]["ranked"];
    assert_eq!(ranked[0]["track_id"], "veh");
    assert!(ranked[0]["score"].as_f64().unwrap().is_finite());

    let bad = json!({"text_id": "missing", "log_id": "log_00", "track_id": "veh"}).to_string();
    std::fs::write(ws.root().join("pairs.jsonl"), bad).unwrap();
    assert_eq!(
        ws.run(&["train-matcher", "--pairs", "pairs.jsonl"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn catalog_prompt_and_config_commands() {
    let ws = Workspace::planted(1, 1, &refs(&good_replies()));
    let out = ws.run(&["catalog", "--json"]);
    let cat: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let names: Vec<&str> = cat["predicates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    for n in [
        "category",
        "has_in_front",
        "being_crossed_by",
        "and",
        "or",
        "not",
    ] {
        assert!(names.contains(&n), "{n}");
    }
    assert!(stdout(&ws.run(&["catalog"])).contains("has_in_front("));

    let out = ws.run(&["inspect", "prompt", "--query", PLANTED_QUERY]);
    assert!(out.status.success(), "{}", stderr(&out));
    let prompt = stdout(&out);
    assert!(prompt.contains("## Query\nvehicle with a pedestrian in front"));
    assert!(prompt.contains("### OUTPUT REQUIREMENTS ###"));

    let shown = stdout(&ws.run(&["config", "show"]));
    let cfg = scenmine_cli::PipelineConfig::from_toml(&shown).unwrap();
    assert_eq!(cfg.paths.logs, ws.root().join("logs"));
    let default = stdout(&ws.run(&["config", "default"]));
    assert_eq!(
        scenmine_cli::PipelineConfig::from_toml(&default).unwrap(),
        scenmine_cli::PipelineConfig::default()
    );
}
