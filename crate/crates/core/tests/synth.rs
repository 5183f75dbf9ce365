use std::path::PathBuf;

use proptest::prelude::*;
use scenmine_core::dsl;
use scenmine_core::synth::{
    repair_candidate, repair_loop, ClientError, Exemplar, ProcessClient, Scripted, ScriptedClient,
    SynthConfig, SynthesisStatus, TextGenerator, NO_EXEMPLARS_MARKER,
};
use scenmine_testkit::gen::random_log;
use scenmine_testkit::planted::{planted_dataset, PLANTED_PROGRAM, PLANTED_QUERY};
use scenmine_testkit::repair::{
    always_failing_transcript, catalog_bundle, golden_bundle, BROKEN_REPLIES,
};
use scenmine_testkit::rng;

const GOOD: &str = "```\noutput(category(\"VEHICLE\"))\n```";

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/always_failing_prompts.txt")
}

#[test]
fn succeeds_first_time() {
    let log = random_log(&mut rng(1), "l", 5, 20);
    let client = ScriptedClient::new([GOOD]);
    let out = repair_loop(&client, &golden_bundle(), &log, &SynthConfig::default()).unwrap();
    assert_eq!(out.status, SynthesisStatus::Success);
    assert_eq!((out.calls_made, client.calls()), (1, 1));
    assert!(!client.requests()[0].prompt.contains("### REPAIR ###"));
}

#[test]
fn failing_twice_succeeds_on_third_attempt() {
    let log = random_log(&mut rng(2), "l", 5, 20);
    let client = ScriptedClient::new([BROKEN_REPLIES[0], BROKEN_REPLIES[2], GOOD]);
    let out = repair_loop(&client, &golden_bundle(), &log, &SynthConfig::default()).unwrap();
    assert!(out.is_success());
    assert_eq!(out.calls_made, 3);
    assert_eq!(out.attempts.len(), 3);
    assert_eq!(client.calls(), 3);
    let third = &client.requests()[2].prompt;
    assert!(third.contains(out.attempts[0].error.as_ref().unwrap()));
    assert!(third.contains(out.attempts[1].error.as_ref().unwrap()));
    assert_eq!(
        out.mask.unwrap(),
        dsl::evaluate(&dsl::parse("output(category(\"VEHICLE\"))").unwrap(), &log)
    );
}

#[test]
fn always_failing_is_flagged_and_matches_golden() {
    let log = random_log(&mut rng(3), "l", 5, 20);
    let (out, client, text) = always_failing_transcript(&log);
    assert_eq!(out.status, SynthesisStatus::FlaggedForReview);
    assert_eq!(client.calls(), 5);
    let errors: Vec<&str> = out
        .attempts
        .iter()
        .map(|a| a.error.as_deref().unwrap())
        .collect();
    assert_eq!(errors.len(), 5);
    let mut distinct = errors.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), 5);
    let reqs = client.requests();
    for (i, r) in reqs.iter().enumerate() {
        for (j, e) in errors.iter().enumerate() {
            assert_eq!(
                r.prompt.contains(e),
                j < i,
                "request {} error {}",
                i + 1,
                j + 1
            );
        }
    }
    let path = golden_path();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden =
        std::fs::read_to_string(&path).expect("golden file missing; rerun with UPDATE_GOLDEN=1");
    assert_eq!(text, golden);
}

#[test]
fn client_failures_count_against_the_budget() {
    let log = random_log(&mut rng(4), "l", 5, 20);
    let client = ScriptedClient::from_script([
        Scripted::Fail(ClientError::Transport("connection reset".into())),
        Scripted::Panic("boom".into()),
        Scripted::Text(String::new()),
    ])
    .repeating(Scripted::Fail(ClientError::Malformed("no text".into())));
    let out = repair_loop(&client, &golden_bundle(), &log, &SynthConfig::default()).unwrap();
    assert_eq!(out.status, SynthesisStatus::FlaggedForReview);
    assert_eq!(client.calls(), 5);
    assert!(out.attempts[1].error.as_ref().unwrap().contains("boom"));
}

#[test]
fn mismatch_feedback_drives_candidate_repair() {
    let ds = planted_dataset(1, 1, 12.0, 8, 5);
    let pl = &ds.logs[0];
    let client = ScriptedClient::new([
        "```\noutput(category(\"VEHICLE\"))\n```".to_string(),
        format!("```\n{PLANTED_PROGRAM}\n```"),
    ]);
    let out = repair_candidate(
        &client,
        &catalog_bundle(PLANTED_QUERY, &[]),
        &pl.log,
        &pl.truth,
        &SynthConfig::default(),
    )
    .unwrap();
    assert!(out.is_success());
    assert_eq!(out.calls_made, 2);
    assert!(out.attempts[0]
        .error
        .as_ref()
        .unwrap()
        .starts_with("evaluation mismatch"));
    assert!(client.requests()[1].prompt.contains("evaluation mismatch"));
    assert_eq!(out.mask.unwrap(), pl.truth);
}

#[test]
fn zero_shot_prompt_still_completes() {
    let log = random_log(&mut rng(6), "l", 5, 20);
    let bundle = catalog_bundle("cars", &[]);
    assert!(bundle.render().contains(NO_EXEMPLARS_MARKER));
    let out = repair_loop(
        &ScriptedClient::new([GOOD]),
        &bundle,
        &log,
        &SynthConfig::default(),
    )
    .unwrap();
    assert!(out.is_success());
}

#[test]
fn temperature_and_budget_come_from_config() {
    let log = random_log(&mut rng(7), "l", 5, 20);
    let cfg = SynthConfig {
        max_calls: 2,
        temperature: 0.7,
        ..SynthConfig::default()
    };
    let client = ScriptedClient::new(BROKEN_REPLIES);
    let out = repair_loop(&client, &golden_bundle(), &log, &cfg).unwrap();
    assert_eq!(out.calls_made, 2);
    assert!(client.requests().iter().all(|r| r.temperature == 0.7));
    assert!(repair_loop(
        &client,
        &golden_bundle(),
        &log,
        &SynthConfig {
            max_calls: 0,
            ..cfg
        }
    )
    .is_err());
}

#[test]
fn exemplars_appear_most_similar_first() {
    let ex: Vec<Exemplar> = (0..12)
        .map(|i| Exemplar {
            query: format!("exemplar query {i:02}"),
            program: "output(category(\"ANY\"))".into(),
            similarity: i as f64 / 12.0,
        })
        .collect();
    let p = catalog_bundle("q", &ex).render();
    assert!(!p.contains("exemplar query 00") && !p.contains("exemplar query 01"));
    let pos: Vec<usize> = (2..12)
        .rev()
        .map(|i| p.find(&format!("exemplar query {i:02}")).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn audit_records_cover_every_attempt() {
    let log = random_log(&mut rng(8), "l", 5, 20);
    let (out, _, _) = always_failing_transcript(&log);
    let mut buf = Vec::new();
    out.write_audit("q", &mut buf).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[5]["status"], "flagged_for_review");
}

#[cfg(unix)]
#[test]
fn process_client_round_trip() {
    let script = r#"read line; printf '{"text":"```\\noutput(category(\\"ANY\\"))\\n```"}'"#;
    let client = ProcessClient::new("sh", vec!["-c".into(), script.into()]);
    let log = random_log(&mut rng(9), "l", 3, 10);
    let out = repair_loop(&client, &golden_bundle(), &log, &SynthConfig::default()).unwrap();
    assert!(out.is_success(), "{:?}", out.attempts);
    let broken = ProcessClient::new("sh", vec!["-c".into(), "read line; echo not json".into()]);
    let req = scenmine_core::synth::GenerationRequest {
        prompt: "p".into(),
        temperature: 0.2,
        max_tokens: 8,
    };
    assert!(matches!(
        broken.generate(&req),
        Err(ClientError::Malformed(_))
    ));
}

fn reply() -> impl Strategy<Value = Scripted> {
    prop_oneof![
        "[ -~]{0,40}".prop_map(Scripted::Text),
        "[a-z_]{1,12}".prop_map(|s| Scripted::Text(format!("```\noutput({s}(\n```"))),
        Just(Scripted::Text(
            "```\noutput(category(\"VEHICLE\"))\n```".into()
        )),
        Just(Scripted::Fail(ClientError::Transport("timeout".into()))),
        Just(Scripted::Panic("adversarial".into())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn never_exceeds_call_budget(script in prop::collection::vec(reply(), 0..12), budget in 1usize..8) {
        let log = random_log(&mut rng(10), "l", 4, 15);
        let client = ScriptedClient::from_script(script).repeating(Scripted::Text("garbage".into()));
        let cfg = SynthConfig { max_calls: budget, ..SynthConfig::default() };
        let out = repair_loop(&client, &golden_bundle(), &log, &cfg).unwrap();
        prop_assert!(client.calls() <= budget);
        prop_assert_eq!(out.calls_made, client.calls());
        prop_assert_eq!(out.attempts.len(), client.calls());
        if out.is_success() {
            prop_assert!(out.mask.is_some());
        } else {
            prop_assert_eq!(client.calls(), budget);
        }
    }
}
