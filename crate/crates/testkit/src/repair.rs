//! Fixed repair-loop scenarios shared by the synthesis tests and the
//! acceptance suite.

use scenmine_core::dsl::default_catalog;
use scenmine_core::synth::{
    assemble_prompt, repair_loop, Exemplar, PromptBundle, ScriptedClient, SynthConfig,
    SynthesisOutcome,
};
use scenmine_core::traj::LogManifest;

/// Five broken replies, each failing for a different reason.
pub const BROKEN_REPLIES: [&str; 5] = [
    "```\noutput(is_flying(category(\"VEHICLE\")))\n```",
    "```\noutput(has_in_front(category(\"VEHICLE\")))\n```",
    "```\noutput(category(\"UFO\"))\n```",
    "```\noutput(and(category(\"VEHICLE\"), stationary()\n```",
    "I cannot write that program.\n```\n\n```",
];

pub const GOLDEN_QUERY: &str = "vehicle with a pedestrian in front";

/// Prompt with a short stand-in for the function catalog, so the golden
/// transcript stays readable.
pub fn golden_bundle() -> PromptBundle {
    let cats: Vec<String> = ["VEHICLE", "PEDESTRIAN"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ex = [Exemplar {
        query: "stopped vehicle".into(),
        program: "output(and(category(\"VEHICLE\"), stationary()))".into(),
        similarity: 0.8125,
    }];
    assemble_prompt(GOLDEN_QUERY, &ex, "category(name), stationary(max_speed=0.5), has_in_front(subject, related, within=10.0, lateral_tolerance=2.0)", &cats, 10)
        .unwrap()
}

/// Real prompt over the default catalog.
pub fn catalog_bundle(query: &str, exemplars: &[Exemplar]) -> PromptBundle {
    let c = default_catalog();
    assemble_prompt(
        query,
        exemplars,
        &c.render_doc(),
        &c.vocabulary.categories,
        10,
    )
    .unwrap()
}

/// Runs the always-failing scenario and renders every request the client
/// received, one block per call.
pub fn always_failing_transcript(log: &LogManifest) -> (SynthesisOutcome, ScriptedClient, String) {
    let client = ScriptedClient::new(BROKEN_REPLIES);
    let out = repair_loop(&client, &golden_bundle(), log, &SynthConfig::default()).unwrap();
    let mut text = String::new();
    for (i, r) in client.requests().iter().enumerate() {
        text.push_str(&format!(
            "=== request {} (temperature {}) ===\n",
            i + 1,
            r.temperature
        ));
        text.push_str(&r.prompt);
    }
    text.push_str("=== errors ===\n");
    for a in &out.attempts {
        text.push_str(&format!(
            "{}: {}\n",
            a.number,
            a.error.as_deref().unwrap_or("-")
        ));
    }
    (out, client, text)
}
