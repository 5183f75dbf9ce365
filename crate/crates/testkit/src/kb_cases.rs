//! Knowledge-base candidates with a known number of correct programs.

use rand::seq::SliceRandom;
use scenmine_core::dsl::{self, ScenarioMask};
use scenmine_core::kb::KnowledgeTriple;
use scenmine_core::traj::LogManifest;

use crate::dsl_oracle::universe;
use crate::gen::{random_log, random_program, random_vec};
use crate::rng;

pub fn triple(id: &str, emb: Vec<f32>, mask: ScenarioMask, program: &str) -> KnowledgeTriple {
    KnowledgeTriple {
        triple_id: id.into(),
        query_text: format!("query {id}"),
        query_embedding: emb,
        mask,
        program_source: program.into(),
        validated: false,
        provenance: "synthetic".into(),
    }
}

/// Twenty candidates over their own random logs; those with index below 12
/// carry a mask their program reproduces.
pub fn gate_candidates(seed: u64) -> (Vec<KnowledgeTriple>, Vec<LogManifest>) {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut logs = Vec::new();
    for i in 0..20 {
        let log = random_log(&mut r, &format!("kb{i}"), 8, 40);
        let src = random_program(&mut r, 3);
        let mut mask = dsl::evaluate(&dsl::parse(&src).unwrap(), &log);
        let program = if i < 12 {
            src
        } else if i % 4 == 0 {
            // unparseable program
            src.replacen("output(", "output((", 1)
        } else {
            // one point flipped
            let all: Vec<_> = universe(&log, None).into_iter().collect();
            let p = all.choose(&mut r).unwrap().clone();
            if !mask.entries.remove(&p) {
                mask.entries.insert(p);
            }
            src
        };
        out.push(triple(
            &format!("t{i:02}"),
            random_vec(&mut r, 16),
            mask,
            &program,
        ));
        logs.push(log);
    }
    (out, logs)
}
