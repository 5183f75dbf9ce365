//! Few-shot prompt assembly.
//!
//! A rendered prompt is made of fixed sentinel-delimited sections so that
//! prompts can be diffed line by line:
//!
//! ```text
//! ### INPUTS ###
//! ## Atomic functions / ## Object categories / ## Query / ## Exemplars
//! ### INSTRUCTION ###
//! ### OUTPUT REQUIREMENTS ###
//! ### REPAIR ###            (only after a failed attempt)
//! ### END ###
//! ```

use serde::{Deserialize, Serialize};

use super::{Attempt, SynthError};

pub const DEFAULT_MAX_EXEMPLARS: usize = 10;

pub const NO_EXEMPLARS_MARKER: &str = "[no exemplars available: zero-shot mode]";

pub const DEFAULT_INSTRUCTION: &str = "You write scenario-query programs for autonomous-driving logs. \
Given the query above, write a program that selects exactly the objects and timestamps the query \
describes. Compose only the atomic functions listed above and follow the structure of the exemplars \
wherever they apply.";

pub const DEFAULT_OUTPUT_REQUIREMENTS: &str =
    "- Reply with a single fenced code block holding one program.\n\
- The program has the form output(<expression>).\n\
- Use only the listed functions and object categories; quote categories as strings.\n\
- Prefer the smallest program that expresses the query. Do not add prose inside the block.";

/// A retrieved `(query, program)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub query: String,
    pub program: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub catalog_doc: String,
    pub categories: Vec<String>,
    pub query: String,
    pub exemplars: Vec<Exemplar>,
    pub instruction: String,
    pub output_requirements: String,
}

/// Builds a bundle keeping at most `max_exemplars`, most similar first.
pub fn assemble_prompt(
    query: &str,
    exemplars: &[Exemplar],
    catalog_doc: &str,
    categories: &[String],
    max_exemplars: usize,
) -> Result<PromptBundle, SynthError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(SynthError::InvalidInput("query must not be empty".into()));
    }
    let mut ex = exemplars.to_vec();
    ex.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    ex.truncate(max_exemplars);
    Ok(PromptBundle {
        catalog_doc: catalog_doc.trim_end().to_string(),
        categories: categories.to_vec(),
        query: query.to_string(),
        exemplars: ex,
        instruction: DEFAULT_INSTRUCTION.to_string(),
        output_requirements: DEFAULT_OUTPUT_REQUIREMENTS.to_string(),
    })
}

impl PromptBundle {
    /// The base prompt.
    pub fn render(&self) -> String {
        self.render_with_history(&[])
    }

    /// The prompt for the attempt following `history`; every failed attempt
    /// is quoted with its error.
    pub fn render_with_history(&self, history: &[Attempt]) -> String {
        let mut s = String::new();
        s.push_str("### INPUTS ###\n");
        s.push_str("## Atomic functions\n");
        s.push_str(&self.catalog_doc);
        s.push_str("\n\n## Object categories\n");
        s.push_str(&self.categories.join(", "));
        s.push_str("\n\n## Query\n");
        s.push_str(&self.query);
        s.push_str("\n\n## Exemplars\n");
        if self.exemplars.is_empty() {
            s.push_str(NO_EXEMPLARS_MARKER);
            s.push('\n');
        }
        for (i, e) in self.exemplars.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            s.push_str(&format!(
                "Example {} (similarity {:.4})\n",
                i + 1,
                e.similarity
            ));
            s.push_str(&format!("Query: {}\n", e.query));
            s.push_str(&format!("Program:\n```\n{}\n```\n", e.program.trim_end()));
        }
        s.push_str("\n### INSTRUCTION ###\n");
        s.push_str(&self.instruction);
        s.push_str("\n\n### OUTPUT REQUIREMENTS ###\n");
        s.push_str(&self.output_requirements);
        s.push('\n');
        let failed: Vec<&Attempt> = history.iter().filter(|a| a.error.is_some()).collect();
        if !failed.is_empty() {
            s.push_str("\n### REPAIR ###\n");
            for a in &failed {
                s.push_str(&format!(
                    "Attempt {} returned:\n```\n{}\n```\n",
                    a.number,
                    a.program_source.trim_end()
                ));
                s.push_str(&format!(
                    "It failed with:\n{}\n\n",
                    a.error.as_deref().unwrap_or_default()
                ));
            }
            s.push_str("Correct the fault and return the full corrected program.\n");
        }
        s.push_str("### END ###\n");
        s
    }
}
