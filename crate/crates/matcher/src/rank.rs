//! Re-ranking of candidate tracks against a query.

use scenmine_core::traj::Track;

use crate::model::Matcher;
use crate::tensor::Mat;
use crate::MatcherError;

/// Candidates by descending blended score, ties by track id. Tracks shorter
/// than one patch score negative infinity and come last.
pub fn rank_candidates(
    model: &Matcher,
    query_tokens: &Mat,
    candidates: &[&Track],
) -> Result<Vec<(String, f64)>, MatcherError> {
    let text = model.encode_text(query_tokens)?;
    let mut out = Vec::with_capacity(candidates.len());
    for t in candidates {
        let score = if t.len() < model.config.patch.patch_len {
            f64::NEG_INFINITY
        } else {
            model.pair_score(&model.encode_track(t)?, &text)
        };
        out.push((t.track_id.clone(), score));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}
