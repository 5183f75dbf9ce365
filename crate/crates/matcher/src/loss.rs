//! Reference implementations of the matcher objectives on plain values.
//! Training uses the tape versions in [`crate::model`]; both agree.

use crate::tensor::{norm, Mat};
use crate::MatcherError;

/// Tolerance on the unit-norm precondition of [`global_infonce`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Multiple-instance loss. `z_neg[i]` holds the evidence of track `i`
/// against every other text in the batch.
pub fn mil_loss(z_pos: &[f64], z_neg: &[Vec<f64>], gamma: f64) -> Result<f64, MatcherError> {
    if !(gamma > 0.0) {
        return Err(MatcherError::InvalidConfig("gamma must be positive".into()));
    }
    if z_pos.len() != z_neg.len() {
        return Err(MatcherError::DimMismatch {
            what: "negative evidence rows",
            expected: z_pos.len(),
            found: z_neg.len(),
        });
    }
    if z_pos.is_empty() {
        return Err(MatcherError::InvalidConfig("empty batch".into()));
    }
    let mut total = 0.0;
    for (zp, zn) in z_pos.iter().zip(z_neg) {
        if !zp.is_finite() || zn.iter().any(|x| !x.is_finite()) {
            return Err(MatcherError::NonFinite("evidence score"));
        }
        let mut all = Vec::with_capacity(zn.len() + 1);
        all.push(zp / gamma);
        all.extend(zn.iter().map(|z| z / gamma));
        total += log_sum_exp(&all) - zp / gamma;
    }
    Ok(total / z_pos.len() as f64)
}

/// Symmetric contrastive loss on a matrix of already scaled similarities.
pub fn infonce_from_scaled(s: &Mat) -> Result<f64, MatcherError> {
    if s.rows != s.cols || s.rows == 0 {
        return Err(MatcherError::DimMismatch {
            what: "similarity matrix columns",
            expected: s.rows,
            found: s.cols,
        });
    }
    if !s.is_finite() {
        return Err(MatcherError::NonFinite("similarity"));
    }
    let n = s.rows;
    let t = s.transpose();
    let ce = |m: &Mat| {
        (0..n)
            .map(|i| log_sum_exp(m.row(i)) - m.at(i, i))
            .sum::<f64>()
            / n as f64
    };
    Ok(0.5 * (ce(s) + ce(&t)))
}

/// Symmetric InfoNCE over unit-norm pooled embeddings, `s = b a^T / tau`.
pub fn global_infonce(b_hat: &Mat, a_hat: &Mat, tau: f64) -> Result<f64, MatcherError> {
    if !(tau > 0.0) {
        return Err(MatcherError::InvalidConfig("tau must be positive".into()));
    }
    if b_hat.shape() != a_hat.shape() {
        return Err(MatcherError::DimMismatch {
            what: "embedding batch",
            expected: b_hat.rows,
            found: a_hat.rows,
        });
    }
    for m in [b_hat, a_hat] {
        for r in 0..m.rows {
            if (norm(m.row(r)) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(MatcherError::NotNormalized(r));
            }
        }
    }
    infonce_from_scaled(&b_hat.matmul_t(a_hat).scale(1.0 / tau))
}

pub fn total_loss(mil: f64, global: f64, lambda_mil: f64, lambda_global: f64) -> f64 {
    lambda_mil * mil + lambda_global * global
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mil_examples() {
        assert_eq!(mil_loss(&[2.5], &[vec![]], 0.1).unwrap(), 0.0);
        let v = mil_loss(&[1.0], &[vec![0.0]], 0.1).unwrap();
        let want = (-10.0f64).exp().ln_1p();
        assert!((v - want).abs() < 1e-15, "{v} vs {want}");
        let v = mil_loss(&[0.3, 0.3], &[vec![0.3; 3], vec![0.3; 3]], 0.1).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);
        assert!(mil_loss(&[f64::NAN], &[vec![]], 0.1).is_err());
    }

    #[test]
    fn infonce_examples() {
        let one = Mat::from_rows(&[[0.6, 0.8]]);
        assert_eq!(global_infonce(&one, &one, 0.07).unwrap(), 0.0);
        let s = Mat::filled(5, 5, 0.25);
        assert!((infonce_from_scaled(&s).unwrap() - 5.0f64.ln()).abs() < 1e-12);
        let s = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let want = (-1.0f64).exp().ln_1p();
        assert!((infonce_from_scaled(&s).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.3133).abs() < 1e-4);
        let bad = Mat::from_rows(&[[1.0, 1.0]]);
        assert!(matches!(
            global_infonce(&bad, &bad, 0.07),
            Err(MatcherError::NotNormalized(0))
        ));
    }

    #[test]
    fn weighted_total() {
        assert_eq!(total_loss(0.2, 0.3, 1.0, 1.0), 0.5);
        assert_eq!(total_loss(7.0, 0.3, 0.0, 2.0), 0.6);
    }
}
