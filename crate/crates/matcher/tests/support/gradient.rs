//! Finite-difference check of the batch objective.

use rand::Rng;
use scenmine_matcher::model::{batch_loss_and_grads, batch_loss_value, init_params, ParamSet};
use scenmine_matcher::{LossConfig, Mat, MatcherConfig};
use scenmine_testkit::fd::{central_gradient, relative_error};
use scenmine_testkit::rng;

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;

pub fn batch(cfg: &MatcherConfig, n: usize, seed: u64) -> (Vec<Mat>, Vec<Mat>) {
    let mut r = rng(seed);
    let p = cfg.patch.patch_len;
    let tracks = (0..n)
        .map(|_| {
            let len = r.gen_range(p..3 * p);
            Mat::from_vec(
                len,
                10,
                (0..len * 10).map(|_| r.gen_range(-1.5..1.5)).collect(),
            )
        })
        .collect();
    let texts = (0..n)
        .map(|_| {
            let len = r.gen_range(1..6);
            Mat::from_vec(
                len,
                cfg.text_dim,
                (0..len * cfg.text_dim)
                    .map(|_| r.gen_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect();
    (tracks, texts)
}

fn flatten(ps: &ParamSet) -> Vec<f64> {
    ps.iter()
        .flat_map(|p| p.value.data.iter().copied())
        .collect()
}

fn unflatten(template: &ParamSet, x: &[f64]) -> ParamSet {
    let mut out = template.clone();
    let mut k = 0;
    for p in out.iter_mut() {
        let n = p.value.data.len();
        p.value.data.copy_from_slice(&x[k..k + n]);
        k += n;
    }
    out
}

/// Worst relative error over every parameter scalar, for a batch of four.
pub fn worst_error(cfg: &MatcherConfig, loss: &LossConfig, seed: u64) -> (f64, String) {
    let params = init_params(cfg, seed);
    let (tracks, texts) = batch(cfg, 4, seed ^ 0x9e37);
    let (_, grads) = batch_loss_and_grads(cfg, &params, &tracks, &texts, loss).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data.iter().copied()).collect();
    let names: Vec<String> = params
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.name.clone(), p.value.data.len()))
        .collect();
    let x = flatten(&params);
    let numeric = central_gradient(
        |v| {
            batch_loss_value(cfg, &unflatten(&params, v), &tracks, &texts, loss)
                .unwrap()
                .total
        },
        &x,
        STEP,
    );
    let mut worst = (0.0, String::new());
    for i in 0..x.len() {
        if names[i].ends_with(".attn.k.b") {
            // softmax rows are shift invariant, so key biases get no gradient
            // and the difference quotient is pure rounding noise
            if analytic[i].abs() < 1e-12 && numeric[i].abs() < 1e-8 {
                continue;
            }
            return (
                f64::INFINITY,
                format!(
                    "{} should be flat (a={:e}, n={:e})",
                    names[i], analytic[i], numeric[i]
                ),
            );
        }
        let e = relative_error(analytic[i], numeric[i], FLOOR);
        if e > worst.0 {
            worst = (
                e,
                format!("{} (a={:e}, n={:e})", names[i], analytic[i], numeric[i]),
            );
        }
    }
    worst
}
