//! Seeded mini-batch training with AdamW under a warmup plus cosine schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenmine_core::traj::{fit_norm_stats, Track};

use crate::config::{MatcherConfig, TrainConfig};
use crate::model::{batch_loss_and_grads, init_params, track_features, Matcher, ParamSet};
use crate::tensor::Mat;
use crate::MatcherError;

/// A track and the token embeddings of a description it satisfies. Pairs
/// sharing `text_id` share a description.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub text_id: String,
    pub track: Track,
    pub text_tokens: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub lr: f64,
    pub batch: usize,
    pub total: f64,
    pub mil: f64,
    pub global: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Matcher,
    pub curve: Vec<StepLoss>,
    /// Pairs dropped because the track is shorter than one patch.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One epoch's visiting order: pairs are shuffled within their description
/// group and groups are interleaved round-robin, so consecutive pairs share
/// a description only when fewer groups remain than the batch size.
pub fn epoch_order(text_ids: &[&str], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in text_ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let mut lists: Vec<Vec<usize>> = groups.into_values().collect();
    for l in &mut lists {
        l.shuffle(rng);
    }
    lists.shuffle(rng);
    let mut out = Vec::with_capacity(text_ids.len());
    let mut round = 0;
    while out.len() < text_ids.len() {
        for l in &lists {
            if let Some(&i) = l.get(round) {
                out.push(i);
            }
        }
        round += 1;
    }
    out
}

struct AdamW {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl AdamW {
    fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Mat> = params
            .iter()
            .map(|p| Mat::zeros(p.value.rows, p.value.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Mat], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                let mut upd = mhat / (vhat.sqrt() + cfg.adam_eps);
                if p.decay {
                    upd += cfg.weight_decay * p.value.data[i];
                }
                p.value.data[i] -= lr * upd;
            }
        }
    }
}

/// Trains a fresh matcher on `pairs`. Normalization statistics are fit on
/// the training tracks. With both loss weights zero the objective is
/// constant and the initial parameters are returned untouched.
pub fn train(
    pairs: &[TrainingPair],
    model_cfg: &MatcherConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, MatcherError> {
    model_cfg.validate()?;
    cfg.loss.validate()?;
    if cfg.batch_size == 0 || cfg.learning_rate < 0.0 || cfg.weight_decay < 0.0 {
        return Err(MatcherError::InvalidConfig(
            "batch size must be positive and rates non-negative".into(),
        ));
    }
    let p = &model_cfg.patch;
    let kept: Vec<&TrainingPair> = pairs
        .iter()
        .filter(|x| x.track.len() >= p.patch_len)
        .collect();
    let skipped = pairs.len() - kept.len();
    if kept.len() < 2 {
        return Err(MatcherError::InvalidConfig(format!(
            "need at least 2 usable training pairs, have {}",
            kept.len()
        )));
    }
    let mut warnings = Vec::new();
    if skipped > 0 {
        warnings.push(format!(
            "skipped {skipped} pairs with tracks shorter than {} frames",
            p.patch_len
        ));
    }
    if cfg.batch_size < 2 && cfg.loss.lambda_global > 0.0 {
        warnings.push("batch size below 2: the contrastive term has no negatives".into());
    }
    let norm = fit_norm_stats(kept.iter().map(|x| &x.track))
        .map_err(|e| MatcherError::InvalidConfig(e.to_string()))?;
    let feats: Vec<Mat> = kept
        .iter()
        .map(|x| track_features(&x.track, &norm))
        .collect();
    let ids: Vec<&str> = kept.iter().map(|x| x.text_id.as_str()).collect();

    let mut model = Matcher {
        config: model_cfg.clone(),
        params: init_params(model_cfg, cfg.seed),
        norm,
    };
    let mut curve = Vec::new();
    if cfg.loss.lambda_mil == 0.0 && cfg.loss.lambda_global == 0.0 {
        warnings.push("both loss weights are zero: nothing to optimize".into());
        return Ok(TrainOutcome {
            model,
            curve,
            skipped,
            warnings,
        });
    }

    let per_epoch = kept.len().div_ceil(cfg.batch_size);
    let total = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let warmup = (cfg.warmup_epochs * per_epoch).min(total / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ba7c);
    let mut opt = AdamW::new(&model.params);
    let mut step = 0;
    while step < total {
        let order = epoch_order(&ids, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break;
            }
            let tracks: Vec<Mat> = chunk.iter().map(|&i| feats[i].clone()).collect();
            let texts: Vec<Mat> = chunk.iter().map(|&i| kept[i].text_tokens.clone()).collect();
            let (vals, grads) =
                batch_loss_and_grads(&model.config, &model.params, &tracks, &texts, &cfg.loss)?;
            if !vals.total.is_finite() {
                return Err(MatcherError::NonFinite("training loss"));
            }
            let lr = learning_rate(step, total, warmup, cfg.learning_rate);
            opt.step(&mut model.params, &grads, lr, cfg);
            curve.push(StepLoss {
                step,
                lr,
                batch: chunk.len(),
                total: vals.total,
                mil: vals.mil,
                global: vals.global,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome {
        model,
        curve,
        skipped,
        warnings,
    })
}
