//! Toy behaviour retrieval: eight motion classes, twelve training and four
//! held-out tracks per class.

use scenmine_matcher::model::Matcher;
use scenmine_matcher::tensor::dot;
use scenmine_matcher::train::{train, TrainOutcome, TrainingPair};
use scenmine_matcher::{EvidencePooling, LossConfig, Mat, MatcherConfig, PatchConfig, TrainConfig};
use scenmine_testkit::corpus::{toy_corpus, ToyCorpus};

pub const PER_CLASS: usize = 16;
pub const HELD_OUT: usize = 4;
pub const TOKEN_DIM: usize = 16;

pub fn toy_config() -> MatcherConfig {
    MatcherConfig {
        patch: PatchConfig {
            patch_len: 16,
            patch_stride: 8,
            token_dim: 64,
            layers: 2,
            heads: 4,
            d_model: 64,
        },
        ff_dim: 128,
        text_dim: TOKEN_DIM,
        text_hidden: 32,
        embed_dim: 64,
        key_dim: 16,
        evidence: EvidencePooling::Max,
        rank_alpha: 0.5,
    }
}

pub fn toy_training(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 3e-3,
        warmup_epochs: 1,
        max_steps: Some(200),
        seed,
        loss: LossConfig::default(),
        ..TrainConfig::default()
    }
}

pub fn caption(c: &ToyCorpus, class: usize) -> Mat {
    Mat::from_rows(&c.captions[class])
}

pub fn split(c: &ToyCorpus) -> (Vec<TrainingPair>, Vec<(usize, usize)>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, s) in c.samples.iter().enumerate() {
        if i / 8 < PER_CLASS - HELD_OUT {
            train.push(TrainingPair {
                text_id: format!("class{}", s.class),
                track: s.track.clone(),
                text_tokens: caption(c, s.class),
            });
        } else {
            held.push((i, s.class));
        }
    }
    (train, held)
}

/// Held-out track to caption retrieval.
pub struct Retrieval {
    pub recall_at_1: f64,
    pub cosine_gap: f64,
}

pub fn evaluate(model: &Matcher, c: &ToyCorpus, held: &[(usize, usize)]) -> Retrieval {
    let texts: Vec<_> = (0..8)
        .map(|k| model.encode_text(&caption(c, k)).unwrap())
        .collect();
    let (mut hits, mut pos, mut neg) = (0, Vec::new(), Vec::new());
    for &(i, class) in held {
        let enc = model.encode_track(&c.samples[i].track).unwrap();
        let scores: Vec<f64> = texts.iter().map(|t| model.pair_score(&enc, t)).collect();
        let best = (0..8)
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap();
        if best == class {
            hits += 1;
        }
        for (k, t) in texts.iter().enumerate() {
            let cos = dot(&enc.pooled, &t.pooled);
            if k == class {
                pos.push(cos);
            } else {
                neg.push(cos);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Retrieval {
        recall_at_1: hits as f64 / held.len() as f64,
        cosine_gap: mean(&pos) - mean(&neg),
    }
}

/// Trains on the seeded corpus and scores the held-out tracks.
pub fn run(seed: u64) -> (TrainOutcome, Retrieval) {
    let corpus = toy_corpus(PER_CLASS, 64, TOKEN_DIM, seed);
    let (pairs, held) = split(&corpus);
    let out = train(&pairs, &toy_config(), &toy_training(seed)).unwrap();
    let r = evaluate(&out.model, &corpus, &held);
    (out, r)
}
