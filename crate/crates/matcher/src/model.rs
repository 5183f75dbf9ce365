//! The dual encoder: a patch transformer over trajectories, an MLP plus
//! convolution pathway over text token embeddings, a cross-modal alignment
//! matrix and the batch objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenmine_core::traj::{normalize_features, NormStats, Track, STATE_DIM};

use crate::config::{EvidencePooling, LossConfig, MatcherConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{dot, Mat};
use crate::MatcherError;

/// Number of patches of a length-`len` sequence, `floor((len - patch) / stride) + 1`.
pub fn patch_count(len: usize, patch: usize, stride: usize) -> Result<usize, MatcherError> {
    if patch == 0 || stride == 0 {
        return Err(MatcherError::InvalidConfig(
            "patch length and stride must be positive".into(),
        ));
    }
    if len < patch {
        return Err(MatcherError::TrackTooShort { len, patch });
    }
    Ok((len - patch) / stride + 1)
}

/// Stacks the flattened `patch x channels` slices as rows.
pub fn unfold(features: &Mat, patch: usize, stride: usize) -> Result<Mat, MatcherError> {
    let t = patch_count(features.rows, patch, stride)?;
    let width = patch * features.cols;
    let mut out = Mat::zeros(t, width);
    for i in 0..t {
        let start = i * stride * features.cols;
        out.row_mut(i)
            .copy_from_slice(&features.data[start..start + width]);
    }
    Ok(out)
}

/// Sinusoidal position codes, one row per patch.
pub fn positional_encoding(rows: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros(rows, dim);
    for t in 0..rows {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = t as f64 * freq;
            m.set(t, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

/// Z-scored feature matrix of a track, one row per state.
pub fn track_features(track: &Track, norm: &NormStats) -> Mat {
    let rows: Vec<[f64; STATE_DIM]> = track
        .states
        .iter()
        .map(|s| normalize_features(norm, &s.features()))
        .collect();
    Mat::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub decay: bool,
}

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn push(&mut self, name: &str, value: Mat, decay: bool) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            decay,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.position(name).map(|i| &mut self.params[i].value)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

fn init_weight(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect(),
    )
}

/// Initial parameters for `cfg`, drawn from a seeded generator.
pub fn init_params(cfg: &MatcherConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::default();
    let p = &cfg.patch;
    let linear = |ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize| {
        ps.push(&format!("{name}.w"), init_weight(rng, i, o), true);
        ps.push(&format!("{name}.b"), Mat::zeros(1, o), false);
    };
    let norm = |ps: &mut ParamSet, name: &str, d: usize| {
        ps.push(&format!("{name}.g"), Mat::filled(1, d, 1.0), false);
        ps.push(&format!("{name}.b"), Mat::zeros(1, d), false);
    };
    linear(
        &mut ps,
        &mut rng,
        "patch",
        cfg.patch_input_dim(),
        p.token_dim,
    );
    if p.token_dim != p.d_model {
        linear(&mut ps, &mut rng, "input", p.token_dim, p.d_model);
    }
    for l in 0..p.layers {
        let e = format!("enc{l}");
        norm(&mut ps, &format!("{e}.ln1"), p.d_model);
        for h in ["q", "k", "v", "o"] {
            linear(
                &mut ps,
                &mut rng,
                &format!("{e}.attn.{h}"),
                p.d_model,
                p.d_model,
            );
        }
        norm(&mut ps, &format!("{e}.ln2"), p.d_model);
        linear(
            &mut ps,
            &mut rng,
            &format!("{e}.ff1"),
            p.d_model,
            cfg.ff_dim,
        );
        linear(
            &mut ps,
            &mut rng,
            &format!("{e}.ff2"),
            cfg.ff_dim,
            p.d_model,
        );
    }
    norm(&mut ps, "enc.ln", p.d_model);
    linear(&mut ps, &mut rng, "track_proj", p.d_model, cfg.embed_dim);
    linear(
        &mut ps,
        &mut rng,
        "text.mlp1",
        cfg.text_dim,
        cfg.text_hidden,
    );
    linear(
        &mut ps,
        &mut rng,
        "text.mlp2",
        cfg.text_hidden,
        cfg.text_dim,
    );
    for k in 0..3 {
        ps.push(
            &format!("text.conv.w{k}"),
            init_weight(&mut rng, cfg.text_dim, p.d_model),
            true,
        );
    }
    ps.push("text.conv.b", Mat::zeros(1, p.d_model), false);
    linear(&mut ps, &mut rng, "text_proj", p.d_model, cfg.embed_dim);
    ps.push(
        "align.q",
        init_weight(&mut rng, p.d_model, cfg.key_dim),
        true,
    );
    ps.push(
        "align.k",
        init_weight(&mut rng, p.d_model, cfg.key_dim),
        true,
    );
    ps
}

/// A forward pass in progress: parameters are placed on the tape lazily.
pub struct Graph<'a> {
    pub tape: Tape,
    cfg: &'a MatcherConfig,
    params: &'a ParamSet,
    vars: Vec<Option<Var>>,
}

/// Loss values of one batch as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub mil: Var,
    pub global: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub mil: f64,
    pub global: f64,
}

impl<'a> Graph<'a> {
    pub fn new(cfg: &'a MatcherConfig, params: &'a ParamSet) -> Self {
        Self {
            tape: Tape::new(),
            cfg,
            params,
            vars: vec![None; params.len()],
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(v) = self.vars[i] {
            return v;
        }
        let v = self.tape.leaf(self.params.params[i].value.clone());
        self.vars[i] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, name: &str) -> Var {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, name: &str) -> Var {
        let g = self.param(&format!("{name}.g"));
        let b = self.param(&format!("{name}.b"));
        let y = self.tape.layer_norm(x);
        let y = self.tape.mul_row(y, g);
        self.tape.add_row(y, b)
    }

    fn attention(&mut self, x: Var, layer: usize) -> Var {
        let e = format!("enc{layer}.attn");
        let q = self.linear(x, &format!("{e}.q"));
        let k = self.linear(x, &format!("{e}.k"));
        let v = self.linear(x, &format!("{e}.v"));
        let heads = self.cfg.patch.heads;
        let dh = self.cfg.patch.d_model / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.col_slice(q, h * dh, dh);
            let kh = self.tape.col_slice(k, h * dh, dh);
            let vh = self.tape.col_slice(v, h * dh, dh);
            let s = self.tape.matmul_t(qh, kh);
            let s = self.tape.scale(s, 1.0 / (dh as f64).sqrt());
            let p = self.tape.softmax_rows(s);
            outs.push(self.tape.matmul(p, vh));
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            self.tape.hconcat(&outs)
        };
        self.linear(cat, &format!("{e}.o"))
    }

    /// Patch tokens of a normalized `L x 10` feature matrix.
    pub fn patch_tokens(&mut self, features: &Mat) -> Result<Var, MatcherError> {
        if features.cols != STATE_DIM {
            return Err(MatcherError::DimMismatch {
                what: "track feature channels",
                expected: STATE_DIM,
                found: features.cols,
            });
        }
        let p = &self.cfg.patch;
        let u = unfold(features, p.patch_len, p.patch_stride)?;
        let t = u.rows;
        let u = self.tape.leaf(u);
        let x = self.linear(u, "patch");
        let pe = self.tape.leaf(positional_encoding(t, p.token_dim));
        Ok(self.tape.add(x, pe))
    }

    /// Encoder output sequence and pooled unit embedding of a track.
    pub fn encode_track(&mut self, features: &Mat) -> Result<(Var, Var), MatcherError> {
        let mut x = self.patch_tokens(features)?;
        if self.cfg.patch.token_dim != self.cfg.patch.d_model {
            x = self.linear(x, "input");
        }
        for l in 0..self.cfg.patch.layers {
            let h = self.norm(x, &format!("enc{l}.ln1"));
            let a = self.attention(h, l);
            x = self.tape.add(x, a);
            let h = self.norm(x, &format!("enc{l}.ln2"));
            let f = self.linear(h, &format!("enc{l}.ff1"));
            let f = self.tape.gelu(f);
            let f = self.linear(f, &format!("enc{l}.ff2"));
            x = self.tape.add(x, f);
        }
        let seq = self.norm(x, "enc.ln");
        let m = self.tape.mean_rows(seq);
        let m = self.linear(m, "track_proj");
        let pooled = self.tape.l2_normalize_rows(m);
        Ok((seq, pooled))
    }

    /// Token sequence and pooled unit embedding of a text.
    pub fn encode_text(&mut self, tokens: &Mat) -> Result<(Var, Var), MatcherError> {
        if tokens.rows == 0 {
            return Err(MatcherError::InvalidConfig(
                "text needs at least one token".into(),
            ));
        }
        if tokens.cols != self.cfg.text_dim {
            return Err(MatcherError::DimMismatch {
                what: "text token width",
                expected: self.cfg.text_dim,
                found: tokens.cols,
            });
        }
        let x = self.tape.leaf(tokens.clone());
        let h = self.linear(x, "text.mlp1");
        let h = self.tape.gelu(h);
        let h = self.linear(h, "text.mlp2");
        let r = self.tape.add(x, h);
        let prev = self.tape.shift_rows(r, 1);
        let next = self.tape.shift_rows(r, -1);
        let (w0, w1, w2) = (
            self.param("text.conv.w0"),
            self.param("text.conv.w1"),
            self.param("text.conv.w2"),
        );
        let c0 = self.tape.matmul(prev, w0);
        let c1 = self.tape.matmul(r, w1);
        let c2 = self.tape.matmul(next, w2);
        let c = self.tape.add(c0, c1);
        let c = self.tape.add(c, c2);
        let b = self.param("text.conv.b");
        let seq = self.tape.add_row(c, b);
        let m = self.tape.mean_rows(seq);
        let m = self.linear(m, "text_proj");
        let pooled = self.tape.l2_normalize_rows(m);
        Ok((seq, pooled))
    }

    /// `(B Wq)(A Wk)^T / sqrt(d_k)` given the already projected sides.
    fn alignment(&mut self, q: Var, k: Var) -> Var {
        let s = self.tape.matmul_t(q, k);
        self.tape.scale(s, 1.0 / (self.cfg.key_dim as f64).sqrt())
    }

    fn evidence(&mut self, s: Var) -> Var {
        match self.cfg.evidence {
            EvidencePooling::Max => self.tape.max_all(s),
            EvidencePooling::LogSumExp { temperature } => self.tape.log_sum_exp(s, temperature),
        }
    }

    /// Weighted multiple-instance plus symmetric contrastive loss of a batch
    /// of matching `(track, text)` pairs.
    pub fn batch_loss(
        &mut self,
        tracks: &[Mat],
        texts: &[Mat],
        loss: &LossConfig,
    ) -> Result<LossVars, MatcherError> {
        let n = tracks.len();
        if n == 0 || texts.len() != n {
            return Err(MatcherError::DimMismatch {
                what: "texts in batch",
                expected: n,
                found: texts.len(),
            });
        }
        let wq = self.param("align.q");
        let wk = self.param("align.k");
        let mut qs = Vec::with_capacity(n);
        let mut bs = Vec::with_capacity(n);
        for t in tracks {
            let (seq, pooled) = self.encode_track(t)?;
            qs.push(self.tape.matmul(seq, wq));
            bs.push(pooled);
        }
        let mut ks = Vec::with_capacity(n);
        let mut as_ = Vec::with_capacity(n);
        for t in texts {
            let (seq, pooled) = self.encode_text(t)?;
            ks.push(self.tape.matmul(seq, wk));
            as_.push(pooled);
        }
        let mut z = Vec::with_capacity(n * n);
        for &q in &qs {
            for &k in &ks {
                let s = self.alignment(q, k);
                z.push(self.evidence(s));
            }
        }
        let z = self.tape.assemble(&z, n, n);
        let z = self.tape.scale(z, 1.0 / loss.gamma);
        let mil = self.tape.cross_entropy_diag(z);

        let b = self.tape.vstack(&bs);
        let a = self.tape.vstack(&as_);
        let s = self.tape.matmul_t(b, a);
        let s = self.tape.scale(s, 1.0 / loss.tau);
        let st = self.tape.transpose(s);
        let l1 = self.tape.cross_entropy_diag(s);
        let l2 = self.tape.cross_entropy_diag(st);
        let sum = self.tape.add(l1, l2);
        let global = self.tape.scale(sum, 0.5);

        let wm = self.tape.scale(mil, loss.lambda_mil);
        let wg = self.tape.scale(global, loss.lambda_global);
        let total = self.tape.add(wm, wg);
        Ok(LossVars { total, mil, global })
    }

    pub fn values(&self, l: &LossVars) -> LossValues {
        LossValues {
            total: self.tape.scalar(l.total),
            mil: self.tape.scalar(l.mil),
            global: self.tape.scalar(l.global),
        }
    }

    /// Gradient of `out` for every parameter, zeros where unused.
    pub fn param_grads(&self, out: Var) -> Vec<Mat> {
        let mut g = self.tape.backward(out);
        self.params
            .iter()
            .zip(&self.vars)
            .map(|(p, v)| {
                v.and_then(|v| g[v.0].take())
                    .unwrap_or_else(|| Mat::zeros(p.value.rows, p.value.cols))
            })
            .collect()
    }
}

/// Loss of one batch under `params`.
pub fn batch_loss_value(
    cfg: &MatcherConfig,
    params: &ParamSet,
    tracks: &[Mat],
    texts: &[Mat],
    loss: &LossConfig,
) -> Result<LossValues, MatcherError> {
    let mut g = Graph::new(cfg, params);
    let l = g.batch_loss(tracks, texts, loss)?;
    Ok(g.values(&l))
}

/// Loss of one batch and the gradient of its total for every parameter.
pub fn batch_loss_and_grads(
    cfg: &MatcherConfig,
    params: &ParamSet,
    tracks: &[Mat],
    texts: &[Mat],
    loss: &LossConfig,
) -> Result<(LossValues, Vec<Mat>), MatcherError> {
    let mut g = Graph::new(cfg, params);
    let l = g.batch_loss(tracks, texts, loss)?;
    let v = g.values(&l);
    Ok((v, g.param_grads(l.total)))
}

/// `(B Wq)(A Wk)^T / sqrt(d_k)` with `d_k` the width of the projections.
pub fn cross_sim(b: &Mat, a: &Mat, wq: &Mat, wk: &Mat) -> Mat {
    let dk = wq.cols as f64;
    b.matmul(wq).matmul_t(&a.matmul(wk)).scale(1.0 / dk.sqrt())
}

pub fn evidence_score(s: &Mat, pooling: EvidencePooling) -> f64 {
    assert!(!s.is_empty(), "empty alignment matrix");
    match pooling {
        EvidencePooling::Max => s.data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        EvidencePooling::LogSumExp { temperature } => {
            let m = s.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + temperature
                * s.data
                    .iter()
                    .map(|x| ((x - m) / temperature).exp())
                    .sum::<f64>()
                    .ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackTokens {
    pub tokens: Mat,
}

impl TrackTokens {
    pub fn count(&self) -> usize {
        self.tokens.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTrack {
    pub sequence: Mat,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens {
    pub tokens: Mat,
    pub pooled: Vec<f64>,
}

/// A configured matcher with its parameters and input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    pub config: MatcherConfig,
    pub params: ParamSet,
    pub norm: NormStats,
}

impl Matcher {
    pub fn new(config: MatcherConfig, seed: u64) -> Result<Self, MatcherError> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self {
            config,
            params,
            norm: NormStats::identity(),
        })
    }

    pub fn patchify(&self, features: &Mat) -> Result<TrackTokens, MatcherError> {
        let mut g = Graph::new(&self.config, &self.params);
        let v = g.patch_tokens(features)?;
        Ok(TrackTokens {
            tokens: g.tape.value(v).clone(),
        })
    }

    /// Encodes normalized features.
    pub fn encode_features(&self, features: &Mat) -> Result<EncodedTrack, MatcherError> {
        let mut g = Graph::new(&self.config, &self.params);
        let (seq, pooled) = g.encode_track(features)?;
        Ok(EncodedTrack {
            sequence: g.tape.value(seq).clone(),
            pooled: g.tape.value(pooled).data.clone(),
        })
    }

    pub fn encode_track(&self, track: &Track) -> Result<EncodedTrack, MatcherError> {
        self.encode_features(&track_features(track, &self.norm))
    }

    pub fn encode_text(&self, tokens: &Mat) -> Result<TextTokens, MatcherError> {
        let mut g = Graph::new(&self.config, &self.params);
        let (seq, pooled) = g.encode_text(tokens)?;
        Ok(TextTokens {
            tokens: g.tape.value(seq).clone(),
            pooled: g.tape.value(pooled).data.clone(),
        })
    }

    pub fn alignment(&self, track: &EncodedTrack, text: &TextTokens) -> Mat {
        let wq = self.params.get("align.q").expect("align.q");
        let wk = self.params.get("align.k").expect("align.k");
        cross_sim(&track.sequence, &text.tokens, wq, wk)
    }

    /// Blend of pooled cosine and evidence used for ranking.
    pub fn pair_score(&self, track: &EncodedTrack, text: &TextTokens) -> f64 {
        let a = self.config.rank_alpha;
        let cos = dot(&track.pooled, &text.pooled);
        let z = evidence_score(&self.alignment(track, text), self.config.evidence);
        a * cos + (1.0 - a) * z
    }
}
