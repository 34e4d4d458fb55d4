//! Encoder, summarizer and per-SBS decoders.
//!
//! Every history row (J SBS rows followed by C WLAN rows) runs through one
//! shared LSTM encoder, one scalar per step. The M encoder outputs are
//! concatenated and squeezed by a two-layer tanh MLP into the initial hidden
//! state of each SBS decoder. Decoder `j` emits `N_x + C` values per step:
//! logits over the selection vocabulary followed by pre-sigmoid access
//! means, i.e. its output projection stacks `W_x` over `W_μ`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::{log_sum_exp, sigmoid, softmax, Mat};
use super::lstm::{param_count, LstmParams, LstmShape, StepCache, LAYERS};
use super::LearnError;
use crate::{ActionSchedule, SelectionVocabulary};

/// Sizes that fix every parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub sbs: usize,
    pub channels: usize,
    pub max_channels: usize,
    pub hidden: usize,
}

impl ModelShape {
    pub fn new(sbs: usize, channels: usize, max_channels: usize, hidden: usize) -> Result<Self, LearnError> {
        let s = Self {
            sbs,
            channels,
            max_channels,
            hidden,
        };
        if sbs == 0 || channels == 0 || max_channels == 0 || hidden == 0 {
            return Err(LearnError::Shape(format!("all model dimensions must be >= 1, got {s:?}")));
        }
        Ok(s)
    }

    /// Encoder rows `M = J + C`.
    pub fn rows(&self) -> usize {
        self.sbs + self.channels
    }

    pub fn vocab_len(&self) -> usize {
        SelectionVocabulary::new(self.channels, self.max_channels).len()
    }

    pub fn encoder(&self) -> LstmShape {
        LstmShape::new(1, self.hidden, self.hidden)
    }

    pub fn decoder(&self) -> LstmShape {
        LstmShape::new(self.hidden + self.channels, self.hidden, self.vocab_len() + self.channels)
    }
}

/// Affine layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Mat::zeros(out, inp),
            b: vec![0.0; out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.b) {
            *v += b;
        }
        y
    }

    /// Accumulates gradients for upstream `dy` at input `x`; returns `∂/∂x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        grads.w.add_outer(dy, x);
        for (g, d) in grads.b.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; x.len()];
        self.w.matvec_t_add(dy, &mut dx);
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub shape: ModelShape,
    pub encoder: LstmParams,
    pub mlp_hidden: Dense,
    pub mlp_out: Dense,
    pub decoders: Vec<LstmParams>,
    /// Action embedding `W_d` per decoder (`H × N_x`).
    pub embed: Vec<Mat>,
}

/// Forward values of [`PolicyModel::encode`] kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub rows: Vec<Vec<StepCache>>,
    pub finals: Vec<Vec<f64>>,
    pub concat: Vec<f64>,
    pub hidden: Vec<f64>,
    pub context: Vec<f64>,
}

/// One decoded step.
#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub cache: StepCache,
    pub h: Vec<f64>,
    pub probs: Vec<f64>,
    pub choice: usize,
    pub mu: Vec<f64>,
    /// Pre-clamp draws for selected channels, zero elsewhere.
    pub raw_alpha: Vec<f64>,
    pub log_prob: f64,
}

/// A decoded sequence for one SBS.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub sbs: usize,
    pub variance: f64,
    pub steps: Vec<DecodeStep>,
    pub schedule: ActionSchedule,
}

impl Rollout {
    /// Sum of the per-step discrete and Gaussian log-terms.
    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }

    /// The fixed actions, for replaying under other parameters.
    pub fn actions(&self) -> Vec<(usize, Vec<f64>)> {
        self.steps.iter().map(|s| (s.choice, s.raw_alpha.clone())).collect()
    }
}

/// How the decoder picks actions.
pub enum Policy<'a, R: Rng> {
    /// Softmax draw and Gaussian access with the given variance.
    Sample { rng: &'a mut R, variance: f64 },
    /// Most likely vector and mean access.
    Greedy,
    /// Fixed actions; log-terms are evaluated with the given variance.
    Replay { actions: &'a [(usize, Vec<f64>)], variance: f64 },
}

/// Log-density of `N(mean, var)` at `x`.
pub fn gaussian_log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

impl PolicyModel {
    pub fn zeros(shape: ModelShape) -> Self {
        let h = shape.hidden;
        let nx = shape.vocab_len();
        let model = Self {
            shape,
            encoder: LstmParams::zeros(shape.encoder()),
            mlp_hidden: Dense::zeros(h, shape.rows() * h),
            mlp_out: Dense::zeros(h, h),
            decoders: (0..shape.sbs).map(|_| LstmParams::zeros(shape.decoder())).collect(),
            embed: (0..shape.sbs).map(|_| Mat::zeros(h, nx)).collect(),
        };
        assert!(model.encoder.layers() == LAYERS && model.decoders.iter().all(|d| d.layers() == 1));
        model
    }

    /// Every parameter uniform on `[-scale, scale]`.
    pub fn random<R: Rng>(shape: ModelShape, scale: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(shape);
        for (_, block) in m.params_mut() {
            for v in block.iter_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        m
    }

    pub fn vocabulary(&self) -> SelectionVocabulary {
        SelectionVocabulary::new(self.shape.channels, self.shape.max_channels)
    }

    /// Named parameter blocks in a fixed order.
    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (n, b) in self.encoder.blocks() {
            out.push((format!("encoder.{n}"), b));
        }
        out.push(("mlp.w1".into(), &self.mlp_hidden.w.data));
        out.push(("mlp.b1".into(), &self.mlp_hidden.b));
        out.push(("mlp.w2".into(), &self.mlp_out.w.data));
        out.push(("mlp.b2".into(), &self.mlp_out.b));
        for (j, (d, e)) in self.decoders.iter().zip(&self.embed).enumerate() {
            for (n, b) in d.blocks() {
                out.push((format!("decoder{j}.{n}"), b));
            }
            out.push((format!("decoder{j}.w_d"), &e.data));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (n, b) in self.encoder.blocks_mut() {
            out.push((format!("encoder.{n}"), b));
        }
        out.push(("mlp.w1".into(), &mut self.mlp_hidden.w.data));
        out.push(("mlp.b1".into(), &mut self.mlp_hidden.b));
        out.push(("mlp.w2".into(), &mut self.mlp_out.w.data));
        out.push(("mlp.b2".into(), &mut self.mlp_out.b));
        for (j, (d, e)) in self.decoders.iter_mut().zip(self.embed.iter_mut()).enumerate() {
            for (n, b) in d.blocks_mut() {
                out.push((format!("decoder{j}.{n}"), b));
            }
            out.push((format!("decoder{j}.w_d"), &mut e.data));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.params().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs the shared encoder over each history row and summarizes.
    pub fn encode(&self, history: &[Vec<f64>]) -> Result<EncodeCache, LearnError> {
        let m = self.shape.rows();
        if history.len() != m {
            return Err(LearnError::Shape(format!("history has {} rows, model expects {m}", history.len())));
        }
        let h = self.shape.hidden;
        let mut rows = Vec::with_capacity(m);
        let mut finals = Vec::with_capacity(m);
        let mut concat = Vec::with_capacity(m * h);
        for row in history {
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            let mut caches = Vec::with_capacity(row.len());
            for &v in row {
                let (h2, c2, cache) = self.encoder.step(&[v], &hs, &cs).map_err(LearnError::Shape)?;
                hs = h2;
                cs = c2;
                caches.push(cache);
            }
            concat.extend(self.encoder.output(&hs));
            finals.push(hs);
            rows.push(caches);
        }
        let hidden: Vec<f64> = self.mlp_hidden.forward(&concat).into_iter().map(f64::tanh).collect();
        let context: Vec<f64> = self.mlp_out.forward(&hidden).into_iter().map(f64::tanh).collect();
        Ok(EncodeCache {
            rows,
            finals,
            concat,
            hidden,
            context,
        })
    }

    /// Backpropagates `∂/∂context` through the MLP and encoder.
    pub fn encode_backward(&self, cache: &EncodeCache, d_context: &[f64], grads: &mut PolicyModel) {
        let h = self.shape.hidden;
        let d_pre2: Vec<f64> = d_context.iter().zip(&cache.context).map(|(d, y)| d * (1.0 - y * y)).collect();
        let d_hidden = self.mlp_out.backward(&cache.hidden, &d_pre2, &mut grads.mlp_out);
        let d_pre1: Vec<f64> = d_hidden.iter().zip(&cache.hidden).map(|(d, y)| d * (1.0 - y * y)).collect();
        let d_concat = self.mlp_hidden.backward(&cache.concat, &d_pre1, &mut grads.mlp_hidden);
        for (r, caches) in cache.rows.iter().enumerate() {
            let dy = &d_concat[r * h..(r + 1) * h];
            let mut dh = self.encoder.output_backward(&cache.finals[r], dy, &mut grads.encoder);
            let mut dc = vec![0.0; h];
            for step in caches.iter().rev() {
                let (_, dh_prev, dc_prev) = self.encoder.step_backward(step, &dh, &dc, &mut grads.encoder);
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }

    /// Autoregressive decode for SBS `j` over `horizon` epochs.
    pub fn decode<R: Rng>(&self, j: usize, context: &[f64], horizon: usize, mut policy: Policy<'_, R>) -> Rollout {
        let vocab = self.vocabulary();
        let (h_dim, n_ch, nx) = (self.shape.hidden, self.shape.channels, vocab.len());
        let dec = &self.decoders[j];
        let mut schedule = ActionSchedule::zeros(n_ch, horizon);
        let mut steps = Vec::with_capacity(horizon);
        let (mut h, mut c) = (context.to_vec(), vec![0.0; h_dim]);
        let mut input = vec![0.0; h_dim + n_ch];
        let variance = match &policy {
            Policy::Sample { variance, .. } | Policy::Replay { variance, .. } => *variance,
            Policy::Greedy => 0.0,
        };
        for t in 0..horizon {
            let (h2, c2, cache) = dec.step(&input, &h, &c).expect("decoder input sized by construction");
            h = h2;
            c = c2;
            let y = dec.output(&h);
            let logits = &y[..nx];
            let probs = softmax(logits);
            let mu: Vec<f64> = y[nx..].iter().map(|&v| sigmoid(v)).collect();
            let choice = match &mut policy {
                Policy::Sample { rng, .. } => sample_index(&probs, *rng),
                Policy::Greedy => argmax(&probs),
                Policy::Replay { actions, .. } => actions[t].0,
            };
            let mut log_prob = logits[choice] - log_sum_exp(logits);
            let mut raw_alpha = vec![0.0; n_ch];
            for &ch in vocab.channels_of(choice) {
                let raw = match &mut policy {
                    Policy::Sample { rng, variance } => Normal::new(mu[ch], variance.sqrt())
                        .expect("positive variance")
                        .sample(*rng),
                    Policy::Greedy => mu[ch],
                    Policy::Replay { actions, .. } => actions[t].1[ch],
                };
                if variance > 0.0 {
                    log_prob += gaussian_log_density(raw, mu[ch], variance);
                }
                raw_alpha[ch] = raw;
                schedule.set(ch, t, true, raw.clamp(0.0, 1.0));
            }
            input = self.embed[j].column(choice);
            input.extend((0..n_ch).map(|ch| schedule.alpha[ch][t]));
            steps.push(DecodeStep {
                cache,
                h: h.clone(),
                probs,
                choice,
                mu,
                raw_alpha,
                log_prob,
            });
        }
        Rollout {
            sbs: j,
            variance,
            steps,
            schedule,
        }
    }

    /// Accumulates `scale · ∇ log p(rollout)` for the decoder parameters and
    /// returns the matching gradient with respect to the context.
    pub fn decode_backward(&self, rollout: &Rollout, scale: f64, grads: &mut PolicyModel) -> Vec<f64> {
        let j = rollout.sbs;
        let vocab = self.vocabulary();
        let (h_dim, nx) = (self.shape.hidden, vocab.len());
        let dec = &self.decoders[j];
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];
        for t in (0..rollout.steps.len()).rev() {
            let step = &rollout.steps[t];
            let mut dy: Vec<f64> = step.probs.iter().map(|p| -scale * p).collect();
            dy[step.choice] += scale;
            dy.resize(nx + self.shape.channels, 0.0);
            if rollout.variance > 0.0 {
                for &ch in vocab.channels_of(step.choice) {
                    let mu = step.mu[ch];
                    dy[nx + ch] = scale * (step.raw_alpha[ch] - mu) / rollout.variance * mu * (1.0 - mu);
                }
            }
            let mut dh = dec.output_backward(&step.h, &dy, &mut grads.decoders[j]);
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (dx, dh_prev, dc_prev) = dec.step_backward(&step.cache, &dh, &dc_next, &mut grads.decoders[j]);
            if t > 0 {
                let prev = rollout.steps[t - 1].choice;
                let e = &mut grads.embed[j];
                for (r, d) in dx[..h_dim].iter().enumerate() {
                    *e.get_mut(r, prev) += d;
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dh_next
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Total parameter count from the per-block formulas.
pub fn model_param_count(shape: ModelShape) -> usize {
    let h = shape.hidden;
    let mlp = (shape.rows() * h * h + h) + (h * h + h);
    param_count(shape.encoder()) + mlp + shape.sbs * (param_count(shape.decoder()) + h * shape.vocab_len())
}
