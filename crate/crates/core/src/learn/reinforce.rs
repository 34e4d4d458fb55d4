//! Score-function gradients.
//!
//! For episodes `z = 1..Z` of one SBS with rewards `R_z` and baseline `b`
//! the descent direction is `g = −(1/Z) Σ_z (R_z − b) ∇ log p_z`, so a
//! descent step raises the expected reward.

use serde::{Deserialize, Serialize};

use super::model::{EncodeCache, Policy, PolicyModel, Rollout};
use super::LearnError;

/// How rewards are centered before weighting the log-probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Mean reward of the current batch of `Z` samples.
    #[default]
    BatchMean,
    /// Running mean over every reward seen so far.
    RunningMean,
    /// Plain REINFORCE.
    None,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    pub count: u64,
    pub mean: f64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// One sampled sequence and its reward.
#[derive(Debug, Clone)]
pub struct Episode {
    pub rollout: Rollout,
    pub reward: f64,
}

/// Gradient of the surrogate loss over `episodes`, all decoded from the
/// same encoding `enc` of the current model.
pub fn reinforce_gradient(model: &PolicyModel, enc: &EncodeCache, episodes: &[Episode], baseline: f64) -> Result<PolicyModel, LearnError> {
    if episodes.is_empty() {
        return Err(LearnError::NoEpisodes);
    }
    let z = episodes.len() as f64;
    let mut grads = PolicyModel::zeros(model.shape);
    let mut d_context = vec![0.0; model.shape.hidden];
    for ep in episodes {
        let scale = -(ep.reward - baseline) / z;
        if scale == 0.0 {
            continue;
        }
        let d = model.decode_backward(&ep.rollout, scale, &mut grads);
        for (a, b) in d_context.iter_mut().zip(&d) {
            *a += b;
        }
    }
    model.encode_backward(enc, &d_context, &mut grads);
    Ok(grads)
}

/// `−(1/Z) Σ (R − b) log p` with the episodes' actions held fixed, so its
/// gradient is exactly [`reinforce_gradient`].
pub fn surrogate(model: &PolicyModel, history: &[Vec<f64>], episodes: &[Episode], baseline: f64) -> Result<f64, LearnError> {
    if episodes.is_empty() {
        return Err(LearnError::NoEpisodes);
    }
    let enc = model.encode(history)?;
    let z = episodes.len() as f64;
    let mut loss = 0.0;
    for ep in episodes {
        let r = &ep.rollout;
        let actions = r.actions();
        let replay = model.decode::<rand_chacha::ChaCha8Rng>(
            r.sbs,
            &enc.context,
            r.steps.len(),
            Policy::Replay {
                actions: &actions,
                variance: r.variance,
            },
        );
        loss -= (ep.reward - baseline) * replay.log_prob() / z;
    }
    Ok(loss)
}

/// Per-block relative error `‖g − ĝ‖ / max(‖ĝ‖, 1e-12)` between the
/// analytic gradient and central differences of [`surrogate`] with step `h`.
pub fn gradient_check(
    model: &PolicyModel,
    history: &[Vec<f64>],
    episodes: &[Episode],
    baseline: f64,
    h: f64,
) -> Result<Vec<(String, f64)>, LearnError> {
    let enc = model.encode(history)?;
    let grad = reinforce_gradient(model, &enc, episodes, baseline)?;
    let analytic = grad.params();
    let mut out = Vec::with_capacity(analytic.len());
    for (b, (name, g)) in analytic.iter().enumerate() {
        let (mut diff, mut norm) = (0.0, 0.0);
        for k in 0..g.len() {
            let mut plus = model.clone();
            plus.params_mut()[b].1[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[b].1[k] -= h;
            let fd = (surrogate(&plus, history, episodes, baseline)? - surrogate(&minus, history, episodes, baseline)?) / (2.0 * h);
            diff += (fd - g[k]).powi(2);
            norm += fd * fd;
        }
        out.push((name.clone(), diff.sqrt() / norm.sqrt().max(1e-12)));
    }
    Ok(out)
}
