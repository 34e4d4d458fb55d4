//! REINFORCE training with penalty rounds, and greedy inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{ModelShape, Policy, PolicyModel, Rollout};
use super::reinforce::{reinforce_gradient, BaselineMode, Episode, RunningMean};
use super::rmsprop::OptimizerState;
use super::LearnError;
use crate::game::{check_constraints, incremental_penalty_update, penalized_utility, realize, GameContext, PenaltyCoefficients, ViolationReport};
use crate::ActionSchedule;

pub const VARIANCE_START: f64 = 0.06;
pub const VARIANCE_END: f64 = 0.02;

/// Linear decay from 0.06 to 0.02 over `total_steps`.
pub fn variance_schedule(step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return VARIANCE_END;
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    VARIANCE_START + (VARIANCE_END - VARIANCE_START) * frac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    /// Sweeps over the dataset per round.
    pub epochs: usize,
    /// Samples per SBS update.
    pub samples: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    pub init_scale: f64,
    pub baseline: BaselineMode,
    pub rho0: PenaltyCoefficients,
    pub rho_growth: f64,
    /// Audit tolerance for the coupled constraints.
    pub tolerance: f64,
    /// Cap on outer rounds before giving up.
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 20,
            samples: 16,
            learning_rate: 0.01,
            decay: 0.95,
            eps: 1e-8,
            init_scale: 0.05,
            baseline: BaselineMode::BatchMean,
            rho0: PenaltyCoefficients {
                rho1: 1.0,
                rho2: 1.0,
                rho3: 1.0,
            },
            rho_growth: 2.0,
            tolerance: 0.02,
            max_rounds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if self.hidden == 0 || self.epochs == 0 || self.samples == 0 || self.max_rounds == 0 {
            return bad("hidden, epochs, samples and max_rounds must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.eps > 0.0 && (0.0..1.0).contains(&self.decay)) {
            return bad("need learning_rate > 0, eps > 0 and decay in [0, 1)");
        }
        if !(self.init_scale >= 0.0 && self.rho_growth > 1.0 && self.tolerance >= 0.0) {
            return bad("need init_scale >= 0, rho_growth > 1 and tolerance >= 0");
        }
        Ok(())
    }
}

/// One training window: normalized history (`M × H`) and the game it
/// is scored against.
#[derive(Debug, Clone)]
pub struct Example {
    pub history: Vec<Vec<f64>>,
    pub ctx: GameContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub round: usize,
    pub epoch: usize,
    /// Mean sampled penalized utility over every update in the epoch.
    pub mean_reward: f64,
    pub reward_stderr: f64,
    /// Mean penalized utility of the greedy profile over the dataset.
    pub greedy_utility: f64,
    pub rho: PenaltyCoefficients,
    pub violations: ViolationReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub rounds: usize,
    pub final_rho: Option<PenaltyCoefficients>,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("coupled constraints still violated after {rounds} rounds")]
    NonConvergence {
        rounds: usize,
        log: TrainingLog,
        model: Box<PolicyModel>,
    },
}

/// Greedy schedules for every SBS given a normalized history.
pub fn infer(model: &PolicyModel, history: &[Vec<f64>], horizon: usize) -> Result<Vec<ActionSchedule>, LearnError> {
    let enc = model.encode(history)?;
    Ok((0..model.shape.sbs)
        .map(|j| model.decode::<ChaCha8Rng>(j, &enc.context, horizon, Policy::Greedy).schedule)
        .collect())
}

/// Reward of SBS `j`: its penalized utility once every schedule is
/// clipped to its demand.
pub fn reward(j: usize, profile: &[ActionSchedule], ctx: &GameContext) -> f64 {
    penalized_utility(j, &realize(profile, ctx), ctx)
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_examples(model: &PolicyModel, data: &[Example]) -> Result<(), LearnError> {
    if data.is_empty() {
        return Err(LearnError::Config("training set is empty".into()));
    }
    let s = model.shape;
    for (n, ex) in data.iter().enumerate() {
        let ctx = &ex.ctx;
        if ctx.players() != s.sbs || ctx.channels != s.channels || ctx.max_channels != s.max_channels {
            return Err(LearnError::Shape(format!(
                "example {n} has J={}, C={}, M_c={} but the model was built for {s:?}",
                ctx.players(),
                ctx.channels,
                ctx.max_channels
            )));
        }
        if ex.history.len() != s.rows() {
            return Err(LearnError::Shape(format!("example {n} history has {} rows", ex.history.len())));
        }
    }
    Ok(())
}

/// Greedy audit over the dataset: mean penalized utility and worst violations.
pub fn audit(model: &PolicyModel, data: &[Example], rho: PenaltyCoefficients, tol: f64) -> Result<(f64, ViolationReport), LearnError> {
    let mut total = 0.0;
    let mut worst = ViolationReport::default();
    for ex in data {
        let mut ctx = ex.ctx.clone();
        ctx.rho = rho;
        let profile = realize(&infer(model, &ex.history, ctx.horizon)?, &ctx);
        total += (0..ctx.players()).map(|j| penalized_utility(j, &profile, &ctx)).sum::<f64>() / ctx.players() as f64;
        let report = check_constraints(&profile, &ctx, tol);
        worst.merge_max(&report);
        if worst.players.is_empty() {
            worst.players = report.players;
        }
    }
    Ok((total / data.len() as f64, worst))
}

/// Trains a fresh model on `data`.
pub fn train(config: &TrainConfig, data: &[Example]) -> Result<(PolicyModel, TrainingLog), TrainError> {
    config.validate()?;
    let first = data.first().ok_or_else(|| LearnError::Config("training set is empty".into()))?;
    let shape = ModelShape::new(first.ctx.players(), first.ctx.channels, first.ctx.max_channels, config.hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = PolicyModel::random(shape, config.init_scale, &mut rng);
    train_from(config, model, data)
}

/// Like [`train`], but continues from an existing `model`.
pub fn train_from(config: &TrainConfig, mut model: PolicyModel, data: &[Example]) -> Result<(PolicyModel, TrainingLog), TrainError> {
    config.validate()?;
    check_examples(&model, data)?;
    let mut opt = OptimizerState::new(model.len(), config.learning_rate, config.decay, config.eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ 0x5EED));
    let mut running = RunningMean::default();
    let mut rho = config.rho0;
    let mut log = TrainingLog::default();
    let updates_per_round = config.epochs * data.len() * model.shape.sbs;
    let mut update: u64 = 0;
    let z = config.samples;

    for round in 0..config.max_rounds {
        let mut step_in_round = 0;
        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut shuffle_rng);
            let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
            for &n in &order {
                let ex = &data[n];
                let mut ctx = ex.ctx.clone();
                ctx.rho = rho;
                let best = infer(&model, &ex.history, ctx.horizon)?;
                for j in 0..model.shape.sbs {
                    let variance = variance_schedule(step_in_round, updates_per_round.saturating_sub(1));
                    step_in_round += 1;
                    update += 1;
                    let enc = model.encode(&ex.history)?;
                    let base_seed = mix_seed(config.seed ^ mix_seed(update));
                    let episodes: Vec<Episode> = (0..z)
                        .into_par_iter()
                        .map(|k| {
                            let mut r = ChaCha8Rng::seed_from_u64(mix_seed(base_seed ^ k as u64));
                            let rollout: Rollout =
                                model.decode(j, &enc.context, ctx.horizon, Policy::Sample { rng: &mut r, variance });
                            let mut profile = best.clone();
                            profile[j] = rollout.schedule.clone();
                            let reward = reward(j, &profile, &ctx);
                            Episode { rollout, reward }
                        })
                        .collect();
                    let mean = episodes.iter().map(|e| e.reward).sum::<f64>() / z as f64;
                    for e in &episodes {
                        sum += e.reward;
                        sum_sq += e.reward * e.reward;
                        count += 1;
                    }
                    let baseline = match config.baseline {
                        BaselineMode::BatchMean => mean,
                        BaselineMode::RunningMean => running.mean,
                        BaselineMode::None => 0.0,
                    };
                    for e in &episodes {
                        running.push(e.reward);
                    }
                    let grad = reinforce_gradient(&model, &enc, &episodes, baseline)?;
                    opt.step(&mut model, &grad)?;
                }
            }
            let mean = sum / count as f64;
            let var = (sum_sq / count as f64 - mean * mean).max(0.0);
            let (greedy_utility, violations) = audit(&model, data, rho, config.tolerance)?;
            log.epochs.push(EpochLog {
                round,
                epoch,
                mean_reward: mean,
                reward_stderr: (var / count as f64).sqrt(),
                greedy_utility,
                rho,
                violations,
            });
        }
        log.rounds = round + 1;
        let report = &log.epochs.last().expect("epochs >= 1").violations;
        if report.coupled_satisfied(config.tolerance) {
            log.final_rho = Some(rho);
            log.converged = true;
            return Ok((model, log));
        }
        rho = incremental_penalty_update(rho, report, config.tolerance, config.rho_growth);
    }
    log.final_rho = Some(rho);
    Err(TrainError::NonConvergence {
        rounds: config.max_rounds,
        log,
        model: Box::new(model),
    })
}
