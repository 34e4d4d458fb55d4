//! The SBS resource-allocation game.
//!
//! Each SBS picks an [`ActionSchedule`] for the next `T` epochs. Its base
//! utility is the throughput it obtains; coupled constraints (channel
//! occupancy, inter-operator and inter-technology airtime fairness) enter
//! as quadratic penalties scaled by shared coefficients `ρ1, ρ2, ρ3`.

use std::sync::Arc;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::{dbm_to_watts, RadioEnvironment, Tx};
use crate::schedule::SelectionVocabulary;
use crate::ActionSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("strategy probabilities must sum to 1 (got {0})")]
    Unnormalized(f64),
}

pub type Result<T> = std::result::Result<T, GameError>;

/// Priorities and the occupancy ceiling `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessConfig {
    pub p_lte: f64,
    pub p_wifi: f64,
    pub t_max: f64,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            p_lte: 1.0,
            p_wifi: 1.0,
            t_max: 0.9,
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_lte > 0.0 && self.p_wifi > 0.0) {
            return Err(GameError::InvalidParameter("priorities must be positive".into()));
        }
        if !(self.t_max > 0.0 && self.t_max < 1.0) {
            return Err(GameError::InvalidParameter(format!("t_max must be in (0, 1), got {}", self.t_max)));
        }
        Ok(())
    }
}

/// Shared penalty coefficients for occupancy, inter-operator and
/// inter-technology constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyCoefficients {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

impl PenaltyCoefficients {
    pub const ZERO: Self = Self {
        rho1: 0.0,
        rho2: 0.0,
        rho3: 0.0,
    };
}

/// Linear map between offered load and airtime: `f(L) = L / rate_ref`.
///
/// `rate_ref` is the load one unit of airtime carries in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    rate_ref: f64,
}

impl DemandModel {
    pub fn new(rate_ref: f64) -> Result<Self> {
        if !(rate_ref > 0.0 && rate_ref.is_finite()) {
            return Err(GameError::InvalidParameter(format!("reference rate must be positive, got {rate_ref}")));
        }
        Ok(Self { rate_ref })
    }

    pub fn rate_ref(&self) -> f64 {
        self.rate_ref
    }

    /// Airtime needed to carry `load`.
    pub fn required_airtime(&self, load: f64) -> f64 {
        load.max(0.0) / self.rate_ref
    }

    /// Load carried by `alpha` airtime.
    pub fn served(&self, alpha: f64) -> f64 {
        alpha.max(0.0) * self.rate_ref
    }
}

/// Cached link budget for one UE.
#[derive(Debug, Clone, PartialEq)]
struct UeLink {
    signal: f64,
    from_sbs: Vec<f64>,
    from_wap: Vec<f64>,
}

/// Rates seen by each SBS given what the rest of the profile is doing.
///
/// Co-channel SBSs interfere in proportion to their airtime on that
/// channel and epoch. WAP interference is optional and off by default.
#[derive(Debug, Clone)]
pub struct RateModel {
    env: Arc<RadioEnvironment>,
    pub xi: f64,
    pub sbs_interference: bool,
    /// Channel of each WAP, used only when `wap_interference` is set.
    pub wap_channels: Vec<usize>,
    pub wap_interference: bool,
    /// Absolute epoch of `t = 0`, used for time-varying gains.
    pub epoch_offset: usize,
    cache: Option<Vec<Vec<UeLink>>>,
}

impl RateModel {
    pub fn new(env: Arc<RadioEnvironment>, xi: f64) -> Self {
        let cache = if env.shadowing.is_none() {
            Some(
                (0..env.sbs_positions.len())
                    .map(|j| {
                        (0..env.ue_count(j))
                            .map(|k| UeLink {
                                signal: dbm_to_watts(env.sbs_power_dbm) * env.gain(Tx::Sbs(j), j, k, 0, 0).unwrap_or(0.0),
                                from_sbs: (0..env.sbs_positions.len())
                                    .map(|i| dbm_to_watts(env.sbs_power_dbm) * env.gain(Tx::Sbs(i), j, k, 0, 0).unwrap_or(0.0))
                                    .collect(),
                                from_wap: (0..env.wap_positions.len())
                                    .map(|w| dbm_to_watts(env.wap_power_dbm) * env.gain(Tx::Wap(w), j, k, 0, 0).unwrap_or(0.0))
                                    .collect(),
                            })
                            .collect()
                    })
                    .collect(),
            )
        } else {
            None
        };
        Self {
            env,
            xi,
            sbs_interference: true,
            wap_channels: Vec::new(),
            wap_interference: false,
            epoch_offset: 0,
            cache,
        }
    }

    pub fn env(&self) -> &RadioEnvironment {
        &self.env
    }

    pub fn with_offset(&self, epoch_offset: usize) -> Self {
        Self {
            epoch_offset,
            ..self.clone()
        }
    }

    /// Rate of SBS `j` on `(c, t)` in Mbit/s.
    ///
    /// `sbs_activity[i]` is SBS `i`'s airtime on this channel and epoch;
    /// `wap_activity` is the per-WAP airtime on this channel.
    pub fn rate(&self, j: usize, c: usize, t: usize, sbs_activity: &[f64], wap_activity: f64) -> f64 {
        let env = &*self.env;
        let b = env.bandwidth[c];
        let noise = env.noise_power(c);
        let te = t + self.epoch_offset;
        let mut total = 0.0;
        for k in 0..env.ue_count(j) {
            let (signal, mut interference) = match &self.cache {
                Some(cache) => (cache[j][k].signal, 0.0),
                None => (
                    dbm_to_watts(env.sbs_power_dbm) * env.gain(Tx::Sbs(j), j, k, c, te).unwrap_or(0.0),
                    0.0,
                ),
            };
            if self.sbs_interference {
                for (i, &a) in sbs_activity.iter().enumerate() {
                    if i == j || a <= 0.0 {
                        continue;
                    }
                    let g = match &self.cache {
                        Some(cache) => cache[j][k].from_sbs[i],
                        None => dbm_to_watts(env.sbs_power_dbm) * env.gain(Tx::Sbs(i), j, k, c, te).unwrap_or(0.0),
                    };
                    interference += a * g;
                }
            }
            if self.wap_interference && wap_activity > 0.0 {
                for (w, &wc) in self.wap_channels.iter().enumerate() {
                    if wc != c {
                        continue;
                    }
                    let g = match &self.cache {
                        Some(cache) => cache[j][k].from_wap[w],
                        None => dbm_to_watts(env.wap_power_dbm) * env.gain(Tx::Wap(w), j, k, c, te).unwrap_or(0.0),
                    };
                    interference += wap_activity * g;
                }
            }
            total += b * (1.0 + signal / (interference + noise)).log2();
        }
        total / 1e6
    }

    /// Interference-free rate of SBS `j` on channel `c`, Mbit/s.
    pub fn clean_rate(&self, j: usize, c: usize) -> f64 {
        self.rate(j, c, 0, &[], 0.0)
    }
}

/// Everything needed to score a profile over one window.
#[derive(Debug, Clone)]
pub struct GameContext {
    pub channels: usize,
    pub horizon: usize,
    pub max_channels: usize,
    /// Arrivals per SBS and epoch (`J × T`).
    pub sbs_demand: Vec<Vec<f64>>,
    /// WLAN demand per channel and epoch (`C × T`).
    pub wlan_demand: Vec<Vec<f64>>,
    /// WAPs on each channel, for per-WAP airtime.
    pub waps_per_channel: Vec<usize>,
    pub dm: DemandModel,
    pub fc: FairnessConfig,
    pub rho: PenaltyCoefficients,
    pub rates: Arc<RateModel>,
}

impl GameContext {
    pub fn players(&self) -> usize {
        self.sbs_demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.fc.validate()?;
        let t = self.horizon;
        if self.sbs_demand.iter().any(|r| r.len() != t) || self.wlan_demand.iter().any(|r| r.len() != t) {
            return Err(GameError::Dimension("demand rows must span the horizon".into()));
        }
        if self.wlan_demand.len() != self.channels {
            return Err(GameError::Dimension(format!(
                "{} WLAN rows for {} channels",
                self.wlan_demand.len(),
                self.channels
            )));
        }
        Ok(())
    }

    pub fn check_profile(&self, profile: &[ActionSchedule]) -> Result<()> {
        if profile.len() != self.players() {
            return Err(GameError::Dimension(format!(
                "profile has {} schedules for {} SBSs",
                profile.len(),
                self.players()
            )));
        }
        for s in profile {
            s.check_shape(self.channels, self.horizon)
                .map_err(|e| GameError::Dimension(e.to_string()))?;
        }
        Ok(())
    }
}

/// Clips a schedule to the demand it can actually carry.
///
/// Unserved load carries over epoch to epoch. Whenever the scheduled
/// airtime exceeds what the backlog needs, every channel is scaled down
/// by the same factor, so the cumulative demand cap holds with equality
/// at worst.
pub fn project_to_demand(schedule: &ActionSchedule, demand: &[f64], dm: &DemandModel) -> ActionSchedule {
    let mut out = schedule.clone();
    let mut backlog = 0.0;
    for (t, &load) in demand.iter().enumerate().take(schedule.horizon()) {
        backlog += load;
        let need = dm.required_airtime(backlog);
        let total = out.airtime_at(t);
        if total > need {
            let k = if total > 0.0 { need / total } else { 0.0 };
            for row in out.alpha.iter_mut() {
                row[t] *= k;
            }
        }
        backlog = (backlog - dm.served(out.airtime_at(t))).max(0.0);
    }
    out
}

/// The profile each SBS can actually realize under its demand.
pub fn realize(profile: &[ActionSchedule], ctx: &GameContext) -> Vec<ActionSchedule> {
    profile
        .iter()
        .zip(&ctx.sbs_demand)
        .map(|(s, d)| project_to_demand(s, d, &ctx.dm))
        .collect()
}

/// Total LTE airtime on `(c, t)`.
pub fn lte_airtime(profile: &[ActionSchedule], c: usize, t: usize) -> f64 {
    profile.iter().map(|s| s.alpha[c][t]).sum()
}

/// WLAN airtime on `(c, t)`: what its demand needs, up to what LTE leaves below `t_max`.
pub fn wlan_airtime(profile: &[ActionSchedule], c: usize, t: usize, wlan_demand: f64, dm: &DemandModel, fc: &FairnessConfig) -> f64 {
    dm.required_airtime(wlan_demand)
        .min(fc.t_max - lte_airtime(profile, c, t))
        .max(0.0)
}

/// WLAN airtime for every channel and epoch (`C × T`).
pub fn wlan_airtime_matrix(profile: &[ActionSchedule], ctx: &GameContext) -> Vec<Vec<f64>> {
    (0..ctx.channels)
        .map(|c| {
            (0..ctx.horizon)
                .map(|t| wlan_airtime(profile, c, t, ctx.wlan_demand[c][t], &ctx.dm, &ctx.fc))
                .collect()
        })
        .collect()
}

/// Rate of SBS `j` on `(c, t)` against the rest of `profile`, Mbit/s.
pub fn profile_rate(j: usize, profile: &[ActionSchedule], c: usize, t: usize, ctx: &GameContext) -> f64 {
    let activity: Vec<f64> = profile.iter().map(|s| s.alpha[c][t]).collect();
    let waps = ctx.waps_per_channel.get(c).copied().unwrap_or(0);
    let per_wap = if waps > 0 && ctx.rates.wap_interference {
        wlan_airtime(profile, c, t, ctx.wlan_demand[c][t], &ctx.dm, &ctx.fc) / waps as f64
    } else {
        0.0
    };
    ctx.rates.rate(j, c, t, &activity, per_wap)
}

/// Throughput of SBS `j` summed over channels and epochs.
pub fn base_utility(j: usize, profile: &[ActionSchedule], ctx: &GameContext) -> f64 {
    let s = &profile[j];
    let mut u = 0.0;
    for t in 0..ctx.horizon {
        for c in 0..ctx.channels {
            let a = s.alpha[c][t];
            if a > 0.0 {
                u += a * ctx.rates.xi * profile_rate(j, profile, c, t, ctx);
            }
        }
    }
    u
}

/// Remaining demand `L̄` of SBS `j` for channel `c` at epoch `t`: its
/// arrivals minus what its other channels carry, floored at zero.
pub fn remaining_demand(j: usize, profile: &[ActionSchedule], c: usize, t: usize, ctx: &GameContext) -> f64 {
    let other: f64 = (0..ctx.channels)
        .filter(|&c2| c2 != c)
        .map(|c2| ctx.dm.served(profile[j].alpha[c2][t]))
        .sum();
    (ctx.sbs_demand[j][t] - other).max(0.0)
}

fn uses_channel(s: &ActionSchedule, c: usize) -> bool {
    s.x[c].iter().any(|&b| b)
}

/// Per-channel sums entering the inter-operator constraint for SBS `j`:
/// `(w_{j,c}, Σ_t α, Σ_t L̄)`.
fn operator_terms(j: usize, profile: &[ActionSchedule], c: usize, ctx: &GameContext) -> (f64, f64, f64) {
    let s = &profile[j];
    let w = s.x[c].iter().filter(|&&b| b).count() as f64;
    let a: f64 = s.alpha[c].iter().sum();
    let l: f64 = (0..ctx.horizon).map(|t| remaining_demand(j, profile, c, t, ctx)).sum();
    (w, a, l)
}

/// Sums entering the inter-technology constraint on channel `c`:
/// `(Σ LTE α, Σ LTE L̄, Σ WLAN α, Σ WLAN L)` over the horizon, where LTE
/// terms run over SBSs transmitting on `c` at each epoch.
fn technology_terms(profile: &[ActionSchedule], wlan: &[Vec<f64>], c: usize, ctx: &GameContext) -> (f64, f64, f64, f64) {
    let (mut a_l, mut l_l) = (0.0, 0.0);
    for t in 0..ctx.horizon {
        for (n, s) in profile.iter().enumerate() {
            if s.x[c][t] {
                a_l += s.alpha[c][t];
                l_l += remaining_demand(n, profile, c, t, ctx);
            }
        }
    }
    let a_w: f64 = wlan[c].iter().sum();
    let l_w: f64 = ctx.wlan_demand[c].iter().sum();
    (a_l, l_l, a_w, l_w)
}

/// Base utility and the three penalty terms subtracted from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub base: f64,
    pub occupancy: f64,
    pub inter_operator: f64,
    pub inter_technology: f64,
}

impl PenaltyBreakdown {
    pub fn penalized(&self) -> f64 {
        self.base - self.occupancy - self.inter_operator - self.inter_technology
    }

    pub fn total_penalty(&self) -> f64 {
        self.occupancy + self.inter_operator + self.inter_technology
    }
}

pub fn penalty_breakdown(j: usize, profile: &[ActionSchedule], ctx: &GameContext) -> PenaltyBreakdown {
    let rho = ctx.rho;
    let t2 = (ctx.horizon as f64).powi(2);
    let wlan = wlan_airtime_matrix(profile, ctx);

    let mut occupancy = 0.0;
    for c in 0..ctx.channels {
        for t in 0..ctx.horizon {
            let slack = ctx.fc.t_max - wlan[c][t] - lte_airtime(profile, c, t);
            occupancy += slack.min(0.0).powi(2);
        }
    }

    let mut inter_operator = 0.0;
    let mut inter_technology = 0.0;
    for c in (0..ctx.channels).filter(|&c| uses_channel(&profile[j], c)) {
        let (wj, aj, lj) = operator_terms(j, profile, c, ctx);
        if lj > 0.0 {
            let rj = aj / (wj * lj);
            for i in (0..profile.len()).filter(|&i| i != j && uses_channel(&profile[i], c)) {
                let (wi, ai, li) = operator_terms(i, profile, c, ctx);
                if li > 0.0 {
                    inter_operator += (rj - ai / (wi * li)).powi(2) / t2;
                }
            }
        }
        let (a_l, l_l, a_w, l_w) = technology_terms(profile, &wlan, c, ctx);
        if l_l > 0.0 && l_w > 0.0 {
            let d = a_l / (ctx.fc.p_lte * l_l) - a_w / (ctx.fc.p_wifi * l_w);
            inter_technology += d * d / t2;
        }
    }

    PenaltyBreakdown {
        base: base_utility(j, profile, ctx),
        occupancy: rho.rho1 * occupancy,
        inter_operator: rho.rho2 * inter_operator,
        inter_technology: rho.rho3 * inter_technology,
    }
}

/// Base utility minus the weighted squared violations of the coupled constraints.
pub fn penalized_utility(j: usize, profile: &[ActionSchedule], ctx: &GameContext) -> f64 {
    penalty_breakdown(j, profile, ctx).penalized()
}

/// Per-SBS violations of the constraints each player controls alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerViolations {
    /// `(c, t)` cells with `α > 0` but `x = 0`.
    pub access_without_selection: Vec<(usize, usize)>,
    /// Epochs selecting more than `min(M_c, C)` channels.
    pub selection_cap: Vec<usize>,
    /// Prefix epochs where cumulative airtime exceeds cumulative need, with the excess.
    pub demand_cap: Vec<(usize, f64)>,
    /// `(c, t)` cells with `α` outside `[0, 1]`.
    pub domain: Vec<(usize, usize)>,
}

impl PlayerViolations {
    pub fn is_empty(&self) -> bool {
        self.access_without_selection.is_empty()
            && self.selection_cap.is_empty()
            && self.demand_cap.is_empty()
            && self.domain.is_empty()
    }
}

/// Largest violation of each coupled constraint plus per-player hard checks.
///
/// Fairness gaps are expressed as the per-epoch airtime that would have to
/// move between the two sides to reach the weighted split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub occupancy: f64,
    pub inter_operator: f64,
    pub inter_technology: f64,
    pub players: Vec<PlayerViolations>,
}

impl ViolationReport {
    pub fn coupled_satisfied(&self, tol: f64) -> bool {
        self.occupancy <= tol && self.inter_operator <= tol && self.inter_technology <= tol
    }

    pub fn hard_satisfied(&self) -> bool {
        self.players.iter().all(PlayerViolations::is_empty)
    }

    /// Elementwise maximum, for aggregating over windows.
    pub fn merge_max(&mut self, other: &ViolationReport) {
        self.occupancy = self.occupancy.max(other.occupancy);
        self.inter_operator = self.inter_operator.max(other.inter_operator);
        self.inter_technology = self.inter_technology.max(other.inter_technology);
    }
}

/// Airtime that must move from `a` to `b` (or back) to split `a + b` in
/// proportion `k_a : k_b`.
pub fn fairness_gap(a: f64, b: f64, k_a: f64, k_b: f64) -> f64 {
    if !(k_a > 0.0 && k_b > 0.0) {
        return 0.0;
    }
    (a - (a + b) * k_a / (k_a + k_b)).abs()
}

pub fn check_constraints(profile: &[ActionSchedule], ctx: &GameContext, tol: f64) -> ViolationReport {
    let t_len = ctx.horizon as f64;
    let wlan = wlan_airtime_matrix(profile, ctx);
    let mut report = ViolationReport::default();

    for c in 0..ctx.channels {
        for t in 0..ctx.horizon {
            let excess = wlan[c][t] + lte_airtime(profile, c, t) - ctx.fc.t_max;
            report.occupancy = report.occupancy.max(excess.max(0.0));
        }
        let users: Vec<usize> = (0..profile.len()).filter(|&i| uses_channel(&profile[i], c)).collect();
        for (n, &j) in users.iter().enumerate() {
            let (wj, aj, lj) = operator_terms(j, profile, c, ctx);
            for &i in &users[n + 1..] {
                let (wi, ai, li) = operator_terms(i, profile, c, ctx);
                let gap = fairness_gap(aj / t_len, ai / t_len, wj * lj, wi * li);
                report.inter_operator = report.inter_operator.max(gap);
            }
        }
        if !users.is_empty() {
            let (a_l, l_l, a_w, l_w) = technology_terms(profile, &wlan, c, ctx);
            let gap = fairness_gap(a_l / t_len, a_w / t_len, ctx.fc.p_lte * l_l, ctx.fc.p_wifi * l_w);
            report.inter_technology = report.inter_technology.max(gap);
        }
    }

    report.players = profile
        .iter()
        .zip(&ctx.sbs_demand)
        .map(|(s, demand)| {
            let mut v = PlayerViolations::default();
            let cap = ctx.max_channels.min(ctx.channels);
            let (mut used, mut need) = (0.0, 0.0);
            for t in 0..ctx.horizon {
                for c in 0..ctx.channels {
                    let a = s.alpha[c][t];
                    if !s.x[c][t] && a != 0.0 {
                        v.access_without_selection.push((c, t));
                    }
                    if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
                        v.domain.push((c, t));
                    }
                }
                if s.selected_count(t) > cap {
                    v.selection_cap.push(t);
                }
                used += s.airtime_at(t);
                need += ctx.dm.required_airtime(demand[t]);
                if used > need + tol {
                    v.demand_cap.push((t, used - need));
                }
            }
            v
        })
        .collect();
    report
}

/// Multiplies each `ρ` by `growth` when its constraint is violated beyond `tol`.
pub fn incremental_penalty_update(rho: PenaltyCoefficients, report: &ViolationReport, tol: f64, growth: f64) -> PenaltyCoefficients {
    let bump = |r: f64, v: f64| if v > tol { r * growth } else { r };
    PenaltyCoefficients {
        rho1: bump(rho.rho1, report.occupancy),
        rho2: bump(rho.rho2, report.inter_operator),
        rho3: bump(rho.rho3, report.inter_technology),
    }
}

/// Probability distribution over a finite set of schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    pub support: Vec<ActionSchedule>,
    pub probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(support: Vec<ActionSchedule>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(GameError::Dimension("support and probabilities must match and be non-empty".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(GameError::Unnormalized(sum));
        }
        Ok(Self { support, probs })
    }

    pub fn pure(a: ActionSchedule) -> Self {
        Self {
            support: vec![a],
            probs: vec![1.0],
        }
    }

    pub fn uniform(support: Vec<ActionSchedule>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }
}

/// Expected penalized utility with a standard error when sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// Exact enumeration is used up to this many joint support points.
pub const EXACT_PROFILE_LIMIT: usize = 100_000;

fn unrank(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (k, &s) in sizes.iter().enumerate().rev() {
        out[k] = idx % s;
        idx /= s;
    }
    out
}

/// `E[û_j]` under the product of `strategies`.
pub fn expected_utility(j: usize, strategies: &[MixedStrategy], ctx: &GameContext, n_samples: usize, seed: u64) -> Expectation {
    let sizes: Vec<usize> = strategies.iter().map(|s| s.support.len()).collect();
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
    let build = |picks: &[usize]| -> Vec<ActionSchedule> {
        strategies.iter().zip(picks).map(|(s, &k)| s.support[k].clone()).collect()
    };
    match total {
        Some(n) if n <= EXACT_PROFILE_LIMIT => {
            let terms: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|idx| {
                    let picks = unrank(idx, &sizes);
                    let p: f64 = strategies.iter().zip(&picks).map(|(s, &k)| s.probs[k]).product();
                    if p == 0.0 {
                        0.0
                    } else {
                        p * penalized_utility(j, &build(&picks), ctx)
                    }
                })
                .collect();
            Expectation {
                value: terms.iter().sum(),
                std_error: None,
            }
        }
        _ => {
            let n = n_samples.max(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dists: Vec<WeightedIndex<f64>> = strategies
                .iter()
                .map(|s| WeightedIndex::new(&s.probs).expect("validated probabilities"))
                .collect();
            let draws: Vec<Vec<usize>> = (0..n)
                .map(|_| dists.iter().map(|d| d.sample(&mut rng)).collect())
                .collect();
            let values: Vec<f64> = draws.par_iter().map(|p| penalized_utility(j, &build(p), ctx)).collect();
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Expectation {
                value: mean,
                std_error: Some((var / n as f64).sqrt()),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    pub current: f64,
    /// Candidate index achieving the best deviation value.
    pub best: Option<usize>,
    pub best_value: f64,
}

/// Largest gain SBS `j` can get by switching to a pure candidate while
/// the others keep their strategies. Ties go to the lowest candidate index.
pub fn best_response_gap(
    j: usize,
    strategies: &[MixedStrategy],
    candidates: &[ActionSchedule],
    ctx: &GameContext,
    n_samples: usize,
    seed: u64,
) -> GapReport {
    let current = expected_utility(j, strategies, ctx, n_samples, seed).value;
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|a| {
            let mut dev = strategies.to_vec();
            dev[j] = MixedStrategy::pure(a.clone());
            expected_utility(j, &dev, ctx, n_samples, seed).value
        })
        .collect();
    let mut best = None;
    let mut best_value = f64::NEG_INFINITY;
    for (k, &v) in values.iter().enumerate() {
        if v > best_value {
            best_value = v;
            best = Some(k);
        }
    }
    GapReport {
        gap: (best_value - current).max(0.0),
        current,
        best,
        best_value,
    }
}

/// Every schedule built from the selection vocabulary and an α grid.
///
/// Unselected channels carry `α = 0`; each selected channel takes every
/// grid level. Ordering is lexicographic over (epoch, vocabulary entry,
/// grid index per selected channel).
pub fn enumerate_actions(channels: usize, max_channels: usize, horizon: usize, grid: &[f64]) -> Vec<ActionSchedule> {
    let vocab = SelectionVocabulary::new(channels, max_channels);
    let mut per_epoch: Vec<Vec<(usize, f64)>> = Vec::new();
    for k in 0..vocab.len() {
        let chosen = vocab.channels_of(k);
        let combos = grid.len().pow(chosen.len() as u32);
        for idx in 0..combos {
            let levels = unrank(idx, &vec![grid.len(); chosen.len()]);
            let mut cells = Vec::new();
            for (&c, &g) in chosen.iter().zip(&levels) {
                cells.push((c, grid[g]));
            }
            per_epoch.push(cells);
        }
    }
    let n = per_epoch.len();
    let total = n.pow(horizon as u32);
    (0..total)
        .map(|idx| {
            let picks = unrank(idx, &vec![n; horizon]);
            let mut s = ActionSchedule::zeros(channels, horizon);
            for (t, &p) in picks.iter().enumerate() {
                for &(c, a) in &per_epoch[p] {
                    s.set(c, t, true, a);
                }
            }
            s
        })
        .collect()
}

/// The default 11-level grid `0.0, 0.1, …, 1.0`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Pure profiles (as action indices) from which no player gains more than
/// `eps` by deviating within its own action list.
pub fn pure_equilibria(actions: &[Vec<ActionSchedule>], ctx: &GameContext, eps: f64) -> Vec<Vec<usize>> {
    let sizes: Vec<usize> = actions.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let build = |picks: &[usize]| -> Vec<ActionSchedule> { actions.iter().zip(picks).map(|(a, &k)| a[k].clone()).collect() };
    (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let picks = unrank(idx, &sizes);
            let profile = build(&picks);
            for j in 0..actions.len() {
                let here = penalized_utility(j, &profile, ctx);
                let mut dev = profile.clone();
                for alt in &actions[j] {
                    dev[j] = alt.clone();
                    if penalized_utility(j, &dev, ctx) > here + eps {
                        return None;
                    }
                }
            }
            Some(picks)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn env() -> Arc<RadioEnvironment> {
        Arc::new(RadioEnvironment {
            sbs_positions: vec![(0.0, 0.0), (60.0, 0.0)],
            wap_positions: vec![],
            ue_positions: vec![vec![(20.0, 0.0)], vec![(40.0, 0.0)]],
            sbs_power_dbm: 20.0,
            wap_power_dbm: 20.0,
            bandwidth: vec![20e6; 3],
            noise_psd_dbm_hz: -174.0,
            shadowing: None,
        })
    }

    fn ctx(channels: usize, horizon: usize, sbs: Vec<Vec<f64>>, wlan: Vec<Vec<f64>>, rho: PenaltyCoefficients) -> GameContext {
        let rates = RateModel::new(env(), 0.95);
        GameContext {
            channels,
            horizon,
            max_channels: 1,
            sbs_demand: sbs,
            wlan_demand: wlan,
            waps_per_channel: vec![1; channels],
            dm: DemandModel::new(100.0).unwrap(),
            fc: FairnessConfig::default(),
            rho,
            rates: Arc::new(rates),
        }
    }

    fn one(c: usize, t_len: usize, alpha: &[(usize, usize, f64)]) -> ActionSchedule {
        let mut s = ActionSchedule::zeros(c, t_len);
        for &(c, t, a) in alpha {
            s.set(c, t, true, a);
        }
        s
    }

    fn rho(v: f64) -> PenaltyCoefficients {
        PenaltyCoefficients { rho1: v, rho2: v, rho3: v }
    }

    #[test]
    fn zero_schedule_has_zero_utility() {
        let g = ctx(2, 1, vec![vec![10.0]; 2], vec![vec![0.0]; 2], rho(0.0));
        let p = vec![ActionSchedule::zeros(2, 1); 2];
        assert_eq!(base_utility(0, &p, &g), 0.0);
    }

    #[test]
    fn lone_sbs_utility_is_alpha_xi_rate() {
        let g = ctx(1, 1, vec![vec![10.0], vec![0.0]], vec![vec![0.0]], rho(0.0));
        let p = vec![one(1, 1, &[(0, 0, 0.3)]), ActionSchedule::zeros(1, 1)];
        let r = crate::mac::laa_rate(g.rates.env(), 0, 0, 0, &[]).unwrap() / 1e6;
        assert!((base_utility(0, &p, &g) - 0.3 * 0.95 * r).abs() < 1e-9);
    }

    #[test]
    fn co_channel_neighbour_lowers_utility() {
        let g = ctx(2, 1, vec![vec![10.0]; 2], vec![vec![0.0]; 2], rho(0.0));
        let alone = vec![one(2, 1, &[(0, 0, 0.3)]), ActionSchedule::zeros(2, 1)];
        let shared = vec![one(2, 1, &[(0, 0, 0.3)]), one(2, 1, &[(0, 0, 0.3)])];
        let apart = vec![one(2, 1, &[(0, 0, 0.3)]), one(2, 1, &[(1, 0, 0.3)])];
        assert!(base_utility(0, &shared, &g) < base_utility(0, &alone, &g));
        assert_eq!(base_utility(0, &apart, &g), base_utility(0, &alone, &g));
    }

    #[test]
    fn wlan_airtime_branches() {
        let dm = DemandModel::new(100.0).unwrap();
        let fc = FairnessConfig::default();
        let none = vec![ActionSchedule::zeros(1, 1)];
        assert!((wlan_airtime(&none, 0, 0, 40.0, &dm, &fc) - 0.4).abs() < 1e-12);
        let full = vec![one(1, 1, &[(0, 0, 0.9)])];
        assert_eq!(wlan_airtime(&full, 0, 0, 40.0, &dm, &fc), 0.0);
        let part = vec![one(1, 1, &[(0, 0, 0.6)])];
        assert!((wlan_airtime(&part, 0, 0, 50.0, &dm, &fc) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_demand_match_has_no_violations() {
        let g = ctx(1, 3, vec![vec![20.0, 30.0, 10.0]], vec![vec![0.0; 3]], rho(1.0));
        let p = vec![one(1, 3, &[(0, 0, 0.2), (0, 1, 0.3), (0, 2, 0.1)])];
        let r = check_constraints(&p, &g, 1e-9);
        assert_eq!(r.occupancy, 0.0);
        assert_eq!(r.inter_operator, 0.0);
        assert_eq!(r.inter_technology, 0.0);
        assert!(r.hard_satisfied(), "{r:?}");
    }

    #[test]
    fn access_without_selection_is_flagged() {
        let g = ctx(1, 1, vec![vec![20.0]], vec![vec![0.0]], rho(1.0));
        let mut s = ActionSchedule::zeros(1, 1);
        s.alpha[0][0] = 0.1;
        let r = check_constraints(&[s], &g, 1e-9);
        assert_eq!(r.players[0].access_without_selection, vec![(0, 0)]);
    }

    #[test]
    fn symmetric_pair_is_operator_fair() {
        let g = ctx(1, 2, vec![vec![20.0; 2]; 2], vec![vec![10.0; 2]], rho(1.0));
        let s = one(1, 2, &[(0, 0, 0.3), (0, 1, 0.3)]);
        let r = check_constraints(&[s.clone(), s], &g, 1e-9);
        assert_eq!(r.inter_operator, 0.0);
    }

    #[test]
    fn penalties_vanish_when_satisfied_or_unweighted() {
        let g = ctx(1, 1, vec![vec![20.0]], vec![vec![20.0]], rho(5.0));
        let fair = vec![one(1, 1, &[(0, 0, 0.2)])];
        let b = penalty_breakdown(0, &fair, &g);
        assert_eq!(b.total_penalty(), 0.0);
        assert_eq!(penalized_utility(0, &fair, &g), base_utility(0, &fair, &g));

        let g0 = ctx(1, 1, vec![vec![20.0]], vec![vec![80.0]], PenaltyCoefficients::ZERO);
        let greedy = vec![one(1, 1, &[(0, 0, 1.0)])];
        assert_eq!(penalized_utility(0, &greedy, &g0), base_utility(0, &greedy, &g0));
    }

    #[test]
    fn occupancy_penalty_by_hand() {
        // LTE alone fills 1.0 of the channel; t_max = 0.9 so the slack is −0.1
        // and the penalty is ρ1·0.01.
        let g = ctx(
            1,
            1,
            vec![vec![200.0]],
            vec![vec![0.0]],
            PenaltyCoefficients { rho1: 10.0, rho2: 0.0, rho3: 0.0 },
        );
        let p = vec![one(1, 1, &[(0, 0, 1.0)])];
        let b = penalty_breakdown(0, &p, &g);
        assert!((b.occupancy - 0.1).abs() < 1e-12, "{b:?}");
        assert_eq!(b.inter_operator, 0.0);
    }

    #[test]
    fn technology_penalty_by_hand() {
        // One epoch, LTE demand 20 gets α = 0.5, WLAN demand 20 gets
        // min(0.2, 0.9 − 0.5) = 0.2. Ratios 0.5/20 − 0.2/20 = 0.015, squared 2.25e-4.
        let g = ctx(
            1,
            1,
            vec![vec![20.0]],
            vec![vec![20.0]],
            PenaltyCoefficients { rho1: 0.0, rho2: 0.0, rho3: 1000.0 },
        );
        let p = vec![one(1, 1, &[(0, 0, 0.5)])];
        let b = penalty_breakdown(0, &p, &g);
        assert!((b.inter_technology - 0.225).abs() < 1e-12, "{b:?}");
        let r = check_constraints(&p, &g, 1e-9);
        // Fair split of 0.7 in 1:1 is 0.35 each, so 0.15 must move.
        assert!((r.inter_technology - 0.15).abs() < 1e-12);
    }

    #[test]
    fn operator_penalty_by_hand() {
        // Two SBSs on channel 0 for one epoch, demands 20 and 40, α 0.3 and 0.3.
        // Ratios 0.3/20 = 0.015 and 0.3/40 = 0.0075; squared gap 5.625e-5.
        let g = ctx(
            1,
            1,
            vec![vec![20.0], vec![40.0]],
            vec![vec![0.0]],
            PenaltyCoefficients { rho1: 0.0, rho2: 1e4, rho3: 0.0 },
        );
        let s = one(1, 1, &[(0, 0, 0.3)]);
        let p = vec![s.clone(), s];
        let b = penalty_breakdown(0, &p, &g);
        assert!((b.inter_operator - 0.5625).abs() < 1e-9, "{b:?}");
        // Fair split of 0.6 in 1:2 is 0.2 / 0.4.
        let r = check_constraints(&p, &g, 1e-9);
        assert!((r.inter_operator - 0.1).abs() < 1e-12);
    }

    #[test]
    fn penalty_update_rules() {
        let r0 = PenaltyCoefficients { rho1: 1.0, rho2: 2.0, rho3: 3.0 };
        let clean = ViolationReport::default();
        assert_eq!(incremental_penalty_update(r0, &clean, 0.02, 10.0), r0);
        let tech = ViolationReport {
            inter_technology: 0.5,
            ..Default::default()
        };
        let r1 = incremental_penalty_update(r0, &tech, 0.02, 10.0);
        assert_eq!(r1, PenaltyCoefficients { rho1: 1.0, rho2: 2.0, rho3: 30.0 });
        let mut r = r0;
        for _ in 0..5 {
            r = incremental_penalty_update(r, &tech, 0.02, 10.0);
        }
        assert!((r.rho3 - 3.0 * 1e5).abs() < 1e-6);
    }

    #[test]
    fn projection_respects_backlog() {
        let dm = DemandModel::new(100.0).unwrap();
        let s = one(2, 3, &[(0, 0, 0.5), (1, 0, 0.5), (0, 1, 0.1), (0, 2, 0.9)]);
        let p = project_to_demand(&s, &[30.0, 30.0, 10.0], &dm);
        assert!((p.airtime_at(0) - 0.3).abs() < 1e-12);
        assert!((p.alpha[0][0] - 0.15).abs() < 1e-12);
        assert!((p.airtime_at(1) - 0.1).abs() < 1e-12);
        // Backlog 20 carried plus 10 new.
        assert!((p.airtime_at(2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn enumerated_action_count() {
        let grid = default_alpha_grid();
        assert_eq!(enumerate_actions(3, 1, 1, &grid).len(), 34);
        assert_eq!(enumerate_actions(2, 2, 1, &grid).len(), 1 + 2 * 11 + 121);
        assert_eq!(enumerate_actions(2, 1, 2, &[0.0, 1.0]).len(), 25);
    }

    #[test]
    fn point_mass_expectation_is_pure_value() {
        let g = ctx(2, 1, vec![vec![20.0]; 2], vec![vec![10.0]; 2], rho(100.0));
        let a = one(2, 1, &[(0, 0, 0.3)]);
        let b = one(2, 1, &[(0, 0, 0.4)]);
        let pure = vec![a.clone(), b.clone()];
        let want = penalized_utility(0, &pure, &g);
        let e = expected_utility(0, &[MixedStrategy::pure(a.clone()), MixedStrategy::pure(b.clone())], &g, 10, 0);
        assert_eq!(e.value, want);
        let c = one(2, 1, &[(1, 0, 0.2)]);
        let zero_weight = MixedStrategy::new(vec![a.clone(), c], vec![1.0, 0.0]).unwrap();
        let e = expected_utility(0, &[zero_weight, MixedStrategy::pure(b)], &g, 10, 0);
        assert_eq!(e.value, want);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let g = ctx(2, 1, vec![vec![20.0]; 2], vec![vec![10.0]; 2], rho(100.0));
        let mk = |k: usize| {
            MixedStrategy::new(
                vec![one(2, 1, &[(0, 0, 0.2)]), one(2, 1, &[(1, 0, 0.5)]), one(2, 1, &[(k % 2, 0, 0.1)])],
                vec![0.5, 0.3, 0.2],
            )
            .unwrap()
        };
        let strategies = vec![mk(0), mk(1)];
        let exact = expected_utility(0, &strategies, &g, 0, 0);
        assert!(exact.std_error.is_none());

        // Force the sampled branch by padding the support past the exact limit.
        let mut big = strategies.clone();
        let pad = 400;
        for s in big.iter_mut() {
            let extra: Vec<ActionSchedule> = (0..pad).map(|_| s.support[0].clone()).collect();
            let mut probs: Vec<f64> = s.probs.clone();
            probs[0] = 0.0;
            s.support.extend(extra);
            probs.extend(std::iter::repeat_n(0.5 / pad as f64, pad));
            s.probs = probs;
        }
        let mc = expected_utility(0, &big, &g, 100_000, 17);
        let se = mc.std_error.expect("sampled");
        assert!((mc.value - exact.value).abs() <= 3.0 * se, "{} vs {} (se {se})", mc.value, exact.value);
    }

    #[test]
    fn gap_zero_without_alternatives_and_positive_when_stuck() {
        let g = ctx(2, 1, vec![vec![20.0]; 2], vec![vec![0.0]; 2], rho(0.0));
        let a = one(2, 1, &[(0, 0, 0.2)]);
        let strategies = vec![MixedStrategy::pure(a.clone()), MixedStrategy::pure(a.clone())];
        let rep = best_response_gap(0, &strategies, &[a.clone()], &g, 10, 0);
        assert_eq!(rep.gap, 0.0);
        let free = one(2, 1, &[(1, 0, 0.2)]);
        let rep = best_response_gap(0, &strategies, &[a, free], &g, 10, 0);
        assert!(rep.gap > 0.0);
        assert_eq!(rep.best, Some(1));
    }

    proptest::proptest! {
        #[test]
        fn breakdown_reconstructs_base(a0 in 0.0f64..1.0, a1 in 0.0f64..1.0, c1 in 0usize..2, l in 1.0f64..80.0, w in 0.0f64..80.0, r in 0.0f64..1e4) {
            let g = ctx(2, 1, vec![vec![l], vec![l * 0.5]], vec![vec![w]; 2], rho(r));
            let p = vec![one(2, 1, &[(0, 0, a0)]), one(2, 1, &[(c1, 0, a1)])];
            let b = penalty_breakdown(0, &p, &g);
            proptest::prop_assert!((penalized_utility(0, &p, &g) + b.total_penalty() - b.base).abs() <= 1e-9 * b.base.abs().max(1.0));
            proptest::prop_assert!((b.penalized() + b.occupancy + b.inter_operator + b.inter_technology - b.base).abs() <= 1e-9 * b.base.abs().max(1.0));
        }

        #[test]
        fn penalty_strictly_decreasing_in_rho(r in 1.0f64..1e3, k in 1.1f64..10.0) {
            let base = PenaltyCoefficients { rho1: 0.0, rho2: 0.0, rho3: r };
            let more = PenaltyCoefficients { rho3: r * k, ..base };
            let g1 = ctx(1, 1, vec![vec![20.0]], vec![vec![20.0]], base);
            let g2 = GameContext { rho: more, ..g1.clone() };
            let p = vec![one(1, 1, &[(0, 0, 0.5)])];
            proptest::prop_assert!(penalized_utility(0, &p, &g2) < penalized_utility(0, &p, &g1));
        }

        #[test]
        fn demand_cap_monotone_in_demand(demand in proptest::collection::vec(0.0f64..50.0, 4), alphas in proptest::collection::vec(0.0f64..0.5, 4), bump in 0.0f64..50.0, at in 0usize..4) {
            let s = one(1, 4, &alphas.iter().enumerate().map(|(t, a)| (0, t, *a)).collect::<Vec<_>>());
            let g = ctx(1, 4, vec![demand.clone()], vec![vec![0.0; 4]], rho(0.0));
            let before: Vec<usize> = check_constraints(&[s.clone()], &g, 1e-12).players[0].demand_cap.iter().map(|v| v.0).collect();
            let mut more = demand;
            more[at] += bump;
            let g2 = ctx(1, 4, vec![more], vec![vec![0.0; 4]], rho(0.0));
            let after: Vec<usize> = check_constraints(&[s], &g2, 1e-12).players[0].demand_cap.iter().map(|v| v.0).collect();
            // Extra demand only loosens cumulative caps.
            for t in &after {
                proptest::prop_assert!(before.contains(t));
            }
        }

        #[test]
        fn projection_never_exceeds_demand(demand in proptest::collection::vec(0.0f64..50.0, 5), alphas in proptest::collection::vec(0.0f64..1.0, 5)) {
            let g = ctx(1, 5, vec![demand.clone()], vec![vec![0.0; 5]], rho(0.0));
            let s = one(1, 5, &alphas.iter().enumerate().map(|(t, a)| (0, t, *a)).collect::<Vec<_>>());
            let p = project_to_demand(&s, &demand, &g.dm);
            let r = check_constraints(&[p.clone()], &g, 1e-9);
            proptest::prop_assert!(r.players[0].demand_cap.is_empty());
            for t in 0..5 {
                proptest::prop_assert!(p.alpha[0][t] <= s.alpha[0][t] + 1e-15);
            }
        }
    }
}
