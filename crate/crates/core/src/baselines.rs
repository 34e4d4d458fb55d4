//! Reference allocators: reactive instantaneous fairness, and exhaustive
//! proportional-fair / max-throughput search at `T = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{enumerate_actions, lte_airtime, profile_rate, GameContext};
use crate::schedule::SelectionVocabulary;
use crate::ActionSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("{profiles} profiles exceed the exhaustive-search limit of {limit}; coarsen the alpha grid")]
    TooLarge { profiles: u128, limit: u128 },
    #[error("exhaustive search needs a single-epoch context, got T = {0}")]
    Horizon(usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("no feasible profile")]
    Infeasible,
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Largest number of joint profiles searched exhaustively.
pub const PROFILE_LIMIT: u128 = 10_000_000;

/// Guard added inside the PF logarithm.
pub const LOG_GUARD: f64 = 1e-9;

/// Discretized action space for exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub alpha_levels: Vec<f64>,
    pub feasible_x: SelectionVocabulary,
}

impl ActionGrid {
    pub fn new(alpha_levels: Vec<f64>, channels: usize, max_channels: usize) -> Result<Self> {
        if alpha_levels.first() != Some(&0.0) {
            return Err(BaselineError::Grid("levels must start at 0".into()));
        }
        if alpha_levels.windows(2).any(|w| !(w[0] < w[1])) || alpha_levels.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(BaselineError::Grid("levels must be strictly increasing within [0, 1]".into()));
        }
        Ok(Self {
            alpha_levels,
            feasible_x: SelectionVocabulary::new(channels, max_channels),
        })
    }

    /// Eleven levels `0.0, 0.1, …, 1.0`.
    pub fn standard(channels: usize, max_channels: usize) -> Self {
        Self::new(crate::game::default_alpha_grid(), channels, max_channels).expect("valid default grid")
    }

    pub fn actions(&self) -> Vec<ActionSchedule> {
        enumerate_actions(
            self.feasible_x.channels(),
            self.feasible_x.max_channels(),
            1,
            &self.alpha_levels,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    ProportionalFair,
    TotalThroughput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub profile: Vec<ActionSchedule>,
    pub objective: f64,
    pub rates: Vec<f64>,
    pub profiles_searched: u128,
}

/// Single-epoch throughput of every SBS, Mbit/s.
pub fn throughputs(profile: &[ActionSchedule], ctx: &GameContext) -> Vec<f64> {
    (0..profile.len())
        .map(|j| {
            (0..ctx.channels)
                .map(|c| {
                    let a = profile[j].alpha[c][0];
                    if a > 0.0 {
                        a * ctx.rates.xi * profile_rate(j, profile, c, 0, ctx)
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

pub fn objective_value(objective: Objective, rates: &[f64]) -> f64 {
    match objective {
        Objective::ProportionalFair => rates.iter().map(|r| (r + LOG_GUARD).ln()).sum(),
        Objective::TotalThroughput => rates.iter().sum(),
    }
}

/// Actions each SBS may take alone: within its demand at `t = 0`.
pub fn player_actions(ctx: &GameContext, grid: &ActionGrid) -> Vec<Vec<ActionSchedule>> {
    let all = grid.actions();
    ctx.sbs_demand
        .iter()
        .map(|d| {
            let need = ctx.dm.required_airtime(d[0]);
            all.iter()
                .filter(|a| a.airtime_at(0) <= need + 1e-12)
                .cloned()
                .collect()
        })
        .collect()
}

/// Whether the joint profile keeps LTE occupancy of every channel within `t_max`.
pub fn occupancy_ok(profile: &[ActionSchedule], ctx: &GameContext) -> bool {
    (0..ctx.channels).all(|c| lte_airtime(profile, c, 0) <= ctx.fc.t_max + 1e-12)
}

fn unrank(mut idx: u128, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (k, &s) in sizes.iter().enumerate().rev() {
        out[k] = (idx % s as u128) as usize;
        idx /= s as u128;
    }
    out
}

/// Exact argmax of `objective` over the grid. Ties go to the lowest
/// profile index in mixed-radix order over the per-player action lists.
pub fn exhaustive_solve(ctx: &GameContext, grid: &ActionGrid, objective: Objective) -> Result<SearchResult> {
    if ctx.horizon != 1 {
        return Err(BaselineError::Horizon(ctx.horizon));
    }
    let actions = player_actions(ctx, grid);
    let sizes: Vec<usize> = actions.iter().map(Vec::len).collect();
    let total: u128 = sizes.iter().map(|&s| s as u128).product();
    if total > PROFILE_LIMIT {
        return Err(BaselineError::TooLarge {
            profiles: total,
            limit: PROFILE_LIMIT,
        });
    }
    if actions.is_empty() {
        return Ok(SearchResult {
            profile: Vec::new(),
            objective: 0.0,
            rates: Vec::new(),
            profiles_searched: 1,
        });
    }
    let chunk = 4096u128;
    let chunks = total.div_ceil(chunk);
    let best = (0..chunks)
        .into_par_iter()
        .filter_map(|k| {
            let mut best: Option<(f64, u128)> = None;
            for idx in k * chunk..((k + 1) * chunk).min(total) {
                let picks = unrank(idx, &sizes);
                let profile: Vec<ActionSchedule> = actions.iter().zip(&picks).map(|(a, &p)| a[p].clone()).collect();
                if !occupancy_ok(&profile, ctx) {
                    continue;
                }
                let v = objective_value(objective, &throughputs(&profile, ctx));
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, idx));
                }
            }
            best
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let (value, idx) = best.ok_or(BaselineError::Infeasible)?;
    let picks = unrank(idx, &sizes);
    let profile: Vec<ActionSchedule> = actions.iter().zip(&picks).map(|(a, &p)| a[p].clone()).collect();
    Ok(SearchResult {
        rates: throughputs(&profile, ctx),
        profile,
        objective: value,
        profiles_searched: total,
    })
}

pub fn pf_solve(ctx: &GameContext, grid: &ActionGrid) -> Result<SearchResult> {
    exhaustive_solve(ctx, grid, Objective::ProportionalFair)
}

pub fn tnt_solve(ctx: &GameContext, grid: &ActionGrid) -> Result<SearchResult> {
    exhaustive_solve(ctx, grid, Objective::TotalThroughput)
}

/// Splits `capacity` among claims in proportion to `weight·claim`, never
/// granting more than a claim; surplus is redistributed.
pub fn weighted_water_fill(claims: &[f64], weights: &[f64], capacity: f64) -> Vec<f64> {
    let total: f64 = claims.iter().sum();
    if total <= capacity {
        return claims.to_vec();
    }
    let mut grant = vec![0.0; claims.len()];
    let mut open: Vec<usize> = (0..claims.len()).filter(|&i| claims[i] > 0.0).collect();
    let mut left = capacity.max(0.0);
    while !open.is_empty() && left > 0.0 {
        let mass: f64 = open.iter().map(|&i| weights[i] * claims[i]).sum();
        if mass <= 0.0 {
            break;
        }
        let mut capped = Vec::new();
        for &i in &open {
            let share = left * weights[i] * claims[i] / mass;
            if grant[i] + share >= claims[i] {
                capped.push(i);
            }
        }
        if capped.is_empty() {
            for &i in &open {
                grant[i] += left * weights[i] * claims[i] / mass;
            }
            break;
        }
        for &i in &capped {
            left -= claims[i] - grant[i];
            grant[i] = claims[i];
        }
        open.retain(|i| !capped.contains(i));
    }
    grant
}

/// Serves epoch-`0` demand of `ctx` with no look-ahead and no carry-over.
///
/// SBSs pick channels one at a time by largest residual capacity (lowest
/// index on ties), placing as much of their need as fits before moving to
/// the next channel, up to `M_c` channels. Each channel's `t_max` is then
/// split between the SBSs and WLAN in proportion to priority-weighted
/// need, so fairness holds within the epoch itself.
pub fn reactive_allocate(ctx: &GameContext) -> Vec<ActionSchedule> {
    let (c_len, j_len) = (ctx.channels, ctx.players());
    let t_max = ctx.fc.t_max;
    let wlan_need: Vec<f64> = (0..c_len).map(|c| ctx.dm.required_airtime(ctx.wlan_demand[c][0])).collect();
    let mut residual: Vec<f64> = wlan_need.iter().map(|w| t_max - w).collect();
    let mut claims = vec![vec![0.0; c_len]; j_len];

    for j in 0..j_len {
        let mut need = ctx.dm.required_airtime(ctx.sbs_demand[j][0]);
        let cap = ctx.max_channels.min(c_len);
        let mut used = vec![false; c_len];
        for k in 0..cap {
            if need <= 0.0 {
                break;
            }
            let Some(c) = (0..c_len)
                .filter(|&c| !used[c])
                .fold(None, |best: Option<usize>, c| match best {
                    Some(b) if residual[b] >= residual[c] => Some(b),
                    _ => Some(c),
                })
            else {
                break;
            };
            used[c] = true;
            let last = k + 1 == cap || (0..c_len).all(|c2| used[c2]);
            let put = if last { need } else { need.min(residual[c].max(0.0)) };
            if put <= 0.0 {
                continue;
            }
            claims[j][c] = put;
            residual[c] -= put;
            need -= put;
        }
    }

    let mut out = vec![ActionSchedule::zeros(c_len, 1); j_len];
    for c in 0..c_len {
        let mut c_claims: Vec<f64> = (0..j_len).map(|j| claims[j][c]).collect();
        let mut weights = vec![ctx.fc.p_lte; j_len];
        c_claims.push(wlan_need[c]);
        weights.push(ctx.fc.p_wifi);
        let grant = weighted_water_fill(&c_claims, &weights, t_max);
        for j in 0..j_len {
            if claims[j][c] > 0.0 {
                out[j].set(c, 0, true, grant[j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{DemandModel, FairnessConfig, PenaltyCoefficients, RateModel};
    use crate::mac::RadioEnvironment;
    use std::sync::Arc;

    fn env(ue_dist: &[f64]) -> Arc<RadioEnvironment> {
        Arc::new(RadioEnvironment {
            sbs_positions: (0..ue_dist.len()).map(|j| (j as f64 * 150.0, 0.0)).collect(),
            wap_positions: vec![],
            ue_positions: ue_dist.iter().enumerate().map(|(j, d)| vec![(j as f64 * 150.0 + d, 0.0)]).collect(),
            sbs_power_dbm: 20.0,
            wap_power_dbm: 20.0,
            bandwidth: vec![20e6; 3],
            noise_psd_dbm_hz: -174.0,
            shadowing: None,
        })
    }

    fn ctx(channels: usize, sbs: &[f64], wlan: &[f64], ue_dist: &[f64]) -> GameContext {
        GameContext {
            channels,
            horizon: 1,
            max_channels: 1,
            sbs_demand: sbs.iter().map(|&d| vec![d]).collect(),
            wlan_demand: wlan.iter().map(|&d| vec![d]).collect(),
            waps_per_channel: vec![1; channels],
            dm: DemandModel::new(100.0).unwrap(),
            fc: FairnessConfig::default(),
            rho: PenaltyCoefficients::ZERO,
            rates: Arc::new(RateModel::new(env(ue_dist), 0.95)),
        }
    }

    #[test]
    fn reactive_unconstrained() {
        let g = ctx(1, &[30.0], &[0.0], &[30.0]);
        let p = reactive_allocate(&g);
        assert!((p[0].alpha[0][0] - 0.3).abs() < 1e-12);
        assert!(p[0].x[0][0]);
    }

    #[test]
    fn reactive_equal_split_when_congested() {
        let g = ctx(1, &[60.0], &[60.0], &[30.0]);
        let p = reactive_allocate(&g);
        assert!((p[0].alpha[0][0] - 0.45).abs() < 1e-12);
        let w = crate::game::wlan_airtime(&p, 0, 0, 60.0, &g.dm, &g.fc);
        assert!((w - 0.45).abs() < 1e-12);
    }

    #[test]
    fn reactive_caps_at_t_max() {
        let g = ctx(1, &[150.0], &[0.0], &[30.0]);
        let p = reactive_allocate(&g);
        assert!((p[0].alpha[0][0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn reactive_spreads_sbs_across_channels() {
        let g = ctx(2, &[30.0, 30.0], &[10.0, 20.0], &[30.0, 30.0]);
        let p = reactive_allocate(&g);
        assert!(p[0].x[0][0] && !p[0].x[1][0]);
        assert!(p[1].x[1][0], "second SBS should take the emptier channel");
    }

    #[test]
    fn water_fill_respects_claims() {
        let g = weighted_water_fill(&[0.1, 0.8, 0.8], &[1.0, 1.0, 1.0], 0.9);
        assert!((g[0] - 0.9 * 0.1 / 1.7).abs() < 1e-12);
        let g = weighted_water_fill(&[0.1, 0.8], &[100.0, 1.0], 0.5);
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[1] - 0.4).abs() < 1e-12);
        assert_eq!(weighted_water_fill(&[0.2, 0.3], &[1.0, 1.0], 0.9), vec![0.2, 0.3]);
    }

    #[test]
    fn single_sbs_pf_equals_tnt() {
        let g = ctx(2, &[50.0], &[0.0, 0.0], &[40.0]);
        let grid = ActionGrid::standard(2, 1);
        let pf = pf_solve(&g, &grid).unwrap();
        let tnt = tnt_solve(&g, &grid).unwrap();
        assert_eq!(pf.profile, tnt.profile);
        assert!((pf.profile[0].airtime_at(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_takes_disjoint_channels() {
        let g = ctx(2, &[50.0, 50.0], &[0.0, 0.0], &[40.0, 40.0]);
        let mut g = g;
        // Put the two SBSs close so co-channel operation hurts.
        let mut e = (*g.rates.env()).clone();
        e.sbs_positions[1] = (50.0, 0.0);
        e.ue_positions[1] = vec![(90.0, 0.0)];
        g.rates = Arc::new(RateModel::new(Arc::new(e), 0.95));
        let pf = pf_solve(&g, &ActionGrid::standard(2, 1)).unwrap();
        let c0 = pf.profile[0].x.iter().position(|r| r[0]).unwrap();
        let c1 = pf.profile[1].x.iter().position(|r| r[0]).unwrap();
        assert_ne!(c0, c1);
    }

    #[test]
    fn zero_demand_gets_nothing() {
        let g = ctx(2, &[0.0, 50.0], &[0.0, 0.0], &[40.0, 40.0]);
        let pf = pf_solve(&g, &ActionGrid::standard(2, 1)).unwrap();
        assert_eq!(pf.profile[0].airtime_at(0), 0.0);
    }

    #[test]
    fn empty_network() {
        let g = ctx(2, &[], &[0.0, 0.0], &[]);
        let r = tnt_solve(&g, &ActionGrid::standard(2, 1)).unwrap();
        assert!(r.profile.is_empty());
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn size_limit() {
        let mut g = ctx(3, &[100.0; 5], &[0.0; 3], &[40.0; 5]);
        g.max_channels = 3;
        let err = tnt_solve(&g, &ActionGrid::standard(3, 3)).unwrap_err();
        assert!(matches!(err, BaselineError::TooLarge { .. }));
    }

    #[test]
    fn tnt_favours_strong_link_at_least_as_much_as_pf() {
        let mut e = (*env(&[20.0, 120.0])).clone();
        e.sbs_positions[1] = (40.0, 0.0);
        e.ue_positions[1] = vec![(160.0, 0.0)];
        let mut g = ctx(1, &[90.0, 90.0], &[0.0], &[20.0, 120.0]);
        g.rates = Arc::new(RateModel::new(Arc::new(e), 0.95));
        let grid = ActionGrid::standard(1, 1);
        let pf = pf_solve(&g, &grid).unwrap();
        let tnt = tnt_solve(&g, &grid).unwrap();
        let share = |p: &[ActionSchedule]| {
            let tot = p[0].airtime_at(0) + p[1].airtime_at(0);
            if tot == 0.0 { 0.0 } else { p[0].airtime_at(0) / tot }
        };
        assert!(share(&tnt.profile) >= share(&pf.profile), "{:?} {:?}", tnt.profile, pf.profile);
    }
}
