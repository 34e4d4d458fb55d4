//! Saturated LBT/DCF contention model and LAA link rates.
//!
//! WAPs run binary exponential backoff and are described by the Bianchi
//! fixed point; SBSs contend with a fixed contention window so their
//! attempt probability is `2/(CW+1)`. Per-contender airtime is the
//! probability of being the only transmitter in a slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("contention window must be >= 1, got {0}")]
    Domain(u32),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("target airtime {target} unattainable; at most {max} achievable")]
    Infeasible { target: f64, max: f64 },
    #[error("SBS {0} has no UEs")]
    NoUsers(usize),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, MacError>;

/// Contention and timing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacParams {
    pub cw_min: u32,
    /// Maximum backoff stage; `cw_max = (cw_min + 1)·2^m − 1`.
    pub m: u32,
    pub payload_bits: f64,
    pub ack_bits: f64,
    pub idle_slot: f64,
    pub busy_slot: f64,
    pub sifs: f64,
    pub difs: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            cw_min: 15,
            m: 6,
            payload_bits: 12_000.0,
            ack_bits: 256.0,
            idle_slot: 9e-6,
            busy_slot: 3e-4,
            sifs: 16e-6,
            difs: 34e-6,
        }
    }
}

impl MacParams {
    pub fn cw_max(&self) -> u64 {
        (self.cw_min as u64 + 1) * (1u64 << self.m) - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.cw_min < 1 {
            return Err(MacError::InvalidParameter("cw_min must be >= 1".into()));
        }
        if self.m > 20 {
            return Err(MacError::InvalidParameter(format!("backoff stage m={} too large", self.m)));
        }
        let durations = [self.idle_slot, self.busy_slot, self.sifs, self.difs];
        if durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(MacError::InvalidParameter("durations must be positive".into()));
        }
        if self.idle_slot >= self.busy_slot {
            return Err(MacError::InvalidParameter("idle slot must be shorter than busy slot".into()));
        }
        if !(self.payload_bits > 0.0) || self.ack_bits < 0.0 {
            return Err(MacError::InvalidParameter("payload must be positive".into()));
        }
        Ok(())
    }
}

/// Contenders on one channel during one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelOccupancy {
    pub channel: usize,
    pub wap_count: usize,
    pub sbs_cws: Vec<u32>,
}

impl ChannelOccupancy {
    pub fn new(wap_count: usize, sbs_cws: Vec<u32>) -> Self {
        Self {
            channel: 0,
            wap_count,
            sbs_cws,
        }
    }

    pub fn contenders(&self) -> usize {
        self.wap_count + self.sbs_cws.len()
    }
}

/// Solution of the coupled attempt/collision system on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub wap_count: usize,
    pub tau_w: f64,
    pub q_w: f64,
    pub tau_sbs: Vec<f64>,
    pub p_idle: f64,
    pub p_busy: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl StationaryPoint {
    /// Collision probability seen by SBS `j`.
    pub fn sbs_collision(&self, j: usize) -> f64 {
        1.0 - others_idle(&self.tau_sbs, Some(j)) * (1.0 - self.tau_w).powi(self.wap_count as i32)
    }

    /// Probability that WAP `w` alone transmits in a slot.
    pub fn wap_success(&self) -> f64 {
        if self.wap_count == 0 {
            return 0.0;
        }
        self.tau_w
            * (1.0 - self.tau_w).powi(self.wap_count as i32 - 1)
            * others_idle(&self.tau_sbs, None)
    }

    /// Probability that two or more contenders transmit together.
    pub fn p_collision(&self) -> f64 {
        let singles: f64 = self.wap_count as f64 * self.wap_success()
            + (0..self.tau_sbs.len()).map(|j| laa_airtime(self, j)).sum::<f64>();
        (self.p_busy - singles).max(0.0)
    }
}

/// Π(1−τ) over `taus` except index `skip`, multiplied in ascending order so
/// the result does not depend on how contenders were listed.
fn others_idle(taus: &[f64], skip: Option<usize>) -> f64 {
    let mut v: Vec<f64> = taus
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, t)| *t)
        .collect();
    v.sort_by(f64::total_cmp);
    v.iter().fold(1.0, |acc, t| acc * (1.0 - t))
}

/// WAP attempt probability for collision probability `q`.
///
/// The textbook ratio has a removable 0/0 at `q = 1/2`; dividing through by
/// `1 − 2q` gives `2 / ((W+1) + qW·Σ_{k<m}(2q)^k)`, which is the same
/// function and is finite everywhere on `[0, 1]`.
pub fn wifi_tau(q: f64, p: &MacParams) -> f64 {
    let w = p.cw_min as f64;
    let two_q = 2.0 * q;
    let mut geom = 0.0;
    let mut term = 1.0;
    for _ in 0..p.m {
        geom += term;
        term *= two_q;
    }
    2.0 / ((w + 1.0) + q * w * geom)
}

/// Attempt probability of a fixed-window LBT node.
pub fn laa_tau(cw: u32) -> Result<f64> {
    if cw < 1 {
        return Err(MacError::Domain(cw));
    }
    Ok(2.0 / (cw as f64 + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.5,
        }
    }
}

/// Damped fixed-point iteration on `(τ_w, q_w)` with SBS attempt
/// probabilities held at `laa_tau(cw)`. WAPs on a channel are symmetric.
pub fn solve_stationary(occ: &ChannelOccupancy, p: &MacParams, opts: SolverOptions) -> Result<StationaryPoint> {
    if !(opts.tol > 0.0) {
        return Err(MacError::InvalidParameter("tolerance must be positive".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(MacError::InvalidParameter("damping must be in (0, 1]".into()));
    }
    let tau_sbs = occ
        .sbs_cws
        .iter()
        .map(|&cw| laa_tau(cw))
        .collect::<Result<Vec<_>>>()?;
    let sbs_idle = others_idle(&tau_sbs, None);
    let w = occ.wap_count;

    let (mut tau_w, mut q_w, mut residual, mut iterations) = (0.0, 0.0, 0.0, 0);
    if w > 0 {
        let collision = |tau: f64| 1.0 - (1.0 - tau).powi(w as i32 - 1) * sbs_idle;
        q_w = collision(wifi_tau(0.0, p));
        loop {
            iterations += 1;
            let target = collision(wifi_tau(q_w, p));
            let next = (1.0 - opts.damping) * q_w + opts.damping * target;
            residual = (next - q_w).abs();
            q_w = next;
            if residual <= opts.tol {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(MacError::NoConvergence { iterations, residual });
            }
        }
        tau_w = wifi_tau(q_w, p);
        // Report q consistent with the final τ rather than the damped iterate.
        q_w = collision(tau_w);
    }

    let mut all: Vec<f64> = tau_sbs.clone();
    all.extend(std::iter::repeat_n(tau_w, w));
    let p_idle = others_idle(&all, None);
    Ok(StationaryPoint {
        wap_count: w,
        tau_w,
        q_w,
        tau_sbs,
        p_idle,
        p_busy: 1.0 - p_idle,
        residual,
        iterations,
    })
}

/// Per-WAP saturation throughput in bits per second.
pub fn wifi_throughput(sp: &StationaryPoint, p: &MacParams) -> Result<f64> {
    let denom = sp.p_idle * p.idle_slot + sp.p_busy * p.busy_slot;
    if !(denom > 0.0) {
        return Err(MacError::InvalidParameter("mean slot duration is zero".into()));
    }
    Ok(sp.wap_success() * p.payload_bits / denom)
}

/// Probability that SBS `j` is the only transmitter in a slot.
pub fn laa_airtime(sp: &StationaryPoint, j: usize) -> f64 {
    sp.tau_sbs[j] * others_idle(&sp.tau_sbs, Some(j)) * (1.0 - sp.tau_w).powi(sp.wap_count as i32)
}

/// Airtime an SBS gets with window `cw` next to the contenders in `others`.
pub fn airtime_with_cw(cw: u32, others: &ChannelOccupancy, p: &MacParams) -> Result<f64> {
    let mut occ = others.clone();
    occ.sbs_cws.push(cw);
    let sp = solve_stationary(&occ, p, SolverOptions::default())?;
    Ok(laa_airtime(&sp, occ.sbs_cws.len() - 1))
}

/// Upper end of the searched contention-window range.
pub const CW_SEARCH_MAX: u32 = 65_535;

/// The least aggressive window that still reaches `alpha_target`.
///
/// `others` lists every other contender on the channel. Airtime falls
/// monotonically as the window grows, so this is the largest `CW` with
/// `airtime(CW) ≥ alpha_target`. Alone on a channel it inverts
/// `α = 2/(CW+1)` exactly.
pub fn cw_from_alpha(alpha_target: f64, others: &ChannelOccupancy, p: &MacParams) -> Result<u32> {
    const TOL: f64 = 1e-12;
    if !(0.0..=1.0).contains(&alpha_target) {
        return Err(MacError::InvalidParameter(format!("target {alpha_target} outside [0, 1]")));
    }
    let max = airtime_with_cw(1, others, p)?;
    if alpha_target > max + TOL {
        return Err(MacError::Infeasible {
            target: alpha_target,
            max,
        });
    }
    let reaches = |cw: u32| airtime_with_cw(cw, others, p).map(|a| a + TOL >= alpha_target);
    if reaches(CW_SEARCH_MAX)? {
        return Ok(CW_SEARCH_MAX);
    }
    let (mut lo, mut hi) = (1u32, CW_SEARCH_MAX);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Share of an obtained burst that carries data.
///
/// A burst spans `burst_subframes` subframes; before it the SBS holds the
/// channel with a reservation signal until the next subframe boundary.
/// With uniformly random grab instants that wait averages half a subframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservationModel {
    pub subframe: f64,
    pub burst_subframes: u32,
    pub overhead: f64,
}

impl Default for ReservationModel {
    fn default() -> Self {
        Self {
            subframe: 1e-3,
            burst_subframes: 10,
            overhead: 0.5e-3,
        }
    }
}

impl ReservationModel {
    pub fn data_fraction(&self) -> f64 {
        data_fraction(self.subframe * self.burst_subframes as f64, self.overhead)
    }
}

/// `ξ = max(0, 1 − overhead / burst)`.
pub fn data_fraction(burst: f64, reservation_overhead: f64) -> f64 {
    if !(burst > 0.0) {
        return 0.0;
    }
    (1.0 - reservation_overhead / burst).clamp(0.0, 1.0)
}

/// Transmitter identity for gain lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tx {
    Sbs(usize),
    Wap(usize),
}

/// A co-channel transmitter and the fraction of time it is on the air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub tx: Tx,
    pub activity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadowing {
    pub sigma_db: f64,
    pub seed: u64,
}

/// Geometry, powers and noise needed to evaluate link rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioEnvironment {
    pub sbs_positions: Vec<(f64, f64)>,
    pub wap_positions: Vec<(f64, f64)>,
    /// UE positions served by each SBS; `K_j` is the row length.
    pub ue_positions: Vec<Vec<(f64, f64)>>,
    pub sbs_power_dbm: f64,
    pub wap_power_dbm: f64,
    /// Bandwidth of each channel in Hz.
    pub bandwidth: Vec<f64>,
    pub noise_psd_dbm_hz: f64,
    pub shadowing: Option<Shadowing>,
}

/// Log-distance path loss in dB, `15.3 + 50·log10(d)` with `d ≥ 1 m`.
pub fn path_loss_db(distance: f64) -> f64 {
    15.3 + 50.0 * distance.max(1.0).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn mix(h: u64, v: u64) -> u64 {
    let mut z = h ^ v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal deviate from a hash, via Box–Muller.
fn hashed_normal(key: u64) -> f64 {
    let a = mix(key, 1);
    let b = mix(key, 2);
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl RadioEnvironment {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth.iter().any(|b| !(*b > 0.0)) {
            return Err(MacError::InvalidParameter("bandwidth must be positive".into()));
        }
        if self.ue_positions.len() != self.sbs_positions.len() {
            return Err(MacError::Dimension(format!(
                "{} UE groups for {} SBSs",
                self.ue_positions.len(),
                self.sbs_positions.len()
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn ue_count(&self, j: usize) -> usize {
        self.ue_positions.get(j).map(Vec::len).unwrap_or(0)
    }

    fn tx_position(&self, tx: Tx) -> Result<(f64, f64)> {
        match tx {
            Tx::Sbs(i) => self.sbs_positions.get(i),
            Tx::Wap(w) => self.wap_positions.get(w),
        }
        .copied()
        .ok_or_else(|| MacError::Index(format!("{tx:?}")))
    }

    fn tx_power(&self, tx: Tx) -> f64 {
        match tx {
            Tx::Sbs(_) => dbm_to_watts(self.sbs_power_dbm),
            Tx::Wap(_) => dbm_to_watts(self.wap_power_dbm),
        }
    }

    /// Linear power gain from `tx` to UE `k` of SBS `j` on channel `c` at epoch `t`.
    pub fn gain(&self, tx: Tx, j: usize, k: usize, c: usize, t: usize) -> Result<f64> {
        let ue = *self
            .ue_positions
            .get(j)
            .and_then(|u| u.get(k))
            .ok_or_else(|| MacError::Index(format!("UE {k} of SBS {j}")))?;
        let mut loss = path_loss_db(distance(self.tx_position(tx)?, ue));
        if let Some(s) = self.shadowing {
            let id = match tx {
                Tx::Sbs(i) => i as u64,
                Tx::Wap(w) => (1 << 32) | w as u64,
            };
            let key = [id, j as u64, k as u64, c as u64, t as u64]
                .iter()
                .fold(s.seed, |h, v| mix(h, *v));
            loss += s.sigma_db * hashed_normal(key);
        }
        Ok(10f64.powf(-loss / 10.0).min(1.0))
    }

    /// Noise power over channel `c` in watts.
    pub fn noise_power(&self, c: usize) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth[c]
    }
}

/// Sum rate over the UEs of SBS `j` on channel `c` at epoch `t`, bits/s.
///
/// Each interferer contributes its received power scaled by its activity.
pub fn laa_rate(env: &RadioEnvironment, j: usize, c: usize, t: usize, interferers: &[Interferer]) -> Result<f64> {
    let k_count = env.ue_count(j);
    if k_count == 0 {
        return Err(MacError::NoUsers(j));
    }
    let b = *env
        .bandwidth
        .get(c)
        .ok_or_else(|| MacError::Index(format!("channel {c}")))?;
    let noise = env.noise_power(c);
    let p = env.tx_power(Tx::Sbs(j));
    let mut rate = 0.0;
    for k in 0..k_count {
        let mut interference = 0.0;
        for i in interferers {
            interference += i.activity * env.tx_power(i.tx) * env.gain(i.tx, j, k, c, t)?;
        }
        let sinr = p * env.gain(Tx::Sbs(j), j, k, c, t)? / (interference + noise);
        rate += b * (1.0 + sinr).log2();
    }
    Ok(rate)
}

/// `R_t = Σ_c α·ξ·r` for every epoch; `rate` and `xi` are `C × T`.
pub fn sbs_throughput(schedule: &crate::ActionSchedule, rate: &[Vec<f64>], xi: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (c, t) = (schedule.channels(), schedule.horizon());
    let fits = |m: &[Vec<f64>]| m.len() == c && m.iter().all(|r| r.len() == t);
    if !fits(rate) || !fits(xi) {
        return Err(MacError::Dimension(format!("schedule is {c}x{t}")));
    }
    Ok((0..t)
        .map(|t| (0..c).map(|c| schedule.alpha[c][t] * xi[c][t] * rate[c][t]).sum())
        .collect())
}
