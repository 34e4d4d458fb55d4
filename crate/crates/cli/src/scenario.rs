//! Declarative scenario files (TOML).
//!
//! A scenario fixes everything a run depends on: geometry and its seed,
//! radio and MAC constants, fairness priorities, the traffic source, the
//! window split and the learner. Command-line flags never change physics.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use laa_core::game::{DemandModel, FairnessConfig, GameContext, RateModel};
use laa_core::learn::TrainConfig;
use laa_core::mac::{MacParams, RadioEnvironment, ReservationModel, Shadowing};
use laa_core::traffic::{self, LoadPattern, TraceSchema, TraceShape, TrafficTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("traffic: {0}")]
    Traffic(#[from] traffic::TrafficError),
}

fn field(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Independent repetitions averaged by `sweep`.
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub network: NetworkConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub mac: MacParams,
    #[serde(default)]
    pub reservation: ReservationModel,
    #[serde(default)]
    pub fairness: FairnessConfig,
    #[serde(default)]
    pub demand: DemandConfig,
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub sbs: usize,
    pub channels: usize,
    #[serde(default = "one")]
    pub max_channels: usize,
    #[serde(default = "one")]
    pub waps_per_channel: usize,
    #[serde(default = "one")]
    pub ues_per_sbs: usize,
    /// Side of the square deployment area, metres.
    #[serde(default = "default_area")]
    pub area_m: f64,
    /// UEs are dropped uniformly within this radius of their SBS.
    #[serde(default = "default_ue_radius")]
    pub ue_radius_m: f64,
    pub geometry_seed: u64,
}

fn one() -> usize {
    1
}
fn default_area() -> f64 {
    300.0
}
fn default_ue_radius() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub sbs_power_dbm: f64,
    pub wap_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub shadowing_sigma_db: f64,
    pub sbs_interference: bool,
    pub wap_interference: bool,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            sbs_power_dbm: 20.0,
            wap_power_dbm: 20.0,
            bandwidth_hz: 20e6,
            noise_psd_dbm_hz: -174.0,
            shadowing_sigma_db: 0.0,
            sbs_interference: true,
            wap_interference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    /// Load carried per unit of airtime in one epoch.
    pub rate_ref: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self { rate_ref: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// CSV trace to read instead of generating one.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sbs: Option<LoadPattern>,
    #[serde(default)]
    pub wlan: Option<LoadPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub history: usize,
    pub horizon: usize,
    pub train_fraction: f64,
    /// Offset between consecutive training windows.
    pub train_stride: usize,
    /// The test span is trimmed to a multiple of this many epochs so
    /// every horizon in a sweep tiles the same epochs.
    pub test_block: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            history: 7,
            horizon: 1,
            train_fraction: 0.8,
            train_stride: 1,
            test_block: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub enabled: bool,
    /// Multiply the inter-operator and inter-technology coefficients by
    /// `T³`. Those penalties carry a `1/T²` factor while the utility they
    /// are weighed against grows with `T`, so without this a fixed `rho0`
    /// is far harsher at short horizons than at long ones.
    pub scale_rho_with_horizon: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale_rho_with_horizon: true,
            train: TrainConfig::default(),
        }
    }
}

impl LearnerConfig {
    /// Training settings for a run with prediction horizon `horizon`.
    pub fn train_config(&self, horizon: usize) -> TrainConfig {
        let mut cfg = self.train.clone();
        if self.scale_rho_with_horizon {
            let k = (horizon as f64).powi(3);
            cfg.rho0.rho2 *= k;
            cfg.rho0.rho3 *= k;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Reactive,
    Pf,
    Tnt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub baselines: Vec<Baseline>,
    pub alpha_levels: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            baselines: vec![Baseline::Reactive],
            alpha_levels: laa_core::game::default_alpha_grid(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub horizon: Vec<usize>,
    pub max_channels: Vec<usize>,
    pub priority_ratio: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub sbs_count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub wap_counts: Vec<usize>,
    pub sbs_counts: Vec<usize>,
    pub sbs_cws: Vec<u32>,
    pub slots: u64,
    pub seed: u64,
    pub rel_tol: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            wap_counts: vec![0, 1, 2, 3],
            sbs_counts: vec![0, 1, 2, 3],
            sbs_cws: vec![15, 31, 63],
            slots: 1_000_000,
            seed: 1,
            rel_tol: 0.02,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario; a relative trace path resolves against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::from_toml(&text)?;
        if let (Some(f), Some(dir)) = (&s.traffic.file, path.parent()) {
            if f.is_relative() {
                s.traffic.file = Some(dir.join(f));
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.network;
        if n.sbs == 0 {
            return Err(field("network.sbs", "must be >= 1"));
        }
        if n.channels == 0 {
            return Err(field("network.channels", "must be >= 1"));
        }
        if n.max_channels == 0 {
            return Err(field("network.max_channels", "must be >= 1"));
        }
        if n.ues_per_sbs == 0 {
            return Err(field("network.ues_per_sbs", "must be >= 1"));
        }
        if !(n.area_m > 0.0) {
            return Err(field("network.area_m", "must be positive"));
        }
        if !(n.ue_radius_m >= 1.0) {
            return Err(field("network.ue_radius_m", "must be at least 1 m"));
        }
        if self.runs == 0 {
            return Err(field("runs", "must be >= 1"));
        }
        if !(self.radio.bandwidth_hz > 0.0) {
            return Err(field("radio.bandwidth_hz", "must be positive"));
        }
        if !(self.radio.shadowing_sigma_db >= 0.0) {
            return Err(field("radio.shadowing_sigma_db", "must be >= 0"));
        }
        self.mac.validate().map_err(|e| field("mac", e.to_string()))?;
        self.fairness.validate().map_err(|e| field("fairness", e.to_string()))?;
        DemandModel::new(self.demand.rate_ref).map_err(|e| field("demand.rate_ref", e.to_string()))?;
        let w = &self.window;
        if w.history == 0 {
            return Err(field("window.history", "must be >= 1"));
        }
        if w.horizon == 0 {
            return Err(field("window.horizon", "must be >= 1"));
        }
        if !(w.train_fraction > 0.0 && w.train_fraction < 1.0) {
            return Err(field("window.train_fraction", "must be in (0, 1)"));
        }
        if w.train_stride == 0 || w.test_block == 0 {
            return Err(field("window", "train_stride and test_block must be >= 1"));
        }
        let t = &self.traffic;
        match (&t.file, &t.sbs, &t.wlan) {
            (Some(_), None, None) => {}
            (None, Some(a), Some(b)) => {
                a.validate().map_err(|e| field("traffic.sbs", e.to_string()))?;
                b.validate().map_err(|e| field("traffic.wlan", e.to_string()))?;
                if t.epochs == 0 {
                    return Err(field("traffic.epochs", "must be >= 1 for generated traces"));
                }
            }
            _ => return Err(field("traffic", "give either `file` or both `sbs` and `wlan` patterns")),
        }
        if self.learner.enabled {
            self.learner
                .train
                .validate()
                .map_err(|e| field("learner", e.to_string()))?;
        }
        let e = &self.evaluation;
        if e.alpha_levels.first() != Some(&0.0) || e.alpha_levels.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(field("evaluation.alpha_levels", "must start at 0 and increase strictly"));
        }
        if !(self.validate.rel_tol > 0.0) {
            return Err(field("validate.rel_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> TraceShape {
        TraceShape::new(self.network.sbs, self.network.channels)
    }

    pub fn trace(&self) -> Result<TrafficTrace, ConfigError> {
        let t = &self.traffic;
        let trace = match (&t.file, &t.sbs, &t.wlan) {
            (Some(path), _, _) => traffic::load_trace(path, &TraceSchema::default())?,
            (None, Some(sbs), Some(wlan)) => traffic::synth_trace(self.shape(), sbs, wlan, t.epochs, t.seed)?,
            _ => unreachable!("validated"),
        };
        if trace.shape() != self.shape() {
            return Err(field(
                "traffic.file",
                format!("trace has shape {:?}, network needs {:?}", trace.shape(), self.shape()),
            ));
        }
        Ok(trace)
    }

    /// Random drop of SBSs, UEs and WAPs in the square area.
    pub fn environment(&self) -> RadioEnvironment {
        let n = &self.network;
        let mut rng = ChaCha8Rng::seed_from_u64(n.geometry_seed);
        let point = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..n.area_m), rng.random_range(0.0..n.area_m));
        let sbs_positions: Vec<(f64, f64)> = (0..n.sbs).map(|_| point(&mut rng)).collect();
        let ue_positions = sbs_positions
            .iter()
            .map(|&(x, y)| {
                (0..n.ues_per_sbs)
                    .map(|_| {
                        let r = n.ue_radius_m * rng.random::<f64>().sqrt();
                        let a = rng.random_range(0.0..std::f64::consts::TAU);
                        (x + r.max(1.0) * a.cos(), y + r.max(1.0) * a.sin())
                    })
                    .collect()
            })
            .collect();
        let wap_positions = (0..n.channels * n.waps_per_channel).map(|_| point(&mut rng)).collect();
        let r = &self.radio;
        RadioEnvironment {
            sbs_positions,
            wap_positions,
            ue_positions,
            sbs_power_dbm: r.sbs_power_dbm,
            wap_power_dbm: r.wap_power_dbm,
            bandwidth: vec![r.bandwidth_hz; n.channels],
            noise_psd_dbm_hz: r.noise_psd_dbm_hz,
            shadowing: (r.shadowing_sigma_db > 0.0).then_some(Shadowing {
                sigma_db: r.shadowing_sigma_db,
                seed: n.geometry_seed ^ 0x5AD0,
            }),
        }
    }

    pub fn rate_model(&self) -> RateModel {
        let mut rates = RateModel::new(Arc::new(self.environment()), self.reservation.data_fraction());
        rates.sbs_interference = self.radio.sbs_interference;
        rates.wap_interference = self.radio.wap_interference;
        let per = self.network.waps_per_channel;
        rates.wap_channels = (0..self.network.channels * per).map(|w| w / per).collect();
        rates
    }

    /// Game over epochs `[t0, t0 + horizon)` of `trace` with its actual demand.
    pub fn context(&self, trace: &TrafficTrace, rates: &RateModel, t0: usize, horizon: usize) -> GameContext {
        let cut = |rows: &[Vec<f64>]| rows.iter().map(|r| r[t0..t0 + horizon].to_vec()).collect();
        GameContext {
            channels: self.network.channels,
            horizon,
            max_channels: self.network.max_channels,
            sbs_demand: cut(trace.sbs_load()),
            wlan_demand: cut(trace.wlan_load()),
            waps_per_channel: vec![self.network.waps_per_channel; self.network.channels],
            dm: DemandModel::new(self.demand.rate_ref).expect("validated"),
            fc: self.fairness,
            rho: self.learner.train.rho0,
            rates: Arc::new(rates.with_offset(t0)),
        }
    }

    pub fn wap_count(&self) -> usize {
        self.network.channels * self.network.waps_per_channel
    }
}
