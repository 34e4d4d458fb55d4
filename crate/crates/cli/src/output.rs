//! Files written by `run` and `sweep`.
//!
//! `results.json` carries no timestamps so repeated runs are byte-identical;
//! the wall-clock time lives only in `manifest.json`. Non-finite numbers
//! (an empty denominator, an airtime ratio with no WLAN airtime) are
//! written as `null`.

use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use laa_core::game::{PenaltyCoefficients, ViolationReport};
use laa_core::learn::{save_model, EpochLog, TrainingLog};
use laa_core::metrics::EvaluationResult;
use serde::{Deserialize, Serialize};

use crate::pipeline::{RunOutput, RunStatus, Split};
use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMES_CSV: &str = "schemes.csv";
pub const TRAINING_CSV: &str = "training.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const SCENARIO_COPY: &str = "scenario.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub rounds: usize,
    pub epochs: usize,
    pub converged: bool,
    pub final_rho: Option<PenaltyCoefficients>,
    pub final_mean_reward: Option<f64>,
    pub final_greedy_utility: Option<f64>,
}

impl TrainingSummary {
    pub fn from_log(log: &TrainingLog) -> Self {
        let last = log.epochs.last();
        Self {
            rounds: log.rounds,
            epochs: log.epochs.len(),
            converged: log.converged,
            final_rho: log.final_rho,
            final_mean_reward: last.map(|e| e.mean_reward),
            final_greedy_utility: last.map(|e| e.greedy_utility),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsFile<'a> {
    pub schema_version: u32,
    pub scenario: &'a str,
    pub status: RunStatus,
    pub config_hash: String,
    pub split: Split,
    pub training: Option<TrainingSummary>,
    pub results: &'a [EvaluationResult],
    pub violations: Option<&'a ViolationReport>,
}

pub fn results_json(scn: &Scenario, out: &RunOutput) -> String {
    let file = ResultsFile {
        schema_version: SCHEMA_VERSION,
        scenario: &scn.name,
        status: out.status,
        config_hash: scn.config_hash(),
        split: out.split,
        training: out.training.as_ref().map(TrainingSummary::from_log),
        results: &out.results,
        violations: out.violations.as_ref(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("results serialize");
    text.push('\n');
    text
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seeds {
    pub geometry: u64,
    pub traffic: u64,
    pub learner: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub created_unix_s: u64,
    pub files: Vec<String>,
}

/// Flat per-scheme row for plotting.
#[derive(Debug, Clone, Serialize)]
struct SchemeRow<'a> {
    scheme: &'a str,
    lte_offered: f64,
    lte_served: f64,
    wifi_offered: f64,
    wifi_served: f64,
    lte_proportion: f64,
    wifi_proportion: f64,
    total_proportion: f64,
    lte_airtime_per_sbs: f64,
    wifi_airtime_per_wap: f64,
    airtime_ratio: f64,
    jain_technology: f64,
    jain_sbs: f64,
    gain_vs_reactive: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct TrainingRow {
    round: usize,
    epoch: usize,
    mean_reward: f64,
    reward_stderr: f64,
    greedy_utility: f64,
    rho1: f64,
    rho2: f64,
    rho3: f64,
    occupancy_gap: f64,
    inter_operator_gap: f64,
    inter_technology_gap: f64,
}

impl From<&EpochLog> for TrainingRow {
    fn from(e: &EpochLog) -> Self {
        Self {
            round: e.round,
            epoch: e.epoch,
            mean_reward: e.mean_reward,
            reward_stderr: e.reward_stderr,
            greedy_utility: e.greedy_utility,
            rho1: e.rho.rho1,
            rho2: e.rho.rho2,
            rho3: e.rho.rho3,
            occupancy_gap: e.violations.occupancy,
            inter_operator_gap: e.violations.inter_operator,
            inter_technology_gap: e.violations.inter_technology,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

/// Writes every run artifact into `dir`, creating it if needed.
pub fn write_run(dir: &Path, scn: &Scenario, out: &RunOutput) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![RESULTS_FILE.to_string(), SCHEMES_CSV.to_string(), SCENARIO_COPY.to_string()];
    fs::write(dir.join(RESULTS_FILE), results_json(scn, out))?;
    fs::write(dir.join(SCENARIO_COPY), scn.to_toml())?;
    write_csv(
        &dir.join(SCHEMES_CSV),
        out.results.iter().map(|r| SchemeRow {
            scheme: &r.scheme,
            lte_offered: r.lte_served.offered,
            lte_served: r.lte_served.served,
            wifi_offered: r.wifi_served.offered,
            wifi_served: r.wifi_served.served,
            lte_proportion: r.lte_proportion,
            wifi_proportion: r.wifi_proportion,
            total_proportion: r.total_proportion,
            lte_airtime_per_sbs: r.lte_airtime_per_sbs,
            wifi_airtime_per_wap: r.wifi_airtime_per_wap,
            airtime_ratio: r.airtime_ratio,
            jain_technology: r.jain_technology,
            jain_sbs: r.jain_sbs,
            gain_vs_reactive: r.gain_vs_reactive,
        }),
    )?;
    if let Some(log) = &out.training {
        write_csv(&dir.join(TRAINING_CSV), log.epochs.iter().map(TrainingRow::from))?;
        files.push(TRAINING_CSV.into());
    }
    if let Some(model) = &out.model {
        save_model(model, dir.join(MODEL_FILE)).map_err(|e| io::Error::other(e.to_string()))?;
        files.push(MODEL_FILE.into());
    }
    files.push(MANIFEST_FILE.into());
    write_manifest(dir, scn, files.clone())?;
    Ok(files)
}

pub fn write_manifest(dir: &Path, scn: &Scenario, files: Vec<String>) -> io::Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION,
        config_hash: scn.config_hash(),
        seeds: Seeds {
            geometry: scn.network.geometry_seed,
            traffic: scn.traffic.seed,
            learner: scn.learner.train.seed,
        },
        threads: rayon::current_num_threads(),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)
}
