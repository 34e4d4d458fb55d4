//! One-axis parameter sweeps averaged over independent runs.
//!
//! Run 0 of every point uses the scenario's own seeds; run `r > 0` derives
//! geometry, traffic and learner seeds from `r`. Every point sees the same
//! seeds, so differences along the axis are not sampling noise between
//! drops.

use clap::ValueEnum;
use laa_core::learn::mix_seed;
use laa_core::metrics::EvaluationResult;
use rayon::prelude::*;
use serde::Serialize;

use crate::pipeline::{self, PipelineError, RunStatus};
use crate::scenario::{ConfigError, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    Horizon,
    MaxChannels,
    PriorityRatio,
    LearningRate,
    SbsCount,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Horizon => "horizon",
            Axis::MaxChannels => "max_channels",
            Axis::PriorityRatio => "priority_ratio",
            Axis::LearningRate => "learning_rate",
            Axis::SbsCount => "sbs_count",
        }
    }

    pub fn values(self, scn: &Scenario) -> Vec<f64> {
        let s = &scn.sweep;
        let ints = |v: &[usize]| v.iter().map(|&x| x as f64).collect();
        match self {
            Axis::Horizon => ints(&s.horizon),
            Axis::MaxChannels => ints(&s.max_channels),
            Axis::PriorityRatio => s.priority_ratio.clone(),
            Axis::LearningRate => s.learning_rate.clone(),
            Axis::SbsCount => ints(&s.sbs_count),
        }
    }

    /// Copy of `scn` with this axis set to `value`.
    pub fn apply(self, scn: &Scenario, value: f64) -> Scenario {
        let mut s = scn.clone();
        match self {
            Axis::Horizon => s.window.horizon = value as usize,
            Axis::MaxChannels => s.network.max_channels = value as usize,
            Axis::PriorityRatio => {
                s.fairness.p_lte = value;
                s.fairness.p_wifi = 1.0;
            }
            Axis::LearningRate => s.learner.train.learning_rate = value,
            Axis::SbsCount => s.network.sbs = value as usize,
        }
        s
    }
}

/// Scenario for repetition `run` with derived seeds.
pub fn derive_run(scn: &Scenario, run: usize) -> Scenario {
    let mut s = scn.clone();
    if run > 0 {
        let r = run as u64;
        s.network.geometry_seed = mix_seed(s.network.geometry_seed ^ mix_seed(r));
        s.traffic.seed = mix_seed(s.traffic.seed ^ mix_seed(r ^ 0x7AF1));
        s.learner.train.seed = mix_seed(s.learner.train.seed ^ mix_seed(r ^ 0x1EA2));
    }
    s
}

/// Averages of the headline scheme at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub scheme: String,
    pub runs: usize,
    pub converged_runs: usize,
    pub lte_proportion: f64,
    pub wifi_proportion: f64,
    pub total_proportion: f64,
    pub total_served: f64,
    pub total_served_ci95: f64,
    pub lte_airtime_per_sbs: f64,
    pub wifi_airtime_per_wap: f64,
    pub airtime_ratio: f64,
    pub jain_technology: f64,
    pub jain_sbs: f64,
    pub gain_vs_reactive: f64,
    pub gain_ci95: f64,
    /// Mean training epochs until the run stopped; 0 without a learner.
    pub training_epochs: f64,
}

/// Mean and 95% normal half-width over the finite entries.
fn mean_ci(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

struct RunSummary {
    headline: EvaluationResult,
    converged: bool,
    training_epochs: usize,
}

fn summarize(points: &[(f64, Vec<RunSummary>)], axis: Axis) -> Vec<SweepRow> {
    points
        .iter()
        .map(|(value, runs)| {
            let m = |f: &dyn Fn(&EvaluationResult) -> f64| mean_ci(runs.iter().map(|r| f(&r.headline))).0;
            let (total_served, total_served_ci95) = mean_ci(runs.iter().map(|r| r.headline.total_served()));
            let (gain, gain_ci95) = mean_ci(runs.iter().map(|r| r.headline.gain_vs_reactive.unwrap_or(f64::NAN)));
            SweepRow {
                axis: axis.name(),
                value: *value,
                scheme: runs.first().map(|r| r.headline.scheme.clone()).unwrap_or_default(),
                runs: runs.len(),
                converged_runs: runs.iter().filter(|r| r.converged).count(),
                lte_proportion: m(&|r| r.lte_proportion),
                wifi_proportion: m(&|r| r.wifi_proportion),
                total_proportion: m(&|r| r.total_proportion),
                total_served,
                total_served_ci95,
                lte_airtime_per_sbs: m(&|r| r.lte_airtime_per_sbs),
                wifi_airtime_per_wap: m(&|r| r.wifi_airtime_per_wap),
                airtime_ratio: m(&|r| r.airtime_ratio),
                jain_technology: m(&|r| r.jain_technology),
                jain_sbs: m(&|r| r.jain_sbs),
                gain_vs_reactive: gain,
                gain_ci95,
                training_epochs: mean_ci(runs.iter().map(|r| r.training_epochs as f64)).0,
            }
        })
        .collect()
}

/// Runs every axis value `runs` times (default: the scenario's `runs`).
/// The headline scheme is the learner when enabled, otherwise the first
/// baseline.
pub fn sweep(scn: &Scenario, axis: Axis, runs: Option<usize>) -> Result<Vec<SweepRow>, PipelineError> {
    let values = axis.values(scn);
    if values.is_empty() {
        return Err(ConfigError::Field {
            path: format!("sweep.{}", axis.name()),
            message: "no values to sweep".into(),
        }
        .into());
    }
    let runs = runs.unwrap_or(scn.runs).max(1);
    let mut jobs = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let point = axis.apply(scn, v);
        point.validate().map_err(|e| match e {
            ConfigError::Field { path, message } => ConfigError::Field {
                path: format!("sweep.{}[{i}] -> {path}", axis.name()),
                message,
            },
            other => other,
        })?;
        jobs.extend((0..runs).map(|r| (i, derive_run(&point, r))));
    }
    let done: Vec<(usize, RunSummary)> = jobs
        .into_par_iter()
        .map(|(i, s)| {
            let out = pipeline::run(&s)?;
            let headline = out.results.first().cloned().unwrap_or_default();
            Ok((
                i,
                RunSummary {
                    headline,
                    converged: out.status == RunStatus::Ok,
                    training_epochs: out.training.as_ref().map_or(0, |t| t.epochs.len()),
                },
            ))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut points: Vec<(f64, Vec<RunSummary>)> = values.iter().map(|&v| (v, Vec::new())).collect();
    for (i, r) in done {
        points[i].1.push(r);
    }
    Ok(summarize(&points, axis))
}
