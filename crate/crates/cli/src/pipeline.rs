//! End-to-end run: build the trace, train on the first part, evaluate every
//! scheme on the held-out tail.
//!
//! The test span starts right after the training span and is trimmed to a
//! multiple of `window.test_block`. The proactive scheme tiles it with
//! non-overlapping windows of `T` epochs; unserved load carries over inside
//! a window and is dropped at its end. Baselines run epoch by epoch.

use laa_core::baselines::{exhaustive_solve, reactive_allocate, ActionGrid, BaselineError, Objective};
use laa_core::game::{check_constraints, lte_airtime, realize, wlan_airtime_matrix, GameContext, RateModel, ViolationReport};
use laa_core::learn::{self, Example, PolicyModel, TrainError, TrainingLog};
use laa_core::metrics::{self, EvaluationResult, LoadTally};
use laa_core::traffic::{Scaler, TrafficTrace};
use laa_core::ActionSchedule;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Baseline, ConfigError, Scenario};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("learner: {0}")]
    Learn(#[from] learn::LearnError),
}

/// Epoch boundaries of the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
}

impl Split {
    pub fn test_epochs(&self) -> usize {
        self.test_end - self.test_start
    }
}

pub fn split(scn: &Scenario, epochs: usize) -> Result<Split, ConfigError> {
    let w = &scn.window;
    let train_end = (epochs as f64 * w.train_fraction).floor() as usize;
    let field = |path: &str, message: String| ConfigError::Field {
        path: path.into(),
        message,
    };
    if train_end < w.history + w.horizon {
        return Err(field(
            "traffic.epochs",
            format!("{epochs} epochs leave no training window for history {} and horizon {}", w.history, w.horizon),
        ));
    }
    let test_len = (epochs - train_end) / w.test_block * w.test_block;
    if test_len == 0 {
        return Err(field(
            "window.test_block",
            format!("test span of {} epochs is shorter than one block of {}", epochs - train_end, w.test_block),
        ));
    }
    if test_len % w.horizon != 0 {
        return Err(field(
            "window.horizon",
            format!("horizon {} must divide the test span of {test_len} epochs", w.horizon),
        ));
    }
    Ok(Split {
        train_end,
        test_start: train_end,
        test_end: train_end + test_len,
    })
}

/// Trace, its normalized copy and the shared rate model.
pub struct Prepared {
    pub trace: TrafficTrace,
    pub normalized: TrafficTrace,
    pub scaler: Scaler,
    pub rates: RateModel,
    pub split: Split,
}

pub fn prepare(scn: &Scenario) -> Result<Prepared, ConfigError> {
    let trace = scn.trace()?;
    let split = split(scn, trace.epochs())?;
    let scaler = Scaler::fit(&trace.slice(0, split.train_end)?);
    let normalized = scaler.apply(&trace);
    Ok(Prepared {
        trace,
        normalized,
        scaler,
        rates: scn.rate_model(),
        split,
    })
}

fn history(prep: &Prepared, t0: usize, len: usize) -> Vec<Vec<f64>> {
    let m = prep.normalized.shape().rows();
    (0..m).map(|r| prep.normalized.row(r)[t0 - len..t0].to_vec()).collect()
}

/// Overlapping training windows over the training span.
pub fn training_examples(scn: &Scenario, prep: &Prepared) -> Vec<Example> {
    let (h, t) = (scn.window.history, scn.window.horizon);
    (h..=prep.split.train_end - t)
        .step_by(scn.window.train_stride)
        .map(|t0| Example {
            history: history(prep, t0, h),
            ctx: scn.context(&prep.trace, &prep.rates, t0, t),
        })
        .collect()
}

/// Running totals for one scheme.
#[derive(Debug, Clone, Default)]
struct Tally {
    lte: Vec<LoadTally>,
    wifi: LoadTally,
    lte_airtime: f64,
    wlan_airtime: f64,
    epochs: usize,
}

impl Tally {
    fn new(sbs: usize) -> Self {
        Self {
            lte: vec![LoadTally::default(); sbs],
            ..Self::default()
        }
    }

    /// Scores a realized profile over the whole context.
    fn add(&mut self, realized: &[ActionSchedule], ctx: &GameContext) {
        let lte = metrics::lte_served(realized, &ctx.sbs_demand, &ctx.dm).expect("profile sized from context");
        for (acc, t) in self.lte.iter_mut().zip(lte) {
            acc.add(t);
        }
        let wlan = wlan_airtime_matrix(realized, ctx);
        self.wifi.add(metrics::wlan_served(&wlan, &ctx.wlan_demand, &ctx.dm));
        for t in 0..ctx.horizon {
            for (c, row) in wlan.iter().enumerate() {
                self.lte_airtime += lte_airtime(realized, c, t);
                self.wlan_airtime += row[t];
            }
        }
        self.epochs += ctx.horizon;
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.lte.iter_mut().zip(other.lte) {
            a.add(b);
        }
        self.wifi.add(other.wifi);
        self.lte_airtime += other.lte_airtime;
        self.wlan_airtime += other.wlan_airtime;
        self.epochs += other.epochs;
        self
    }

    fn result(&self, scheme: &str, waps: usize) -> EvaluationResult {
        let mut lte = LoadTally::default();
        for t in &self.lte {
            lte.add(*t);
        }
        let mut total = lte;
        total.add(self.wifi);
        let prop = |t: &LoadTally| t.proportion().unwrap_or(f64::NAN);
        let per_sbs: Vec<f64> = self.lte.iter().map(prop).collect();
        let (lte_p, wifi_p) = (prop(&lte), prop(&self.wifi));
        let j = self.lte.len();
        let epochs = self.epochs.max(1) as f64;
        EvaluationResult {
            scheme: scheme.into(),
            lte_served: lte,
            wifi_served: self.wifi,
            lte_proportion: lte_p,
            wifi_proportion: wifi_p,
            total_proportion: prop(&total),
            jain_technology: metrics::jain_index(&[lte_p, wifi_p]).unwrap_or(f64::NAN),
            jain_sbs: metrics::jain_index(&per_sbs).unwrap_or(f64::NAN),
            per_sbs_proportion: per_sbs,
            lte_airtime_per_sbs: self.lte_airtime / (j as f64 * epochs),
            wifi_airtime_per_wap: self.wlan_airtime / (waps.max(1) as f64 * epochs),
            airtime_ratio: metrics::airtime_ratio(&[self.lte_airtime], &[self.wlan_airtime], j, waps.max(1))
                .unwrap_or(f64::NAN),
            gain_vs_reactive: None,
        }
    }
}

/// Learner output on the test span.
pub struct ProactiveEval {
    pub result: EvaluationResult,
    pub violations: ViolationReport,
}

pub fn evaluate_proactive(scn: &Scenario, prep: &Prepared, model: &PolicyModel) -> Result<ProactiveEval, PipelineError> {
    let (h, t) = (scn.window.history, scn.window.horizon);
    let starts: Vec<usize> = (prep.split.test_start..prep.split.test_end).step_by(t).collect();
    let tol = scn.learner.train.tolerance;
    let per_window: Vec<(Tally, ViolationReport)> = starts
        .par_iter()
        .map(|&t0| {
            let ctx = scn.context(&prep.trace, &prep.rates, t0, t);
            let schedules = learn::infer(model, &history(prep, t0, h), t)?;
            let realized = realize(&schedules, &ctx);
            let mut tally = Tally::new(scn.network.sbs);
            tally.add(&realized, &ctx);
            Ok((tally, check_constraints(&realized, &ctx, tol)))
        })
        .collect::<Result<_, learn::LearnError>>()?;
    let mut total = Tally::new(scn.network.sbs);
    let mut worst = ViolationReport::default();
    for (tally, report) in per_window {
        total = total.merge(tally);
        worst.merge_max(&report);
        if worst.players.is_empty() {
            worst.players = report.players;
        } else {
            for (acc, p) in worst.players.iter_mut().zip(report.players) {
                acc.access_without_selection.extend(p.access_without_selection);
                acc.selection_cap.extend(p.selection_cap);
                acc.demand_cap.extend(p.demand_cap);
                acc.domain.extend(p.domain);
            }
        }
    }
    Ok(ProactiveEval {
        result: total.result("proactive", scn.wap_count()),
        violations: worst,
    })
}

/// Epoch-by-epoch baseline over the test span.
pub fn evaluate_baseline(scn: &Scenario, prep: &Prepared, which: Baseline) -> Result<EvaluationResult, PipelineError> {
    let grid = ActionGrid::new(scn.evaluation.alpha_levels.clone(), scn.network.channels, scn.network.max_channels)?;
    let tallies: Vec<Tally> = (prep.split.test_start..prep.split.test_end)
        .into_par_iter()
        .map(|t0| {
            let ctx = scn.context(&prep.trace, &prep.rates, t0, 1);
            let profile = match which {
                Baseline::Reactive => reactive_allocate(&ctx),
                Baseline::Pf => exhaustive_solve(&ctx, &grid, Objective::ProportionalFair)?.profile,
                Baseline::Tnt => exhaustive_solve(&ctx, &grid, Objective::TotalThroughput)?.profile,
            };
            let mut tally = Tally::new(scn.network.sbs);
            tally.add(&realize(&profile, &ctx), &ctx);
            Ok(tally)
        })
        .collect::<Result<_, BaselineError>>()?;
    let total = tallies.into_iter().fold(Tally::new(scn.network.sbs), Tally::merge);
    let name = match which {
        Baseline::Reactive => "reactive",
        Baseline::Pf => "pf",
        Baseline::Tnt => "tnt",
    };
    Ok(total.result(name, scn.wap_count()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NonConverged,
}

/// Everything a run produces.
pub struct RunOutput {
    pub status: RunStatus,
    pub split: Split,
    pub training: Option<TrainingLog>,
    pub model: Option<PolicyModel>,
    pub results: Vec<EvaluationResult>,
    pub violations: Option<ViolationReport>,
}

impl RunOutput {
    pub fn scheme(&self, name: &str) -> Option<&EvaluationResult> {
        self.results.iter().find(|r| r.scheme == name)
    }
}

/// Trains (if enabled) and evaluates every requested scheme.
pub fn run(scn: &Scenario) -> Result<RunOutput, PipelineError> {
    scn.validate()?;
    let prep = prepare(scn)?;
    let mut status = RunStatus::Ok;
    let mut training = None;
    let mut model = None;
    let mut results = Vec::new();
    let mut violations = None;

    if scn.learner.enabled {
        let data = training_examples(scn, &prep);
        let (m, log) = match learn::train(&scn.learner.train_config(scn.window.horizon), &data) {
            Ok(x) => x,
            Err(TrainError::NonConvergence { log, model, .. }) => {
                status = RunStatus::NonConverged;
                (*model, log)
            }
            Err(TrainError::Learn(e)) => return Err(e.into()),
        };
        let eval = evaluate_proactive(scn, &prep, &m)?;
        results.push(eval.result);
        violations = Some(eval.violations);
        training = Some(log);
        model = Some(m);
    }
    for &b in &scn.evaluation.baselines {
        results.push(evaluate_baseline(scn, &prep, b)?);
    }
    if let Some(reactive) = results.iter().find(|r| r.scheme == "reactive").map(|r| r.lte_served.served) {
        for r in results.iter_mut() {
            r.gain_vs_reactive = metrics::gain(r.lte_served.served, reactive).ok();
        }
    }
    Ok(RunOutput {
        status,
        split: prep.split,
        training,
        model,
        results,
        violations,
    })
}
