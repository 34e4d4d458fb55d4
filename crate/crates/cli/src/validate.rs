//! Analytic MAC model against the slot simulator over a configuration matrix.

use laa_core::mac::{solve_stationary, ChannelOccupancy, MacError, MacParams, SolverOptions};
use laa_core::oracle::{compare, simulate_slots, ComparisonReport, SlotSimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::ValidateConfig;

/// One matrix cell: `W` WAPs and `J` SBSs that all use window `cw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub waps: usize,
    pub sbss: usize,
    /// `None` when no SBS contends, so the window is irrelevant.
    pub sbs_cw: Option<u32>,
    pub report: ComparisonReport,
}

impl CellReport {
    pub fn pass(&self) -> bool {
        self.report.pass()
    }
}

/// Cells with at least one contender. SBS-free cells appear once.
pub fn cells(cfg: &ValidateConfig) -> Vec<(usize, usize, Option<u32>)> {
    let mut out = Vec::new();
    for &w in &cfg.wap_counts {
        for &j in &cfg.sbs_counts {
            if w + j == 0 {
                continue;
            }
            if j == 0 {
                out.push((w, 0, None));
            } else {
                out.extend(cfg.sbs_cws.iter().map(|&cw| (w, j, Some(cw))));
            }
        }
    }
    out
}

/// Runs every cell. `perturb` scales the analytic attempt probabilities
/// before comparison; 1.0 leaves them untouched.
pub fn validate_mac(cfg: &ValidateConfig, mac: &MacParams, perturb: f64) -> Result<Vec<CellReport>, MacError> {
    cells(cfg)
        .into_par_iter()
        .enumerate()
        .map(|(i, (w, j, cw))| {
            let occ = ChannelOccupancy::new(w, vec![cw.unwrap_or(0); j]);
            let mut point = solve_stationary(&occ, mac, SolverOptions::default())?;
            point.tau_w = (point.tau_w * perturb).min(1.0);
            for t in point.tau_sbs.iter_mut() {
                *t = (*t * perturb).min(1.0);
            }
            let sim = simulate_slots(&SlotSimConfig::new(occ, mac.clone(), cfg.slots, cfg.seed.wrapping_add(i as u64)));
            Ok(CellReport {
                waps: w,
                sbss: j,
                sbs_cw: cw,
                report: compare(&point, &sim, cfg.rel_tol),
            })
        })
        .collect()
}
