#![allow(dead_code)]

use std::sync::Arc;

use laa_core::game::{DemandModel, FairnessConfig, GameContext, PenaltyCoefficients, RateModel};
use laa_core::mac::RadioEnvironment;
use laa_core::ActionSchedule;

/// `J` SBSs 60 m apart along a line, each with one UE 20 m away.
pub fn line_env(sbs: usize, channels: usize) -> Arc<RadioEnvironment> {
    Arc::new(RadioEnvironment {
        sbs_positions: (0..sbs).map(|j| (60.0 * j as f64, 0.0)).collect(),
        wap_positions: vec![],
        ue_positions: (0..sbs).map(|j| vec![(60.0 * j as f64 + 20.0, 0.0)]).collect(),
        sbs_power_dbm: 20.0,
        wap_power_dbm: 20.0,
        bandwidth: vec![20e6; channels],
        noise_psd_dbm_hz: -174.0,
        shadowing: None,
    })
}

pub fn ctx(channels: usize, max_channels: usize, sbs_demand: Vec<Vec<f64>>, wlan_demand: Vec<Vec<f64>>, rho: f64) -> GameContext {
    let sbs = sbs_demand.len();
    let horizon = sbs_demand[0].len();
    GameContext {
        channels,
        horizon,
        max_channels,
        sbs_demand,
        wlan_demand,
        waps_per_channel: vec![1; channels],
        dm: DemandModel::new(100.0).unwrap(),
        fc: FairnessConfig::default(),
        rho: PenaltyCoefficients { rho1: rho, rho2: rho, rho3: rho },
        rates: Arc::new(RateModel::new(line_env(sbs, channels), 0.95)),
    }
}

pub fn single(channels: usize, horizon: usize, cells: &[(usize, usize, f64)]) -> ActionSchedule {
    let mut s = ActionSchedule::zeros(channels, horizon);
    for &(c, t, a) in cells {
        s.set(c, t, true, a);
    }
    s
}
