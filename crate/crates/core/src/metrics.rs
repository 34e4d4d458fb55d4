//! Evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::DemandModel;
use crate::ActionSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("Jain's index needs at least one non-zero value")]
    AllZero,
    #[error("no offered load in scope")]
    NoOfferedLoad,
    #[error("gain is undefined against a zero baseline")]
    ZeroBaseline,
    #[error("count must be >= 1")]
    ZeroCount,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `(Σl)² / (n·Σl²)`.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if values.is_empty() || sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    let s: f64 = values.iter().sum();
    Ok(s * s / (values.len() as f64 * sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Lte,
    Wifi,
    Total,
}

/// Offered and served load for one network over a horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadTally {
    pub offered: f64,
    pub served: f64,
}

impl LoadTally {
    pub fn add(&mut self, other: LoadTally) {
        self.offered += other.offered;
        self.served += other.served;
    }

    pub fn proportion(&self) -> Result<f64> {
        if self.offered <= 0.0 {
            return Err(MetricsError::NoOfferedLoad);
        }
        Ok((self.served / self.offered).clamp(0.0, 1.0))
    }
}

/// Load carried by each SBS under `schedules`, epoch by epoch.
///
/// Each epoch serves `f⁻¹(Σ_c α)` capped at the demand still pending, where
/// unserved load carries over to later epochs of the same horizon.
pub fn lte_served(schedules: &[ActionSchedule], sbs_demand: &[Vec<f64>], dm: &DemandModel) -> Result<Vec<LoadTally>> {
    if schedules.len() != sbs_demand.len() {
        return Err(MetricsError::Dimension(format!(
            "{} schedules for {} SBS demand rows",
            schedules.len(),
            sbs_demand.len()
        )));
    }
    schedules
        .iter()
        .zip(sbs_demand)
        .map(|(s, d)| {
            if s.horizon() != d.len() {
                return Err(MetricsError::Dimension("schedule horizon differs from demand".into()));
            }
            let mut tally = LoadTally::default();
            let mut backlog = 0.0;
            for (t, &load) in d.iter().enumerate() {
                tally.offered += load;
                backlog += load;
                let served = dm.served(s.airtime_at(t)).min(backlog);
                backlog -= served;
                tally.served += served;
            }
            Ok(tally)
        })
        .collect()
}

/// WLAN load carried given per-channel WLAN airtimes (`C × T`).
pub fn wlan_served(wlan_airtime: &[Vec<f64>], wlan_demand: &[Vec<f64>], dm: &DemandModel) -> LoadTally {
    let mut tally = LoadTally::default();
    for (a_row, d_row) in wlan_airtime.iter().zip(wlan_demand) {
        for (&a, &d) in a_row.iter().zip(d_row) {
            tally.offered += d;
            tally.served += dm.served(a).min(d);
        }
    }
    tally
}

/// Served proportion over the horizon for the requested network(s).
pub fn served_proportion(
    schedules: &[ActionSchedule],
    sbs_demand: &[Vec<f64>],
    wlan_airtime: &[Vec<f64>],
    wlan_demand: &[Vec<f64>],
    dm: &DemandModel,
    scope: Scope,
) -> Result<f64> {
    let mut lte = LoadTally::default();
    for t in lte_served(schedules, sbs_demand, dm)? {
        lte.add(t);
    }
    let wifi = wlan_served(wlan_airtime, wlan_demand, dm);
    match scope {
        Scope::Lte => lte.proportion(),
        Scope::Wifi => wifi.proportion(),
        Scope::Total => {
            let mut all = lte;
            all.add(wifi);
            all.proportion()
        }
    }
}

/// Mean LTE airtime per SBS over mean WLAN airtime per WAP.
///
/// Zero WLAN airtime yields `+∞`.
pub fn airtime_ratio(lte_airtimes: &[f64], wlan_airtimes: &[f64], j_count: usize, w_count: usize) -> Result<f64> {
    if j_count == 0 || w_count == 0 {
        return Err(MetricsError::ZeroCount);
    }
    let lte = lte_airtimes.iter().sum::<f64>() / j_count as f64;
    let wlan = wlan_airtimes.iter().sum::<f64>() / w_count as f64;
    if wlan == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(lte / wlan)
}

/// Relative gain `(a − b) / b`.
pub fn gain(a: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((a - b) / b)
}

/// Summary of one evaluated allocator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub scheme: String,
    pub lte_served: LoadTally,
    pub wifi_served: LoadTally,
    pub lte_proportion: f64,
    pub wifi_proportion: f64,
    pub total_proportion: f64,
    pub per_sbs_proportion: Vec<f64>,
    pub lte_airtime_per_sbs: f64,
    pub wifi_airtime_per_wap: f64,
    pub airtime_ratio: f64,
    pub jain_technology: f64,
    pub jain_sbs: f64,
    pub gain_vs_reactive: Option<f64>,
}

impl EvaluationResult {
    pub fn total_served(&self) -> f64 {
        self.lte_served.served + self.wifi_served.served
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0]).unwrap(), 0.5);
        // (0.6 + 0.3 + 0.3)² = 1.44; 3·(0.36 + 0.09 + 0.09) = 1.62.
        assert!((jain_index(&[0.6, 0.3, 0.3]).unwrap() - 1.44 / 1.62).abs() < 1e-12);
        assert_eq!(jain_index(&[0.0, 0.0]), Err(MetricsError::AllZero));
        assert_eq!(jain_index(&[]), Err(MetricsError::AllZero));
    }

    #[test]
    fn airtime_ratio_examples() {
        assert_eq!(airtime_ratio(&[0.2, 0.2], &[0.2, 0.2], 2, 2).unwrap(), 1.0);
        assert!((airtime_ratio(&[0.2], &[0.1], 1, 1).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(airtime_ratio(&[0.2], &[0.0], 1, 1).unwrap(), f64::INFINITY);
        assert!(airtime_ratio(&[0.2], &[0.1], 0, 1).is_err());
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain(3.0, 3.0).unwrap(), 0.0);
        assert!((gain(1.2, 1.0).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(gain(1.0, 0.0), Err(MetricsError::ZeroBaseline));
    }

    fn dm() -> DemandModel {
        DemandModel::new(10.0).unwrap()
    }

    #[test]
    fn served_proportion_caps_at_demand() {
        let demand = vec![vec![2.0, 3.0]];
        let mut exact = ActionSchedule::zeros(1, 2);
        exact.set(0, 0, true, 0.2);
        exact.set(0, 1, true, 0.3);
        let p = |s: &ActionSchedule| served_proportion(&[s.clone()], &demand, &[], &[], &dm(), Scope::Lte).unwrap();
        assert!((p(&exact) - 1.0).abs() < 1e-12);
        assert_eq!(p(&ActionSchedule::zeros(1, 2)), 0.0);
        let mut double = ActionSchedule::zeros(1, 2);
        double.set(0, 0, true, 0.4);
        double.set(0, 1, true, 0.6);
        assert_eq!(p(&double), 1.0);
        assert_eq!(
            served_proportion(&[ActionSchedule::zeros(1, 2)], &[vec![0.0, 0.0]], &[], &[], &dm(), Scope::Lte),
            Err(MetricsError::NoOfferedLoad)
        );
    }

    #[test]
    fn total_scope_pools_both_networks() {
        let mut s = ActionSchedule::zeros(1, 1);
        s.set(0, 0, true, 0.1);
        let p = served_proportion(&[s], &[vec![2.0]], &[vec![0.2]], &[vec![2.0]], &dm(), Scope::Total).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn jain_scale_invariant(v in proptest::collection::vec(0.01f64..10.0, 1..8), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let (a, b) = (jain_index(&v).unwrap(), jain_index(&scaled).unwrap());
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
        }

        #[test]
        fn jain_is_one_for_equal_values(x in 0.01f64..10.0, n in 1usize..10) {
            proptest::prop_assert!((jain_index(&vec![x; n]).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn jain_below_one_for_unequal(v in proptest::collection::vec(0.01f64..10.0, 2..8)) {
            let equal = v.iter().all(|x| (x - v[0]).abs() < 1e-9);
            proptest::prop_assume!(!equal);
            proptest::prop_assert!(jain_index(&v).unwrap() < 1.0 - 1e-15);
        }

        #[test]
        fn served_monotone_in_alpha(a in proptest::collection::vec(0.0f64..1.0, 3), bump in 0.0f64..0.5, idx in 0usize..3) {
            let demand = vec![vec![3.0, 1.0, 4.0]];
            let mut s = ActionSchedule::zeros(1, 3);
            for (t, v) in a.iter().enumerate() { s.set(0, t, true, *v); }
            let before = served_proportion(&[s.clone()], &demand, &[], &[], &dm(), Scope::Lte).unwrap();
            let v = (s.alpha[0][idx] + bump).min(1.0);
            s.set(0, idx, true, v);
            let after = served_proportion(&[s], &demand, &[], &[], &dm(), Scope::Lte).unwrap();
            proptest::prop_assert!(after + 1e-12 >= before);
        }
    }
}
