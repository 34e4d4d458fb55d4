//! Per-SBS action schedules and the vocabulary of feasible channel selections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule is {got_c}x{got_t}, expected {want_c}x{want_t}")]
    Shape {
        got_c: usize,
        got_t: usize,
        want_c: usize,
        want_t: usize,
    },
    #[error("ragged schedule rows")]
    Ragged,
}

/// Channel selection `x[c][t]` and access probability `alpha[c][t]` for one SBS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSchedule {
    pub x: Vec<Vec<bool>>,
    pub alpha: Vec<Vec<f64>>,
}

impl ActionSchedule {
    pub fn zeros(channels: usize, horizon: usize) -> Self {
        Self {
            x: vec![vec![false; horizon]; channels],
            alpha: vec![vec![0.0; horizon]; channels],
        }
    }

    pub fn new(x: Vec<Vec<bool>>, alpha: Vec<Vec<f64>>) -> Result<Self, ScheduleError> {
        let c = x.len();
        let t = x.first().map(Vec::len).unwrap_or(0);
        if x.iter().any(|r| r.len() != t) || alpha.iter().any(|r| r.len() != t) {
            return Err(ScheduleError::Ragged);
        }
        if alpha.len() != c {
            return Err(ScheduleError::Shape {
                got_c: alpha.len(),
                got_t: t,
                want_c: c,
                want_t: t,
            });
        }
        Ok(Self { x, alpha })
    }

    pub fn channels(&self) -> usize {
        self.x.len()
    }

    pub fn horizon(&self) -> usize {
        self.x.first().map(Vec::len).unwrap_or(0)
    }

    pub fn check_shape(&self, channels: usize, horizon: usize) -> Result<(), ScheduleError> {
        let ok = self.channels() == channels
            && self.alpha.len() == channels
            && self.x.iter().all(|r| r.len() == horizon)
            && self.alpha.iter().all(|r| r.len() == horizon);
        if ok {
            Ok(())
        } else {
            Err(ScheduleError::Shape {
                got_c: self.channels(),
                got_t: self.horizon(),
                want_c: channels,
                want_t: horizon,
            })
        }
    }

    /// Sets channel `c` at epoch `t`; `alpha = 0` with `on = true` is allowed.
    pub fn set(&mut self, c: usize, t: usize, on: bool, alpha: f64) {
        self.x[c][t] = on;
        self.alpha[c][t] = if on { alpha } else { 0.0 };
    }

    pub fn selected(&self, t: usize) -> Vec<bool> {
        self.x.iter().map(|r| r[t]).collect()
    }

    pub fn selected_count(&self, t: usize) -> usize {
        self.x.iter().filter(|r| r[t]).count()
    }

    /// Total airtime over channels at epoch `t`.
    pub fn airtime_at(&self, t: usize) -> f64 {
        self.alpha.iter().map(|r| r[t]).sum()
    }

    /// `α ≤ x` everywhere.
    pub fn access_within_selection(&self) -> bool {
        self.x
            .iter()
            .zip(&self.alpha)
            .all(|(xr, ar)| xr.iter().zip(ar).all(|(&x, &a)| x || a == 0.0))
    }

    pub fn within_domain(&self) -> bool {
        self.alpha
            .iter()
            .flatten()
            .all(|a| a.is_finite() && (0.0..=1.0).contains(a))
    }

    pub fn within_selection_cap(&self, max_channels: usize) -> bool {
        let cap = max_channels.min(self.channels());
        (0..self.horizon()).all(|t| self.selected_count(t) <= cap)
    }
}

/// All selection vectors `x ∈ {0,1}^C` with at most `min(M_c, C)` ones.
///
/// Order: the empty set, then singletons by channel index, then pairs in
/// lexicographic order, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVocabulary {
    channels: usize,
    max_channels: usize,
    entries: Vec<Vec<usize>>,
}

impl SelectionVocabulary {
    pub fn new(channels: usize, max_channels: usize) -> Self {
        let cap = max_channels.min(channels);
        let mut entries = Vec::new();
        for k in 0..=cap {
            combinations(channels, k, &mut entries);
        }
        Self {
            channels,
            max_channels,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_channels(&self) -> usize {
        self.max_channels
    }

    /// Channel indices selected by entry `k`.
    pub fn channels_of(&self, k: usize) -> &[usize] {
        &self.entries[k]
    }

    pub fn mask(&self, k: usize) -> Vec<bool> {
        let mut m = vec![false; self.channels];
        for &c in &self.entries[k] {
            m[c] = true;
        }
        m
    }

    pub fn index_of(&self, mask: &[bool]) -> Option<usize> {
        let chosen: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(c, _)| c)
            .collect();
        self.entries.iter().position(|e| *e == chosen)
    }
}

fn combinations(n: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for c in start..n {
            cur.push(c);
            rec(c + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), out);
}
