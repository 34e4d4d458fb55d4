//! Offered-load time series for SBSs and per-channel WLAN activity.
//!
//! A [`TrafficTrace`] holds one row per SBS and one row per unlicensed
//! channel; columns are scheduling epochs. Traces come either from the
//! canonical CSV interchange format or from the seeded synthetic
//! generators in this module, and are cut into history/future
//! [`TraceWindow`]s for the learner and the evaluators.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default epoch duration (five minutes).
pub const DEFAULT_EPOCH_SECONDS: f64 = 300.0;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("negative or non-finite load {value} for {entity} at epoch {epoch}")]
    InvalidLoad {
        entity: EntityRef,
        epoch: usize,
        value: f64,
    },
    #[error("missing cell: {entity} at epoch {epoch}")]
    MissingCell { entity: EntityRef, epoch: usize },
    #[error("duplicate cell: {entity} at epoch {epoch} (line {line})")]
    DuplicateCell {
        entity: EntityRef,
        epoch: usize,
        line: usize,
    },
    #[error("window [{start}, {end}) out of range for trace of {epochs} epochs")]
    Bounds {
        start: isize,
        end: usize,
        epochs: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("trace shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TrafficError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Sbs,
    WlanChannel,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Sbs => "sbs",
            EntityKind::WlanChannel => "wlan_channel",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "sbs" => Some(EntityKind::Sbs),
            "wlan_channel" => Some(EntityKind::WlanChannel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub id: usize,
}

impl std::fmt::Display for EntityRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.kind.as_str(), self.id)
    }
}

/// Number of SBS rows and WLAN channel rows in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceShape {
    pub sbs: usize,
    pub channels: usize,
}

impl TraceShape {
    pub fn new(sbs: usize, channels: usize) -> Self {
        Self { sbs, channels }
    }

    /// Total number of series, `J + C`.
    pub fn rows(&self) -> usize {
        self.sbs + self.channels
    }
}

/// Per-entity, per-epoch offered load.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    sbs_load: Vec<Vec<f64>>,
    wlan_load: Vec<Vec<f64>>,
    epoch_duration: f64,
}

impl TrafficTrace {
    pub fn new(sbs_load: Vec<Vec<f64>>, wlan_load: Vec<Vec<f64>>, epoch_duration: f64) -> Result<Self> {
        if !(epoch_duration > 0.0 && epoch_duration.is_finite()) {
            return Err(TrafficError::InvalidParameter(format!(
                "epoch duration must be positive, got {epoch_duration}"
            )));
        }
        let epochs = sbs_load
            .first()
            .or(wlan_load.first())
            .map(Vec::len)
            .unwrap_or(0);
        for (kind, rows) in [(EntityKind::Sbs, &sbs_load), (EntityKind::WlanChannel, &wlan_load)] {
            for (id, row) in rows.iter().enumerate() {
                let entity = EntityRef { kind, id };
                if row.len() != epochs {
                    return Err(TrafficError::Shape(format!(
                        "{entity} has {} epochs, expected {epochs}",
                        row.len()
                    )));
                }
                if let Some((epoch, &value)) = row
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
                {
                    return Err(TrafficError::InvalidLoad { entity, epoch, value });
                }
            }
        }
        Ok(Self {
            sbs_load,
            wlan_load,
            epoch_duration,
        })
    }

    pub fn shape(&self) -> TraceShape {
        TraceShape::new(self.sbs_load.len(), self.wlan_load.len())
    }

    pub fn epochs(&self) -> usize {
        self.sbs_load
            .first()
            .or(self.wlan_load.first())
            .map(Vec::len)
            .unwrap_or(0)
    }

    pub fn epoch_duration(&self) -> f64 {
        self.epoch_duration
    }

    pub fn sbs_load(&self) -> &[Vec<f64>] {
        &self.sbs_load
    }

    pub fn wlan_load(&self) -> &[Vec<f64>] {
        &self.wlan_load
    }

    /// Row `m` of the stacked `[sbs; wlan]` matrix.
    pub fn row(&self, m: usize) -> &[f64] {
        let j = self.sbs_load.len();
        if m < j {
            &self.sbs_load[m]
        } else {
            &self.wlan_load[m - j]
        }
    }

    /// Contiguous epoch range `[start, end)` as a new trace.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.epochs() {
            return Err(TrafficError::Bounds {
                start: start as isize,
                end,
                epochs: self.epochs(),
            });
        }
        let cut = |rows: &[Vec<f64>]| rows.iter().map(|r| r[start..end].to_vec()).collect();
        Ok(Self {
            sbs_load: cut(&self.sbs_load),
            wlan_load: cut(&self.wlan_load),
            epoch_duration: self.epoch_duration,
        })
    }

    /// Multiplies every SBS row by `sbs` and every WLAN row by `wlan`.
    pub fn scaled(&self, sbs: f64, wlan: f64) -> Result<Self> {
        let scale = |rows: &[Vec<f64>], k: f64| {
            rows.iter()
                .map(|r| r.iter().map(|v| v * k).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        Self::new(
            scale(&self.sbs_load, sbs),
            scale(&self.wlan_load, wlan),
            self.epoch_duration,
        )
    }
}

/// Column roles for [`load_trace`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSchema {
    pub entity_type: String,
    pub entity_id: String,
    pub epoch: String,
    pub load: String,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self {
            entity_type: "entity_type".into(),
            entity_id: "entity_id".into(),
            epoch: "epoch".into(),
            load: "load".into(),
        }
    }
}

pub fn load_trace(path: impl AsRef<Path>, schema: &TraceSchema) -> Result<TrafficTrace> {
    read_trace(File::open(path)?, schema)
}

pub fn read_trace<R: Read>(reader: R, schema: &TraceSchema) -> Result<TrafficTrace> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| TrafficError::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (c_kind, c_id, c_epoch, c_load) = (
        column(&schema.entity_type)?,
        column(&schema.entity_id)?,
        column(&schema.epoch)?,
        column(&schema.load)?,
    );

    let mut cells: Vec<(EntityRef, usize, f64, usize)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| TrafficError::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| TrafficError::Parse {
                line,
                message: format!("missing field {c}"),
            })
        };
        let kind = EntityKind::parse(field(c_kind)?).ok_or_else(|| TrafficError::Parse {
            line,
            message: format!("unknown entity type `{}`", field(c_kind).unwrap_or("")),
        })?;
        let parse_usize = |s: &str, what: &str| {
            s.trim().parse::<usize>().map_err(|e| TrafficError::Parse {
                line,
                message: format!("bad {what} `{s}`: {e}"),
            })
        };
        let id = parse_usize(field(c_id)?, "entity id")?;
        let epoch = parse_usize(field(c_epoch)?, "epoch")?;
        let raw = field(c_load)?;
        let value: f64 = raw.trim().parse().map_err(|e| TrafficError::Parse {
            line,
            message: format!("bad load `{raw}`: {e}"),
        })?;
        let entity = EntityRef { kind, id };
        if !(value.is_finite() && value >= 0.0) {
            return Err(TrafficError::InvalidLoad { entity, epoch, value });
        }
        cells.push((entity, epoch, value, line));
    }

    let count = |kind| {
        cells
            .iter()
            .filter(|(e, ..)| e.kind == kind)
            .map(|(e, ..)| e.id + 1)
            .max()
            .unwrap_or(0)
    };
    let (j, c) = (count(EntityKind::Sbs), count(EntityKind::WlanChannel));
    let epochs = cells.iter().map(|(_, t, ..)| t + 1).max().unwrap_or(0);

    let mut sbs: Vec<Vec<Option<f64>>> = vec![vec![None; epochs]; j];
    let mut wlan: Vec<Vec<Option<f64>>> = vec![vec![None; epochs]; c];
    for (entity, epoch, value, line) in cells {
        let rows = match entity.kind {
            EntityKind::Sbs => &mut sbs,
            EntityKind::WlanChannel => &mut wlan,
        };
        let slot = &mut rows[entity.id][epoch];
        if slot.is_some() {
            return Err(TrafficError::DuplicateCell { entity, epoch, line });
        }
        *slot = Some(value);
    }
    let complete = |rows: Vec<Vec<Option<f64>>>, kind| -> Result<Vec<Vec<f64>>> {
        rows.into_iter()
            .enumerate()
            .map(|(id, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(epoch, v)| {
                        v.ok_or(TrafficError::MissingCell {
                            entity: EntityRef { kind, id },
                            epoch,
                        })
                    })
                    .collect()
            })
            .collect()
    };
    TrafficTrace::new(
        complete(sbs, EntityKind::Sbs)?,
        complete(wlan, EntityKind::WlanChannel)?,
        DEFAULT_EPOCH_SECONDS,
    )
}

/// Writes the canonical CSV form, sorted by epoch then entity.
pub fn write_trace<W: Write>(trace: &TrafficTrace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["entity_type", "entity_id", "epoch", "load"])?;
    for t in 0..trace.epochs() {
        for (kind, rows) in [
            (EntityKind::Sbs, trace.sbs_load()),
            (EntityKind::WlanChannel, trace.wlan_load()),
        ] {
            for (id, row) in rows.iter().enumerate() {
                // `{}` on f64 is the shortest representation that parses back exactly.
                w.write_record([
                    kind.as_str().to_string(),
                    id.to_string(),
                    t.to_string(),
                    format!("{}", row[t]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &TrafficTrace, path: impl AsRef<Path>) -> Result<()> {
    write_trace(trace, File::create(path)?)
}

/// Generator recipe for one entity class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadPattern {
    Uniform {
        level: f64,
        jitter: f64,
    },
    Periodic {
        base: f64,
        amplitude: f64,
        period: usize,
        noise: f64,
    },
}

impl LoadPattern {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LoadPattern::Uniform { level, jitter } => {
                if !(jitter >= 0.0 && level >= jitter && level.is_finite()) {
                    return Err(TrafficError::InvalidParameter(format!(
                        "uniform load needs level >= jitter >= 0 (level {level}, jitter {jitter})"
                    )));
                }
            }
            LoadPattern::Periodic {
                base,
                amplitude,
                period,
                noise,
            } => {
                if !(amplitude >= 0.0 && base >= amplitude && base.is_finite()) {
                    return Err(TrafficError::InvalidParameter(format!(
                        "periodic load needs base >= amplitude >= 0 (base {base}, amplitude {amplitude})"
                    )));
                }
                if period < 2 {
                    return Err(TrafficError::InvalidParameter(format!(
                        "period must be at least 2, got {period}"
                    )));
                }
                if !(noise >= 0.0 && noise.is_finite()) {
                    return Err(TrafficError::InvalidParameter(format!("noise must be >= 0, got {noise}")));
                }
            }
        }
        Ok(())
    }

    fn row(&self, epochs: usize, seed: u64, entity: EntityRef) -> Vec<f64> {
        let key = entity_key(seed, entity);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let jitter = |rng: &mut ChaCha8Rng, half_width: f64| {
            if half_width > 0.0 {
                Uniform::new_inclusive(-half_width, half_width)
                    .expect("finite width")
                    .sample(rng)
            } else {
                0.0
            }
        };
        match *self {
            LoadPattern::Uniform { level, jitter: w } => {
                (0..epochs).map(|_| level + jitter(&mut rng, w)).collect()
            }
            LoadPattern::Periodic {
                base,
                amplitude,
                period,
                noise,
            } => {
                let phase = entity_phase(seed, entity);
                (0..epochs)
                    .map(|t| {
                        let wave = amplitude * (2.0 * PI * t as f64 / period as f64 + phase).sin();
                        (base + wave + jitter(&mut rng, noise)).max(0.0)
                    })
                    .collect()
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn entity_key(seed: u64, entity: EntityRef) -> u64 {
    let class = match entity.kind {
        EntityKind::Sbs => 1u64,
        EntityKind::WlanChannel => 2u64,
    };
    splitmix64(splitmix64(seed ^ (class << 56)) ^ entity.id as u64)
}

/// Deterministic phase offset in `[0, 2π)` for one entity.
pub fn entity_phase(seed: u64, entity: EntityRef) -> f64 {
    let h = splitmix64(entity_key(seed, entity) ^ 0xA5A5_A5A5_A5A5_A5A5);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * PI
}

/// Builds a trace with independent recipes for the SBS and WLAN rows.
pub fn synth_trace(
    shape: TraceShape,
    sbs: &LoadPattern,
    wlan: &LoadPattern,
    epochs: usize,
    seed: u64,
) -> Result<TrafficTrace> {
    sbs.validate()?;
    wlan.validate()?;
    let rows = |pattern: &LoadPattern, kind, n| {
        (0..n)
            .map(|id| pattern.row(epochs, seed, EntityRef { kind, id }))
            .collect::<Vec<_>>()
    };
    TrafficTrace::new(
        rows(sbs, EntityKind::Sbs, shape.sbs),
        rows(wlan, EntityKind::WlanChannel, shape.channels),
        DEFAULT_EPOCH_SECONDS,
    )
}

/// Every cell i.i.d. uniform on `[level - jitter, level + jitter]`.
pub fn synth_uniform(
    shape: TraceShape,
    level: f64,
    jitter: f64,
    epochs: usize,
    seed: u64,
) -> Result<TrafficTrace> {
    let p = LoadPattern::Uniform { level, jitter };
    synth_trace(shape, &p, &p, epochs, seed)
}

/// `base + amplitude·sin(2πt/period + phase) + U(-noise, noise)` with a
/// per-entity phase derived from the seed.
pub fn synth_periodic(
    shape: TraceShape,
    base: f64,
    amplitude: f64,
    period: usize,
    noise: f64,
    epochs: usize,
    seed: u64,
) -> Result<TrafficTrace> {
    let p = LoadPattern::Periodic {
        base,
        amplitude,
        period,
        noise,
    };
    synth_trace(shape, &p, &p, epochs, seed)
}

/// History/future split of a trace around epoch `t0`. Rows are the
/// stacked `[sbs; wlan]` series, so there are `M = J + C` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceWindow {
    pub t0: usize,
    pub sbs_count: usize,
    pub history: Vec<Vec<f64>>,
    pub future: Vec<Vec<f64>>,
}

impl TraceWindow {
    pub fn rows(&self) -> usize {
        self.history.len()
    }

    pub fn horizon(&self) -> usize {
        self.future.first().map(Vec::len).unwrap_or(0)
    }

    pub fn history_len(&self) -> usize {
        self.history.first().map(Vec::len).unwrap_or(0)
    }

    pub fn future_sbs(&self) -> &[Vec<f64>] {
        &self.future[..self.sbs_count]
    }

    pub fn future_wlan(&self) -> &[Vec<f64>] {
        &self.future[self.sbs_count..]
    }
}

pub fn window(trace: &TrafficTrace, t0: usize, history_len: usize, horizon: usize) -> Result<TraceWindow> {
    let epochs = trace.epochs();
    if t0 < history_len || t0 + horizon > epochs {
        return Err(TrafficError::Bounds {
            start: t0 as isize - history_len as isize,
            end: t0 + horizon,
            epochs,
        });
    }
    let m = trace.shape().rows();
    Ok(TraceWindow {
        t0,
        sbs_count: trace.shape().sbs,
        history: (0..m).map(|r| trace.row(r)[t0 - history_len..t0].to_vec()).collect(),
        future: (0..m).map(|r| trace.row(r)[t0..t0 + horizon].to_vec()).collect(),
    })
}

/// Per-row min-max scaling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub ranges: Vec<(f64, f64)>,
}

impl Scaler {
    pub fn fit(trace: &TrafficTrace) -> Self {
        let m = trace.shape().rows();
        let ranges = (0..m)
            .map(|r| {
                let row = trace.row(r);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if row.is_empty() {
                    (0.0, 0.0)
                } else {
                    (lo, hi)
                }
            })
            .collect();
        Self { ranges }
    }

    pub fn scale_value(&self, row: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[row];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    }

    pub fn unscale_value(&self, row: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[row];
        if hi > lo {
            lo + v * (hi - lo)
        } else {
            lo
        }
    }

    /// Scales the rows of a stacked `[sbs; wlan]` matrix in place.
    pub fn scale_rows(&self, rows: &mut [Vec<f64>]) {
        for (r, row) in rows.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = self.scale_value(r, *v);
            }
        }
    }

    pub fn apply(&self, trace: &TrafficTrace) -> TrafficTrace {
        self.map(trace, Self::scale_value)
    }

    pub fn invert(&self, trace: &TrafficTrace) -> TrafficTrace {
        self.map(trace, Self::unscale_value)
    }

    fn map(&self, trace: &TrafficTrace, f: fn(&Self, usize, f64) -> f64) -> TrafficTrace {
        let j = trace.shape().sbs;
        let conv = |rows: &[Vec<f64>], offset: usize| {
            rows.iter()
                .enumerate()
                .map(|(i, row)| row.iter().map(|&v| f(self, i + offset, v)).collect())
                .collect()
        };
        TrafficTrace {
            sbs_load: conv(trace.sbs_load(), 0),
            wlan_load: conv(trace.wlan_load(), j),
            epoch_duration: trace.epoch_duration,
        }
    }
}

pub fn normalize(trace: &TrafficTrace) -> (TrafficTrace, Scaler) {
    let scaler = Scaler::fit(trace);
    (scaler.apply(trace), scaler)
}
