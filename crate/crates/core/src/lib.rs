//! Proactive LTE-LAA / WiFi coexistence in the unlicensed band.
//!
//! The crate is split along the pipeline:
//!
//! * [`traffic`]: offered-load traces, synthetic generators, windowing.
//! * [`mac`]: the saturated LBT/DCF contention model and radio rates.
//! * [`oracle`]: a slot-level Monte-Carlo simulator used to check [`mac`].
//! * [`game`]: schedules, constraints, penalized utilities and equilibrium audits.
//! * [`learn`]: the LSTM encoder/decoder policy trained with REINFORCE.
//! * [`baselines`]: reactive, proportional-fair and max-throughput allocators.
//! * [`metrics`]: Jain's index, served proportions, gains.

pub mod baselines;
pub mod game;
pub mod learn;
pub mod mac;
pub mod metrics;
pub mod oracle;
pub mod schedule;
pub mod traffic;

pub use schedule::{ActionSchedule, SelectionVocabulary};
