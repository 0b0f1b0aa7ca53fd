//! Posture sensing for hearables.
//!
//! The crate covers the full chain from raw sensor streams to posture alerts:
//!
//! * [`acoustic`]: chirp synthesis, matched filtering and time-of-flight ranging
//! * [`imu`]: smoothing, pitch extraction and drift-reset displacement
//! * [`simulator`]: seeded virtual participants standing in for the hardware rig
//! * [`fusion`]: zero-order-hold merge of the kinematic and ranging streams
//! * [`features`]: 32 windowed statistics over the fused channels
//! * [`forest`]: Gini random forest with importances and a binary model format
//! * [`alerts`]: dwell and screen-distance alert state machine
//! * [`eval`]: participant-level splits, ablations, metrics and ranging benchmarks
//!
//! The `neckcare` binary wires these together (see [`cli`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic;
pub mod alerts;
pub mod cli;
pub mod config;
pub(crate) mod csvfmt;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod imu;
pub mod posture;
pub mod rng;
pub mod simulator;
pub mod svg;
pub mod wav;

pub use error::{Error, Result};
pub use posture::PostureLabel;
