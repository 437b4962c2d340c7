//! Streaming botnet detection.
//!
//! - [`stream`]: distance-based outliers over an evolving one-dimensional window.
//! - [`pipeline`]: captcha and credential admission, scan/verify analyzer, mitigation.
//! - [`botsim`]: seeded labeled traffic and the flow-to-feature map.
//! - [`metrics`]: confusion counts and the detection rate.
//! - [`cli`] and [`config`]: the `edm` command-line front end.
//! - [`par`]: rayon-backed helpers with a sequential fallback.

pub mod botsim;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod stream;

pub use stream::{Detector, DetectorParams, Label, Mode, StreamObject};
