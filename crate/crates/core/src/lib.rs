//! Cooperative source localization from angle-of-arrival (AoA) measurements.
//!
//! A network of receivers, each with a calibrated array of known position and
//! broadside, reports bearing estimates towards a single transmitting source.
//! The crate provides
//!
//! * [`sequential`]: LMMSE aggregation of bearings one receiver at a time, with
//!   a two-bearing bootstrap and optional range fusion;
//! * [`nlos`]: randomized outlier suppression built on the sequential update,
//!   the clip threshold derived from the NLOS mixture likelihood, and exact
//!   bootstrap-failure analytics used to pick the number of random seeds;
//! * [`ml`] and [`bounds`]: grid + local-refinement maximum likelihood
//!   estimators and the Fisher information / CRLB benchmarks;
//! * [`sim`]: ring deployments, single-bounce ray tracing and deterministic
//!   Monte-Carlo campaigns.
//!
//! All angles are radians, wrapped to `(-pi, pi]`, measured from the global
//! x-axis unless a function says it works on receiver-local angles.

pub mod bounds;
pub mod error;
pub mod geometry;
pub mod ml;
pub mod models;
pub mod nlos;
pub mod sequential;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{CartesianEstimate, Point2, PolarEstimate, ReceiverPose, Sym2};
pub use models::{AoaMeasurement, AoaModel, RangeMeasurement};
