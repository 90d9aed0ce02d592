//! Circular fields with receivers equispaced on the rim.

use std::f64::consts::TAU;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{true_bearing, Point2, ReceiverPose};
use crate::models::{sample_aoa, sample_rss_range, AoaMeasurement, AoaModel, RangeMeasurement};

/// Receiver `k` at angle `2 pi k / n` on a circle of `radius`, facing the center.
pub fn ring_receivers(n: usize, radius: f64) -> Vec<ReceiverPose> {
    (0..n)
        .map(|k| {
            let position = Point2::from_angle(TAU * k as f64 / n as f64) * radius;
            ReceiverPose::facing(k, position, Point2::ORIGIN)
        })
        .collect()
}

/// `count` points drawn uniformly over the disc of radius `0.9 * field_radius`.
pub fn candidate_locations<R: Rng + ?Sized>(rng: &mut R, count: usize, field_radius: f64) -> Vec<Point2> {
    (0..count)
        .map(|_| {
            let r = 0.9 * field_radius * rng.random::<f64>().sqrt();
            Point2::from_angle(rng.random_range(0.0..TAU)) * r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutlierMode {
    None,
    /// Every receiver is NLOS independently with probability `alpha`.
    Bernoulli { alpha: f64 },
    /// Exactly `floor(alpha * n)` NLOS receivers, chosen uniformly.
    ExactCount { alpha: f64 },
}

impl OutlierMode {
    pub fn alpha(&self) -> f64 {
        match *self {
            OutlierMode::None => 0.0,
            OutlierMode::Bernoulli { alpha } | OutlierMode::ExactCount { alpha } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.alpha();
        if (0.0..=1.0).contains(&a) {
            Ok(())
        } else {
            Err(Error::InvalidAlpha(a))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<bool> {
        match *self {
            OutlierMode::None => vec![false; n],
            OutlierMode::Bernoulli { alpha } => (0..n).map(|_| rng.random::<f64>() < alpha).collect(),
            OutlierMode::ExactCount { alpha } => {
                let count = ((alpha * n as f64) + 1e-9).floor() as usize;
                let mut flags = vec![false; n];
                for k in index::sample(rng, n, count.min(n)) {
                    flags[k] = true;
                }
                flags
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingScenario {
    pub field_radius: f64,
    pub receivers: Vec<ReceiverPose>,
    pub source: Point2,
    /// Model of the LOS receivers; NLOS receivers report uniform bearings.
    pub model: AoaModel,
    pub outlier_mode: OutlierMode,
}

/// One draw of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RingTrial {
    pub measurements: Vec<AoaMeasurement>,
    /// Ground truth: receiver `k` is NLOS.
    pub nlos: Vec<bool>,
}

impl RingTrial {
    /// Measurements of the LOS receivers only.
    pub fn los_measurements(&self) -> Vec<AoaMeasurement> {
        self.measurements
            .iter()
            .filter(|m| !self.nlos[m.receiver_id])
            .copied()
            .collect()
    }
}

impl RingScenario {
    pub fn new(
        n: usize,
        field_radius: f64,
        source: Point2,
        model: AoaModel,
        outlier_mode: OutlierMode,
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::InsufficientMeasurements { needed: 3, got: n });
        }
        if !(field_radius > 0.0) {
            return Err(Error::InvalidParameter {
                name: "field_radius",
                reason: format!("must be positive, got {field_radius}"),
            });
        }
        let distance = source.norm();
        if !(distance < field_radius) {
            return Err(Error::SourceOutsideField {
                distance,
                radius: field_radius,
            });
        }
        model.validate()?;
        outlier_mode.validate()?;
        Ok(Self {
            field_radius,
            receivers: ring_receivers(n, field_radius),
            source,
            model,
            outlier_mode,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RingTrial> {
        let nlos = self.outlier_mode.draw(rng, self.receivers.len());
        let sigma = self.model.estimation_sigma();
        let mut measurements = Vec::with_capacity(self.receivers.len());
        for (rx, &blocked) in self.receivers.iter().zip(&nlos) {
            let local = rx.to_local(true_bearing(rx, self.source)?);
            let model = if blocked { &AoaModel::UniformNlos } else { &self.model };
            for (path, angle) in sample_aoa(rng, model, local)?.into_iter().enumerate() {
                measurements.push(AoaMeasurement::from_local(rx, path, angle, sigma)?);
            }
        }
        Ok(RingTrial { measurements, nlos })
    }

    /// Log-normal RSS range estimates at every receiver.
    pub fn sample_ranges<R: Rng + ?Sized>(&self, rng: &mut R, beta: f64, snr_db: f64) -> Result<Vec<RangeMeasurement>> {
        self.receivers
            .iter()
            .map(|rx| sample_rss_range(rng, rx.id, rx.position.distance(self.source), beta, snr_db))
            .collect()
    }
}
