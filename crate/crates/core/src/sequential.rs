//! Sequential LMMSE localization for line-of-sight scenes.
//!
//! Two well-separated bearings bootstrap a cartesian estimate. Every further
//! bearing is folded in at its own receiver: the running estimate is moved
//! into that receiver's polar frame, updated with a scalar Kalman step on
//! the bearing, and moved back to the global frame.

use std::f64::consts::PI;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angular_error, cart_to_polar, find_receiver, polar_to_cart, true_bearing, wrap_angle,
    CartesianEstimate, Point2, PolarEstimate, ReceiverPose, Sym2,
};
use crate::ml::los_cost;
use crate::models::{AoaMeasurement, RangeMeasurement};

pub const DEFAULT_MIN_SEPARATION: f64 = 0.5;

const SINGULAR_DET: f64 = 1e-15;

/// Order in which measurements are aggregated after the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineOrder {
    /// Random qualifying bootstrap pair, then a random permutation of the rest.
    Random { seed: u64 },
    /// Measurement indices in aggregation order. The bootstrap pair is the
    /// first qualifying pair in this order.
    Given(Vec<usize>),
    /// Random qualifying bootstrap pair, then always the remaining measurement
    /// with the smallest angular error to the running estimate.
    Greedy { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    /// Minimum distance of the bootstrap bearing difference from 0 and pi.
    pub bootstrap_min_separation: f64,
    pub combine_order: CombineOrder,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            bootstrap_min_separation: DEFAULT_MIN_SEPARATION,
            combine_order: CombineOrder::Random { seed: 0 },
        }
    }
}

impl SequentialConfig {
    pub fn seeded(seed: u64) -> Self {
        Self {
            combine_order: CombineOrder::Random { seed },
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.bootstrap_min_separation;
        if s > 0.0 && s < PI / 2.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "bootstrap_min_separation",
                reason: format!("must lie in (0, pi/2), got {s}"),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub estimate: CartesianEstimate,
    /// Indices into the measurement slice, in aggregation order.
    pub used_measurements: Vec<usize>,
    /// Negative Gaussian log-likelihood `sum (e_k / sigma_k)^2` at the estimate.
    pub ml_cost: f64,
}

/// Scalar Kalman update of a polar prior with a bearing measurement.
///
/// `measured_bearing` is global; the innovation is wrapped. The posterior
/// bearing variance is `1 / (1/S_tt + 1/v)`, so it never increases.
pub fn lmmse_aoa_update(
    prior: &PolarEstimate,
    measured_bearing: f64,
    measurement_variance: f64,
) -> PolarEstimate {
    let Sym2 { a11: s_rr, a12: s_rt, a22: s_tt } = prior.cov;
    let v = measurement_variance;
    let denom = s_tt + v;
    let innovation = wrap_angle(measured_bearing - prior.bearing);
    let range = prior.range + s_rt * innovation / denom;
    let bearing = prior.bearing + s_tt * innovation / denom;
    let cov = Sym2::new(s_rr - s_rt * s_rt / denom, v * s_rt / denom, s_tt * v / denom);
    PolarEstimate::new(range, bearing, cov).canonical()
}

/// Scalar Kalman update of a polar prior with a range measurement.
pub fn lmmse_range_update(prior: &PolarEstimate, measured_range: f64, variance: f64) -> PolarEstimate {
    let Sym2 { a11: s_rr, a12: s_rt, a22: s_tt } = prior.cov;
    let denom = s_rr + variance;
    let innovation = measured_range - prior.range;
    let range = prior.range + s_rr * innovation / denom;
    let bearing = prior.bearing + s_rt * innovation / denom;
    let cov = Sym2::new(s_rr * variance / denom, variance * s_rt / denom, s_tt - s_rt * s_rt / denom);
    PolarEstimate::new(range, bearing, cov).canonical()
}

/// Joint range + bearing fusion with gain `K = S (S + S~)^-1`.
///
/// The posterior information is the sum of prior and measurement
/// information; the bearing innovation is wrapped.
pub fn fuse_range_update(prior: &PolarEstimate, measurement: &PolarEstimate) -> Result<PolarEstimate> {
    let sum = prior.cov + measurement.cov;
    let det = sum.det();
    if det.abs() < SINGULAR_DET {
        return Err(Error::SingularCovariance { det });
    }
    let sum_inv = sum.inverse().ok_or(Error::SingularCovariance { det })?;
    let gain = prior.cov.mul(&sum_inv);
    let innovation = [
        measurement.range - prior.range,
        wrap_angle(measurement.bearing - prior.bearing),
    ];
    let step = gain.apply(innovation);
    // S (S + S~)^-1 S~ == (S^-1 + S~^-1)^-1
    let post = Sym2::from(mat_mul(&gain, &measurement.cov));
    Ok(PolarEstimate::new(prior.range + step[0], prior.bearing + step[1], post).canonical())
}

fn mat_mul(a: &crate::geometry::Mat2, b: &Sym2) -> crate::geometry::Mat2 {
    let m = &a.0;
    crate::geometry::Mat2([
        [
            m[0][0] * b.a11 + m[0][1] * b.a12,
            m[0][0] * b.a12 + m[0][1] * b.a22,
        ],
        [
            m[1][0] * b.a11 + m[1][1] * b.a12,
            m[1][0] * b.a12 + m[1][1] * b.a22,
        ],
    ])
}

/// Which receiver's polar frame the bootstrap covariance is built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BootstrapFrame {
    First,
    #[cfg_attr(not(test), allow(dead_code))]
    Second,
}

/// Triangulates two bearings into a polar estimate at `frame`'s receiver.
pub(crate) fn bootstrap_polar(
    m1: &AoaMeasurement,
    m2: &AoaMeasurement,
    receivers: &[ReceiverPose],
    min_separation: f64,
    frame: BootstrapFrame,
) -> Result<(ReceiverPose, PolarEstimate)> {
    if m1.receiver_id == m2.receiver_id {
        return Err(Error::SameReceiver {
            first: m1.receiver_id,
            second: m2.receiver_id,
        });
    }
    let rx1 = *find_receiver(receivers, m1.receiver_id)?;
    let rx2 = *find_receiver(receivers, m2.receiver_id)?;
    let (t1, t2) = (m1.angle, m2.angle);
    let (s, c) = (t1 - t2).sin_cos();
    if s.abs() < min_separation.sin() {
        return Err(Error::DegenerateBootstrap { sin_diff: s.abs() });
    }
    let d = rx2.position - rx1.position;
    let r1 = (d.y * t2.cos() - d.x * t2.sin()) / s;
    let r2 = (d.y * t1.cos() - d.x * t1.sin()) / s;
    let (v1, v2) = (m1.variance(), m2.variance());
    // Jacobian of (R_frame, theta_frame) w.r.t. (theta_1, theta_2)
    let (g, rx, range, bearing) = match frame {
        BootstrapFrame::First => ([[-r1 * c / s, r2 / s], [1.0, 0.0]], rx1, r1, t1),
        BootstrapFrame::Second => ([[-r1 / s, r2 * c / s], [0.0, 1.0]], rx2, r2, t2),
    };
    let cov = Sym2::diag(v1, v2).congruence(&crate::geometry::Mat2(g));
    Ok((rx, PolarEstimate::new(range, bearing, cov).canonical()))
}

/// Bootstrap estimate from two bearings at distinct receivers.
pub fn bootstrap_estimate(
    m1: &AoaMeasurement,
    m2: &AoaMeasurement,
    receivers: &[ReceiverPose],
    min_separation: f64,
) -> Result<CartesianEstimate> {
    let (rx, polar) = bootstrap_polar(m1, m2, receivers, min_separation, BootstrapFrame::First)?;
    Ok(polar_to_cart(&rx, &polar))
}

/// Folds one bearing into a cartesian estimate at its receiver.
pub fn aggregate_aoa(
    prior: &CartesianEstimate,
    receiver: &ReceiverPose,
    measurement: &AoaMeasurement,
) -> Result<CartesianEstimate> {
    let polar = cart_to_polar(receiver, prior)?;
    let post = lmmse_aoa_update(&polar, measurement.angle, measurement.variance());
    Ok(polar_to_cart(receiver, &post))
}

fn pair_qualifies(a: &AoaMeasurement, b: &AoaMeasurement, min_separation: f64) -> bool {
    if a.receiver_id == b.receiver_id {
        return false;
    }
    let d = wrap_angle(a.angle - b.angle).abs();
    d.min(PI - d) >= min_separation
}

/// All index pairs `(i, j)`, `i < j`, usable as a bootstrap, in lexicographic order.
pub fn qualifying_pairs(measurements: &[AoaMeasurement], min_separation: f64) -> Vec<(usize, usize)> {
    let n = measurements.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if pair_qualifies(&measurements[i], &measurements[j], min_separation) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Lowest-index pair whose bearing difference stays `min_separation` away
/// from 0 and pi.
pub fn select_bootstrap_pair(
    measurements: &[AoaMeasurement],
    min_separation: f64,
) -> Result<(usize, usize)> {
    if measurements.len() < 2 {
        return Err(Error::InsufficientMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    qualifying_pairs(measurements, min_separation)
        .first()
        .copied()
        .ok_or(Error::NoViablePair)
}

/// Draws up to `m` distinct qualifying pairs without replacement.
pub(crate) fn draw_seed_pairs(
    rng: &mut ChaCha8Rng,
    qualifying: &[(usize, usize)],
    m: usize,
) -> Vec<(usize, usize)> {
    let m = m.min(qualifying.len());
    index::sample(rng, qualifying.len(), m)
        .into_iter()
        .map(|k| qualifying[k])
        .collect()
}

/// Index of the unprocessed measurement most consistent with `at`.
///
/// Ties go to the lowest receiver id, then the lowest path index.
pub(crate) fn closest_measurement(
    at: Point2,
    measurements: &[AoaMeasurement],
    positions: &[ReceiverPose],
    candidates: &[usize],
) -> Option<(usize, f64)> {
    candidates
        .iter()
        .map(|&i| (i, bearing_error(at, &positions[i], &measurements[i])))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1).then_with(|| {
                let (ma, mb) = (&measurements[a.0], &measurements[b.0]);
                (ma.receiver_id, ma.path_index).cmp(&(mb.receiver_id, mb.path_index))
            })
        })
}

/// Angular error of a measurement against the bearing of `at`; `pi` when
/// `at` sits on the receiver.
pub(crate) fn bearing_error(at: Point2, receiver: &ReceiverPose, m: &AoaMeasurement) -> f64 {
    true_bearing(receiver, at)
        .map(|b| angular_error(m.angle, b))
        .unwrap_or(PI)
}

/// Receiver pose for each measurement, in slice order.
pub(crate) fn measurement_receivers(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
) -> Result<Vec<ReceiverPose>> {
    measurements
        .iter()
        .map(|m| find_receiver(receivers, m.receiver_id).copied())
        .collect()
}

enum RestOrder {
    Fixed(Vec<usize>),
    Greedy(Vec<usize>),
}

struct Run {
    estimate: CartesianEstimate,
    used: Vec<usize>,
}

fn run_from_pair(
    measurements: &[AoaMeasurement],
    poses: &[ReceiverPose],
    pair: (usize, usize),
    rest: RestOrder,
    min_separation: f64,
) -> Result<Run> {
    let (i, j) = pair;
    let (rx, polar) = bootstrap_polar(
        &measurements[i],
        &measurements[j],
        &[poses[i], poses[j]],
        min_separation,
        BootstrapFrame::First,
    )?;
    let mut estimate = polar_to_cart(&rx, &polar);
    let mut used = vec![i, j];
    let mut step = |estimate: &mut CartesianEstimate, k: usize| {
        // a bearing taken on top of the running estimate carries no update
        if let Ok(next) = aggregate_aoa(estimate, &poses[k], &measurements[k]) {
            *estimate = next;
            used.push(k);
        }
    };
    match rest {
        RestOrder::Fixed(order) => {
            for k in order {
                step(&mut estimate, k);
            }
        }
        RestOrder::Greedy(mut remaining) => {
            while let Some((k, _)) = closest_measurement(estimate.mean, measurements, poses, &remaining) {
                remaining.retain(|&r| r != k);
                step(&mut estimate, k);
            }
        }
    }
    Ok(Run { estimate, used })
}

fn finish(
    run: Run,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
) -> Result<LocalizationResult> {
    let ml_cost = los_cost(run.estimate.mean, measurements, receivers)?;
    Ok(LocalizationResult {
        estimate: run.estimate,
        used_measurements: run.used,
        ml_cost,
    })
}

fn remaining_after(n: usize, pair: (usize, usize)) -> Vec<usize> {
    (0..n).filter(|&k| k != pair.0 && k != pair.1).collect()
}

/// Candidate runs for `m` bootstraps under the configured order policy.
fn bootstrap_runs(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SequentialConfig,
    m: usize,
) -> Result<Vec<LocalizationResult>> {
    config.validate()?;
    if measurements.len() < 2 {
        return Err(Error::InsufficientMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "num_bootstraps",
            reason: "need at least one bootstrap".into(),
        });
    }
    let poses = measurement_receivers(measurements, receivers)?;
    let sep = config.bootstrap_min_separation;
    let n = measurements.len();
    let mut runs = Vec::with_capacity(m);
    match &config.combine_order {
        CombineOrder::Given(order) => {
            validate_order(order, n)?;
            let ordered: Vec<AoaMeasurement> = order.iter().map(|&k| measurements[k]).collect();
            let pairs = qualifying_pairs(&ordered, sep);
            if pairs.is_empty() {
                return Err(Error::NoViablePair);
            }
            for &(a, b) in pairs.iter().take(m) {
                let pair = (order[a], order[b]);
                let rest = order
                    .iter()
                    .copied()
                    .filter(|&k| k != pair.0 && k != pair.1)
                    .collect();
                let run = run_from_pair(measurements, &poses, pair, RestOrder::Fixed(rest), sep)?;
                runs.push(finish(run, measurements, receivers)?);
            }
        }
        CombineOrder::Random { seed } | CombineOrder::Greedy { seed } => {
            let greedy = matches!(config.combine_order, CombineOrder::Greedy { .. });
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let qualifying = qualifying_pairs(measurements, sep);
            if qualifying.is_empty() {
                return Err(Error::NoViablePair);
            }
            for pair in draw_seed_pairs(&mut rng, &qualifying, m) {
                let mut rest = remaining_after(n, pair);
                let rest = if greedy {
                    RestOrder::Greedy(rest)
                } else {
                    rest.shuffle(&mut rng);
                    RestOrder::Fixed(rest)
                };
                let run = run_from_pair(measurements, &poses, pair, rest, sep)?;
                runs.push(finish(run, measurements, receivers)?);
            }
        }
    }
    Ok(runs)
}

fn validate_order(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &k in order {
        if k >= n || std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidParameter {
                name: "combine_order",
                reason: format!("index {k} is out of range or repeated"),
            });
        }
    }
    Ok(())
}

/// Bootstrap, then aggregate every remaining bearing in the configured order.
pub fn sequential_localize(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SequentialConfig,
) -> Result<LocalizationResult> {
    multi_bootstrap_localize(measurements, receivers, config, 1)
}

/// Runs the sequential algorithm from `num_bootstraps` distinct bootstrap
/// pairs and keeps the result with the smallest ML cost.
pub fn multi_bootstrap_localize(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SequentialConfig,
    num_bootstraps: usize,
) -> Result<LocalizationResult> {
    let runs = bootstrap_runs(measurements, receivers, config, num_bootstraps)?;
    runs.into_iter()
        .reduce(|best, r| if r.ml_cost < best.ml_cost { r } else { best })
        .ok_or(Error::NoViablePair)
}

/// Sequential localization with a range estimate at (some of) the receivers.
///
/// The bootstrap pair first absorbs its own range estimates with scalar
/// updates; every later receiver contributes its bearing and range jointly
/// through [`fuse_range_update`].
pub fn sequential_localize_with_ranges(
    measurements: &[AoaMeasurement],
    ranges: &[RangeMeasurement],
    receivers: &[ReceiverPose],
    config: &SequentialConfig,
) -> Result<LocalizationResult> {
    let base = sequential_localize(measurements, receivers, config)?;
    // replay the same order, now with the ranges folded in
    let poses = measurement_receivers(measurements, receivers)?;
    let order = &base.used_measurements;
    let (i, j) = (order[0], order[1]);
    let (rx, polar) = bootstrap_polar(
        &measurements[i],
        &measurements[j],
        &[poses[i], poses[j]],
        config.bootstrap_min_separation,
        BootstrapFrame::First,
    )?;
    let mut estimate = polar_to_cart(&rx, &polar);
    let range_of = |id: usize| ranges.iter().find(|r| r.receiver_id == id);
    for &k in &order[..2] {
        if let Some(r) = range_of(measurements[k].receiver_id) {
            let p = cart_to_polar(&poses[k], &estimate)?;
            estimate = polar_to_cart(&poses[k], &lmmse_range_update(&p, r.range, r.variance));
        }
    }
    for &k in &order[2..] {
        let m = &measurements[k];
        let Ok(prior) = cart_to_polar(&poses[k], &estimate) else {
            continue;
        };
        let post = match range_of(m.receiver_id) {
            Some(r) => {
                let meas = PolarEstimate::new(r.range, m.angle, Sym2::diag(r.variance, m.variance()));
                fuse_range_update(&prior, &meas)?
            }
            None => lmmse_aoa_update(&prior, m.angle, m.variance()),
        };
        estimate = polar_to_cart(&poses[k], &post);
    }
    let ml_cost = los_cost(estimate.mean, measurements, receivers)?;
    Ok(LocalizationResult {
        estimate,
        used_measurements: base.used_measurements,
        ml_cost,
    })
}
