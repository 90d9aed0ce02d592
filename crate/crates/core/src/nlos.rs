//! Randomized NLOS outlier suppression.
//!
//! Each run bootstraps from a seed pair and greedily grows an inlier set,
//! admitting the closest remaining bearing only if every inlier still sits
//! within its angular threshold at the candidate estimate. Several runs with
//! distinct seed pairs are scored with the outlier-mixture likelihood.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polar_to_cart, CartesianEstimate, Point2, ReceiverPose};
use crate::ml::{los_cost, robust_loglik};
use crate::models::{gaussian_truncation, AoaMeasurement};
use crate::sequential::{
    aggregate_aoa, bearing_error, bootstrap_polar, closest_measurement, draw_seed_pairs,
    measurement_receivers, qualifying_pairs, BootstrapFrame, DEFAULT_MIN_SEPARATION,
};

/// Largest residual still more likely LOS than outlier under the mixture
/// model with outlier fraction `alpha`.
///
/// Returns `f64::INFINITY` when the threshold reaches `pi` (nothing can be
/// rejected) and `0.0` when even a zero residual favours the outlier branch.
pub fn compute_theta_max(sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("must be positive, got {sigma}"),
        });
    }
    let arg = PI.sqrt() * (1.0 - alpha) / (sigma * 2f64.sqrt() * alpha * gaussian_truncation(sigma));
    if arg <= 1.0 {
        return Ok(0.0);
    }
    let theta = (2.0 * sigma * sigma * arg.ln()).sqrt();
    Ok(if theta >= PI { f64::INFINITY } else { theta })
}

/// Angular threshold applied in the inlier test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// One threshold for every measurement.
    Common(f64),
    /// Per-measurement threshold from its own sigma at outlier fraction `alpha`.
    PerMeasurement { alpha: f64 },
}

impl Threshold {
    pub fn unbounded() -> Self {
        Threshold::Common(f64::INFINITY)
    }

    fn resolve(&self, measurements: &[AoaMeasurement]) -> Result<Vec<f64>> {
        match *self {
            Threshold::Common(t) => {
                if !(t > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "theta_max",
                        reason: format!("must be positive, got {t}"),
                    });
                }
                Ok(vec![t; measurements.len()])
            }
            Threshold::PerMeasurement { alpha } => measurements
                .iter()
                .map(|m| compute_theta_max(m.sigma, alpha))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedCountMode {
    /// Smallest M whose exact failure probability meets the target.
    Exact,
    /// Closed-form large-N bound.
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionConfig {
    pub alpha_max: f64,
    pub target_pfail: f64,
    /// Overrides the seed count derived from `alpha_max` and `target_pfail`.
    pub num_seeds: Option<usize>,
    /// Overrides the per-measurement thresholds derived from `alpha_max`.
    pub theta_max: Option<f64>,
    pub field_center: Point2,
    pub field_radius: f64,
    pub seed: u64,
    pub min_separation: f64,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            alpha_max: 0.5,
            target_pfail: 1e-3,
            num_seeds: None,
            theta_max: None,
            field_center: Point2::ORIGIN,
            field_radius: 1.0,
            seed: 0,
            min_separation: DEFAULT_MIN_SEPARATION,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_max > 0.0 && self.alpha_max < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha_max));
        }
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.target_pfail > 0.0 && self.target_pfail <= 1.0) {
            return bad("target_pfail", format!("must lie in (0, 1], got {}", self.target_pfail));
        }
        if self.num_seeds == Some(0) {
            return bad("num_seeds", "must be at least 1".into());
        }
        if !(self.field_radius > 0.0) {
            return bad("field_radius", format!("must be positive, got {}", self.field_radius));
        }
        if !(self.min_separation > 0.0 && self.min_separation < PI / 2.0) {
            return bad("min_separation", format!("must lie in (0, pi/2), got {}", self.min_separation));
        }
        Ok(())
    }

    pub fn threshold(&self) -> Threshold {
        match self.theta_max {
            Some(t) => Threshold::Common(t),
            None => Threshold::PerMeasurement { alpha: self.alpha_max },
        }
    }

    /// Seed count for `num_paths` measurements.
    pub fn seeds_for(&self, num_paths: usize) -> Result<usize> {
        match self.num_seeds {
            Some(m) => Ok(m),
            None => choose_num_seeds(num_paths, self.alpha_max, self.target_pfail, SeedCountMode::Exact),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub estimate: CartesianEstimate,
    /// `(receiver_id, path_index)` of every inlier in aggregation order; the
    /// seed pair comes first.
    pub inliers: Vec<(usize, usize)>,
    /// Indices of the inliers into the measurement slice.
    pub inlier_indices: Vec<usize>,
    /// `sum (e_k / sigma_k)^2` over the inliers.
    pub ml_cost: f64,
    /// Estimate fell outside the feasible region.
    pub pruned: bool,
}

/// One suppression run from the measurement pair `seed_pair`.
pub fn suppression_run(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    seed_pair: (usize, usize),
    threshold: &Threshold,
    min_separation: f64,
) -> Result<RunResult> {
    let poses = measurement_receivers(measurements, receivers)?;
    let thresholds = threshold.resolve(measurements)?;
    run_with(measurements, &poses, &thresholds, seed_pair, min_separation)
}

fn run_with(
    measurements: &[AoaMeasurement],
    poses: &[ReceiverPose],
    thresholds: &[f64],
    seed_pair: (usize, usize),
    min_separation: f64,
) -> Result<RunResult> {
    let (i, j) = seed_pair;
    if i >= measurements.len() || j >= measurements.len() {
        return Err(Error::InvalidParameter {
            name: "seed_pair",
            reason: format!("({i}, {j}) out of range"),
        });
    }
    let (rx, polar) = bootstrap_polar(
        &measurements[i],
        &measurements[j],
        &[poses[i], poses[j]],
        min_separation,
        BootstrapFrame::First,
    )?;
    let mut estimate = polar_to_cart(&rx, &polar);
    let mut inliers = vec![i, j];
    let used_receiver = |inliers: &[usize], k: usize| {
        inliers
            .iter()
            .any(|&a| measurements[a].receiver_id == measurements[k].receiver_id)
    };
    let mut remaining: Vec<usize> = (0..measurements.len())
        .filter(|&k| !used_receiver(&inliers, k))
        .collect();
    while let Some((k, _)) = closest_measurement(estimate.mean, measurements, poses, &remaining) {
        remaining.retain(|&r| r != k);
        let Ok(candidate) = aggregate_aoa(&estimate, &poses[k], &measurements[k]) else {
            continue;
        };
        let consistent = inliers
            .iter()
            .chain(std::iter::once(&k))
            .all(|&l| bearing_error(candidate.mean, &poses[l], &measurements[l]) < thresholds[l]);
        if consistent {
            estimate = candidate;
            inliers.push(k);
            // a receiver contributes at most one path
            remaining.retain(|&r| measurements[r].receiver_id != measurements[k].receiver_id);
        }
    }
    let used: Vec<AoaMeasurement> = inliers.iter().map(|&k| measurements[k]).collect();
    let ml_cost = los_cost(estimate.mean, &used, poses)?;
    Ok(RunResult {
        estimate,
        inliers: used.iter().map(|m| (m.receiver_id, m.path_index)).collect(),
        inlier_indices: inliers,
        ml_cost,
        pruned: false,
    })
}

/// A scored suppression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub seed_pair: (usize, usize),
    pub run: RunResult,
    /// Mixture log-likelihood of all measurements at the run's estimate.
    pub loglik: f64,
}

/// Runs suppression from up to `M` distinct random seed pairs.
///
/// Degenerate seeds are dropped; estimates failing `feasible` are kept with
/// `pruned` set.
pub fn robust_candidates(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SuppressionConfig,
    feasible: impl Fn(Point2) -> bool,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    if measurements.len() < 2 {
        return Err(Error::InsufficientMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    let poses = measurement_receivers(measurements, receivers)?;
    let thresholds = config.threshold().resolve(measurements)?;
    let m = config.seeds_for(measurements.len())?;
    let qualifying = qualifying_pairs(measurements, config.min_separation);
    if qualifying.is_empty() {
        return Err(Error::NoViablePair);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(m);
    for pair in draw_seed_pairs(&mut rng, &qualifying, m) {
        let Ok(mut run) = run_with(measurements, &poses, &thresholds, pair, config.min_separation) else {
            continue;
        };
        run.pruned = !feasible(run.estimate.mean);
        let loglik = robust_loglik(run.estimate.mean, measurements, receivers, config.alpha_max)
            .unwrap_or(f64::NEG_INFINITY);
        out.push(Candidate {
            seed_pair: pair,
            run,
            loglik,
        });
    }
    Ok(out)
}

/// Best unpruned candidate by mixture log-likelihood; ties keep the earliest.
pub fn select_candidate(candidates: Vec<Candidate>) -> Result<Candidate> {
    let runs = candidates.len();
    candidates
        .into_iter()
        .filter(|c| !c.run.pruned)
        .reduce(|best, c| if c.loglik > best.loglik { c } else { best })
        .ok_or(Error::AllRunsPruned { runs })
}

/// Robust localization with estimates outside the field disc pruned.
pub fn robust_localize(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SuppressionConfig,
) -> Result<RunResult> {
    let (center, radius) = (config.field_center, config.field_radius);
    robust_localize_with(measurements, receivers, config, |p| p.distance(center) <= radius)
}

/// Robust localization with a caller-supplied feasibility test.
pub fn robust_localize_with(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    config: &SuppressionConfig,
    feasible: impl Fn(Point2) -> bool,
) -> Result<RunResult> {
    let candidates = robust_candidates(measurements, receivers, config, feasible)?;
    Ok(select_candidate(candidates)?.run)
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// `(P, K)`: all pairs and pairs containing at least one outlier.
fn pair_counts(n: usize, alpha: f64) -> Result<(u64, u64)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if n < 2 {
        return Err(Error::InsufficientMeasurements { needed: 2, got: n });
    }
    let los = ((1.0 - alpha) * n as f64 + 1e-9).floor() as u64;
    let p = choose2(n as u64);
    Ok((p, p - choose2(los)))
}

/// Probability that `m` distinct seed pairs drawn uniformly all contain an outlier.
pub fn bootstrap_failure_prob(n: usize, alpha: f64, m: usize) -> Result<f64> {
    let (p, k) = pair_counts(n, alpha)?;
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: "need at least one seed".into(),
        });
    }
    if m as u64 > k {
        return Ok(0.0);
    }
    Ok((0..m as u64).map(|i| (k - i) as f64 / (p - i) as f64).product())
}

/// `(lower, upper)` bracketing [`bootstrap_failure_prob`].
pub fn failure_prob_bounds(n: usize, alpha: f64, m: usize) -> Result<(f64, f64)> {
    let (p, k) = pair_counts(n, alpha)?;
    if m == 0 || m as u64 > k {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("must lie in 1..={k}, got {m}"),
        });
    }
    let (p, k, m) = (p as f64, k as f64, m as f64);
    let lower = ((k - m + 1.0) / (p - m + 1.0)).powf(m);
    let upper = (k / p).powf(m);
    Ok((lower, upper))
}

pub fn choose_num_seeds(n: usize, alpha: f64, target_pfail: f64, mode: SeedCountMode) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !(target_pfail > 0.0 && target_pfail <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "target_pfail",
            reason: format!("must lie in (0, 1], got {target_pfail}"),
        });
    }
    match mode {
        SeedCountMode::Exact => {
            let mut m = 1;
            while bootstrap_failure_prob(n, alpha, m)? > target_pfail {
                m += 1;
            }
            Ok(m)
        }
        SeedCountMode::Bound => {
            let q = 1.0 - (1.0 - alpha).powi(2);
            Ok(((target_pfail.ln() / q.ln()).floor() as usize).max(1))
        }
    }
}
