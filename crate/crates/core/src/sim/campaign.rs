//! Deterministic Monte-Carlo campaigns over ring deployments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::failure_rate;
use super::ring::{candidate_locations, OutlierMode, RingScenario, RingTrial};
use crate::bounds::crlb_trace;
use crate::error::{Error, Result};
use crate::geometry::{Point2, ReceiverPose};
use crate::ml::{ml_los_estimate_on, ml_robust_estimate_on, BearingGrid, MlSettings};
use crate::models::AoaModel;
use crate::nlos::{robust_localize, SuppressionConfig};
use crate::sequential::{multi_bootstrap_localize, sequential_localize_with_ranges, SequentialConfig};

/// Outlier fraction used by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    Fixed(f64),
    /// The cell's true outlier fraction.
    Matched,
}

/// Stand-in for a zero outlier fraction in the mixture likelihood.
pub const MIN_MIXTURE_ALPHA: f64 = 1e-6;

impl AlphaChoice {
    fn resolve(self, cell_alpha: f64) -> f64 {
        match self {
            AlphaChoice::Fixed(a) => a,
            AlphaChoice::Matched => cell_alpha.max(MIN_MIXTURE_ALPHA),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Sequential {
        num_bootstraps: usize,
    },
    /// Sequential with log-normal RSS ranges at every receiver.
    SequentialRange {
        beta: f64,
        snr_db: f64,
    },
    Robust {
        alpha: AlphaChoice,
        num_seeds: Option<usize>,
        target_pfail: f64,
    },
    MlLos,
    MlRobust {
        alpha: AlphaChoice,
    },
    /// Gaussian ML over the LOS receivers only, which are known.
    MlKnownLos,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sequential { .. } => "sequential",
            Algorithm::SequentialRange { .. } => "sequential_range",
            Algorithm::Robust { .. } => "robust",
            Algorithm::MlLos => "ml_los",
            Algorithm::MlRobust { .. } => "ml_robust",
            Algorithm::MlKnownLos => "ml_known_los",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierKind {
    Bernoulli,
    ExactCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub algorithm: Algorithm,
    pub n_values: Vec<usize>,
    pub sigma_deg: Vec<f64>,
    pub alphas: Vec<f64>,
    pub outlier_kind: OutlierKind,
    pub num_locations: usize,
    pub trials_per_location: usize,
    pub field_radius: f64,
    /// Grid step of the robust ML search as a fraction of the field radius.
    pub ml_grid_fraction: f64,
    pub seed: u64,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sequential { num_bootstraps: 1 },
            n_values: vec![8],
            sigma_deg: vec![2.0],
            alphas: vec![0.0],
            outlier_kind: OutlierKind::ExactCount,
            num_locations: 25,
            trials_per_location: 40,
            field_radius: 1.0,
            ml_grid_fraction: 1.0 / 200.0,
            seed: 0,
        }
    }
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if self.n_values.is_empty() || self.sigma_deg.is_empty() || self.alphas.is_empty() {
            return bad("grid", "n, sigma and alpha lists must be non-empty".into());
        }
        if let Some(n) = self.n_values.iter().find(|&&n| n < 3) {
            return bad("n", format!("need at least 3 receivers, got {n}"));
        }
        if let Some(s) = self.sigma_deg.iter().find(|s| !(**s > 0.0 && **s < 90.0)) {
            return bad("sigma_deg", format!("must lie in (0, 90), got {s}"));
        }
        if let Some(&a) = self.alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(Error::InvalidAlpha(a));
        }
        if self.num_locations == 0 || self.trials_per_location == 0 {
            return bad("trials", "need at least one location and one trial".into());
        }
        if !(self.field_radius > 0.0) {
            return bad("field_radius", format!("must be positive, got {}", self.field_radius));
        }
        if !(self.ml_grid_fraction > 0.0 && self.ml_grid_fraction <= 0.5) {
            return bad("ml_grid_fraction", format!("must lie in (0, 0.5], got {}", self.ml_grid_fraction));
        }
        Ok(())
    }

    pub fn trials_per_cell(&self) -> usize {
        self.num_locations * self.trials_per_location
    }
}

/// One row of the per-trial output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub n: usize,
    pub sigma_deg: f64,
    pub alpha: f64,
    pub algorithm: String,
    /// Distance to the true source; NaN when the algorithm failed.
    pub err: f64,
    pub inlier_count: usize,
    pub ml_cost: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub n: usize,
    pub sigma_deg: f64,
    pub alpha: f64,
    /// Over trials that returned an estimate.
    pub rms_error: f64,
    pub normalized_rms: f64,
    /// `sqrt` of the CRLB trace averaged over the candidate locations.
    pub crlb_rms: f64,
    /// Trials with no estimate or an error beyond three times `crlb_rms`.
    pub failure_rate: f64,
    pub failed_trials: usize,
    pub trial_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub cells: Vec<CellMetrics>,
    pub records: Vec<TrialRecord>,
}

/// Per-trial random stream: a counter-derived ChaCha stream of the campaign seed.
pub fn trial_rng(seed: u64, cell: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 40) | trial as u64);
    rng
}

/// Candidate source locations for a campaign seed.
pub fn campaign_locations(seed: u64, count: usize, field_radius: f64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    candidate_locations(&mut rng, count, field_radius)
}

/// Precomputed grids shared by the trials of a cell.
struct CellContext {
    receivers: Vec<ReceiverPose>,
    robust_grid: Option<(BearingGrid, MlSettings)>,
    los_grid: Option<(BearingGrid, MlSettings)>,
}

fn los_settings(field_radius: f64) -> MlSettings {
    MlSettings {
        grid_extent: field_radius,
        grid_step: field_radius / 25.0,
        refine_tol: 1e-9 * field_radius,
        ..MlSettings::default()
    }
}

impl CellContext {
    fn new(spec: &CampaignSpec, n: usize) -> Result<Self> {
        let receivers = super::ring::ring_receivers(n, spec.field_radius);
        let r = spec.field_radius;
        let robust_grid = match spec.algorithm {
            Algorithm::MlRobust { .. } => {
                let s = MlSettings {
                    grid_extent: r,
                    grid_step: r * spec.ml_grid_fraction,
                    refine_tol: 1e-6 * r,
                    ..MlSettings::default()
                };
                Some((BearingGrid::new(&receivers, &s)?, s))
            }
            _ => None,
        };
        let los_grid = match spec.algorithm {
            Algorithm::MlLos | Algorithm::MlKnownLos => {
                let s = los_settings(r);
                Some((BearingGrid::new(&receivers, &s)?, s))
            }
            _ => None,
        };
        Ok(Self {
            receivers,
            robust_grid,
            los_grid,
        })
    }
}

struct Outcome {
    point: Point2,
    inliers: usize,
    cost: f64,
}

fn estimate(
    spec: &CampaignSpec,
    ctx: &CellContext,
    scenario: &RingScenario,
    trial: &RingTrial,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let meas = &trial.measurements;
    let rx = &ctx.receivers;
    let algo_seed: u64 = rng.random();
    match &spec.algorithm {
        Algorithm::Sequential { num_bootstraps } => {
            let r = multi_bootstrap_localize(meas, rx, &SequentialConfig::seeded(algo_seed), *num_bootstraps)?;
            Ok(Outcome {
                point: r.estimate.mean,
                inliers: r.used_measurements.len(),
                cost: r.ml_cost,
            })
        }
        Algorithm::SequentialRange { beta, snr_db } => {
            let ranges = scenario.sample_ranges(rng, *beta, *snr_db)?;
            let r = sequential_localize_with_ranges(meas, &ranges, rx, &SequentialConfig::seeded(algo_seed))?;
            Ok(Outcome {
                point: r.estimate.mean,
                inliers: r.used_measurements.len(),
                cost: r.ml_cost,
            })
        }
        Algorithm::Robust {
            alpha: choice,
            num_seeds,
            target_pfail,
        } => {
            let a = choice.resolve(alpha);
            let theta_max = (a <= MIN_MIXTURE_ALPHA).then_some(f64::INFINITY);
            let cfg = SuppressionConfig {
                alpha_max: a,
                target_pfail: *target_pfail,
                num_seeds: *num_seeds,
                theta_max,
                field_radius: spec.field_radius,
                seed: algo_seed,
                ..SuppressionConfig::default()
            };
            let r = robust_localize(meas, rx, &cfg)?;
            Ok(Outcome {
                point: r.estimate.mean,
                inliers: r.inliers.len(),
                cost: r.ml_cost,
            })
        }
        Algorithm::MlLos => {
            let (grid, s) = ctx.los_grid.as_ref().expect("grid built for ML");
            let e = ml_los_estimate_on(grid, meas, rx, s)?;
            Ok(Outcome {
                point: e.point,
                inliers: meas.len(),
                cost: -e.objective,
            })
        }
        Algorithm::MlKnownLos => {
            let (grid, s) = ctx.los_grid.as_ref().expect("grid built for ML");
            let los = trial.los_measurements();
            let e = ml_los_estimate_on(grid, &los, rx, s)?;
            Ok(Outcome {
                point: e.point,
                inliers: los.len(),
                cost: -e.objective,
            })
        }
        Algorithm::MlRobust { alpha: choice } => {
            let (grid, s) = ctx.robust_grid.as_ref().expect("grid built for ML");
            let e = ml_robust_estimate_on(grid, meas, rx, choice.resolve(alpha), s)?;
            Ok(Outcome {
                point: e.point,
                inliers: meas.len(),
                cost: -e.objective,
            })
        }
    }
}

fn outlier_mode(kind: OutlierKind, alpha: f64) -> OutlierMode {
    if alpha == 0.0 {
        return OutlierMode::None;
    }
    match kind {
        OutlierKind::Bernoulli => OutlierMode::Bernoulli { alpha },
        OutlierKind::ExactCount => OutlierMode::ExactCount { alpha },
    }
}

/// Runs every `(n, sigma, alpha)` cell of the campaign.
///
/// Trials run in parallel; each draws from its own counter-derived stream so
/// results do not depend on scheduling. Algorithm errors are tallied as
/// failed trials.
pub fn run_monte_carlo(spec: &CampaignSpec) -> Result<CampaignResult> {
    spec.validate()?;
    let locations = campaign_locations(spec.seed, spec.num_locations, spec.field_radius);
    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut cell_index = 0;
    for &n in &spec.n_values {
        let ctx = CellContext::new(spec, n)?;
        for &sigma_deg in &spec.sigma_deg {
            let sigma = sigma_deg.to_radians();
            let model = AoaModel::GaussianLos { sigma };
            let mut crlb = 0.0;
            for &loc in &locations {
                crlb += crlb_trace(loc, &ctx.receivers, &vec![sigma; n])?;
            }
            let crlb_rms = (crlb / locations.len() as f64).sqrt();
            for &alpha in &spec.alphas {
                let mode = outlier_mode(spec.outlier_kind, alpha);
                let scenarios = locations
                    .iter()
                    .map(|&loc| RingScenario::new(n, spec.field_radius, loc, model, mode))
                    .collect::<Result<Vec<_>>>()?;
                let cell = cell_index;
                let per_trial: Vec<TrialRecord> = (0..spec.trials_per_cell())
                    .into_par_iter()
                    .map(|t| {
                        let scenario = &scenarios[t / spec.trials_per_location];
                        let mut rng = trial_rng(spec.seed, cell, t);
                        let outcome = scenario
                            .sample(&mut rng)
                            .and_then(|trial| estimate(spec, &ctx, scenario, &trial, alpha, &mut rng));
                        let (err, inlier_count, ml_cost, failed) = match outcome {
                            Ok(o) => (o.point.distance(scenario.source), o.inliers, o.cost, false),
                            Err(_) => (f64::NAN, 0, f64::NAN, true),
                        };
                        TrialRecord {
                            trial: t,
                            n,
                            sigma_deg,
                            alpha,
                            algorithm: spec.algorithm.name().to_string(),
                            err,
                            inlier_count,
                            ml_cost,
                            failed,
                        }
                    })
                    .collect();
                cells.push(summarize(n, sigma_deg, alpha, crlb_rms, spec.field_radius, &per_trial));
                records.extend(per_trial);
                cell_index += 1;
            }
        }
    }
    Ok(CampaignResult { cells, records })
}

fn summarize(n: usize, sigma_deg: f64, alpha: f64, crlb_rms: f64, field_radius: f64, records: &[TrialRecord]) -> CellMetrics {
    let ok: Vec<f64> = records.iter().filter(|r| !r.failed).map(|r| r.err).collect();
    let failed_trials = records.len() - ok.len();
    let rms_error = if ok.is_empty() {
        f64::NAN
    } else {
        (ok.iter().map(|e| e * e).sum::<f64>() / ok.len() as f64).sqrt()
    };
    let far = failure_rate(&ok, crlb_rms).unwrap_or(0.0) * ok.len() as f64;
    CellMetrics {
        n,
        sigma_deg,
        alpha,
        rms_error,
        normalized_rms: rms_error / field_radius,
        crlb_rms,
        failure_rate: (far + failed_trials as f64) / records.len() as f64,
        failed_trials,
        trial_count: records.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> CampaignSpec {
        CampaignSpec {
            algorithm,
            trials_per_location: 8,
            seed: 11,
            ..CampaignSpec::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small(Algorithm::Sequential { num_bootstraps: 2 });
        let a = run_monte_carlo(&spec).unwrap();
        let b = run_monte_carlo(&spec).unwrap();
        assert_eq!(a.cells, b.cells);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.err.to_bits(), y.err.to_bits());
        }
        let other = run_monte_carlo(&CampaignSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.cells[0].rms_error, other.cells[0].rms_error);
    }

    #[test]
    fn cells_cover_the_grid() {
        let spec = CampaignSpec {
            n_values: vec![6, 8],
            sigma_deg: vec![1.0, 2.0],
            alphas: vec![0.0, 0.25],
            trials_per_location: 2,
            num_locations: 5,
            algorithm: Algorithm::Robust {
                alpha: AlphaChoice::Fixed(0.5),
                num_seeds: Some(4),
                target_pfail: 1e-3,
            },
            ..CampaignSpec::default()
        };
        let r = run_monte_carlo(&spec).unwrap();
        assert_eq!(r.cells.len(), 8);
        assert_eq!(r.records.len(), 80);
        for c in &r.cells {
            assert!((0.0..=1.0).contains(&c.failure_rate));
            assert_eq!(c.trial_count, 10);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = CampaignSpec {
            alphas: vec![1.0],
            ..CampaignSpec::default()
        };
        assert!(matches!(run_monte_carlo(&spec), Err(Error::InvalidAlpha(_))));
        let spec = CampaignSpec {
            n_values: vec![2],
            ..CampaignSpec::default()
        };
        assert!(run_monte_carlo(&spec).is_err());
    }
}
