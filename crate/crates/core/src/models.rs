//! Generative AoA and range measurement models.
//!
//! AoA densities live on the receiver-local feasible cone `[-pi/2, pi/2]`
//! (angles relative to the array broadside). Every density here is the
//! exact truncated density for the given true bearing, so it integrates to
//! one over the cone and matches what the samplers draw.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ReceiverPose};

const FEASIBLE_TOL: f64 = 1e-12;

/// Description of the distribution an AoA estimate is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AoaModel {
    /// Truncated Gaussian around the true bearing (local scattering).
    GaussianLos { sigma: f64 },
    /// Truncated Laplacian with standard deviation `sigma` (spatial spreading).
    LaplacianLos { sigma: f64 },
    /// LOS blocked: uniform over the feasible cone.
    UniformNlos,
    /// Uniform with probability `alpha`, truncated Gaussian otherwise.
    NarrowbandMixture { sigma: f64, alpha: f64 },
    /// `paths` resolved arrivals: one LOS draw (uniform when `blocked`)
    /// followed by `paths - 1` uniform draws.
    Wideband { sigma: f64, paths: usize, blocked: bool },
    /// Truncated Cauchy with scale `gamma`.
    CauchyLos { gamma: f64 },
}

impl AoaModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        };
        match *self {
            AoaModel::GaussianLos { sigma } | AoaModel::LaplacianLos { sigma } => {
                positive("sigma", sigma)
            }
            AoaModel::UniformNlos => Ok(()),
            AoaModel::NarrowbandMixture { sigma, alpha } => {
                positive("sigma", sigma)?;
                if (0.0..1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "alpha",
                        reason: format!("must lie in [0, 1), got {alpha}"),
                    })
                }
            }
            AoaModel::Wideband { sigma, paths, .. } => {
                positive("sigma", sigma)?;
                if paths >= 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "paths",
                        reason: "a wideband receiver resolves at least one path".into(),
                    })
                }
            }
            AoaModel::CauchyLos { gamma } => positive("gamma", gamma),
        }
    }

    /// Spread the estimator should assume for measurements from this model.
    ///
    /// The uniform model carries no bearing information; `pi / sqrt(12)` is
    /// its standard deviation.
    pub fn estimation_sigma(&self) -> f64 {
        match *self {
            AoaModel::GaussianLos { sigma }
            | AoaModel::LaplacianLos { sigma }
            | AoaModel::NarrowbandMixture { sigma, .. }
            | AoaModel::Wideband { sigma, .. } => sigma,
            AoaModel::CauchyLos { gamma } => gamma,
            AoaModel::UniformNlos => PI / 12f64.sqrt(),
        }
    }

    /// Number of angles [`sample_aoa`] returns.
    pub fn paths(&self) -> usize {
        match *self {
            AoaModel::Wideband { paths, .. } => paths,
            _ => 1,
        }
    }
}

/// One AoA estimate in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaMeasurement {
    pub receiver_id: usize,
    /// Index of the resolved path at this receiver (always 0 for narrowband).
    pub path_index: usize,
    /// Global bearing, radians from the x-axis.
    pub angle: f64,
    /// Standard deviation assumed by the estimator.
    pub sigma: f64,
}

impl AoaMeasurement {
    pub fn new(receiver_id: usize, angle: f64, sigma: f64) -> Self {
        Self {
            receiver_id,
            path_index: 0,
            angle: wrap_angle(angle),
            sigma,
        }
    }

    pub fn with_path(mut self, path_index: usize) -> Self {
        self.path_index = path_index;
        self
    }

    /// Builds a measurement from an array-local angle.
    pub fn from_local(
        receiver: &ReceiverPose,
        path_index: usize,
        local: f64,
        sigma: f64,
    ) -> Result<Self> {
        check_feasible(local)?;
        Ok(Self {
            receiver_id: receiver.id,
            path_index,
            angle: receiver.to_global(local),
            sigma,
        })
    }

    pub fn local_angle(&self, receiver: &ReceiverPose) -> f64 {
        receiver.to_local(self.angle)
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// RSS-derived range estimate with its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub receiver_id: usize,
    pub range: f64,
    pub variance: f64,
}

fn check_feasible(angle: f64) -> Result<()> {
    if angle.is_finite() && angle.abs() <= FRAC_PI_2 + FEASIBLE_TOL {
        Ok(())
    } else {
        Err(Error::InfeasibleBearing { bearing: angle })
    }
}

/// Gaussian upper tail probability `Q(t)`.
pub fn q_function(t: f64) -> f64 {
    0.5 * erfc(t / SQRT_2)
}

/// `1 - 2 Q(pi / (2 sigma))`, the mass of a zero-mean Gaussian inside the cone.
pub fn gaussian_truncation(sigma: f64) -> f64 {
    erf(FRAC_PI_2 / (SQRT_2 * sigma))
}

/// Mass of `N(mean, sigma^2)` inside the feasible cone.
fn gaussian_mass(mean: f64, sigma: f64) -> f64 {
    let s = SQRT_2 * sigma;
    0.5 * (erf((FRAC_PI_2 - mean) / s) + erf((FRAC_PI_2 + mean) / s))
}

fn laplace_scale(sigma: f64) -> f64 {
    sigma / SQRT_2
}

fn laplace_mass(mean: f64, sigma: f64) -> f64 {
    let b = laplace_scale(sigma);
    1.0 - 0.5 * (-(FRAC_PI_2 - mean) / b).exp() - 0.5 * (-(FRAC_PI_2 + mean) / b).exp()
}

fn cauchy_mass(mean: f64, gamma: f64) -> f64 {
    (((FRAC_PI_2 - mean) / gamma).atan() + ((FRAC_PI_2 + mean) / gamma).atan()) / PI
}

fn gaussian_logpdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let e = x - mean;
    -e * e / (2.0 * sigma * sigma) - ((2.0 * PI).sqrt() * sigma * gaussian_mass(mean, sigma)).ln()
}

fn laplace_logpdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let b = laplace_scale(sigma);
    -(x - mean).abs() / b - (2.0 * b * laplace_mass(mean, sigma)).ln()
}

fn cauchy_logpdf(x: f64, mean: f64, gamma: f64) -> f64 {
    let e = x - mean;
    (gamma / (PI * (e * e + gamma * gamma))).ln() - cauchy_mass(mean, gamma).ln()
}

fn uniform_logpdf() -> f64 {
    -PI.ln()
}

/// `ln(exp(a) + exp(b))` without overflow.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-FRAC_PI_2..=FRAC_PI_2)
}

fn sample_truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sigma * z;
        if x.abs() <= FRAC_PI_2 {
            return x;
        }
    }
}

fn sample_truncated_laplace<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    let b = laplace_scale(sigma);
    loop {
        let e: f64 = rng.sample(Exp1);
        let x = if rng.random::<bool>() {
            mean + b * e
        } else {
            mean - b * e
        };
        if x.abs() <= FRAC_PI_2 {
            return x;
        }
    }
}

fn sample_truncated_cauchy<R: Rng + ?Sized>(rng: &mut R, mean: f64, gamma: f64) -> f64 {
    let lo = ((-FRAC_PI_2 - mean) / gamma).atan();
    let hi = ((FRAC_PI_2 - mean) / gamma).atan();
    let u = rng.random_range(lo..=hi);
    (mean + gamma * u.tan()).clamp(-FRAC_PI_2, FRAC_PI_2)
}

/// Draws receiver-local AoA estimates for a source at `true_local_bearing`.
///
/// Returns one angle for every model except [`AoaModel::Wideband`], which
/// returns its LOS-path draw first followed by the NLOS paths.
pub fn sample_aoa<R: Rng + ?Sized>(
    rng: &mut R,
    model: &AoaModel,
    true_local_bearing: f64,
) -> Result<Vec<f64>> {
    check_feasible(true_local_bearing)?;
    model.validate()?;
    let mu = true_local_bearing.clamp(-FRAC_PI_2, FRAC_PI_2);
    let out = match *model {
        AoaModel::GaussianLos { sigma } => vec![sample_truncated_gaussian(rng, mu, sigma)],
        AoaModel::LaplacianLos { sigma } => vec![sample_truncated_laplace(rng, mu, sigma)],
        AoaModel::UniformNlos => vec![sample_uniform(rng)],
        AoaModel::NarrowbandMixture { sigma, alpha } => {
            if rng.random::<f64>() < alpha {
                vec![sample_uniform(rng)]
            } else {
                vec![sample_truncated_gaussian(rng, mu, sigma)]
            }
        }
        AoaModel::Wideband {
            sigma,
            paths,
            blocked,
        } => {
            let mut v = Vec::with_capacity(paths);
            v.push(if blocked {
                sample_uniform(rng)
            } else {
                sample_truncated_gaussian(rng, mu, sigma)
            });
            v.extend((1..paths).map(|_| sample_uniform(rng)));
            v
        }
        AoaModel::CauchyLos { gamma } => vec![sample_truncated_cauchy(rng, mu, gamma)],
    };
    Ok(out)
}

/// Log-density of a single local AoA estimate.
///
/// For [`AoaModel::Wideband`] this is the density of one path picked
/// uniformly among the `paths` arrivals, which is what pooling the output of
/// [`sample_aoa`] produces. Use [`loglik_paths`] for the joint density.
pub fn loglik_aoa(model: &AoaModel, measured_local: f64, true_local_bearing: f64) -> Result<f64> {
    check_feasible(measured_local)?;
    check_feasible(true_local_bearing)?;
    model.validate()?;
    let (x, mu) = (measured_local, true_local_bearing);
    let ll = match *model {
        AoaModel::GaussianLos { sigma } => gaussian_logpdf(x, mu, sigma),
        AoaModel::LaplacianLos { sigma } => laplace_logpdf(x, mu, sigma),
        AoaModel::UniformNlos => uniform_logpdf(),
        AoaModel::NarrowbandMixture { sigma, alpha } => log_add_exp(
            alpha.ln() + uniform_logpdf(),
            (1.0 - alpha).ln() + gaussian_logpdf(x, mu, sigma),
        ),
        AoaModel::Wideband {
            sigma,
            paths,
            blocked,
        } => {
            let los = if blocked {
                uniform_logpdf()
            } else {
                gaussian_logpdf(x, mu, sigma)
            };
            let l = paths as f64;
            if paths == 1 {
                los
            } else {
                log_add_exp(los - l.ln(), ((l - 1.0) / l).ln() + uniform_logpdf())
            }
        }
        AoaModel::CauchyLos { gamma } => cauchy_logpdf(x, mu, gamma),
    };
    Ok(ll)
}

/// Joint log-density of the angles one receiver reports.
///
/// Wideband receivers report their LOS path first; all other models treat
/// the slice as independent draws.
pub fn loglik_paths(model: &AoaModel, measured_local: &[f64], true_local_bearing: f64) -> Result<f64> {
    match *model {
        AoaModel::Wideband {
            sigma,
            paths,
            blocked,
        } => {
            if measured_local.len() != paths {
                return Err(Error::InvalidParameter {
                    name: "measured_local",
                    reason: format!("expected {paths} paths, got {}", measured_local.len()),
                });
            }
            let first = if blocked {
                AoaModel::UniformNlos
            } else {
                AoaModel::GaussianLos { sigma }
            };
            let mut total = loglik_aoa(&first, measured_local[0], true_local_bearing)?;
            for &x in &measured_local[1..] {
                total += loglik_aoa(&AoaModel::UniformNlos, x, true_local_bearing)?;
            }
            Ok(total)
        }
        _ => measured_local
            .iter()
            .map(|&x| loglik_aoa(model, x, true_local_bearing))
            .sum(),
    }
}

/// Standard deviation of `ln(R~/R)` for the log-normal RSS range model.
///
/// The SNR enters the exponent in linear scale.
pub fn rss_log_std(beta: f64, snr_db: f64) -> f64 {
    1.0 / (beta * 10f64.powf(snr_db / 10.0))
}

/// Range estimate for a given standard-normal deviate `r`.
pub fn rss_range_from_deviate(
    receiver_id: usize,
    true_range: f64,
    beta: f64,
    snr_db: f64,
    r: f64,
) -> Result<RangeMeasurement> {
    if !(true_range > 0.0) || !(beta > 0.0) || !snr_db.is_finite() {
        return Err(Error::InvalidParameter {
            name: "range model",
            reason: format!("need range > 0, beta > 0, finite snr (got {true_range}, {beta}, {snr_db})"),
        });
    }
    let s = rss_log_std(beta, snr_db);
    let s2 = s * s;
    // variance of a log-normal with median `true_range` and log-std `s`
    let variance = true_range * true_range * s2.exp() * s2.exp_m1();
    Ok(RangeMeasurement {
        receiver_id,
        range: true_range * (s * r).exp(),
        variance,
    })
}

/// Samples a log-normal RSS range estimate `R exp(r / (beta SNR))`.
pub fn sample_rss_range<R: Rng + ?Sized>(
    rng: &mut R,
    receiver_id: usize,
    true_range: f64,
    beta: f64,
    snr_db: f64,
) -> Result<RangeMeasurement> {
    let r: f64 = rng.sample(StandardNormal);
    rss_range_from_deviate(receiver_id, true_range, beta, snr_db, r)
}
