//! Reference maximum-likelihood estimators.
//!
//! Both estimators seed from an exhaustive grid over the field disc. The LOS
//! estimator then runs Gauss-Newton on the bearing residuals; the robust one
//! runs coordinate descent on the smooth mixture likelihood.

use std::f64::consts::{PI, TAU};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{find_receiver, true_bearing, wrap_angle, Point2, ReceiverPose, MIN_RANGE};
use crate::models::{gaussian_truncation, AoaMeasurement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlSettings {
    pub grid_center: Point2,
    /// Radius of the searched disc.
    pub grid_extent: f64,
    pub grid_step: f64,
    pub refine_iters: usize,
    pub refine_tol: f64,
}

impl Default for MlSettings {
    fn default() -> Self {
        Self {
            grid_center: Point2::ORIGIN,
            grid_extent: 1.0,
            grid_step: 1.0 / 200.0,
            refine_iters: 200,
            refine_tol: 1e-9,
        }
    }
}

impl MlSettings {
    /// Unit-disc settings with a custom grid step.
    pub fn with_step(grid_step: f64) -> Self {
        Self {
            grid_step,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if !(self.grid_step > 0.0) {
            return bad("grid_step", "must be positive");
        }
        if !(self.refine_tol > 0.0) {
            return bad("refine_tol", "must be positive");
        }
        if !(self.grid_extent > 0.0) {
            return bad("grid_extent", "must be positive");
        }
        if self.grid_extent / self.grid_step > 4000.0 {
            return bad("grid_step", "grid too fine");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlEstimate {
    pub point: Point2,
    /// Log-likelihood at `point` (up to the estimator's constants).
    pub objective: f64,
    /// Whether refinement met `refine_tol` within `refine_iters`.
    pub converged: bool,
    /// A distant grid point scored within half a nat of the maximum.
    pub ambiguous: bool,
}

/// Grid points over the search disc with the bearing to every receiver.
#[derive(Debug, Clone)]
pub struct BearingGrid {
    points: Vec<Point2>,
    receiver_ids: Vec<usize>,
    /// `bearings[k * points.len() + p]`: receiver `k` to point `p`.
    bearings: Vec<f64>,
    step: f64,
}

impl BearingGrid {
    pub fn new(receivers: &[ReceiverPose], settings: &MlSettings) -> Result<Self> {
        settings.validate()?;
        let h = settings.grid_step;
        let half = (settings.grid_extent / h).floor() as i64;
        let mut points = Vec::new();
        for iy in -half..=half {
            for ix in -half..=half {
                let off = Point2::new(ix as f64 * h, iy as f64 * h);
                if off.norm() > settings.grid_extent + 1e-12 {
                    continue;
                }
                let p = settings.grid_center + off;
                if receivers.iter().all(|r| r.position.distance(p) >= MIN_RANGE) {
                    points.push(p);
                }
            }
        }
        let mut bearings = Vec::with_capacity(points.len() * receivers.len());
        for r in receivers {
            bearings.extend(points.iter().map(|p| (*p - r.position).angle()));
        }
        Ok(Self {
            points,
            receiver_ids: receivers.iter().map(|r| r.id).collect(),
            bearings,
            step: h,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    fn bearings_of(&self, receiver_id: usize) -> Result<&[f64]> {
        let k = self
            .receiver_ids
            .iter()
            .position(|&id| id == receiver_id)
            .ok_or(Error::UnknownReceiver(receiver_id))?;
        let n = self.points.len();
        Ok(&self.bearings[k * n..(k + 1) * n])
    }

    /// Adds `term(wrapped residual)` of one measurement into `acc`.
    fn accumulate(&self, m: &AoaMeasurement, acc: &mut [f64], term: impl Fn(f64) -> f64) -> Result<()> {
        for (a, &b) in acc.iter_mut().zip(self.bearings_of(m.receiver_id)?) {
            let mut d = m.angle - b;
            if d > PI {
                d -= TAU;
            } else if d <= -PI {
                d += TAU;
            }
            *a += term(d);
        }
        Ok(())
    }

    /// Index of the largest score; ties go to the lowest index.
    fn argmax(scores: &[f64]) -> usize {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    fn is_ambiguous(&self, scores: &[f64], best: usize) -> bool {
        let center = self.points[best];
        let radius = 10.0 * self.step;
        let ambiguous = self
            .points
            .iter()
            .zip(scores)
            .any(|(p, &s)| p.distance(center) > radius && s > scores[best] - 0.5);
        if ambiguous {
            debug!("multi-modal likelihood grid, maximum at {center:?}");
        }
        ambiguous
    }
}

fn check_measurements(measurements: &[AoaMeasurement]) -> Result<()> {
    if measurements.len() < 2 {
        return Err(Error::InsufficientMeasurements {
            needed: 2,
            got: measurements.len(),
        });
    }
    Ok(())
}

/// `sum_k (e_k / sigma_k)^2` with wrapped residuals `e_k`; the negative of
/// the Gaussian log-likelihood up to a factor 2 and constants.
pub fn los_cost(x: Point2, measurements: &[AoaMeasurement], receivers: &[ReceiverPose]) -> Result<f64> {
    let mut cost = 0.0;
    for m in measurements {
        let rx = find_receiver(receivers, m.receiver_id)?;
        let e = wrap_angle(m.angle - true_bearing(rx, x)?);
        cost += e * e / m.variance();
    }
    Ok(cost)
}

/// Normalized residuals `wrap(theta_k_hat - theta_k(x)) / sigma_k`.
pub fn los_residuals(x: Point2, measurements: &[AoaMeasurement], receivers: &[ReceiverPose]) -> Result<Vec<f64>> {
    measurements
        .iter()
        .map(|m| {
            let rx = find_receiver(receivers, m.receiver_id)?;
            Ok(wrap_angle(m.angle - true_bearing(rx, x)?) / m.sigma)
        })
        .collect()
}

/// Rows `d r_k / d(x, y) = (sin theta_k / R_k, -cos theta_k / R_k) / sigma_k`.
pub fn los_jacobian(
    x: Point2,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
) -> Result<Vec<[f64; 2]>> {
    measurements
        .iter()
        .map(|m| {
            let rx = find_receiver(receivers, m.receiver_id)?;
            let d = x - rx.position;
            let r2 = d.dot(d);
            if r2.sqrt() < MIN_RANGE {
                return Err(Error::DegenerateRange { range: r2.sqrt() });
            }
            // sin/R = y/R^2, cos/R = x/R^2
            Ok([d.y / (r2 * m.sigma), -d.x / (r2 * m.sigma)])
        })
        .collect()
}

fn gauss_newton(
    start: Point2,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    settings: &MlSettings,
) -> Result<(Point2, f64, bool)> {
    let mut x = start;
    let mut cost = los_cost(x, measurements, receivers)?;
    for _ in 0..settings.refine_iters {
        let r = los_residuals(x, measurements, receivers)?;
        let jac = los_jacobian(x, measurements, receivers)?;
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (row, ri) in jac.iter().zip(&r) {
            a11 += row[0] * row[0];
            a12 += row[0] * row[1];
            a22 += row[1] * row[1];
            g1 += row[0] * ri;
            g2 += row[1] * ri;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() <= 1e-300 {
            return Ok((x, cost, false));
        }
        let step = Point2::new(-(a22 * g1 - a12 * g2) / det, -(a11 * g2 - a12 * g1) / det);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-6 {
            let cand = x + step * t;
            if let Ok(c) = los_cost(cand, measurements, receivers) {
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            return Ok((x, cost, step.norm() < settings.refine_tol));
        };
        let moved = (cand - x).norm();
        x = cand;
        cost = c;
        if moved < settings.refine_tol {
            return Ok((x, cost, true));
        }
    }
    Ok((x, cost, false))
}

/// Gaussian ML location: grid seed then Gauss-Newton refinement.
///
/// `objective` is `-los_cost / 2`.
pub fn ml_los_estimate(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    settings: &MlSettings,
) -> Result<MlEstimate> {
    let grid = BearingGrid::new(receivers, settings)?;
    ml_los_estimate_on(&grid, measurements, receivers, settings)
}

pub fn ml_los_estimate_on(
    grid: &BearingGrid,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    settings: &MlSettings,
) -> Result<MlEstimate> {
    check_measurements(measurements)?;
    let mut scores = vec![0.0; grid.points.len()];
    for m in measurements {
        let w = -0.5 / m.variance();
        grid.accumulate(m, &mut scores, |d| w * d * d)?;
    }
    let best = BearingGrid::argmax(&scores);
    let ambiguous = grid.is_ambiguous(&scores, best);
    let (point, cost, converged) = gauss_newton(grid.points[best], measurements, receivers, settings)?;
    Ok(MlEstimate {
        point,
        objective: -0.5 * cost,
        converged,
        ambiguous,
    })
}

/// Per-measurement coefficients of the mixture likelihood.
#[derive(Debug, Clone, Copy)]
struct MixtureTerm {
    /// `(1 - alpha) / (sigma sqrt(2 pi) (1 - 2Q(pi / 2 sigma)))`
    los_weight: f64,
    inv_two_var: f64,
    ln_floor: f64,
    /// Residuals with `d^2` beyond this leave `ln_floor` unchanged in f64.
    saturation: f64,
}

impl MixtureTerm {
    fn new(sigma: f64, alpha: f64) -> Self {
        let los_weight = (1.0 - alpha) / (sigma * (2.0 * PI).sqrt() * gaussian_truncation(sigma));
        let floor = alpha / PI;
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        let saturation = ((los_weight / (floor * 1e-18)).ln() / inv_two_var).max(0.0);
        Self {
            los_weight,
            inv_two_var,
            ln_floor: floor.ln(),
            saturation,
        }
    }

    fn eval(&self, d: f64) -> f64 {
        let d2 = d * d;
        if d2 > self.saturation {
            self.ln_floor
        } else {
            (self.los_weight * (-d2 * self.inv_two_var).exp() + self.ln_floor.exp()).ln()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Log-likelihood of the outlier mixture: every bearing is LOS-Gaussian with
/// probability `1 - alpha` and uniform over a half-circle otherwise.
pub fn robust_loglik(
    x: Point2,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let mut total = 0.0;
    for m in measurements {
        let rx = find_receiver(receivers, m.receiver_id)?;
        let d = wrap_angle(m.angle - true_bearing(rx, x)?);
        total += MixtureTerm::new(m.sigma, alpha).eval(d);
    }
    Ok(total)
}

fn coordinate_descent(
    start: Point2,
    start_value: f64,
    objective: impl Fn(Point2) -> Option<f64>,
    settings: &MlSettings,
) -> (Point2, f64, bool) {
    let (mut x, mut best) = (start, start_value);
    let mut h = settings.grid_step / 2.0;
    let dirs = [
        Point2::new(1.0, 0.0),
        Point2::new(-1.0, 0.0),
        Point2::new(0.0, 1.0),
        Point2::new(0.0, -1.0),
    ];
    for _ in 0..settings.refine_iters {
        if h < settings.refine_tol {
            return (x, best, true);
        }
        let mut improved = false;
        for d in dirs {
            let cand = x + d * h;
            if let Some(v) = objective(cand) {
                if v > best {
                    x = cand;
                    best = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (x, best, h < settings.refine_tol)
}

/// Mixture-likelihood ML location: grid seed then coordinate descent.
pub fn ml_robust_estimate(
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    alpha: f64,
    settings: &MlSettings,
) -> Result<MlEstimate> {
    let grid = BearingGrid::new(receivers, settings)?;
    ml_robust_estimate_on(&grid, measurements, receivers, alpha, settings)
}

pub fn ml_robust_estimate_on(
    grid: &BearingGrid,
    measurements: &[AoaMeasurement],
    receivers: &[ReceiverPose],
    alpha: f64,
    settings: &MlSettings,
) -> Result<MlEstimate> {
    check_alpha(alpha)?;
    check_measurements(measurements)?;
    let mut scores = vec![0.0; grid.points.len()];
    for m in measurements {
        let t = MixtureTerm::new(m.sigma, alpha);
        grid.accumulate(m, &mut scores, |d| t.eval(d))?;
    }
    let best = BearingGrid::argmax(&scores);
    let ambiguous = grid.is_ambiguous(&scores, best);
    let objective = |p: Point2| robust_loglik(p, measurements, receivers, alpha).ok();
    let start = grid.points[best];
    let start_value = objective(start).unwrap_or(scores[best]);
    let (point, value, converged) = coordinate_descent(start, start_value, objective, settings);
    Ok(MlEstimate {
        point,
        objective: value,
        converged,
        ambiguous,
    })
}
