//! Fisher information and Cramer-Rao bounds for bearings-only localization
//! under the Gaussian AoA model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, ReceiverPose, Sym2, MIN_RANGE};

const SINGULAR_DET: f64 = 1e-15;
const RELATIVE_SINGULAR_DET: f64 = 1e-12;

/// Fisher information over `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherInfo {
    pub matrix: Sym2,
}

impl FisherInfo {
    pub fn is_singular(&self) -> bool {
        let det = self.matrix.det();
        let tr = self.matrix.trace();
        det <= SINGULAR_DET || det <= RELATIVE_SINGULAR_DET * tr * tr
    }

    /// `Tr(J^-1)`.
    pub fn crlb_trace(&self) -> Result<f64> {
        let det = self.matrix.det();
        if self.is_singular() {
            return Err(Error::SingularInformation { det });
        }
        Ok(self.matrix.trace() / det)
    }
}

fn check_sigmas(receivers: &[ReceiverPose], sigmas: &[f64]) -> Result<()> {
    if sigmas.len() != receivers.len() {
        return Err(Error::InvalidParameter {
            name: "sigmas",
            reason: format!("{} sigmas for {} receivers", sigmas.len(), receivers.len()),
        });
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "sigmas",
            reason: format!("sigma must be positive and finite, got {s}"),
        });
    }
    Ok(())
}

/// Contribution of a single receiver.
pub fn receiver_information(source: Point2, receiver: &ReceiverPose, sigma: f64) -> Result<Sym2> {
    let d = source - receiver.position;
    let r = d.norm();
    if r < MIN_RANGE {
        return Err(Error::DegenerateRange { range: r });
    }
    let (s, c) = d.y.atan2(d.x).sin_cos();
    let w = 1.0 / (sigma * sigma * r * r);
    Ok(Sym2::new(w * s * s, -w * c * s, w * c * c))
}

pub fn fisher_information(source: Point2, receivers: &[ReceiverPose], sigmas: &[f64]) -> Result<FisherInfo> {
    check_sigmas(receivers, sigmas)?;
    let mut matrix = Sym2::new(0.0, 0.0, 0.0);
    for (rx, &sigma) in receivers.iter().zip(sigmas) {
        matrix = matrix + receiver_information(source, rx, sigma)?;
    }
    Ok(FisherInfo { matrix })
}

pub fn crlb_trace(source: Point2, receivers: &[ReceiverPose], sigmas: &[f64]) -> Result<f64> {
    fisher_information(source, receivers, sigmas)?.crlb_trace()
}

/// `Tr(J^-1)` written out as a ratio of sums over receivers and receiver pairs.
pub fn crlb_trace_closed_form(source: Point2, receivers: &[ReceiverPose], sigmas: &[f64]) -> Result<f64> {
    check_sigmas(receivers, sigmas)?;
    let mut polar = Vec::with_capacity(receivers.len());
    for (rx, &sigma) in receivers.iter().zip(sigmas) {
        let d = source - rx.position;
        let r = d.norm();
        if r < MIN_RANGE {
            return Err(Error::DegenerateRange { range: r });
        }
        polar.push((r * sigma, d.y.atan2(d.x)));
    }
    let num: f64 = polar.iter().map(|(rs, _)| 1.0 / (rs * rs)).sum();
    let mut den = 0.0;
    for (k, (rk, tk)) in polar.iter().enumerate() {
        for (rl, tl) in &polar[k + 1..] {
            den += (tk - tl).sin().powi(2) / (rk * rk * rl * rl);
        }
    }
    if den <= SINGULAR_DET * num * num {
        return Err(Error::SingularInformation { det: den });
    }
    Ok(num / den)
}

/// Bound at the center of a disc with `n` equispaced receivers on its rim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBound {
    /// `N R^2 sigma^2 / sum_{k<l} sin^2(theta_k - theta_l)`.
    pub exact: f64,
    /// `2 R^2 sigma^2 / (pi^2 (N - 1))`, a loose lower estimate of `exact`.
    pub printed_approx: f64,
}

pub fn center_bound(n: usize, radius: f64, sigma: f64) -> Result<CenterBound> {
    if n < 3 {
        return Err(Error::InsufficientMeasurements { needed: 3, got: n });
    }
    if !(radius > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "radius/sigma",
            reason: "must be positive".into(),
        });
    }
    let theta = |k: usize| 2.0 * std::f64::consts::PI * k as f64 / n as f64;
    let mut pair_sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            pair_sum += (theta(k) - theta(l)).sin().powi(2);
        }
    }
    let r2s2 = radius * radius * sigma * sigma;
    Ok(CenterBound {
        exact: n as f64 * r2s2 / pair_sum,
        printed_approx: 2.0 * r2s2 / (std::f64::consts::PI.powi(2) * (n as f64 - 1.0)),
    })
}
