//! Coordinate frames, angle arithmetic and covariance transforms.
//!
//! Source location estimates travel between receivers in the global cartesian
//! frame and are updated in the receiving node's polar frame `(R, theta)`,
//! where `theta` is measured from the global x-axis. The Jacobian of the
//! polar-to-cartesian mean map is
//!
//! ```text
//! T_pol(R, theta) = | cos theta   -R sin theta |
//!                   | sin theta    R cos theta |
//! ```
//!
//! and covariances move between the frames by congruence with `T_pol` or its
//! inverse.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranges below this are treated as a receiver/source collision.
pub const MIN_RANGE: f64 = 1e-9;

const PSD_TOL: f64 = 1e-12;

/// A point or displacement in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector pointing along `angle`.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Direction of this displacement, wrapped to `(-pi, pi]`.
    pub fn angle(self) -> f64 {
        wrap_angle(self.y.atan2(self.x))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// A receiver's identity, position and antenna broadside (global frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverPose {
    pub id: usize,
    pub position: Point2,
    pub broadside: f64,
}

impl ReceiverPose {
    pub fn new(id: usize, position: Point2, broadside: f64) -> Self {
        Self {
            id,
            position,
            broadside: wrap_angle(broadside),
        }
    }

    /// Receiver at `position` whose broadside faces `target`.
    pub fn facing(id: usize, position: Point2, target: Point2) -> Self {
        Self::new(id, position, (target - position).angle())
    }

    /// Converts a global bearing to the array-local angle (relative to broadside).
    pub fn to_local(&self, global: f64) -> f64 {
        wrap_angle(global - self.broadside)
    }

    pub fn to_global(&self, local: f64) -> f64 {
        wrap_angle(local + self.broadside)
    }
}

/// Looks up a receiver by id.
pub fn find_receiver(receivers: &[ReceiverPose], id: usize) -> Result<&ReceiverPose> {
    receivers
        .iter()
        .find(|r| r.id == id)
        .ok_or(Error::UnknownReceiver(id))
}

/// General 2x2 matrix, row-major. Used for Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ]))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }
}

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub const fn diag(a11: f64, a22: f64) -> Self {
        Self::new(a11, 0.0, a22)
    }

    pub const fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2::new(self.a22 / d, -self.a12 / d, self.a11 / d))
    }

    pub fn scale(&self, k: f64) -> Sym2 {
        Sym2::new(self.a11 * k, self.a12 * k, self.a22 * k)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        let r = half_diff.hypot(self.a12);
        [mean - r, mean + r]
    }

    /// Positive semidefinite up to an absolute tolerance on the determinant.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.a11 >= -tol && self.a22 >= -tol && self.det() >= -tol
    }

    /// `m * self * m^T`.
    pub fn congruence(&self, m: &Mat2) -> Sym2 {
        let t = &m.0;
        // s * m^T, columns of m^T are rows of m
        let sm = [
            [
                self.a11 * t[0][0] + self.a12 * t[0][1],
                self.a11 * t[1][0] + self.a12 * t[1][1],
            ],
            [
                self.a12 * t[0][0] + self.a22 * t[0][1],
                self.a12 * t[1][0] + self.a22 * t[1][1],
            ],
        ];
        let a11 = t[0][0] * sm[0][0] + t[0][1] * sm[1][0];
        let a12 = t[0][0] * sm[0][1] + t[0][1] * sm[1][1];
        let a21 = t[1][0] * sm[0][0] + t[1][1] * sm[1][0];
        let a22 = t[1][0] * sm[0][1] + t[1][1] * sm[1][1];
        Sym2::new(a11, 0.5 * (a12 + a21), a22)
    }

    /// `self * other` for symmetric operands, as a general matrix.
    pub fn mul(&self, other: &Sym2) -> Mat2 {
        Mat2([
            [
                self.a11 * other.a11 + self.a12 * other.a12,
                self.a11 * other.a12 + self.a12 * other.a22,
            ],
            [
                self.a12 * other.a11 + self.a22 * other.a12,
                self.a12 * other.a12 + self.a22 * other.a22,
            ],
        ])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, rhs: Sym2) -> Sym2 {
        Sym2::new(self.a11 + rhs.a11, self.a12 + rhs.a12, self.a22 + rhs.a22)
    }
}

impl From<Mat2> for Sym2 {
    /// Symmetrizes by averaging the off-diagonal terms.
    fn from(m: Mat2) -> Sym2 {
        Sym2::new(m.0[0][0], 0.5 * (m.0[0][1] + m.0[1][0]), m.0[1][1])
    }
}

/// Source estimate in a receiver's polar frame: mean `(range, bearing)` and
/// covariance over `(range, bearing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarEstimate {
    pub range: f64,
    pub bearing: f64,
    pub cov: Sym2,
}

impl PolarEstimate {
    pub fn new(range: f64, bearing: f64, cov: Sym2) -> Self {
        Self {
            range,
            bearing: wrap_angle(bearing),
            cov,
        }
    }

    /// Re-expresses a negative range as the same point with a flipped bearing.
    ///
    /// `(R, theta)` and `(-R, theta + pi)` map to the same cartesian point;
    /// the range error changes sign so the range/bearing covariance flips.
    pub fn canonical(self) -> Self {
        if self.range >= 0.0 {
            return self;
        }
        PolarEstimate::new(
            -self.range,
            self.bearing + PI,
            Sym2::new(self.cov.a11, -self.cov.a12, self.cov.a22),
        )
    }
}

/// Source estimate in the global cartesian frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianEstimate {
    pub mean: Point2,
    pub cov: Sym2,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Jacobian of `(R, theta) -> receiver + R (cos theta, sin theta)`.
pub fn polar_jacobian(range: f64, bearing: f64) -> Mat2 {
    let (s, c) = bearing.sin_cos();
    Mat2([[c, -range * s], [s, range * c]])
}

/// Inverse of [`polar_jacobian`]; singular at zero range.
pub fn cartesian_jacobian(range: f64, bearing: f64) -> Result<Mat2> {
    if range.abs() < MIN_RANGE {
        return Err(Error::DegenerateRange { range });
    }
    let (s, c) = bearing.sin_cos();
    Ok(Mat2([[c, s], [-s / range, c / range]]))
}

fn check_psd(cov: &Sym2) {
    let scale = cov.a11.abs().max(cov.a22.abs()).max(1.0);
    debug_assert!(
        cov.is_psd(PSD_TOL * scale * scale),
        "covariance lost positive semidefiniteness: {cov:?}"
    );
}

/// Maps a polar estimate at `receiver` to the global cartesian frame.
pub fn polar_to_cart(receiver: &ReceiverPose, est: &PolarEstimate) -> CartesianEstimate {
    let t = polar_jacobian(est.range, est.bearing);
    let mean = receiver.position + Point2::from_angle(est.bearing) * est.range;
    let cov = est.cov.congruence(&t);
    check_psd(&cov);
    CartesianEstimate { mean, cov }
}

/// Maps a cartesian estimate into `receiver`'s polar frame.
///
/// The bearing is `arg(mean - receiver)`, the inverse of [`polar_to_cart`].
pub fn cart_to_polar(receiver: &ReceiverPose, est: &CartesianEstimate) -> Result<PolarEstimate> {
    let d = est.mean - receiver.position;
    let range = d.norm();
    if range < MIN_RANGE {
        return Err(Error::DegenerateRange { range });
    }
    let bearing = d.angle();
    let t = cartesian_jacobian(range, bearing)?;
    let cov = est.cov.congruence(&t);
    check_psd(&cov);
    Ok(PolarEstimate {
        range,
        bearing,
        cov,
    })
}

/// Global bearing of `source` seen from `receiver`.
pub fn true_bearing(receiver: &ReceiverPose, source: Point2) -> Result<f64> {
    let d = source - receiver.position;
    let range = d.norm();
    if range < MIN_RANGE {
        return Err(Error::DegenerateRange { range });
    }
    Ok(d.angle())
}

/// Smallest absolute angular difference, in `[0, pi]`.
pub fn angular_error(measured: f64, predicted: f64) -> f64 {
    wrap_angle(measured - predicted).abs()
}

pub fn deg(x: f64) -> f64 {
    x.to_radians()
}
