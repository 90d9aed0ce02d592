//! Single-bounce 2-D ray tracing with specular walls.
//!
//! A reflected path is the LOS path from the source's mirror image across
//! the wall line, valid when it actually meets the wall segment and neither
//! leg is obstructed by another wall.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2, ReceiverPose};
use crate::models::AoaMeasurement;

const EPS: f64 = 1e-9;

/// A perfectly reflecting wall segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point2,
    pub b: Point2,
}

impl Wall {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if a.distance(b) < EPS {
            return Err(Error::InvalidParameter {
                name: "wall",
                reason: "endpoints coincide".into(),
            });
        }
        Ok(Self { a, b })
    }

    /// Mirror image of `p` across the wall's supporting line.
    pub fn mirror(&self, p: Point2) -> Point2 {
        let d = self.b - self.a;
        let t = (p - self.a).dot(d) / d.dot(d);
        let foot = self.a + d * t;
        foot * 2.0 - p
    }

    /// Unit normal of the wall line.
    pub fn normal(&self) -> Point2 {
        let d = self.b - self.a;
        Point2::new(-d.y, d.x) * (1.0 / d.norm())
    }

    /// Point where segment `p -> q` crosses the wall, excluding the segment's
    /// own endpoints.
    pub fn crossing(&self, p: Point2, q: Point2) -> Option<Point2> {
        let r = q - p;
        let s = self.b - self.a;
        let denom = r.cross(s);
        if denom.abs() < 1e-15 {
            return None;
        }
        let ap = self.a - p;
        let t = ap.cross(s) / denom;
        let u = ap.cross(r) / denom;
        let inside = t > EPS && t < 1.0 - EPS && (-EPS..=1.0 + EPS).contains(&u);
        inside.then(|| p + r * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Los,
    Reflection { wall: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Global direction of arrival.
    pub angle: f64,
    pub kind: PathKind,
    /// Total path length.
    pub length: f64,
    /// Reflection point, for reflected paths.
    pub bounce: Option<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverTrace {
    pub receiver_id: usize,
    pub los_blocked: bool,
    /// Arrivals inside the receiver's feasible cone, LOS first, then by path length.
    pub arrivals: Vec<Arrival>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub receivers: Vec<ReceiverTrace>,
}

fn blocked(p: Point2, q: Point2, walls: &[Wall], skip: Option<usize>) -> bool {
    walls
        .iter()
        .enumerate()
        .any(|(i, w)| Some(i) != skip && w.crossing(p, q).is_some())
}

fn in_cone(rx: &ReceiverPose, angle: f64) -> bool {
    rx.to_local(angle).abs() <= std::f64::consts::FRAC_PI_2
}

pub fn ray_trace(walls: &[Wall], source: Point2, receivers: &[ReceiverPose]) -> TraceResult {
    let receivers = receivers
        .iter()
        .map(|rx| {
            let los_blocked = blocked(source, rx.position, walls, None);
            let mut arrivals = Vec::new();
            if !los_blocked {
                let angle = (source - rx.position).angle();
                if in_cone(rx, angle) {
                    arrivals.push(Arrival {
                        angle,
                        kind: PathKind::Los,
                        length: source.distance(rx.position),
                        bounce: None,
                    });
                }
            }
            let mut reflections: Vec<Arrival> = walls
                .iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let virtual_source = w.mirror(source);
                    let hit = w.crossing(virtual_source, rx.position)?;
                    if blocked(source, hit, walls, Some(i)) || blocked(hit, rx.position, walls, Some(i)) {
                        return None;
                    }
                    let angle = (virtual_source - rx.position).angle();
                    in_cone(rx, angle).then(|| Arrival {
                        angle,
                        kind: PathKind::Reflection { wall: i },
                        length: virtual_source.distance(rx.position),
                        bounce: Some(hit),
                    })
                })
                .collect();
            reflections.sort_by(|a, b| a.length.total_cmp(&b.length));
            arrivals.extend(reflections);
            ReceiverTrace {
                receiver_id: rx.id,
                los_blocked,
                arrivals,
            }
        })
        .collect();
    TraceResult { receivers }
}

/// Equal-weight circular mean of the arrival directions.
pub fn superposed_direction(arrivals: &[Arrival]) -> Option<f64> {
    if arrivals.is_empty() {
        return None;
    }
    let (s, c) = arrivals
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.angle.sin(), c + a.angle.cos()));
    Some(s.atan2(c))
}

fn perturbed<R: Rng + ?Sized>(
    rng: &mut R,
    rx: &ReceiverPose,
    path: usize,
    nominal: f64,
    noise_sigma: f64,
) -> Option<AoaMeasurement> {
    let e: f64 = rng.sample(StandardNormal);
    let angle = wrap_angle(nominal + noise_sigma * e);
    in_cone(rx, angle).then(|| AoaMeasurement::new(rx.id, angle, noise_sigma).with_path(path))
}

/// One bearing per receiver that hears anything: the superposed direction plus noise.
pub fn narrowband_measurements<R: Rng + ?Sized>(
    rng: &mut R,
    trace: &TraceResult,
    receivers: &[ReceiverPose],
    noise_sigma: f64,
) -> Vec<AoaMeasurement> {
    trace
        .receivers
        .iter()
        .zip(receivers)
        .filter_map(|(t, rx)| {
            let nominal = superposed_direction(&t.arrivals)?;
            perturbed(rng, rx, 0, nominal, noise_sigma)
        })
        .collect()
}

/// One bearing per resolved path, each perturbed independently.
pub fn wideband_measurements<R: Rng + ?Sized>(
    rng: &mut R,
    trace: &TraceResult,
    receivers: &[ReceiverPose],
    noise_sigma: f64,
) -> Vec<AoaMeasurement> {
    let mut out = Vec::new();
    for (t, rx) in trace.receivers.iter().zip(receivers) {
        for (path, a) in t.arrivals.iter().enumerate() {
            out.extend(perturbed(rng, rx, path, a.angle, noise_sigma));
        }
    }
    out
}

/// A walled room with receivers and named source locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayScene {
    pub walls: Vec<Wall>,
    pub receivers: Vec<ReceiverPose>,
    /// Axis-aligned feasible region `(lower-left, upper-right)`.
    pub bounds: (Point2, Point2),
    pub sources: Vec<(String, Point2)>,
}

impl RayScene {
    pub fn feasible(&self, p: Point2) -> bool {
        let (lo, hi) = self.bounds;
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    pub fn source(&self, name: &str) -> Option<Point2> {
        self.sources.iter().find(|(n, _)| n == name).map(|(_, p)| *p)
    }

    pub fn trace(&self, source: Point2) -> TraceResult {
        ray_trace(&self.walls, source, &self.receivers)
    }

    /// Radius of the disc circumscribing the feasible region.
    pub fn extent(&self) -> (Point2, f64) {
        let (lo, hi) = self.bounds;
        let center = (lo + hi) * 0.5;
        (center, center.distance(hi))
    }
}

fn pose(id: usize, x: f64, y: f64, target: Point2) -> ReceiverPose {
    ReceiverPose::facing(id, Point2::new(x, y), target)
}

/// Four receivers around a 40 x 40 room with a partition and a reflector
/// near the upper-right corner. Sources `A` to `D` reproduce the narrowband
/// example: at `A` and `D` receiver 4 hears only a reflection and receiver 3
/// hears its LOS path plus a reflection, at `B` receiver 4 hears nothing, at
/// `C` every receiver has a clean LOS path.
pub fn narrowband_scene() -> RayScene {
    let c = Point2::new(20.0, 20.0);
    let wall = |ax, ay, bx, by| Wall::new(Point2::new(ax, ay), Point2::new(bx, by)).expect("fixed scene");
    RayScene {
        walls: vec![wall(33.0, 30.0, 39.5, 30.0), wall(26.0, 40.0, 40.0, 40.0)],
        receivers: vec![
            pose(1, 0.0, 20.0, c),
            pose(2, 20.0, 0.0, c),
            pose(3, 40.0, 8.0, c),
            pose(4, 40.0, 32.0, c),
        ],
        bounds: (Point2::new(0.0, 0.0), Point2::new(40.0, 40.0)),
        sources: vec![
            ("A".into(), Point2::new(16.0, 10.0)),
            ("B".into(), Point2::new(22.0, 8.0)),
            ("C".into(), Point2::new(6.0, 32.0)),
            ("D".into(), Point2::new(24.0, 26.0)),
        ],
    }
}

/// Four receivers facing a single reflecting wall with the source between them.
pub fn wall_scene() -> RayScene {
    let wall = Wall::new(Point2::new(-10.0, 20.0), Point2::new(50.0, 20.0)).expect("fixed scene");
    let c = Point2::new(20.0, 10.0);
    RayScene {
        walls: vec![wall],
        receivers: vec![
            pose(1, 0.0, 0.0, c),
            pose(2, 40.0, 0.0, c),
            pose(3, 0.0, 14.0, c),
            pose(4, 40.0, 14.0, c),
        ],
        bounds: (Point2::new(-5.0, -5.0), Point2::new(45.0, 20.0)),
        sources: vec![("S".into(), Point2::new(18.0, 15.0))],
    }
}
