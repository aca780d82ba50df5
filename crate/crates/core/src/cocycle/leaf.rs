//! Integral curves of the line fields `E^u` and `E^s`.
//!
//! The field is only known pointwise, so the integrator is a midpoint rule with step
//! halving. Each step moves exactly `h` along a unit vector, which makes the polyline
//! length equal to the requested arclength up to rounding.

use super::direction::{stable_direction, unstable_direction, DirectionEstimate, DirectionSettings};
use super::regions::RegionAtlas;
use crate::geom::{tan_angle, Vec2};
use crate::perturbation::PerturbedMap;
use crate::torus::TorusPoint;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Stable,
    Unstable,
}

/// A polyline in the lift, starting at `base.as_vec()`.
#[derive(Debug, Clone, Serialize)]
pub struct LeafSegment {
    pub base: TorusPoint,
    pub orientation: Orientation,
    pub points: Vec<Vec2>,
    pub arclength: f64,
    /// Set when the direction field failed to converge and the segment stops short.
    pub truncated: bool,
}

impl LeafSegment {
    pub fn polyline_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("a leaf has at least its base point")
    }

    pub fn torus_points(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        let k = self.base.k;
        self.points.iter().map(move |&v| TorusPoint::from_vec(v, k))
    }

    /// Distance in the lift from `q` to the polyline.
    pub fn distance_to(&self, q: Vec2) -> f64 {
        if self.points.len() == 1 {
            return (q - self.points[0]).norm();
        }
        self.points.windows(2).map(|w| point_segment_distance(q, w[0], w[1])).fold(f64::INFINITY, f64::min)
    }

    /// Points spaced at most `spacing` apart along the polyline.
    pub fn resample(&self, spacing: f64) -> Vec<Vec2> {
        let mut out = vec![self.points[0]];
        for w in self.points.windows(2) {
            let n = ((w[1] - w[0]).norm() / spacing).ceil().max(1.0) as usize;
            out.extend((1..=n).map(|i| w[0] + (w[1] - w[0]) * (i as f64 / n as f64)));
        }
        out
    }

    /// Vertices whose chord leaves the cone of the leaf's orientation. Unstable chords outside
    /// `B̄_inf` must satisfy `tan(chord, e_s) >= xi`; stable chords inside `U` must satisfy
    /// `tan(chord, e_s) < eps`.
    pub fn cone_violations(&self, atlas: &RegionAtlas, xi: f64, eps: f64) -> usize {
        let e_s = atlas.map.lin.e_s();
        let k = self.base.k;
        self.points
            .windows(2)
            .filter(|w| {
                let chord = w[1] - w[0];
                if chord.norm() == 0.0 {
                    return false;
                }
                let mid = TorusPoint::from_vec((w[0] + w[1]) * 0.5, k);
                let tan = tan_angle(chord, e_s);
                match self.orientation {
                    Orientation::Unstable => !atlas.classify(mid).in_bbar_inf() && tan < xi,
                    Orientation::Stable => atlas.in_u(mid) && tan >= eps,
                }
            })
            .count()
    }
}

fn point_segment_distance(q: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    let s = if len2 == 0.0 { 0.0 } else { ((q - a).dot(d) / len2).clamp(0.0, 1.0) };
    (q - (a + d * s)).norm()
}

fn field(
    map: &PerturbedMap,
    p: TorusPoint,
    orientation: Orientation,
    settings: DirectionSettings,
) -> DirectionEstimate {
    match orientation {
        Orientation::Unstable => unstable_direction(map, p, settings),
        Orientation::Stable => stable_direction(map, p, settings),
    }
}

/// Unit vector along the field at `p`, signed to agree with `heading`.
fn oriented(map: &PerturbedMap, p: TorusPoint, o: Orientation, heading: Vec2, s: DirectionSettings) -> Option<Vec2> {
    let est = field(map, p, o, s);
    if !est.converged {
        return None;
    }
    let u = est.dir.unit();
    Some(if u.dot(heading) < 0.0 { -u } else { u })
}

const MIN_STEP: f64 = 1e-12;

/// Leaf through `p` followed for `|arclength|`; positive arclength heads along `e_u`
/// (unstable) or `e_s` (stable), negative the opposite way.
pub fn integrate_leaf(
    map: &PerturbedMap,
    p: TorusPoint,
    orientation: Orientation,
    arclength: f64,
    tol: f64,
) -> LeafSegment {
    let reference = match orientation {
        Orientation::Unstable => map.lin.e_u(),
        Orientation::Stable => map.lin.e_s(),
    };
    let heading = if arclength < 0.0 { -reference } else { reference };
    integrate_leaf_along(map, p, orientation, heading, arclength.abs(), tol, DirectionSettings::default())
}

/// Leaf through `p` whose initial tangent agrees in sign with `heading`. The local error of
/// each step, estimated by the Euler/midpoint difference, is kept below `tol`.
pub fn integrate_leaf_along(
    map: &PerturbedMap,
    p: TorusPoint,
    orientation: Orientation,
    heading: Vec2,
    length: f64,
    tol: f64,
    settings: DirectionSettings,
) -> LeafSegment {
    let k = p.k;
    let mut points = vec![p.as_vec()];
    let mut x = p.as_vec();
    let mut heading = heading;
    let mut done = 0.0;
    let mut h = (length / 16.0).min(0.05).max(MIN_STEP);
    let mut truncated = false;
    while done < length {
        let step = h.min(length - done);
        let Some(k1) = oriented(map, TorusPoint::from_vec(x, k), orientation, heading, settings) else {
            truncated = true;
            break;
        };
        let Some(k2) = oriented(map, TorusPoint::from_vec(x + k1 * (0.5 * step), k), orientation, k1, settings) else {
            truncated = true;
            break;
        };
        let err = step * (k2 - k1).norm();
        if err > tol && step > MIN_STEP {
            h = (step * 0.5).max(MIN_STEP);
            continue;
        }
        x = x + k2 * step;
        done += step;
        points.push(x);
        heading = k2;
        let grow = if err > 0.0 { 0.9 * (tol / err).sqrt() } else { 2.0 };
        h = (step * grow.clamp(0.5, 2.0)).max(MIN_STEP);
    }
    LeafSegment { base: p, orientation, points, arclength: done, truncated }
}

/// Largest distance from the image of `seg` (resampled at `spacing`) to the leaf integrated
/// through `f(base)` for the image's length.
pub fn invariance_defect(map: &PerturbedMap, seg: &LeafSegment, spacing: f64, tol: f64) -> f64 {
    let k = seg.base.k;
    let samples = seg.resample(spacing);
    let start = map.apply_f(seg.base);
    // Lift the image continuously from f(base).
    let mut image = Vec::with_capacity(samples.len());
    let mut prev = start;
    let mut lifted = start.as_vec();
    for v in &samples {
        let q = map.apply_f(TorusPoint::from_vec(*v, k));
        lifted = lifted + prev.displacement_to(q);
        prev = q;
        image.push(lifted);
    }
    let image_len: f64 = image.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let heading = match image.get(1) {
        Some(&second) => second - image[0],
        None => return 0.0,
    };
    let target =
        integrate_leaf_along(map, start, seg.orientation, heading, image_len, tol, DirectionSettings::default());
    image.iter().map(|&q| target.distance_to(q)).fold(0.0, f64::max)
}
