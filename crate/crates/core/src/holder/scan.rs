//! Leafwise exponents and exponents stratified by region.

use super::{estimate_exponent, fit_sample, sample_scaling, ExponentEstimate, Pair, PairSampler, Strategy};
use crate::cocycle::{integrate_leaf, Orientation, Region, RegionAtlas};
use crate::conjugacy::{conjugacy_inverse_eval, ConjugacyGrid};
use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::{HeteroclinicFrame, TorusPoint};
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

/// Anchor points for pair draws: uniform on the cover with probability `uniform_share`,
/// otherwise in a disc about a random anchor.
#[derive(Debug, Clone)]
struct Anchors {
    k: u32,
    points: Vec<TorusPoint>,
    radius: f64,
    /// Multiply `radius` by the scale.
    scale_relative: bool,
    uniform_share: f64,
}

impl Anchors {
    fn draw(&self, scale: f64, rng: &mut ChaCha8Rng) -> TorusPoint {
        if self.points.is_empty() || rng.gen_bool(self.uniform_share) {
            let k = self.k as f64;
            return TorusPoint::new(rng.gen_range(0.0..k), rng.gen_range(0.0..k), self.k);
        }
        let c = self.points[rng.gen_range(0..self.points.len())];
        let rad = if self.scale_relative { self.radius * scale } else { self.radius };
        let th = rng.gen_range(0.0..2.0 * PI);
        c.translate(Vec2::new(th.cos(), th.sin()) * (rad * rng.gen::<f64>().sqrt()))
    }
}

/// Pairs on one leaf of `f`: `b` is reached from `a` by integrating the leaf for the scale,
/// in a random sense.
#[derive(Debug, Clone)]
pub struct LeafPairs {
    pub map: PerturbedMap,
    pub orientation: Orientation,
    anchors: Anchors,
}

impl LeafPairs {
    /// Half uniform, half within `r/2` of `f^n(R)` for `|n| <= depth`.
    pub fn new(map: &PerturbedMap, frame: &HeteroclinicFrame, orientation: Orientation, depth: i64) -> Self {
        LeafPairs {
            map: map.clone(),
            orientation,
            anchors: Anchors {
                k: map.k(),
                points: (-depth..=depth).map(|n| map.orbit_of_center(frame, n)).collect(),
                radius: map.radius() / 2.0,
                scale_relative: false,
                uniform_share: 0.5,
            },
        }
    }
}

impl PairSampler for LeafPairs {
    fn strategy(&self) -> Strategy {
        Strategy::Leafwise
    }

    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair> {
        let a = self.anchors.draw(scale, rng);
        let sense = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let seg = integrate_leaf(&self.map, a, self.orientation, sense * scale, 1e-6 * scale);
        if seg.truncated {
            return None;
        }
        Some(Pair { a, b: TorusPoint::from_vec(seg.end(), a.k), distance: seg.arclength })
    }
}

/// Pairs on a straight line of direction `dir`, which is a leaf of `L`.
#[derive(Debug, Clone)]
pub struct LinePairs {
    pub dir: Vec2,
    anchors: Anchors,
}

impl LinePairs {
    /// Half uniform, half within `s` of the given centres.
    pub fn new(k: u32, dir: Vec2, centres: Vec<TorusPoint>) -> Self {
        LinePairs {
            dir,
            anchors: Anchors { k, points: centres, radius: 1.0, scale_relative: true, uniform_share: 0.5 },
        }
    }
}

impl PairSampler for LinePairs {
    fn strategy(&self) -> Strategy {
        Strategy::Leafwise
    }

    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair> {
        let a = self.anchors.draw(scale, rng);
        let sense = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Some(Pair { a, b: a.translate(self.dir * (sense * scale)), distance: scale })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafwiseTarget {
    /// `h` along the leaves of `f`.
    Conjugacy,
    /// `h^{-1}` along the lines of `L`.
    Inverse,
}

/// Leafwise exponent. For `h` the input distance is the arclength on the leaf of `f` and the
/// output lies on a line of `L`, where chord and arclength agree. For `h^{-1}` the output is
/// measured by its chord, which matches the leafwise distance to second order at these scales.
pub fn estimate_leafwise_exponent(
    grid: &ConjugacyGrid,
    frame: &HeteroclinicFrame,
    target: LeafwiseTarget,
    orientation: Orientation,
    scales: &[f64],
    pairs_per_scale: usize,
    seed: u64,
) -> Result<ExponentEstimate> {
    let field = &grid.field;
    let map = &field.map;
    match target {
        LeafwiseTarget::Conjugacy => {
            let sampler = LeafPairs::new(map, frame, orientation, 6);
            estimate_exponent(|p| Ok(field.eval(p)), &sampler, scales, pairs_per_scale, seed)
        }
        LeafwiseTarget::Inverse => {
            let dir = match orientation {
                Orientation::Unstable => map.lin.e_u(),
                Orientation::Stable => map.lin.e_s(),
            };
            let centres = (-6..=6).map(|n| field.eval(map.orbit_of_center(frame, n))).collect();
            let sampler = LinePairs::new(map.k(), dir, centres);
            estimate_exponent(|y| conjugacy_inverse_eval(grid, y, field.tol), &sampler, scales, pairs_per_scale, seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    /// Neither in `U` nor in a rectangle.
    OutsideU,
    /// `U` without the rectangles of `B̄_inf`.
    TubeU,
    BarB0,
    /// `B̄_n` for `n >= 1`.
    BarBDeep,
    /// Mirror rectangles about the backward orbit.
    VBar,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [Stratum::OutsideU, Stratum::TubeU, Stratum::BarB0, Stratum::BarBDeep, Stratum::VBar];

    pub fn of(region: Region) -> Stratum {
        match region {
            Region::BarB(0) => Stratum::BarB0,
            Region::BarB(_) => Stratum::BarBDeep,
            Region::VBar(_) => Stratum::VBar,
            Region::B(_) | Region::U => Stratum::TubeU,
            Region::V | Region::Outside => Stratum::OutsideU,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stratum::OutsideU => "outside-u",
            Stratum::TubeU => "u",
            Stratum::BarB0 => "bbar-0",
            Stratum::BarBDeep => "bbar-deep",
            Stratum::VBar => "vbar",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumExponent {
    pub stratum: Stratum,
    /// `None` when some scale had fewer than [`MIN_STRATUM_PAIRS`] pairs.
    pub estimate: Option<ExponentEstimate>,
    pub min_pairs: usize,
}

pub const MIN_STRATUM_PAIRS: usize = 100;
const STRATUM_TRIES: usize = 64;

/// Random-direction pairs whose midpoint lies in one stratum. Proposals are drawn near the
/// stratum's pieces and rejected by classification of the midpoint.
struct StratumPairs<'a> {
    atlas: &'a RegionAtlas,
    stratum: Stratum,
}

impl StratumPairs<'_> {
    fn propose(&self, rng: &mut ChaCha8Rng) -> TorusPoint {
        let a = self.atlas;
        let k = a.map.k();
        let rect = |c: TorusPoint, (hx, hy): (f64, f64), rng: &mut ChaCha8Rng| {
            c.translate(a.map.lin.from_components(rng.gen_range(-hx..=hx), rng.gen_range(-hy..=hy)))
        };
        match self.stratum {
            Stratum::OutsideU => TorusPoint::new(rng.gen_range(0.0..k as f64), rng.gen_range(0.0..k as f64), k),
            Stratum::TubeU => {
                let seg = &a.seg_u;
                let off = seg.dir.perp() * rng.gen_range(-a.u_halfwidth..=a.u_halfwidth);
                seg.point(rng.gen_range(0.0..seg.len), k).translate(off)
            }
            Stratum::BarB0 => rect(a.forward_center(0), a.bbar_half_sides(0), rng),
            Stratum::BarBDeep => {
                let n = rng.gen_range(1..=a.depth);
                rect(a.forward_center(n), a.bbar_half_sides(n), rng)
            }
            Stratum::VBar => {
                let n = rng.gen_range(1..=a.depth);
                rect(a.backward_center(n), a.vbar_half_sides(n), rng)
            }
        }
    }
}

impl PairSampler for StratumPairs<'_> {
    fn strategy(&self) -> Strategy {
        if self.stratum == Stratum::OutsideU {
            Strategy::Uniform
        } else {
            Strategy::NearROrbit
        }
    }

    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair> {
        (0..STRATUM_TRIES).find_map(|_| {
            let mid = self.propose(rng);
            if Stratum::of(self.atlas.classify(mid)) != self.stratum {
                return None;
            }
            let th = rng.gen_range(0.0..PI);
            let d = Vec2::new(th.cos(), th.sin()) * (0.5 * scale);
            Some(Pair { a: mid.translate(-d), b: mid.translate(d), distance: scale })
        })
    }
}

/// Exponent of `h` per stratum of the region atlas.
pub fn tube_exponent_scan(
    grid: &ConjugacyGrid,
    atlas: &RegionAtlas,
    scales: &[f64],
    pairs_per_scale: usize,
    seed: u64,
) -> Vec<StratumExponent> {
    let field = &grid.field;
    Stratum::ALL
        .iter()
        .enumerate()
        .map(|(i, &stratum)| {
            let sampler = StratumPairs { atlas, stratum };
            let sample =
                sample_scaling(|p| Ok(field.eval(p)), &sampler, scales, pairs_per_scale, seed.wrapping_add(i as u64));
            let min_pairs = sample.rows.iter().map(|r| r.pairs).min().unwrap_or(0);
            let estimate = if min_pairs >= MIN_STRATUM_PAIRS { fit_sample(sample).ok() } else { None };
            StratumExponent { stratum, estimate, min_pairs }
        })
        .collect()
}
