//! Beaks at `f^n(R)`: for `a = (x1, y1)` and `b = (x2, y1)` in local coordinates, the point
//! `e = W^u(a) ∩ W^s(b)` and the estimate `C |x1 - x2|^(1/2) >= |y1 - y3|`.
//!
//! Sampling is self-similar under the quadratic tangency: at width `w0` the beak is drawn in a
//! box of size `w0` across and `sqrt(w0)` along `e_s`, then carried to `f^n(R)` by `L^n`.

use crate::cocycle::{integrate_leaf_along, DirectionSettings, Orientation};
use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::{HeteroclinicFrame, TorusPoint};
use crate::{LabError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Decades of `w0 = |x1 - x2| lambda^-n`: `[10^-7, 10^-6]`, `[10^-6, 10^-5]`, `[10^-5, 10^-4]`.
pub const DECADES: [(f64, f64); 3] = [(1e-7, 1e-6), (1e-6, 1e-5), (1e-5, 1e-4)];
const BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BeakCase {
    /// `dist(beak, f^n(R)) >= |y1 - y3|`.
    A,
    /// Built from `e = (0, y3)` with `y3 > 0` and `y1 > y3`.
    B,
    /// The beak comes closer to `f^n(R)` than its height; only the `C` estimate applies.
    Tip,
}

#[derive(Debug, Clone, Serialize)]
pub struct BeakSample {
    pub case: BeakCase,
    pub decade: usize,
    /// `|x1 - x2|`.
    pub width: f64,
    /// `|y1 - y3|`.
    pub height: f64,
    /// `|x1 - x3|`.
    pub reach: f64,
    /// Distance from the beak to `f^n(R)`; zero when the beak contains it.
    pub dist: f64,
    /// `height / width^(1/2)`.
    pub ratio: f64,
    /// The case bound, for cases A and B.
    pub bound_holds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BeakDecade {
    pub decade: usize,
    pub w0_lo: f64,
    pub w0_hi: f64,
    pub samples: usize,
    /// Largest `ratio` over the decade's case A and tip samples.
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CaseTally {
    pub samples: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BeakReport {
    pub n: usize,
    pub samples: Vec<BeakSample>,
    pub decades: Vec<BeakDecade>,
    /// Draws whose leaves did not meet within `r/10` or stopped short.
    pub skipped: usize,
    pub case_a: CaseTally,
    pub case_b: CaseTally,
    /// Largest decade constant over the smallest.
    pub spread: f64,
}

impl BeakReport {
    pub fn constant(&self) -> f64 {
        self.decades.iter().map(|d| d.constant).fold(0.0, f64::max)
    }

    /// Decade constants agree within `factor`.
    pub fn stable_within(&self, factor: f64) -> bool {
        self.spread <= factor
    }
}

/// Local coordinates at a centre `c`, kept in a single lift.
struct Chart<'a> {
    map: &'a PerturbedMap,
    origin: Vec2,
}

impl Chart<'_> {
    fn local(&self, v: Vec2) -> (f64, f64) {
        self.map.lin.components(v - self.origin)
    }

    fn lift(&self, x: f64, y: f64) -> Vec2 {
        self.origin + self.map.lin.from_components(x, y)
    }
}

/// First point of a leaf through `start` where `g` changes sign, searched in both senses up
/// to arclength `cap`, with the path from `start` to it in the lift.
struct Crossing {
    path: Vec<Vec2>,
}

impl Crossing {
    fn end(&self) -> Vec2 {
        *self.path.last().expect("a crossing path ends at the crossing")
    }
}

fn cross_leaf(
    map: &PerturbedMap,
    start: Vec2,
    orientation: Orientation,
    g: &dyn Fn(Vec2) -> f64,
    first_chunk: f64,
    cap: f64,
    tol: f64,
) -> Option<Crossing> {
    let k = map.k();
    let settings = DirectionSettings::default();
    let reference = match orientation {
        Orientation::Unstable => map.lin.e_u(),
        Orientation::Stable => map.lin.e_s(),
    };
    let g0 = g(start);
    if g0 == 0.0 {
        return Some(Crossing { path: vec![start] });
    }
    // Both senses advance by the same doubling chunks, so the wrong one costs no more than
    // the right one.
    struct Walk {
        path: Vec<Vec2>,
        heading: Vec2,
        alive: bool,
    }
    let mut walks = [reference, -reference].map(|heading| Walk { path: vec![start], heading, alive: true });
    let mut walked = 0.0;
    let mut chunk = first_chunk.min(cap);
    while walked < cap {
        let len = chunk.min(cap - walked);
        let mut best: Option<(f64, Vec<Vec2>)> = None;
        for walk in walks.iter_mut().filter(|w| w.alive) {
            let here = *walk.path.last().unwrap();
            let seg =
                integrate_leaf_along(map, TorusPoint::from_vec(here, k), orientation, walk.heading, len, tol, settings);
            // The integrator works in the lift starting from the reduced point.
            let shift = here - seg.points[0];
            let mut along = 0.0;
            for w in seg.points.windows(2) {
                let (p, q) = (w[0] + shift, w[1] + shift);
                along += (q - p).norm();
                if g(q).signum() != g0.signum() {
                    walk.path.push(bisect(map, p, q - p, orientation, g, g0, tol, settings));
                    if best.as_ref().map_or(true, |(l, _)| along < *l) {
                        best = Some((along, std::mem::take(&mut walk.path)));
                    }
                    break;
                }
                walk.path.push(q);
                walk.heading = q - p;
            }
            walk.alive = !seg.truncated;
        }
        if let Some((_, path)) = best {
            return Some(Crossing { path });
        }
        walked += len;
        chunk *= 2.0;
    }
    None
}

/// Sign change of `g` within one integrator step from `p` along `chord`.
#[allow(clippy::too_many_arguments)]
fn bisect(
    map: &PerturbedMap,
    p: Vec2,
    chord: Vec2,
    orientation: Orientation,
    g: &dyn Fn(Vec2) -> f64,
    g0: f64,
    tol: f64,
    settings: DirectionSettings,
) -> Vec2 {
    let k = map.k();
    let base = TorusPoint::from_vec(p, k);
    let shift = p - base.as_vec();
    let at = |s: f64| {
        if s == 0.0 {
            return p;
        }
        integrate_leaf_along(map, base, orientation, chord, s, tol, settings).end() + shift
    };
    let (mut lo, mut hi) = (0.0, chord.norm());
    let mut q_hi = p + chord;
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let q = at(mid);
        if g(q).signum() == g0.signum() {
            lo = mid;
        } else {
            hi = mid;
            q_hi = q;
        }
    }
    q_hi
}

/// `x` of a polyline given by increasing or decreasing `y`, extended linearly at the ends.
fn x_at(poly: &[(f64, f64)], y: f64) -> f64 {
    let i = poly
        .windows(2)
        .position(|w| (w[0].1 - y) * (w[1].1 - y) <= 0.0)
        .unwrap_or(if (y - poly[0].1).abs() < (y - poly[poly.len() - 1].1).abs() { 0 } else { poly.len() - 2 });
    let (p, q) = (poly[i], poly[i + 1]);
    if q.1 == p.1 {
        return p.0;
    }
    p.0 + (q.0 - p.0) * (y - p.1) / (q.1 - p.1)
}

/// Distance from the origin to a closed polygon, zero inside.
fn polygon_distance(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut inside = false;
    let mut dist = f64::INFINITY;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.1 > 0.0) != (b.1 > 0.0) && 0.0 < a.0 + (b.0 - a.0) * (0.0 - a.1) / (b.1 - a.1) {
            inside = !inside;
        }
        let d = (b.0 - a.0, b.1 - a.1);
        let len2 = d.0 * d.0 + d.1 * d.1;
        let s = if len2 == 0.0 { 0.0 } else { (-(a.0 * d.0 + a.1 * d.1) / len2).clamp(0.0, 1.0) };
        dist = dist.min((a.0 + s * d.0).hypot(a.1 + s * d.1));
    }
    if inside {
        0.0
    } else {
        dist
    }
}

struct Probe<'a> {
    map: &'a PerturbedMap,
    chart: Chart<'a>,
    /// `lambda^n`.
    stretch: f64,
    cap: f64,
}

impl Probe<'_> {
    fn tol(&self, width: f64) -> f64 {
        (width * 1e-4).max(1e-15)
    }

    /// Case A or tip: `a`, `b` drawn on a common horizontal, `e` found from both leaves.
    fn pair_beak(&self, decade: usize, rng: &mut ChaCha8Rng) -> Option<BeakSample> {
        let (lo, hi) = DECADES[decade];
        let w0 = 10f64.powf(rng.gen_range(lo.log10()..hi.log10()));
        let width = w0 * self.stretch;
        let height = w0.sqrt() / self.stretch;
        let xm = rng.gen_range(-2.0..2.0) * width;
        let y1 = rng.gen_range(-2.0..2.0) * height;
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let (x1, x2) = (xm - 0.5 * sign * width, xm + 0.5 * sign * width);
        let tol = self.tol(width);
        let chart = &self.chart;

        let b = chart.lift(x2, y1);
        // The stable leaf of b over the full local length, ordered by decreasing y.
        let settings = DirectionSettings::default();
        let k = self.map.k();
        let mut stable = Vec::new();
        for dir in [1.0, -1.0] {
            let heading = self.map.lin.e_s() * dir;
            let leaf = integrate_leaf_along(
                self.map,
                TorusPoint::from_vec(b, k),
                Orientation::Stable,
                heading,
                self.cap,
                tol,
                settings,
            );
            if leaf.truncated {
                return None;
            }
            let shift = b - leaf.points[0];
            let pts = leaf.points.iter().map(|&v| chart.local(v + shift));
            if dir > 0.0 {
                let mut up: Vec<_> = pts.collect();
                up.reverse();
                stable.extend(up);
            } else {
                stable.extend(pts.skip(1));
            }
        }
        let side = |v: Vec2| {
            let (x, y) = chart.local(v);
            x - x_at(&stable, y)
        };
        let a = chart.lift(x1, y1);
        let leaf = cross_leaf(self.map, a, Orientation::Unstable, &side, 4.0 * height, self.cap, tol)?;
        let (x3, y3) = chart.local(leaf.end());

        // Beak: a along W^u to e, down W^s to b, back to a.
        let mut poly: Vec<(f64, f64)> = leaf.path.iter().map(|&v| chart.local(v)).collect();
        let (ylo, yhi) = (y1.min(y3), y1.max(y3));
        let mut down: Vec<(f64, f64)> = stable.iter().copied().filter(|p| p.1 > ylo && p.1 < yhi).collect();
        if y3 > y1 {
            down.sort_by(|p, q| q.1.total_cmp(&p.1));
        } else {
            down.sort_by(|p, q| p.1.total_cmp(&q.1));
        }
        poly.extend(down);
        poly.push((x2, y1));
        let dist = polygon_distance(&poly);

        let w = (x1 - x2).abs();
        let h = (y1 - y3).abs();
        let (case, bound_holds) =
            if dist >= h { (BeakCase::A, Some(w >= 0.5 * h * h * (1.0 - dist))) } else { (BeakCase::Tip, None) };
        Some(BeakSample {
            case,
            decade,
            width: w,
            height: h,
            reach: (x1 - x3).abs(),
            dist,
            ratio: h / w.sqrt(),
            bound_holds,
        })
    }

    /// Case B: `e = (0, y3)`, `a` on `W^u(e)` at height `y1 > y3`, `b` on `W^s(e)` at `y1`.
    fn tip_beak(&self, decade: usize, rng: &mut ChaCha8Rng) -> Option<BeakSample> {
        let (lo, hi) = DECADES[decade];
        let w0 = 10f64.powf(rng.gen_range(lo.log10()..hi.log10()));
        let height = w0.sqrt() / self.stretch;
        let y3 = rng.gen_range(0.05..2.0) * height;
        let y1 = y3 + rng.gen_range(0.05..3.0) * height;
        let tol = self.tol(w0 * self.stretch);
        let chart = &self.chart;
        let e = chart.lift(0.0, y3);
        let level = |v: Vec2| chart.local(v).1 - y1;
        let a = cross_leaf(self.map, e, Orientation::Unstable, &level, 2.0 * (y1 - y3), self.cap, tol)?;
        let b = cross_leaf(self.map, e, Orientation::Stable, &level, 2.0 * (y1 - y3), self.cap, tol)?;
        let (x1, ya) = chart.local(a.end());
        let (x2, _) = chart.local(b.end());
        let h = (ya - y3).abs();
        let w = (x1 - x2).abs();
        let reach = x1.abs();
        let mut poly: Vec<(f64, f64)> = a.path.iter().map(|&v| chart.local(v)).collect();
        poly.extend(b.path.iter().rev().map(|&v| chart.local(v)));
        Some(BeakSample {
            case: BeakCase::B,
            decade,
            width: w,
            height: h,
            reach,
            dist: polygon_distance(&poly),
            ratio: h / w.sqrt(),
            bound_holds: Some(reach >= h * h / 3.0),
        })
    }
}

/// Beaks at `f^n(R)`: `samples` pair draws and `samples` case B constructions, spread evenly
/// over [`DECADES`]. Leaves are followed for at most `r/10`.
pub fn beak_probe(
    map: &PerturbedMap,
    frame: &HeteroclinicFrame,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<BeakReport> {
    if samples < DECADES.len() {
        return Err(LabError::InvalidParameter(format!("beak probe needs at least {} samples", DECADES.len())));
    }
    let centre = map.orbit_of_center(frame, n as i64);
    let probe = Probe {
        map,
        chart: Chart { map, origin: centre.as_vec() },
        stretch: map.lambda().powi(n as i32),
        cap: map.radius() / 10.0,
    };
    let draws: Vec<Option<BeakSample>> = (0..2 * samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let decade = (i % samples) % DECADES.len();
            if i < samples {
                probe.pair_beak(decade, &mut rng)
            } else {
                probe.tip_beak(decade, &mut rng)
            }
        })
        .collect();
    let skipped = draws.iter().filter(|d| d.is_none()).count();
    let samples: Vec<BeakSample> = draws.into_iter().flatten().collect();

    let tally = |case: BeakCase| {
        let mut t = CaseTally::default();
        for s in samples.iter().filter(|s| s.case == case) {
            t.samples += 1;
            t.violations += usize::from(s.bound_holds == Some(false));
        }
        t
    };
    let decades: Vec<BeakDecade> = DECADES
        .iter()
        .enumerate()
        .map(|(d, &(w0_lo, w0_hi))| {
            let in_decade = samples.iter().filter(|s| s.decade == d && s.case != BeakCase::B);
            let (count, constant) = in_decade.fold((0, 0.0f64), |(c, m), s| (c + 1, m.max(s.ratio)));
            BeakDecade { decade: d, w0_lo, w0_hi, samples: count, constant }
        })
        .collect();
    let hi = decades.iter().map(|d| d.constant).fold(0.0, f64::max);
    let lo = decades.iter().map(|d| d.constant).fold(f64::INFINITY, f64::min);
    Ok(BeakReport {
        n,
        case_a: tally(BeakCase::A),
        case_b: tally(BeakCase::B),
        samples,
        decades,
        skipped,
        spread: hi / lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::default_setup;

    #[test]
    fn polygon_distance_is_zero_inside() {
        let square = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        assert_eq!(polygon_distance(&square), 0.0);
        let shifted: Vec<_> = square.iter().map(|p| (p.0 + 3.0, p.1)).collect();
        assert!((polygon_distance(&shifted) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn x_at_interpolates_and_extends() {
        let poly = [(0.0, -1.0), (1.0, 0.0), (1.0, 2.0)];
        assert_eq!(x_at(&poly, -0.5), 0.5);
        assert_eq!(x_at(&poly, 1.0), 1.0);
        assert_eq!(x_at(&poly, -2.0), -1.0);
    }

    #[test]
    fn unperturbed_beaks_are_flat() {
        let (map, frame) = default_setup(0.0);
        let report = beak_probe(&map, &frame, 0, 30, 1).unwrap();
        // Unstable leaves are horizontal, so no case B beak exists.
        assert_eq!(report.case_b.samples, 0);
        assert_eq!(report.skipped, 30);
        for s in &report.samples {
            // A few ulps of a coordinate on the 5-cover.
            assert!(s.height < 1e-14, "{s:?}");
            assert_eq!(s.case, BeakCase::A);
        }
    }

    #[test]
    fn tangency_beaks_scale_with_square_root() {
        let (map, frame) = default_setup(1.0);
        let report = beak_probe(&map, &frame, 0, 150, 2).unwrap();
        assert!(report.skipped <= 3, "skipped {}", report.skipped);
        assert_eq!(report.case_a.violations, 0);
        assert_eq!(report.case_b.violations, 0);
        assert!(report.case_a.samples > 20 && report.case_b.samples > 100);
        assert!(report.stable_within(2.0), "decade constants {:?}", report.decades);
    }
}
