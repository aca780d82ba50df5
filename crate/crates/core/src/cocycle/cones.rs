//! Cone conditions in `U`, the order of tangency at `R`, cycle bookkeeping along unstable
//! segments, and a finite-grid hyperbolicity witness for `t < 1`.

use super::direction::{
    angle_tan, expansion_factor, push_direction, stable_direction, unstable_direction, DirectionSettings,
    ProjectiveDirection,
};
use super::leaf::{integrate_leaf, Orientation};
use super::regions::{Region, RegionAtlas};
use crate::fit::{geometric_ladder, loglog_fit, LineFit};
use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::TorusPoint;
use crate::{LabError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

/// Stand-in for an infinite tangent so that logs and ratios stay finite.
pub const TAN_CAP: f64 = 1.0 / f64::EPSILON;

/// Tilts below this are rounding noise in a unit direction.
const TAN_FLOOR: f64 = 1e-14;

fn capped_tan(d1: ProjectiveDirection, d2: ProjectiveDirection) -> f64 {
    angle_tan(d1, d2).min(TAN_CAP)
}

/// Uniform point of `U`; with probability 1/2 the distance to `[P, R]` is drawn log-uniformly
/// down to `1e-6` so that the fine scales near the segment are populated.
pub fn sample_u(atlas: &RegionAtlas, rng: &mut impl Rng) -> TorusPoint {
    let lin = &atlas.map.lin;
    let k = lin.k;
    let w = atlas.u_halfwidth;
    loop {
        let along = rng.gen_range(-w..atlas.seg_u.len + w);
        let offset = if rng.gen_bool(0.5) {
            rng.gen_range(-w..w)
        } else {
            let d = 10f64.powf(rng.gen_range((1e-6f64).log10()..w.log10()));
            if rng.gen_bool(0.5) {
                d
            } else {
                -d
            }
        };
        let p = atlas.seg_u.point(along, k).translate(lin.e_u() * offset);
        if atlas.in_u(p) {
            return p;
        }
    }
}

/// One sampled point of a cone check.
#[derive(Debug, Clone, Serialize)]
pub struct ConeSample {
    pub x: f64,
    pub y: f64,
    pub region: String,
    /// `tan(E^s, e_s)`.
    pub tan_es: f64,
    /// `tan(E^u, e_s)`, capped at [`TAN_CAP`].
    pub tan_eu: f64,
    pub du: f64,
    pub dist_pr: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub t: f64,
    pub samples: usize,
    pub unconverged: usize,
    pub epsilon_target: f64,
    /// Largest `tan(E^s, e_s)` over converged samples.
    pub epsilon: f64,
    /// Smallest `tan(E^u, e_s) / rho` over converged samples of `B`.
    pub tau: f64,
    pub xi: f64,
    /// Largest `tan(E^s, e_s) / d^2`, `d` the distance to `[P, R]`.
    pub kappa: f64,
    pub violations_vertical: usize,
    pub violations_horizontal: usize,
    /// Converged samples in `B_n`, `n >= 1`, where `tan(E^u, e_s) >= xi` must hold.
    pub deep_checked: usize,
    pub violations_deep: usize,
    /// Fit of the per-scale envelope of `tan(E^s, e_s)` against `d`.
    pub envelope_fit: Option<LineFit>,
    #[serde(skip)]
    pub rows: Vec<ConeSample>,
}

impl ConeReport {
    pub fn violations(&self) -> usize {
        self.violations_vertical + self.violations_horizontal + self.violations_deep
    }
}

/// Samples `U` and checks `E^s` in the vertical cone, `E^u` in the horizontal cone off
/// `B̄_inf`, and the quadratic decay of the `E^s` tilt towards `[P, R]`.
pub fn verify_cone_conditions(
    atlas: &RegionAtlas,
    sample_size: usize,
    seed: u64,
    epsilon_target: f64,
    settings: DirectionSettings,
) -> ConeReport {
    let map = &atlas.map;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<TorusPoint> = (0..sample_size).map(|_| sample_u(atlas, &mut rng)).collect();
    let es_ref = ProjectiveDirection::from_vec(map.lin.e_s());
    let evaluated: Vec<(Region, f64, ConeSample)> = points
        .par_iter()
        .map(|&p| {
            let region = atlas.classify(p);
            let es = stable_direction(map, p, settings);
            let eu = unstable_direction(map, p, settings);
            let (du, _) = expansion_factor(map, p, &eu);
            let sample = ConeSample {
                x: p.x,
                y: p.y,
                region: region.to_string(),
                tan_es: capped_tan(es.dir, es_ref),
                tan_eu: capped_tan(eu.dir, es_ref),
                du,
                dist_pr: atlas.distance_to_pr(p),
                converged: es.converged && eu.converged,
            };
            (region, map.center.distance(p), sample)
        })
        .collect();

    let conv = || evaluated.iter().filter(|(_, _, s)| s.converged);
    let unconverged = evaluated.len() - conv().count();
    let epsilon = conv().map(|(_, _, s)| s.tan_es).fold(0.0, f64::max);
    let tau = conv()
        .filter(|(reg, rho, _)| matches!(reg, Region::B(0) | Region::BarB(0)) && *rho > 0.0)
        .map(|(_, rho, s)| s.tan_eu / rho)
        .fold(f64::INFINITY, f64::min);
    // Capping tau keeps C_h no narrower than the 45-degree cone; this only binds without a tangency.
    let xi = tau.min(1.0 / atlas.rtilde) * atlas.rtilde;
    let kappa = conv()
        .filter(|(_, _, s)| s.dist_pr > 0.0)
        .map(|(_, _, s)| s.tan_es / (s.dist_pr * s.dist_pr))
        .fold(0.0, f64::max);
    let violations_vertical = conv().filter(|(_, _, s)| s.tan_es >= epsilon_target).count();
    let violations_horizontal = conv().filter(|(reg, _, s)| !reg.in_bbar_inf() && s.tan_eu < xi).count();
    let deep: Vec<_> = conv().filter(|(reg, _, _)| matches!(reg, Region::B(n) if *n >= 1)).collect();
    let violations_deep = deep.iter().filter(|(_, _, s)| s.tan_eu < xi).count();

    let envelope_fit = tilt_envelope(conv().map(|(_, _, s)| (s.dist_pr, s.tan_es)), atlas.u_halfwidth);

    ConeReport {
        t: map.t,
        samples: sample_size,
        unconverged,
        epsilon_target,
        epsilon,
        tau,
        xi,
        kappa,
        violations_vertical,
        violations_horizontal,
        deep_checked: deep.len(),
        violations_deep,
        envelope_fit,
        rows: evaluated.into_iter().map(|(_, _, s)| s).collect(),
    }
}

/// Log-log fit of the per-bin maximum tilt, quarter-decade bins in `d`. Bins whose maximum is
/// at the rounding floor carry no slope information and are dropped.
fn tilt_envelope(pairs: impl Iterator<Item = (f64, f64)>, d_max: f64) -> Option<LineFit> {
    const BINS_PER_DECADE: f64 = 4.0;
    let mut env: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for (d, tilt) in pairs.filter(|&(d, _)| d > 0.0 && d < d_max) {
        let bin = (d.log10() * BINS_PER_DECADE).floor() as i64;
        let e = env.entry(bin).or_insert((0.0, 0.0));
        if tilt > e.1 {
            *e = (d, tilt);
        }
    }
    let (ds, ts): (Vec<f64>, Vec<f64>) = env.values().filter(|e| e.1 > TAN_FLOOR).copied().unzip();
    if ds.len() < 3 {
        return None;
    }
    loglog_fit(&ds, &ts).ok()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TangencySample {
    pub rho: f64,
    pub tan: f64,
    /// Closed form `tan(D theta(R + rho e_u) e_u, e_s)`.
    pub tan_exact: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TangencyReport {
    pub fit: LineFit,
    pub samples: Vec<TangencySample>,
}

/// Slope of `log tan(E^u(S), e_s)` against `log rho` for `S = theta(R + rho e_u)`, with `rho`
/// on a geometric ladder below `r/4`.
pub fn tangency_order(map: &PerturbedMap, n_scales: usize, settings: DirectionSettings) -> Result<TangencyReport> {
    const MIN_SCALES: usize = 3;
    if n_scales < MIN_SCALES {
        return Err(LabError::InsufficientScales { needed: MIN_SCALES, got: n_scales });
    }
    let r = map.radius();
    let e_u = map.lin.e_u();
    let es_ref = ProjectiveDirection::from_vec(map.lin.e_s());
    let samples: Vec<TangencySample> = geometric_ladder(r / 4.0, r * 1e-4, n_scales)
        .into_par_iter()
        .map(|rho| {
            let pre = map.center.translate(e_u * rho);
            let s = map.theta(pre);
            let est = unstable_direction(map, s, settings);
            let exact = ProjectiveDirection::from_vec(map.d_theta(pre).apply(e_u));
            TangencySample {
                rho,
                tan: capped_tan(est.dir, es_ref),
                tan_exact: capped_tan(exact, es_ref),
                converged: est.converged,
            }
        })
        .collect();
    let usable: Vec<&TangencySample> = samples.iter().filter(|s| s.converged && s.tan > 0.0).collect();
    if usable.len() < MIN_SCALES {
        return Err(LabError::InsufficientScales { needed: MIN_SCALES, got: usable.len() });
    }
    let xs: Vec<f64> = usable.iter().map(|s| s.rho).collect();
    let ys: Vec<f64> = usable.iter().map(|s| s.tan).collect();
    Ok(TangencyReport { fit: loglog_fit(&xs, &ys)?, samples })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CycleSettings {
    /// Target rate below `lambda`.
    pub mu: f64,
    /// Recovery time after leaving `B̄_inf`; measured from the itinerary when `None`.
    pub m: Option<usize>,
    pub max_iter: usize,
    /// Leaf integration tolerance relative to the initial length.
    pub tol: f64,
}

impl CycleSettings {
    pub fn for_map(map: &PerturbedMap) -> Self {
        CycleSettings { mu: 0.9 * map.lambda(), m: None, max_iter: 200, tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CycleRecord {
    /// `entry - 2n`; negative when the cycle began before the window.
    pub start: i64,
    pub entry: usize,
    /// Consecutive steps contracting faster than `mu^-1`.
    pub n: usize,
    /// `4n + 4m + 4`.
    pub length: usize,
    pub complete: bool,
    /// `d^u` growth over the cycle; `NaN` when incomplete.
    pub growth: f64,
    /// `lambda^(-n-m-1) mu^(3n+3m+3)`.
    pub bound: f64,
}

impl CycleRecord {
    pub fn holds(&self) -> bool {
        !self.complete || self.growth >= self.bound
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    /// `d^u(f^i a, f^i b)` for `i = 0..=N`.
    pub lengths: Vec<f64>,
    /// Whether at least half of the `i`-th segment lies in `B̄_inf`.
    pub in_bbar: Vec<bool>,
    /// First time the segment reaches `r/10`; `None` when the iteration cap was hit.
    pub n_window: Option<usize>,
    pub mu: f64,
    pub m: usize,
    pub cycles: Vec<CycleRecord>,
    pub first_cycle_incomplete: bool,
    /// Smallest `i` with `d^u` growing by at least `mu^-1` from `i` to `i + 1`.
    pub n1: usize,
    /// `N - n_1 >= 3 n_1` for an incomplete first cycle.
    pub first_cycle_condition: Option<bool>,
    /// Steps contracting faster than `mu^-1` from an iterate mostly outside `B̄_inf`.
    pub contracting_outside_bbar: usize,
    /// Most connected components of `B̄_inf` met by a single iterate.
    pub max_components: usize,
}

/// Iterates of the unstable segment of signed arclength `length` starting at `a`, tracked
/// through a refined parameterisation, and their decomposition into cycles.
pub fn cycle_expansion_check(atlas: &RegionAtlas, a: TorusPoint, length: f64, settings: CycleSettings) -> CycleReport {
    let map = &atlas.map;
    let k = a.k;
    let leaf = integrate_leaf(map, a, Orientation::Unstable, length, settings.tol * length.abs());
    let base = leaf.points.clone();
    let cum: Vec<f64> = std::iter::once(0.0)
        .chain(base.windows(2).scan(0.0, |acc, w| {
            *acc += (w[1] - w[0]).norm();
            Some(*acc)
        }))
        .collect();
    let total = *cum.last().unwrap();
    let at_param = |s: f64| -> TorusPoint {
        if base.len() < 2 {
            return TorusPoint::from_vec(base[0], k);
        }
        let j = cum.partition_point(|&c| c < s).clamp(1, cum.len() - 1);
        let (c0, c1) = (cum[j - 1], cum[j]);
        let w = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        TorusPoint::from_vec(base[j - 1] + (base[j] - base[j - 1]) * w, k)
    };

    const INITIAL_POINTS: usize = 65;
    const REFINE: f64 = 64.0;
    const MAX_POINTS: usize = 1 << 15;
    let mut params: Vec<f64> = (0..INITIAL_POINTS).map(|i| total * i as f64 / (INITIAL_POINTS - 1) as f64).collect();
    let mut images: Vec<TorusPoint> = params.iter().map(|&s| at_param(s)).collect();
    let chord_sum = |imgs: &[TorusPoint]| imgs.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>();

    let target = atlas.r / 10.0;
    let mut lengths = vec![chord_sum(&images)];
    let mut in_bbar = Vec::new();
    let mut max_components = 0;
    let mut n_window = None;
    for i in 0..=settings.max_iter {
        let (bad, comps) = bbar_share(atlas, &images);
        in_bbar.push(bad);
        max_components = max_components.max(comps);
        if lengths[i] >= target {
            n_window = Some(i);
            break;
        }
        if i == settings.max_iter {
            break;
        }
        images = images.par_iter().map(|&p| map.apply_f(p)).collect();
        // Bisect chords that grew too long, computing the new points from the parameter.
        loop {
            let cur = chord_sum(&images);
            let limit = (cur / REFINE).min(atlas.r / 50.0);
            let split: Vec<usize> =
                (0..images.len() - 1).filter(|&j| images[j].distance(images[j + 1]) > limit).collect();
            if split.is_empty() || params.len() + split.len() > MAX_POINTS {
                break;
            }
            let fresh: Vec<(usize, f64, TorusPoint)> = split
                .par_iter()
                .map(|&j| {
                    let s = 0.5 * (params[j] + params[j + 1]);
                    (j, s, map.iterate(at_param(s), (i + 1) as i64))
                })
                .collect();
            for (j, s, p) in fresh.into_iter().rev() {
                params.insert(j + 1, s);
                images.insert(j + 1, p);
            }
        }
        lengths.push(chord_sum(&images));
    }

    let d = decompose_cycles(&lengths, n_window, map.lambda(), settings);
    let contracting_outside_bbar = d.contracting.iter().zip(&in_bbar).filter(|(&c, &b)| c && !b).count();
    let first_cycle_incomplete = in_bbar[0] || d.contracting.first().copied().unwrap_or(false);
    let first_cycle_condition = match (first_cycle_incomplete, n_window) {
        (true, Some(nw)) => Some(nw - d.n1 >= 3 * d.n1),
        _ => None,
    };
    CycleReport {
        lengths,
        in_bbar,
        n_window,
        mu: settings.mu,
        m: d.m,
        cycles: d.cycles,
        first_cycle_incomplete,
        n1: d.n1,
        first_cycle_condition,
        contracting_outside_bbar,
        max_components,
    }
}

struct Decomposition {
    contracting: Vec<bool>,
    m: usize,
    n1: usize,
    cycles: Vec<CycleRecord>,
}

/// Cycles of the length history `d_0, ..., d_end` of a segment.
fn decompose_cycles(lengths: &[f64], n_window: Option<usize>, lam: f64, settings: CycleSettings) -> Decomposition {
    let ratios: Vec<f64> = lengths.windows(2).map(|w| w[1] / w[0]).collect();
    let end = n_window.unwrap_or(lengths.len() - 1);
    // A cycle is anchored at a run of steps contracting by more than mu^-1; outside B̄_inf the
    // choice of rtilde keeps every step above that rate.
    let contracting: Vec<bool> = ratios.iter().map(|&q| q < 1.0 / settings.mu).collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < contracting.len().min(end) {
        if contracting[i] {
            let entry = i;
            while i < contracting.len() && contracting[i] {
                i += 1;
            }
            runs.push((entry, i - entry));
        } else {
            i += 1;
        }
    }
    let recovery = |entry: usize, n: usize| -> usize {
        (entry + n..ratios.len()).position(|j| ratios[j] >= settings.mu).unwrap_or(ratios.len())
    };
    let m = settings.m.unwrap_or_else(|| runs.iter().map(|&(e, n)| recovery(e, n)).max().unwrap_or(0));
    let cycles = runs
        .iter()
        .map(|&(entry, n)| {
            // The cycle opens 2n steps before the contracting run and lasts 4n + 4m + 4.
            let start = entry as i64 - 2 * n as i64;
            let length = 4 * n + 4 * m + 4;
            let complete = start >= 0 && n_window.is_some() && start as usize + length <= end;
            let growth = if complete { lengths[start as usize + length] / lengths[start as usize] } else { f64::NAN };
            let bound = lam.powi(-((n + m + 1) as i32)) * settings.mu.powi((3 * n + 3 * m + 3) as i32);
            CycleRecord { start, entry, n, length, complete, growth, bound }
        })
        .collect();
    let n1 = match runs.first() {
        Some(&(0, n)) => n,
        _ => 0,
    };
    Decomposition { contracting, m, n1, cycles }
}

/// Whether at least half of the polyline (by chord length) lies in `B̄_inf`, and the number of
/// distinct rectangles met.
fn bbar_share(atlas: &RegionAtlas, pts: &[TorusPoint]) -> (bool, usize) {
    let mut inside = 0.0;
    let mut total = 0.0;
    let mut comps = BTreeSet::new();
    for w in pts.windows(2) {
        let len = w[0].distance(w[1]);
        let mid = w[0].translate(w[0].displacement_to(w[1]) * 0.5);
        let reg = atlas.classify(mid);
        if reg.in_bbar_inf() {
            inside += len;
            comps.insert(reg);
        }
        total += len;
    }
    (total > 0.0 && inside >= 0.5 * total, comps.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct AnosovWitness {
    pub t: f64,
    pub steps: usize,
    pub points: usize,
    pub unconverged: usize,
    /// Smallest `|Df^M u|` over unit `u` in `E^u`.
    pub min_expansion: f64,
    /// Largest `|Df^M s|` over unit `s` in `E^s`.
    pub max_contraction: f64,
    pub min_splitting_angle: f64,
    /// Points where `Df^M` fails to map the cone strictly inside the cone at the image.
    pub cone_failures: usize,
    /// Points failing any of the three tests.
    pub failures: Vec<(f64, f64)>,
}

impl AnosovWitness {
    pub fn passes(&self) -> bool {
        self.failures.is_empty() && self.unconverged == 0
    }
}

/// Grid evidence that `f^M` is uniformly hyperbolic: `grid x grid` points on the torus plus a
/// polar grid on the ball, where the rotation acts. The cone at `x` is centred on `E^u(x)`
/// with half-angle half the splitting angle.
pub fn anosov_witness(map: &PerturbedMap, grid: usize, steps: usize, settings: DirectionSettings) -> AnosovWitness {
    let k = map.k();
    let size = k as f64;
    let r = map.radius();
    let mut pts: Vec<TorusPoint> = (0..grid * grid)
        .map(|i| TorusPoint::new((i % grid) as f64 * size / grid as f64, (i / grid) as f64 * size / grid as f64, k))
        .collect();
    pts.extend((0..grid * grid).map(|i| {
        let rho = r * ((i % grid) as f64 + 0.5) / grid as f64;
        let ang = std::f64::consts::TAU * (i / grid) as f64 / grid as f64;
        map.center.translate(Vec2::new(ang.cos(), ang.sin()) * rho)
    }));
    pts.push(map.center);

    struct Probe {
        p: TorusPoint,
        converged: bool,
        expansion: f64,
        contraction: f64,
        splitting: f64,
        cone_ok: bool,
    }
    let probes: Vec<Probe> = pts
        .par_iter()
        .map(|&p| {
            let eu = unstable_direction(map, p, settings);
            let es = stable_direction(map, p, settings);
            let img = map.iterate(p, steps as i64);
            let eu_img = unstable_direction(map, img, settings);
            let es_img = stable_direction(map, img, settings);
            let converged = eu.converged && es.converged && eu_img.converged && es_img.converged;
            let push_norm = |v: Vec2| {
                let mut v = v;
                let mut z = p;
                for _ in 0..steps {
                    v = map.d_f(z).apply(v);
                    z = map.apply_f(z);
                }
                v.norm()
            };
            let splitting = eu.dir.angle_to(es.dir);
            let half = 0.5 * splitting;
            let half_img = 0.5 * eu_img.dir.angle_to(es_img.dir);
            let u = eu.dir.unit();
            let cone_ok = half > 0.0
                && [half, -half].iter().all(|&b| {
                    let edge = ProjectiveDirection::from_vec(u.rotated(b));
                    push_direction(map, p, edge, steps as i64).angle_to(eu_img.dir) < half_img
                });
            Probe { p, converged, expansion: push_norm(u), contraction: push_norm(es.dir.unit()), splitting, cone_ok }
        })
        .collect();

    let ok = probes.iter().filter(|q| q.converged);
    AnosovWitness {
        t: map.t,
        steps,
        points: probes.len(),
        unconverged: probes.iter().filter(|q| !q.converged).count(),
        min_expansion: ok.clone().map(|q| q.expansion).fold(f64::INFINITY, f64::min),
        max_contraction: ok.clone().map(|q| q.contraction).fold(0.0, f64::max),
        min_splitting_angle: ok.clone().map(|q| q.splitting).fold(f64::INFINITY, f64::min),
        cone_failures: ok.clone().filter(|q| !q.cone_ok).count(),
        failures: ok
            .filter(|q| !(q.cone_ok && q.expansion > 1.0 && q.contraction < 1.0))
            .map(|q| (q.p.x, q.p.y))
            .collect(),
    }
}
