//! Pseudo-orbits, bilateral-series shadowing for the linear map, bounded tangent
//! sequences and the scaling experiment that transports them through the conjugacy.

use crate::conjugacy::ConjugacyGrid;
use crate::fit::{loglog_fit, LineFit};
use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::spectrum::rates_from_components;
use crate::torus::{HeteroclinicFrame, ToralAutomorphism, TorusPoint};
use crate::{LabError, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Slack on `|Df^n v| <= 1` for rounding in the accumulated products.
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoSource {
    TangentConstruction,
    Synthetic,
    ImageUnderH,
}

/// Finite sequence `y_first, ..., y_last` with its defect under a map `g`.
#[derive(Debug, Clone, Serialize)]
pub struct PseudoOrbit {
    pub first: i64,
    pub points: Vec<TorusPoint>,
    /// `max_i distance(g(y_i), y_{i+1})`.
    pub defect: f64,
    pub source: PseudoSource,
}

impl PseudoOrbit {
    pub fn new(
        first: i64,
        points: Vec<TorusPoint>,
        source: PseudoSource,
        g: &dyn Fn(TorusPoint) -> TorusPoint,
    ) -> Self {
        let defect = max_defect(&points, g);
        PseudoOrbit { first, points, defect, source }
    }

    pub fn last(&self) -> i64 {
        self.first + self.points.len() as i64 - 1
    }

    pub fn at(&self, n: i64) -> TorusPoint {
        self.points[(n - self.first) as usize]
    }

    /// Per-step defects, indexed from `first`.
    pub fn defects(&self, g: &dyn Fn(TorusPoint) -> TorusPoint) -> Vec<f64> {
        self.points.windows(2).map(|w| g(w[0]).distance(w[1])).collect()
    }

    pub fn recompute_defect(&self, g: &dyn Fn(TorusPoint) -> TorusPoint) -> f64 {
        max_defect(&self.points, g)
    }

    /// `self` followed by `other`, reindexed to continue after `self.last()`.
    pub fn concat(&self, other: &PseudoOrbit, g: &dyn Fn(TorusPoint) -> TorusPoint) -> PseudoOrbit {
        let junction = match (self.points.last(), other.points.first()) {
            (Some(&a), Some(&b)) => g(a).distance(b),
            _ => 0.0,
        };
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let source = if self.source == other.source { self.source } else { PseudoSource::Synthetic };
        PseudoOrbit { first: self.first, points, defect: self.defect.max(other.defect).max(junction), source }
    }
}

fn max_defect(points: &[TorusPoint], g: &dyn Fn(TorusPoint) -> TorusPoint) -> f64 {
    points.windows(2).map(|w| g(w[0]).distance(w[1])).fold(0.0, f64::max)
}

/// Pseudo-orbit of `L` through `y0` on `-back..=fwd` whose every step is kicked by a vector
/// drawn uniformly from the disc of radius `xi`.
pub fn synthetic_pseudo_orbit(
    lin: &ToralAutomorphism,
    y0: TorusPoint,
    back: i64,
    fwd: i64,
    xi: f64,
    rng: &mut impl Rng,
) -> PseudoOrbit {
    let mut kick = || {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r: f64 = xi * rng.gen_range(0.0f64..1.0).sqrt();
        Vec2::new(r * a.cos(), r * a.sin())
    };
    let mut ahead = vec![y0];
    for _ in 0..fwd {
        let p = lin.apply(*ahead.last().expect("starts at y0")).translate(kick());
        ahead.push(p);
    }
    let mut behind = vec![y0];
    for _ in 0..back {
        // L(y_{-1}) + d = y_0.
        let p = lin.apply_inv(behind.last().expect("starts at y0").translate(-kick()));
        behind.push(p);
    }
    let points: Vec<TorusPoint> = behind.iter().rev().chain(ahead.iter().skip(1)).copied().collect();
    PseudoOrbit::new(-back, points, PseudoSource::Synthetic, &|p| lin.apply(p))
}

/// `max_n distance(g^n(x), y_n)` by direct iteration from index 0. Rounding grows like
/// `lambda^|n|`, so this is a faithful recomputation only on short windows.
pub fn shadowing_distance(
    x: TorusPoint,
    pseudo: &PseudoOrbit,
    g: &dyn Fn(TorusPoint) -> TorusPoint,
    g_inv: &dyn Fn(TorusPoint) -> TorusPoint,
) -> f64 {
    let mut worst: f64 = 0.0;
    if (pseudo.first..=pseudo.last()).contains(&0) {
        worst = x.distance(pseudo.at(0));
    }
    let mut p = x;
    for n in 1..=pseudo.last() {
        p = g(p);
        if n >= pseudo.first {
            worst = worst.max(p.distance(pseudo.at(n)));
        }
    }
    let mut p = x;
    for n in (pseudo.first..0).rev() {
        p = g_inv(p);
        if n <= pseudo.last() {
            worst = worst.max(p.distance(pseudo.at(n)));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowMethod {
    Series,
    BruteForce,
    TrueOrbit,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowingResult {
    /// Shadowing point at index 0.
    pub x: TorusPoint,
    pub delta: f64,
    pub method: ShadowMethod,
    /// `|g^n(x) - y_n|` per index, from `first`.
    pub deviations: Vec<f64>,
    /// Constant in `delta <= C * defect`; series only.
    pub constant: Option<f64>,
    /// Per index, the largest contribution of defects outside the window if they were
    /// as large as the in-window defect; series only.
    pub boundary: Vec<f64>,
}

/// Unstable and stable geometric constants: `|w| <= (a_u/(lambda-1) + a_s/(1-1/lambda)) xi`,
/// where `a_u`, `a_s` are the norms of the eigen-coordinate functionals.
fn series_constants(lin: &ToralAutomorphism) -> (f64, f64) {
    let (ux, sx) = lin.components(Vec2::new(1.0, 0.0));
    let (uy, sy) = lin.components(Vec2::new(0.0, 1.0));
    let a_u = ux.hypot(uy);
    let a_s = sx.hypot(sy);
    let lambda = lin.lambda();
    (a_u / (lambda - 1.0), a_s * lambda / (lambda - 1.0))
}

/// Bounded solution of `w_{n+1} = L w_n - d_n` on the window, with the unstable part summed
/// from future defects and the stable part from past ones. `x = y_0 + w_0`.
pub fn shadow_linear(lin: &ToralAutomorphism, pseudo: &PseudoOrbit) -> Result<ShadowingResult> {
    if !(pseudo.first..=pseudo.last()).contains(&0) {
        return Err(LabError::InvalidParameter(format!(
            "pseudo-orbit window {}..={} does not contain index 0",
            pseudo.first,
            pseudo.last()
        )));
    }
    let m = pseudo.points.len();
    let (mu_u, mu_s) = (lin.eigen.mu_u, lin.eigen.mu_s);
    let d: Vec<(f64, f64)> =
        pseudo.points.windows(2).map(|w| lin.components(lin.apply(w[0]).displacement_to(w[1]))).collect();
    // Both recursions run in their contracting direction.
    let mut wu = vec![0.0; m];
    for i in (0..m - 1).rev() {
        wu[i] = (wu[i + 1] + d[i].0) / mu_u;
    }
    let mut ws = vec![0.0; m];
    for i in 0..m - 1 {
        ws[i + 1] = mu_s * ws[i] - d[i].1;
    }
    let corrections: Vec<Vec2> = wu.iter().zip(&ws).map(|(&u, &s)| lin.from_components(u, s)).collect();
    let deviations: Vec<f64> = corrections.iter().map(|w| w.norm()).collect();
    let delta = deviations.iter().copied().fold(0.0, f64::max);
    let zero = (-pseudo.first) as usize;
    let x = pseudo.points[zero].translate(corrections[zero]);

    let (cu, cs) = series_constants(lin);
    let xi = d.iter().map(|&(u, s)| lin.from_components(u, s).norm()).fold(0.0, f64::max);
    let lambda = lin.lambda();
    let boundary =
        (0..m).map(|i| xi * (cu * lambda.powi(-((m - 1 - i) as i32)) + cs * lambda.powi(-(i as i32)))).collect();
    Ok(ShadowingResult { x, delta, method: ShadowMethod::Series, deviations, constant: Some(cu + cs), boundary })
}

/// Coarse-to-fine grid search for the `x` minimising `max_n |L^n x - y_n|` in a square around
/// `centre`. The objective is convex in the lift, so shrinking around the best node converges.
pub fn brute_force_shadow(
    lin: &ToralAutomorphism,
    pseudo: &PseudoOrbit,
    centre: TorusPoint,
    half_width: f64,
    nodes: usize,
    rounds: usize,
) -> ShadowingResult {
    let g = |p| lin.apply(p);
    let g_inv = |p| lin.apply_inv(p);
    let score = |x: TorusPoint| shadowing_distance(x, pseudo, &g, &g_inv);
    let (mut best, mut best_score) = (centre, score(centre));
    let mut half = half_width;
    let steps = nodes.max(2) - 1;
    for _ in 0..rounds {
        let c = best;
        for i in 0..=steps {
            for j in 0..=steps {
                let off = Vec2::new(
                    -half + 2.0 * half * i as f64 / steps as f64,
                    -half + 2.0 * half * j as f64 / steps as f64,
                );
                let p = c.translate(off);
                let s = score(p);
                if s < best_score {
                    best = p;
                    best_score = s;
                }
            }
        }
        half *= 4.0 / steps as f64;
    }
    let deviations = (pseudo.first..=pseudo.last()).map(|n| lin_power(lin, best, n).distance(pseudo.at(n))).collect();
    ShadowingResult {
        x: best,
        delta: best_score,
        method: ShadowMethod::BruteForce,
        deviations,
        constant: None,
        boundary: Vec::new(),
    }
}

fn lin_power(lin: &ToralAutomorphism, mut p: TorusPoint, n: i64) -> TorusPoint {
    for _ in 0..n.unsigned_abs() {
        p = if n > 0 { lin.apply(p) } else { lin.apply_inv(p) };
    }
    p
}

/// Tangent pseudo-orbit `x~_n = f^n(x~) + eps v_n` with `v_n = Df^n v`.
#[derive(Debug, Clone, Serialize)]
pub struct TangentPseudoOrbit {
    pub pseudo: PseudoOrbit,
    pub eps: f64,
    /// `|v_n|`, from `-n` to `n`.
    pub tangent_norms: Vec<f64>,
    /// `defect / eps^2`.
    pub c_tilde: f64,
    /// Distance from the true orbit of `x~`.
    pub delta: f64,
}

/// Builds the tangent pseudo-orbit along `base(n) = f^n(x~)`, for `v` given in
/// eigen-coordinates. Fails at the first index where `|Df^n v| > 1`.
pub fn make_tangent_pseudo_orbit(
    map: &PerturbedMap,
    base: &dyn Fn(i64) -> TorusPoint,
    v: (f64, f64),
    eps: f64,
    n: usize,
) -> Result<TangentPseudoOrbit> {
    if !(eps > 0.0) {
        return Err(LabError::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let n = n as i64;
    let norm = |c: (f64, f64)| map.lin.from_components(c.0, c.1).norm();
    let check = |i: i64, c: (f64, f64)| {
        let m = norm(c);
        if m > 1.0 + NORM_SLACK {
            Err(LabError::UnboundedTangent { index: i, norm: m })
        } else {
            Ok(())
        }
    };
    check(0, v)?;
    let mut ahead = vec![v];
    let mut behind = vec![v];
    // Interleave so the reported violation is the one closest to 0.
    for i in 0..n {
        let next = map.push_components(base(i), ahead[i as usize]);
        check(i + 1, next)?;
        ahead.push(next);
        let prev = map.pull_components(base(-i), behind[i as usize]);
        check(-(i + 1), prev)?;
        behind.push(prev);
    }
    let tangents: Vec<(f64, f64)> = behind.iter().rev().chain(ahead.iter().skip(1)).copied().collect();
    let points: Vec<TorusPoint> =
        (-n..=n).zip(&tangents).map(|(i, &c)| base(i).translate(map.lin.from_components(c.0, c.1) * eps)).collect();
    let tangent_norms: Vec<f64> = tangents.iter().map(|&c| norm(c)).collect();
    let delta = (-n..=n).zip(&points).map(|(i, p)| base(i).distance(*p)).fold(0.0, f64::max);
    let pseudo = PseudoOrbit::new(-n, points, PseudoSource::TangentConstruction, &|p| map.apply_f(p));
    Ok(TangentPseudoOrbit { c_tilde: pseudo.defect / (eps * eps), pseudo, eps, tangent_norms, delta })
}

/// Tangent pseudo-orbit along the exact orbit of `R` with `v` the unit stable direction.
pub fn tangent_pseudo_orbit_at_r(
    map: &PerturbedMap,
    frame: &HeteroclinicFrame,
    eps: f64,
    n: usize,
) -> Result<TangentPseudoOrbit> {
    make_tangent_pseudo_orbit(map, &|i| map.orbit_of_center(frame, i), (0.0, 1.0), eps, n)
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiAnosovProfile {
    /// `(n, log |Df^n v|)` for `0 < |n| <= N`.
    pub log_norms: Vec<(i64, f64)>,
    /// `max_{|n| <= N} |Df^n v|`, at least 1 since `v` is a unit vector.
    pub max_norm: f64,
    pub max_log_norm: f64,
}

impl QuasiAnosovProfile {
    pub fn bounded_by(&self, bound: f64) -> bool {
        self.max_norm <= bound
    }

    /// First `|n|` at which `|Df^n v|` exceeds `bound`.
    pub fn first_exceeding(&self, bound: f64) -> Option<u64> {
        let lb = bound.ln();
        self.log_norms.iter().filter(|(_, l)| *l > lb).map(|(n, _)| n.unsigned_abs()).min()
    }
}

/// Bilateral growth of the unit vector with eigen-coordinates `v` along `orbit`.
pub fn quasi_anosov_probe(
    map: &PerturbedMap,
    orbit: &dyn Fn(i64) -> TorusPoint,
    v: (f64, f64),
    n: usize,
) -> QuasiAnosovProfile {
    let n = n as i64;
    let m = map.lin.from_components(v.0, v.1).norm();
    let unit = (v.0 / m, v.1 / m);
    let grid: Vec<i64> = (-n..=n).filter(|&i| i != 0).collect();
    let log_norms: Vec<(i64, f64)> =
        rates_from_components(map, orbit, unit, &grid).into_iter().map(|s| (s.n, s.log_norm)).collect();
    let max_log_norm = log_norms.iter().map(|s| s.1).fold(0.0, f64::max);
    QuasiAnosovProfile { log_norms, max_norm: max_log_norm.exp(), max_log_norm }
}

/// Probe along the numerically iterated orbit of `x` for a vector in standard coordinates.
pub fn quasi_anosov_probe_at(map: &PerturbedMap, x: TorusPoint, v: Vec2, n: usize) -> QuasiAnosovProfile {
    let ni = n as i64;
    let mut ahead = vec![x];
    let mut behind = vec![x];
    for i in 0..n {
        ahead.push(map.apply_f(ahead[i]));
        behind.push(map.apply_f_inv(behind[i]));
    }
    let orbit = |i: i64| if i >= 0 { ahead[i as usize] } else { behind[(-i) as usize] };
    debug_assert!(ahead.len() as i64 == ni + 1);
    quasi_anosov_probe(map, &orbit, map.lin.components(v), n)
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherRow {
    pub eps: f64,
    /// Defect of the tangent pseudo-orbit under `f`.
    pub defect_f: f64,
    pub c_tilde: f64,
    /// Distance of the tangent pseudo-orbit from the orbit of `R`; `eps` times the largest `|v_n|`.
    pub delta_self: f64,
    /// Defect of its image under `h`, as a pseudo-orbit of `L`.
    pub xi: f64,
    /// Distance from the image to the true orbit `L^n h(x~)`.
    pub delta: f64,
    /// Series shadowing distance for the image.
    pub delta_series: f64,
    /// Largest boundary term of the series over the window.
    pub boundary: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub window: usize,
    pub rows: Vec<FisherRow>,
    /// Slope of `log defect_f` against `log eps`.
    pub defect_exponent: LineFit,
    /// Slope of `log delta` against `log xi`.
    pub kappa: LineFit,
    /// Series constant of `L`.
    pub constant: f64,
    /// `max_eps delta / (C xi)`; the upper shadowing bound holds when this is at most 1.
    pub bound_ratio: f64,
}

/// Transports the tangent pseudo-orbit at `R` through `h` for each `eps` and fits
/// `delta ~ xi^kappa`.
pub fn fisher_experiment(
    map: &PerturbedMap,
    frame: &HeteroclinicFrame,
    grid: &ConjugacyGrid,
    epsilons: &[f64],
    n: usize,
) -> Result<FisherReport> {
    let lin = &map.lin;
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let tangent = tangent_pseudo_orbit_at_r(map, frame, eps, n)?;
            let ni = n as i64;
            let image: Vec<TorusPoint> = tangent.pseudo.points.iter().map(|&p| grid.eval(p)).collect();
            let pseudo = PseudoOrbit::new(-ni, image, PseudoSource::ImageUnderH, &|p| lin.apply(p));
            // h(f^n(R)) is L^n(h(R)) without the rounding growth of iterating L.
            let delta =
                (-ni..=ni).map(|i| grid.eval(map.orbit_of_center(frame, i)).distance(pseudo.at(i))).fold(0.0, f64::max);
            let series = shadow_linear(lin, &pseudo)?;
            Ok(FisherRow {
                eps,
                defect_f: tangent.pseudo.defect,
                c_tilde: tangent.c_tilde,
                delta_self: tangent.delta,
                xi: pseudo.defect,
                delta,
                delta_series: series.delta,
                boundary: series.boundary.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let defect_exponent = loglog_fit(&eps, &rows.iter().map(|r| r.defect_f).collect::<Vec<_>>())?;
    let kappa =
        loglog_fit(&rows.iter().map(|r| r.xi).collect::<Vec<_>>(), &rows.iter().map(|r| r.delta).collect::<Vec<_>>())?;
    let (cu, cs) = series_constants(lin);
    let constant = cu + cs;
    let bound_ratio = rows.iter().map(|r| r.delta / (constant * r.xi)).fold(0.0, f64::max);
    Ok(FisherReport { window: n, rows, defect_exponent, kappa, constant, bound_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugacy::build_grid;
    use crate::testutil::default_setup;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cat() -> ToralAutomorphism {
        ToralAutomorphism::new([[2, 1], [1, 1]], 1).unwrap()
    }

    fn random_pseudo(lin: &ToralAutomorphism, n: i64, xi: f64, rng: &mut ChaCha8Rng) -> PseudoOrbit {
        let k = lin.k as f64;
        let y0 = TorusPoint::new(rng.gen_range(0.0..k), rng.gen_range(0.0..k), lin.k);
        synthetic_pseudo_orbit(lin, y0, n, n, xi, rng)
    }

    #[test]
    fn true_orbit_needs_no_correction() {
        let lin = cat();
        let y0 = TorusPoint::new(0.3, 0.7, 1);
        let points: Vec<_> = (-5..=5).map(|n| lin_power(&lin, y0, n)).collect();
        let pseudo = PseudoOrbit::new(-5, points, PseudoSource::Synthetic, &|p| lin.apply(p));
        assert!(pseudo.defect < 1e-12);
        let s = shadow_linear(&lin, &pseudo).unwrap();
        assert!(s.delta < 1e-11, "{}", s.delta);
        assert!(s.x.distance(y0) < 1e-11);
    }

    #[test]
    fn single_unstable_defect_has_geometric_profile() {
        let lin = cat();
        let lambda = lin.lambda();
        let xi = 1e-3;
        let y0 = TorusPoint::new(0.4, 0.2, 1);
        let n = 12i64;
        // True orbit of y0 up to index 0, then the orbit of L(y0) + xi e_u.
        let kicked = lin.apply(y0).translate(lin.eigen.e_u * xi);
        let points: Vec<_> =
            (-n..=n).map(|i| if i <= 0 { lin_power(&lin, y0, i) } else { lin_power(&lin, kicked, i - 1) }).collect();
        let pseudo = PseudoOrbit::new(-n, points, PseudoSource::Synthetic, &|p| lin.apply(p));
        assert!((pseudo.defect - xi).abs() < 1e-12);
        let s = shadow_linear(&lin, &pseudo).unwrap();
        // Only the kicked step contributes: w_n = xi lambda^{n-1} e_u for n <= 0, zero after.
        for (i, dev) in s.deviations.iter().enumerate() {
            let idx = i as i64 - n;
            let want = if idx <= 0 { xi * lambda.powi(idx as i32 - 1) } else { 0.0 };
            assert!((dev - want).abs() < 1e-12, "n = {idx}: {dev} vs {want}");
        }
        assert!((s.delta - xi / lambda).abs() < 1e-12);
        let brute = brute_force_shadow(&lin, &pseudo, s.x, 4.0 * xi, 41, 6);
        assert!((s.delta - brute.delta).abs() <= 0.01 * brute.delta, "{} vs {}", s.delta, brute.delta);
    }

    #[test]
    fn series_delta_recomputes_on_short_windows() {
        let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pseudo = random_pseudo(&lin, 2, 1e-3, &mut rng);
            assert!((pseudo.defect - pseudo.recompute_defect(&|p| lin.apply(p))).abs() < 1e-12);
            let s = shadow_linear(&lin, &pseudo).unwrap();
            let again = shadowing_distance(s.x, &pseudo, &|p| lin.apply(p), &|p| lin.apply_inv(p));
            assert!((again - s.delta).abs() < 1e-12, "{again} vs {}", s.delta);
        }
    }

    #[test]
    fn series_bound_holds_across_defect_sizes() {
        let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for xi in [1e-3, 1e-4, 1e-5] {
            for _ in 0..20 {
                let pseudo = random_pseudo(&lin, 200, xi, &mut rng);
                let s = shadow_linear(&lin, &pseudo).unwrap();
                let c = s.constant.unwrap();
                assert!(s.delta <= c * pseudo.defect * (1.0 + 1e-9), "{} > {c} * {}", s.delta, pseudo.defect);
            }
        }
    }

    #[test]
    fn series_is_within_the_boundary_factor_of_minimax() {
        let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Zero boundary data at the window ends costs at most a factor 1 + 1/lambda.
        let slack = 1.0 + 1.0 / lin.lambda() + 1e-3;
        for n in 2..=6 {
            for _ in 0..10 {
                let pseudo = random_pseudo(&lin, n, 1e-3, &mut rng);
                let s = shadow_linear(&lin, &pseudo).unwrap();
                let brute = brute_force_shadow(&lin, &pseudo, s.x, 4e-3, 41, 8);
                assert!(brute.delta <= s.delta * (1.0 + 1e-9));
                assert!(s.delta <= slack * brute.delta, "n = {n}: {} vs {}", s.delta, brute.delta);
            }
        }
    }

    #[test]
    fn zero_tangent_gives_the_true_orbit() {
        let (map, frame) = default_setup(1.0);
        let t = tangent_pseudo_orbit_at_r(&map, &frame, 1e-3, 0).unwrap();
        assert_eq!(t.pseudo.points.len(), 1);
        let t = make_tangent_pseudo_orbit(&map, &|i| map.orbit_of_center(&frame, i), (0.0, 0.0), 1e-3, 50).unwrap();
        assert!(t.pseudo.defect < 1e-12, "{}", t.pseudo.defect);
        assert_eq!(t.delta, 0.0);
    }

    #[test]
    fn tangent_pseudo_orbit_defect_is_quadratic() {
        let (map, frame) = default_setup(1.0);
        let eps = [1e-2, 1e-3, 1e-4];
        let runs: Vec<_> = eps.iter().map(|&e| tangent_pseudo_orbit_at_r(&map, &frame, e, 200).unwrap()).collect();
        let fit = loglog_fit(&eps, &runs.iter().map(|r| r.pseudo.defect).collect::<Vec<_>>()).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
        for r in &runs {
            assert!(r.delta > r.eps / 2.0 && r.delta < 2.0 * r.eps);
            assert!(r.tangent_norms.iter().all(|&m| m <= 1.0 + NORM_SLACK));
        }
    }

    #[test]
    fn linear_map_has_no_bounded_tangent_at_r() {
        let (map, frame) = default_setup(0.0);
        match tangent_pseudo_orbit_at_r(&map, &frame, 1e-3, 10) {
            Err(LabError::UnboundedTangent { index, norm }) => {
                assert_eq!(index, -1);
                assert!((norm - map.lambda()).abs() < 1e-9);
            }
            other => panic!("expected an unbounded tangent, got {other:?}"),
        }
    }

    #[test]
    fn vertical_direction_at_r_is_bounded() {
        let (map, frame) = default_setup(1.0);
        let p = quasi_anosov_probe(&map, &|i| map.orbit_of_center(&frame, i), (0.0, 1.0), 200);
        assert!(p.bounded_by(1.1), "{}", p.max_norm);
    }

    #[test]
    fn unstable_vector_grows_without_perturbation() {
        let (map, frame) = default_setup(0.0);
        let n = 40;
        let p = quasi_anosov_probe(&map, &|i| map.orbit_of_center(&frame, i), (1.0, 0.0), n);
        let want = n as f64 * map.lambda().ln();
        assert!((p.max_log_norm - want).abs() < 1e-9, "{} vs {want}", p.max_log_norm);
    }

    #[test]
    fn intermediate_map_expands_random_vectors() {
        let (map, _) = default_setup(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x = TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = quasi_anosov_probe_at(&map, x, Vec2::new(a.cos(), a.sin()), 50);
            assert!(p.first_exceeding(1e3).is_some(), "max {}", p.max_norm);
        }
    }

    #[test]
    fn fisher_scaling_at_the_tangency() {
        let (map, frame) = default_setup(1.0);
        let grid = build_grid(&map, 320, 1e-10).unwrap();
        let report = fisher_experiment(&map, &frame, &grid, &[1e-2, 3e-3, 1e-3, 3e-4, 1e-4], 60).unwrap();
        assert!((report.defect_exponent.slope - 2.0).abs() < 0.1);
        assert!(report.kappa.slope >= 0.9, "{:?}", report.kappa);
        for r in &report.rows {
            assert!(r.delta_series <= report.constant * r.xi * (1.0 + 1e-9));
            assert!(r.delta_self > 0.5 * r.eps && r.delta_self < 2.0 * r.eps, "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn concatenation_keeps_the_larger_defect(seed in 0u64..1_000, n1 in 1i64..8, n2 in 1i64..8, xi in 1e-6f64..1e-2) {
            let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
            let g = |p| lin.apply(p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pseudo(&lin, n1, xi, &mut rng);
            // Start the second piece within xi/2 of the image of the first one's endpoint.
            let start = g(*a.points.last().unwrap()).translate(Vec2::new(0.5 * xi, 0.0));
            let b = synthetic_pseudo_orbit(&lin, start, 0, n2, xi, &mut rng);
            let joined = a.concat(&b, &g);
            prop_assert_eq!(joined.points.len(), a.points.len() + b.points.len());
            prop_assert!((joined.defect - joined.recompute_defect(&g)).abs() < 1e-12);
            let eps = a.defect.max(b.defect).max(0.5 * xi);
            prop_assert!(joined.defect <= eps + 1e-12);
        }
    }
}
