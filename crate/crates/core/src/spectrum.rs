//! Periodic data of the perturbed map: orbits transported from `L` through `h^{-1}`,
//! eigenvalue magnitudes of `Df^p`, and growth rates of single tangent vectors.

use crate::conjugacy::{conjugacy_inverse_eval, ConjugacyGrid};
use crate::geom::{Mat2, Vec2};
use crate::perturbation::PerturbedMap;
use crate::torus::{HeteroclinicFrame, TorusPoint};
use crate::{LabError, Result};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefineSettings {
    /// Central-difference step for the Jacobian of `f^p`.
    pub fd_step: f64,
    /// Backtracking factor applied to a Newton step that does not lower the residual.
    pub damping: f64,
    pub max_iter: usize,
    /// Target for `distance(f^p(x), x)`.
    pub tol: f64,
    /// Tolerance of the `h^{-1}` seed.
    pub seed_tol: f64,
    /// Refined points closer than this are the same orbit point.
    pub dedup: f64,
    pub period_cap: u32,
}

impl Default for RefineSettings {
    fn default() -> Self {
        RefineSettings {
            fd_step: 1e-7,
            damping: 0.5,
            max_iter: 100,
            tol: 1e-10,
            seed_tol: 1e-9,
            dedup: 1e-8,
            period_cap: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    SeedFailed,
    Unconverged,
    /// Converged onto a point already claimed by another seed.
    Duplicate,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOrbitRecord {
    pub point: TorusPoint,
    /// The linear periodic point this record was transported from.
    pub linear: TorusPoint,
    pub period: u32,
    /// Eigenvalue magnitudes of `Df^p`, larger first.
    pub magnitudes: [f64; 2],
    /// `magnitude^(1/p)`.
    pub rates: [f64; 2],
    /// `distance(f^p(x), x)`.
    pub residual: f64,
    /// `det Df^p` as computed from the product.
    pub det: f64,
    pub flag: Option<RecordFlag>,
}

impl PeriodicOrbitRecord {
    /// Distance of the rates from 1 on the log scale.
    pub fn margin(&self) -> f64 {
        self.rates.iter().map(|r| r.ln().abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn unimodularity_defect(&self) -> f64 {
        (self.magnitudes[0] * self.magnitudes[1] - 1.0).abs()
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub point: TorusPoint,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `f^p(y)` relative to `x`, in the lift around `x`.
fn image_offset(map: &PerturbedMap, x: TorusPoint, y: TorusPoint, p: u32) -> Vec2 {
    x.displacement_to(map.iterate(y, p as i64))
}

/// Root of `f^p(x) - x` by Newton with a central-difference Jacobian. A step that does not
/// lower the residual is scaled by `damping` until it does.
pub fn refine_periodic(map: &PerturbedMap, seed: TorusPoint, p: u32, s: &RefineSettings) -> Refinement {
    let mut x = seed;
    let mut g = image_offset(map, x, x, p);
    let mut iterations = 0;
    while g.norm() >= s.tol && iterations < s.max_iter {
        iterations += 1;
        let h = s.fd_step;
        let col = |e: Vec2| {
            (image_offset(map, x, x.translate(e * h), p) - image_offset(map, x, x.translate(e * -h), p)) * (0.5 / h)
        };
        let jac = Mat2::from_cols(col(Vec2::new(1.0, 0.0)), col(Vec2::new(0.0, 1.0))) - Mat2::IDENTITY;
        let Some(inv) = jac.inverse() else { break };
        let step = inv.apply(g);
        let mut factor = 1.0;
        let mut moved = false;
        while factor > 1e-6 {
            let cand = x.translate(step * -factor);
            let gc = image_offset(map, cand, cand, p);
            if gc.norm() < g.norm() {
                x = cand;
                g = gc;
                moved = true;
                break;
            }
            factor *= s.damping;
        }
        if !moved {
            break;
        }
    }
    let residual = g.norm();
    Refinement { point: x, residual, iterations, converged: residual < s.tol }
}

/// `Df^p(x)` in eigen-coordinates. Columns are pushed separately, so steps where `f = L`
/// keep them on their eigenlines.
pub fn orbit_derivative(map: &PerturbedMap, x: TorusPoint, p: u32) -> Mat2 {
    let mut cols = [(1.0, 0.0), (0.0, 1.0)];
    let mut z = x;
    for _ in 0..p {
        cols = cols.map(|c| map.push_components(z, c));
        z = map.apply_f(z);
    }
    Mat2::from_cols(Vec2::new(cols[0].0, cols[0].1), Vec2::new(cols[1].0, cols[1].1))
}

/// Eigenvalue magnitudes, larger first. Complex pairs share `sqrt(|det|)`.
pub fn eigen_magnitudes(m: &Mat2) -> [f64; 2] {
    match m.real_eigenvalues() {
        Some((a, b)) => {
            let (a, b) = (a.abs(), b.abs());
            [a.max(b), a.min(b)]
        }
        None => {
            let r = m.det().abs().sqrt();
            [r, r]
        }
    }
}

fn record(map: &PerturbedMap, linear: TorusPoint, p: u32, r: Refinement) -> PeriodicOrbitRecord {
    let m = orbit_derivative(map, r.point, p);
    let magnitudes = eigen_magnitudes(&m);
    let inv_p = 1.0 / p as f64;
    PeriodicOrbitRecord {
        point: r.point,
        linear,
        period: p,
        magnitudes,
        rates: magnitudes.map(|x| x.powf(inv_p)),
        residual: r.residual,
        det: m.det(),
        flag: (!r.converged).then_some(RecordFlag::Unconverged),
    }
}

/// Indices of points that lie within `tol` of an earlier point in the list.
fn duplicates(points: &[TorusPoint], tol: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].x.total_cmp(&points[j].x));
    let mut dup = vec![false; points.len()];
    let k = points.first().map_or(1.0, |p| p.k as f64);
    for (pos, &i) in order.iter().enumerate() {
        // Neighbours in x within tol, including across the seam at x = k.
        let near = order[pos + 1..].iter().take_while(|&&j| points[j].x - points[i].x <= tol);
        let wrap = order.iter().rev().take_while(|&&j| points[j].x - points[i].x >= k - tol);
        for &j in near.chain(wrap) {
            if j != i && points[i].distance(points[j]) <= tol {
                let later = i.max(j);
                dup[later] = true;
            }
        }
    }
    dup
}

/// Periodic points of `f` of period dividing `p`, one per periodic point of `L`: seeds
/// `h^{-1}(y)`, refined on `f^p(x) = x`.
pub fn transported_periodic_points(
    map: &PerturbedMap,
    grid: &ConjugacyGrid,
    period: u32,
    s: &RefineSettings,
) -> Result<Vec<PeriodicOrbitRecord>> {
    let linear = map.lin.periodic_points_linear(period, s.period_cap)?;
    let mut records: Vec<PeriodicOrbitRecord> = linear
        .par_iter()
        .map(|&y| match conjugacy_inverse_eval(grid, y, s.seed_tol) {
            Ok(seed) => record(map, y, period, refine_periodic(map, seed, period, s)),
            Err(_) => {
                let mut r = record(
                    map,
                    y,
                    period,
                    Refinement { point: y, residual: f64::INFINITY, iterations: 0, converged: false },
                );
                r.flag = Some(RecordFlag::SeedFailed);
                r
            }
        })
        .collect();
    let points: Vec<TorusPoint> = records.iter().map(|r| r.point).collect();
    for (r, dup) in records.iter_mut().zip(duplicates(&points, s.dedup)) {
        if dup && r.flag.is_none() {
            r.flag = Some(RecordFlag::Duplicate);
        }
    }
    Ok(records)
}

/// Independent count of solutions of `f^p(x) = x`: Newton from every node of a grid with
/// `nodes_per_unit` nodes per unit length, converged roots deduplicated.
pub fn brute_force_periodic_count(map: &PerturbedMap, period: u32, nodes_per_unit: usize, s: &RefineSettings) -> usize {
    let k = map.k() as usize;
    let n = k * nodes_per_unit;
    let step = 1.0 / nodes_per_unit as f64;
    let roots: Vec<TorusPoint> = (0..n * n)
        .into_par_iter()
        .filter_map(|idx| {
            let seed = TorusPoint::new((idx % n) as f64 * step, (idx / n) as f64 * step, k as u32);
            let r = refine_periodic(map, seed, period, s);
            r.converged.then_some(r.point)
        })
        .collect();
    duplicates(&roots, s.dedup).iter().filter(|d| !**d).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthSample {
    pub n: i64,
    /// `(1/n) log |Df^n v|`.
    pub rate: f64,
    /// `log |Df^n v|`.
    pub log_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEstimate {
    pub period_cap: u32,
    pub records: Vec<PeriodicOrbitRecord>,
    /// Normalized rates of unflagged records.
    pub rates: Vec<f64>,
    pub flagged: usize,
    /// Smallest `|log rate|` over unflagged records.
    pub min_log_rate: f64,
    pub max_unimodularity_defect: f64,
    pub max_residual: f64,
    pub probes: Vec<GrowthSample>,
}

/// Union of the normalized rates over periods `1..=period_cap`.
pub fn periodic_spectrum(
    map: &PerturbedMap,
    grid: &ConjugacyGrid,
    period_cap: u32,
    s: &RefineSettings,
) -> Result<SpectrumEstimate> {
    let mut records = Vec::new();
    for p in 1..=period_cap {
        records.extend(transported_periodic_points(map, grid, p, s)?);
    }
    let good: Vec<&PeriodicOrbitRecord> = records.iter().filter(|r| r.flag.is_none()).collect();
    Ok(SpectrumEstimate {
        period_cap,
        rates: good.iter().flat_map(|r| r.rates).collect(),
        flagged: records.len() - good.len(),
        min_log_rate: good.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min),
        max_unimodularity_defect: good.iter().map(|r| r.unimodularity_defect()).fold(0.0, f64::max),
        max_residual: good.iter().map(|r| r.residual).fold(0.0, f64::max),
        probes: Vec::new(),
        records,
    })
}

/// `(1/n) log |Df^n v|` along a given orbit `n -> orbit(n)`, for each `n` in `n_grid`
/// (`n = 0` is skipped). Products are renormalized each step and their logs summed.
pub fn growth_rate_along(
    map: &PerturbedMap,
    orbit: &dyn Fn(i64) -> TorusPoint,
    v: Vec2,
    n_grid: &[i64],
) -> Result<Vec<GrowthSample>> {
    if v.norm() == 0.0 || !v.is_finite() {
        return Err(LabError::InvalidParameter("growth probe needs a nonzero finite vector".into()));
    }
    let unit = v * (1.0 / v.norm());
    Ok(rates_from_components(map, orbit, map.lin.components(unit), n_grid))
}

/// As [`growth_rate_along`], for a unit vector given by its eigen-coordinates. A vector on an
/// eigenline stays on it exactly wherever `f = L`.
pub(crate) fn rates_from_components(
    map: &PerturbedMap,
    orbit: &dyn Fn(i64) -> TorusPoint,
    start: (f64, f64),
    n_grid: &[i64],
) -> Vec<GrowthSample> {
    let norm = |c: (f64, f64)| map.lin.from_components(c.0, c.1).norm();
    let mut out = Vec::with_capacity(n_grid.len());
    let forward = n_grid.iter().copied().filter(|&n| n > 0).max().unwrap_or(0);
    let backward = n_grid.iter().copied().filter(|&n| n < 0).min().unwrap_or(0);
    let mut logs = std::collections::BTreeMap::new();
    for (reach, sign) in [(forward, 1i64), (-backward, -1i64)] {
        let (mut c, mut log) = (start, 0.0);
        for i in 0..reach {
            c = if sign > 0 { map.push_components(orbit(i), c) } else { map.pull_components(orbit(-i), c) };
            let m = norm(c);
            log += m.ln();
            c = (c.0 / m, c.1 / m);
            logs.insert(sign * (i + 1), log);
        }
    }
    for &n in n_grid.iter().filter(|&&n| n != 0) {
        let log_norm = logs[&n];
        out.push(GrowthSample { n, rate: log_norm / n as f64, log_norm });
    }
    out
}

/// Growth rates along the numerically iterated orbit of `x`.
pub fn growth_rate_probe(map: &PerturbedMap, x: TorusPoint, v: Vec2, n_grid: &[i64]) -> Result<Vec<GrowthSample>> {
    let reach = n_grid.iter().map(|n| n.unsigned_abs()).max().unwrap_or(0) as usize;
    let mut ahead = vec![x];
    let mut behind = vec![x];
    for i in 0..reach {
        ahead.push(map.apply_f(ahead[i]));
        behind.push(map.apply_f_inv(behind[i]));
    }
    let orbit = |n: i64| if n >= 0 { ahead[n as usize] } else { behind[(-n) as usize] };
    growth_rate_along(map, &orbit, v, n_grid)
}

/// Growth rates of `e_s` at `R` along the exact orbit of `R`.
pub fn vertical_probe(map: &PerturbedMap, frame: &HeteroclinicFrame, n_grid: &[i64]) -> Result<Vec<GrowthSample>> {
    if n_grid.is_empty() {
        return Err(LabError::InvalidParameter("growth probe needs at least one n".into()));
    }
    Ok(rates_from_components(map, &|n| map.orbit_of_center(frame, n), (0.0, 1.0), n_grid))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralGap {
    pub log_lambda: f64,
    pub probes: Vec<GrowthSample>,
    /// Largest `|rate|` over the probes at `|n| = probe_n`.
    pub probe_rate: f64,
    pub probe_n: i64,
    pub min_log_rate: f64,
    pub max_unimodularity_defect: f64,
    pub flagged: usize,
    pub records: usize,
}

impl SpectralGap {
    /// Rates of the vertical vector within `probe_band` of zero.
    pub fn probe_bounded(&self, probe_band: f64) -> bool {
        self.probe_rate < probe_band
    }

    /// Periodic rates at least `share log lambda` away from 1.
    pub fn periodic_hyperbolic(&self, share: f64) -> bool {
        self.min_log_rate > share * self.log_lambda
    }
}

/// Vertical-vector probe at `R` against the periodic spectrum up to `period_cap`.
pub fn spectral_gap(
    map: &PerturbedMap,
    frame: &HeteroclinicFrame,
    grid: &ConjugacyGrid,
    period_cap: u32,
    probe_n: i64,
    s: &RefineSettings,
) -> Result<SpectralGap> {
    spectral_gap_from(map, frame, &periodic_spectrum(map, grid, period_cap, s)?, probe_n)
}

/// As [`spectral_gap`], reusing a computed periodic spectrum.
pub fn spectral_gap_from(
    map: &PerturbedMap,
    frame: &HeteroclinicFrame,
    spectrum: &SpectrumEstimate,
    probe_n: i64,
) -> Result<SpectralGap> {
    let n_grid: Vec<i64> = (1..=probe_n).flat_map(|n| [-n, n]).collect();
    let probes = vertical_probe(map, frame, &n_grid)?;
    let probe_rate = probes.iter().filter(|g| g.n.abs() == probe_n).map(|g| g.rate.abs()).fold(0.0, f64::max);
    Ok(SpectralGap {
        log_lambda: map.lambda().ln(),
        probes,
        probe_rate,
        probe_n,
        min_log_rate: spectrum.min_log_rate,
        max_unimodularity_defect: spectrum.max_unimodularity_defect,
        flagged: spectrum.flagged,
        records: spectrum.records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugacy::build_grid;
    use crate::perturbation::BumpProfile;
    use crate::testutil::default_setup;
    use crate::torus::ToralAutomorphism;
    use proptest::prelude::*;

    fn grid(t: f64) -> (PerturbedMap, HeteroclinicFrame, ConjugacyGrid) {
        let (map, frame) = default_setup(t);
        let grid = build_grid(&map, 320, 1e-9).unwrap();
        (map, frame, grid)
    }

    #[test]
    fn cat_map_fixed_point_on_the_unit_torus() {
        let lin = ToralAutomorphism::new([[2, 1], [1, 1]], 1).unwrap();
        // The bump is irrelevant at t = 0.
        let map =
            PerturbedMap::new(lin, TorusPoint::new(0.5, 0.5, 1), BumpProfile::quadratic(0.1).unwrap(), 0.0).unwrap();
        let grid = build_grid(&map, 64, 1e-9).unwrap();
        let recs = transported_periodic_points(&map, &grid, 1, &RefineSettings::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].point.distance(TorusPoint::new(0.0, 0.0, 1)) < 1e-12);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((recs[0].rates[0] - phi * phi).abs() < 1e-12);
        assert!((recs[0].rates[1] - 1.0 / (phi * phi)).abs() < 1e-12);
        assert!((recs[0].rates[0] - 2.618034).abs() < 1e-6 && (recs[0].rates[1] - 0.381966).abs() < 1e-6);
    }

    #[test]
    fn linear_spectrum_is_two_points() {
        let (map, _, grid) = grid(0.0);
        let est = periodic_spectrum(&map, &grid, 3, &RefineSettings::default()).unwrap();
        let lam = map.lambda();
        assert_eq!(est.flagged, 0);
        assert_eq!(est.records.len() as u128, (1..=3).map(|p| map.lin.periodic_count(p)).sum::<u128>());
        for r in est.rates.chunks(2) {
            assert!((r[0] - lam).abs() < 1e-12 && (r[1] - 1.0 / lam).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn transported_counts_match_the_linear_model() {
        let (map, _, grid) = grid(1.0);
        let s = RefineSettings::default();
        for p in 1..=4u32 {
            let recs = transported_periodic_points(&map, &grid, p, &s).unwrap();
            assert_eq!(recs.len() as u128, map.lin.periodic_count(p));
            assert!(recs.iter().all(|r| r.flag.is_none()), "period {p}: {:?}", recs.iter().find(|r| r.flag.is_some()));
            for r in &recs {
                assert!(r.residual < 1e-10);
                assert!(r.unimodularity_defect() < 1e-8);
                assert!(r.margin() > 0.5 * map.lambda().ln(), "period {p} at {:?}: margin {}", r.point, r.margin());
            }
        }
    }

    #[test]
    fn brute_force_search_finds_the_same_counts() {
        let (map, _) = default_setup(1.0);
        let s = RefineSettings::default();
        for p in 1..=4u32 {
            assert_eq!(brute_force_periodic_count(&map, p, 40, &s) as u128, map.lin.periodic_count(p), "period {p}");
        }
    }

    #[test]
    fn rates_are_stable_under_tolerance_doubling() {
        let (map, _, grid) = grid(1.0);
        let s = RefineSettings::default();
        let loose = RefineSettings { tol: 2.0 * s.tol, ..s };
        for p in 1..=3u32 {
            let a = transported_periodic_points(&map, &grid, p, &s).unwrap();
            let b = transported_periodic_points(&map, &grid, p, &loose).unwrap();
            for (x, y) in a.iter().zip(&b) {
                for i in 0..2 {
                    assert!((x.rates[i] - y.rates[i]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn moderate_perturbation_keeps_the_spectrum_near_lambda() {
        let (map, _, grid) = grid(0.5);
        let est = periodic_spectrum(&map, &grid, 3, &RefineSettings::default()).unwrap();
        let lam = map.lambda();
        assert_eq!(est.flagged, 0);
        assert!(est.rates.iter().all(|&r| (r >= 0.8 / lam && r <= 1.2 / lam) || (r >= 0.8 * lam && r <= 1.2 * lam)));
    }

    #[test]
    fn linear_growth_rates_are_log_lambda() {
        let (map, _) = default_setup(0.0);
        let grid: Vec<i64> = vec![-100, -7, -1, 1, 7, 100];
        let ll = map.lambda().ln();
        let x = TorusPoint::new(1.3, 2.2, 5);
        for g in growth_rate_probe(&map, x, map.lin.e_u(), &grid).unwrap() {
            assert!((g.rate - ll).abs() < 1e-12, "{g:?}");
        }
        for g in growth_rate_probe(&map, x, map.lin.e_s(), &grid).unwrap() {
            assert!((g.rate + ll).abs() < 1e-12, "{g:?}");
        }
        assert!(growth_rate_probe(&map, x, Vec2::new(0.0, 0.0), &grid).is_err());
    }

    #[test]
    fn vertical_vector_at_the_tangency_decays_both_ways() {
        let (map, frame) = default_setup(1.0);
        let probes = vertical_probe(&map, &frame, &[-100, 100]).unwrap();
        let ll = map.lambda().ln();
        // Contracted at rate log lambda in both directions of time.
        assert!((probes[0].log_norm + 100.0 * ll).abs() < 1.0, "{probes:?}");
        assert!((probes[1].log_norm + 100.0 * ll).abs() < 1.0, "{probes:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linear_probes_converge_to_plus_or_minus_log_lambda(x in 0.0..5.0f64, y in 0.0..5.0f64, th in 0.0..std::f64::consts::PI) {
            let (map, _) = default_setup(0.0);
            let v = Vec2::new(th.cos(), th.sin());
            let g = growth_rate_probe(&map, TorusPoint::new(x, y, 5), v, &[-200, 200]).unwrap();
            let ll = map.lambda().ln();
            // Forward the e_u part wins, backward the e_s part, unless v lies on an eigenline.
            prop_assert!((g[1].rate - ll).abs() < 0.05 || (g[1].rate + ll).abs() < 0.05);
            prop_assert!((g[0].rate - ll).abs() < 0.05 || (g[0].rate + ll).abs() < 0.05);
        }
    }
}
