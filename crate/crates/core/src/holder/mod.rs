//! Empirical Hoelder exponents: the worst image distance over pairs at distance `s`, fitted
//! against `s` on a halving ladder.
//!
//! A sampler decides where pairs live; an evaluator is any fallible point map (`h`, `h^{-1}`,
//! or a calibration map with a known exponent).

mod beak;
mod scan;

pub use beak::{beak_probe, BeakCase, BeakDecade, BeakReport, BeakSample};
pub use scan::{
    estimate_leafwise_exponent, tube_exponent_scan, LeafPairs, LeafwiseTarget, LinePairs, Stratum, StratumExponent,
};

use crate::fit::{loglog_fit, LineFit};
use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::{HeteroclinicFrame, TorusPoint};
use crate::{LabError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

/// Largest tolerated `|d(a, b) - s| / s` for a recorded pair.
pub const PAIR_SPREAD: f64 = 0.25;
/// Share of failed evaluations above which an estimate is refused.
pub const MAX_FAILURE_SHARE: f64 = 0.01;
pub const MIN_SCALES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Uniform,
    NearROrbit,
    Leafwise,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::NearROrbit => "near-R-orbit",
            Strategy::Leafwise => "leafwise",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pair {
    pub a: TorusPoint,
    pub b: TorusPoint,
    /// Distance the pair was drawn at: Euclidean, or leafwise for leaf samplers.
    pub distance: f64,
}

pub trait PairSampler: Sync {
    fn strategy(&self) -> Strategy;
    /// A pair at distance about `scale`, or `None` when the draw had to be abandoned.
    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair>;
}

/// `s0 2^-j` for `j = 0..count`.
pub fn halving_ladder(s0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| s0 * 0.5f64.powi(j as i32)).collect()
}

/// The default ladder: `r/10` halving down to no less than `2^-14 r`.
pub fn default_scales(r: f64) -> Vec<f64> {
    let s0 = r / 10.0;
    let count = ((s0 / (r * 2f64.powi(-14))).log2().floor() as usize) + 1;
    halving_ladder(s0, count)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    /// Largest `d(E(a), E(b))` over the pairs at this scale.
    pub worst: f64,
    pub worst_ratio: f64,
    pub pairs: usize,
    pub failures: usize,
    pub skipped: usize,
    /// Largest `|d(a, b) - scale| / scale` among recorded pairs.
    pub max_spread: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSample {
    pub strategy: Strategy,
    pub rows: Vec<ScaleRow>,
}

impl ScalingSample {
    pub fn scales(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.scale).collect()
    }

    pub fn worst(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.worst).collect()
    }

    pub fn pairs(&self) -> usize {
        self.rows.iter().map(|r| r.pairs).sum()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    /// `worst_j / s_j^exponent`, in ladder order.
    pub fn normalized(&self, exponent: f64) -> Vec<f64> {
        self.rows.iter().map(|r| r.worst / r.scale.powf(exponent)).collect()
    }

    /// Largest factor by which a normalized maximum exceeds its predecessor on the ladder;
    /// at most 1 when the normalized maxima are nonincreasing.
    pub fn normalized_rise(&self, exponent: f64) -> f64 {
        self.normalized(exponent).windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentEstimate {
    pub exponent: f64,
    pub constant: f64,
    /// Root mean square of the log residuals.
    pub fit_residual: f64,
    pub fit: LineFit,
    pub sample: ScalingSample,
}

/// Worst-case envelope per scale and its log-log slope. Pairs for scale `j` come from stream
/// `j` of the seeded generator, so the result does not depend on the thread count.
pub fn estimate_exponent<E>(
    evaluator: E,
    sampler: &dyn PairSampler,
    scales: &[f64],
    pairs_per_scale: usize,
    seed: u64,
) -> Result<ExponentEstimate>
where
    E: Fn(TorusPoint) -> Result<TorusPoint> + Sync,
{
    if scales.len() < MIN_SCALES {
        return Err(LabError::InsufficientScales { needed: MIN_SCALES, got: scales.len() });
    }
    let sample = sample_scaling(evaluator, sampler, scales, pairs_per_scale, seed);
    let total = sample.pairs() + sample.failures();
    if sample.failures() as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(LabError::EvaluatorFailures { failed: sample.failures(), total });
    }
    fit_sample(sample)
}

/// Per-scale maxima without fitting. Draws the sampler abandons, or that land outside the
/// spread band, are counted as skipped; evaluator errors are counted as failures.
pub fn sample_scaling<E>(
    evaluator: E,
    sampler: &dyn PairSampler,
    scales: &[f64],
    pairs_per_scale: usize,
    seed: u64,
) -> ScalingSample
where
    E: Fn(TorusPoint) -> Result<TorusPoint> + Sync,
{
    let rows = scales
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let drawn: Vec<Option<Pair>> = (0..pairs_per_scale).map(|_| sampler.pair(s, &mut rng)).collect();
            let acc = drawn
                .par_iter()
                .map(|p| {
                    let mut acc = Tally::default();
                    match p {
                        Some(p) if ((p.distance - s) / s).abs() < PAIR_SPREAD => match (evaluator(p.a), evaluator(p.b))
                        {
                            (Ok(ha), Ok(hb)) => {
                                acc.worst = ha.distance(hb);
                                acc.pairs = 1;
                                acc.spread = ((p.distance - s) / s).abs();
                            }
                            _ => acc.failures = 1,
                        },
                        _ => acc.skipped = 1,
                    }
                    acc
                })
                .reduce(Tally::default, Tally::merge);
            ScaleRow {
                scale: s,
                worst: acc.worst,
                worst_ratio: acc.worst / s,
                pairs: acc.pairs,
                failures: acc.failures,
                skipped: acc.skipped,
                max_spread: acc.spread,
            }
        })
        .collect();
    ScalingSample { strategy: sampler.strategy(), rows }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    worst: f64,
    pairs: usize,
    failures: usize,
    skipped: usize,
    spread: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            worst: self.worst.max(o.worst),
            pairs: self.pairs + o.pairs,
            failures: self.failures + o.failures,
            skipped: self.skipped + o.skipped,
            spread: self.spread.max(o.spread),
        }
    }
}

pub fn fit_sample(sample: ScalingSample) -> Result<ExponentEstimate> {
    let (xs, ys) = (sample.scales(), sample.worst());
    let fit = loglog_fit(&xs, &ys)?;
    let sq: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (y.ln() - fit.intercept - fit.slope * x.ln()).powi(2))
        .collect();
    let fit_residual = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    Ok(ExponentEstimate { exponent: fit.slope, constant: fit.intercept.exp(), fit_residual, fit, sample })
}

/// Pairs anywhere on the cover, in a random direction.
#[derive(Debug, Clone, Copy)]
pub struct UniformPairs {
    pub k: u32,
}

impl PairSampler for UniformPairs {
    fn strategy(&self) -> Strategy {
        Strategy::Uniform
    }

    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair> {
        let k = self.k as f64;
        let a = TorusPoint::new(rng.gen_range(0.0..k), rng.gen_range(0.0..k), self.k);
        let th = rng.gen_range(0.0..std::f64::consts::PI);
        Some(Pair { a, b: a.translate(Vec2::new(th.cos(), th.sin()) * scale), distance: scale })
    }
}

/// Pairs around a list of centres in local `(x, y) = (e_u, e_s)` coordinates. The pair
/// midpoint sits at height `y`, uniform in `[-h, h]`, and horizontal offset uniform in
/// `[-jitter s, jitter s]`; `jitter = 0` gives pairs symmetric about the local vertical axis.
#[derive(Debug, Clone)]
pub struct NearOrbitPairs {
    pub centres: Vec<TorusPoint>,
    /// Height window per centre.
    pub heights: Vec<f64>,
    /// Multiply the height window by the scale.
    pub scale_relative: bool,
    pub jitter: f64,
    /// Random pair direction instead of `e_u`.
    pub random_direction: bool,
    pub e_u: Vec2,
    pub e_s: Vec2,
}

impl NearOrbitPairs {
    /// Horizontal pairs in the rectangles `B̄_n`, `n <= depth`, symmetric about the vertical
    /// axis; the height window is the rectangle's half-width `rtilde lambda^-n`.
    pub fn for_map(map: &PerturbedMap, frame: &HeteroclinicFrame, rtilde: f64, depth: usize) -> Self {
        let lam = map.lambda();
        NearOrbitPairs {
            centres: (0..=depth as i64).map(|n| map.orbit_of_center(frame, n)).collect(),
            heights: (0..=depth as i32).map(|n| rtilde * lam.powi(-n)).collect(),
            scale_relative: false,
            jitter: 0.0,
            random_direction: false,
            e_u: map.lin.e_u(),
            e_s: map.lin.e_s(),
        }
    }

    /// Pairs around `h(f^n(R))` for the inverse conjugacy. `h^{-1}` degrades only within
    /// about `s` of those points, so the window scales with `s` and directions are random.
    pub fn images(map: &PerturbedMap, centres: Vec<TorusPoint>) -> Self {
        let n = centres.len();
        NearOrbitPairs {
            centres,
            heights: vec![1.0; n],
            scale_relative: true,
            jitter: 1.0,
            random_direction: true,
            e_u: map.lin.e_u(),
            e_s: map.lin.e_s(),
        }
    }
}

impl PairSampler for NearOrbitPairs {
    fn strategy(&self) -> Strategy {
        Strategy::NearROrbit
    }

    fn pair(&self, scale: f64, rng: &mut ChaCha8Rng) -> Option<Pair> {
        let i = rng.gen_range(0..self.centres.len());
        let h = if self.scale_relative { self.heights[i] * scale } else { self.heights[i] };
        let y = rng.gen_range(-h..=h);
        let x = if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) * scale } else { 0.0 };
        let dir = if self.random_direction {
            let th = rng.gen_range(0.0..std::f64::consts::PI);
            self.e_u * th.cos() + self.e_s * th.sin()
        } else {
            self.e_u
        };
        let mid = self.centres[i].translate(self.e_u * x + self.e_s * y);
        Some(Pair { a: mid.translate(dir * (-0.5 * scale)), b: mid.translate(dir * (0.5 * scale)), distance: scale })
    }
}

/// `x -> sgn(x) |x|^beta` along `e_u` about `centre`, identity along `e_s`. Symmetric pairs
/// across the vertical axis give `d = 2 (s/2)^beta` exactly.
#[derive(Debug, Clone, Copy)]
pub struct PowerLawMap {
    pub centre: TorusPoint,
    pub beta: f64,
    pub e_u: Vec2,
    pub e_s: Vec2,
}

impl PowerLawMap {
    pub fn eval(&self, p: TorusPoint) -> TorusPoint {
        let d = self.centre.displacement_to(p);
        let (x, y) = (d.dot(self.e_u), d.dot(self.e_s));
        self.centre.translate(self.e_u * (x.signum() * x.abs().powf(self.beta)) + self.e_s * y)
    }
}

/// Calibration oracle: the estimator applied to [`PowerLawMap`] on the unit torus, with pair
/// midpoints jittered across half a scale so that the maximum is found, not planted. The
/// ladder starts at `1e-4` so that images of `|x|^(1/4)` stay well inside half the torus.
pub fn calibration_oracle(beta: f64, pairs_per_scale: usize, seed: u64) -> Result<ExponentEstimate> {
    let e_u = Vec2::new(1.0, 0.0);
    let e_s = Vec2::new(0.0, 1.0);
    let oracle = PowerLawMap { centre: TorusPoint::new(0.5, 0.5, 1), beta, e_u, e_s };
    let sampler = NearOrbitPairs {
        centres: vec![oracle.centre],
        heights: vec![0.1],
        scale_relative: false,
        jitter: 0.25,
        random_direction: false,
        e_u,
        e_s,
    };
    estimate_exponent(|p| Ok(oracle.eval(p)), &sampler, &halving_ladder(1e-4, 12), pairs_per_scale, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugacy::{build_grid, conjugacy_inverse_eval, DisplacementField};
    use crate::testutil::default_setup;

    #[test]
    fn ladder_spans_tenth_of_r_to_two_pow_minus_fourteen() {
        let s = default_scales(0.25);
        assert_eq!(s.len(), 11);
        assert_eq!(s[0], 0.025);
        assert!(*s.last().unwrap() >= 0.25 * 2f64.powi(-14));
        assert!(s.last().unwrap() / 2.0 < 0.25 * 2f64.powi(-14));
    }

    #[test]
    fn identity_has_exponent_one() {
        let est = estimate_exponent(Ok, &UniformPairs { k: 5 }, &default_scales(0.25), 1000, 1).unwrap();
        assert!((est.exponent - 1.0).abs() < 0.01);
        assert!((est.constant - 1.0).abs() < 1e-6);
        assert!(est.sample.rows.iter().all(|r| r.max_spread < PAIR_SPREAD && r.pairs == 1000));
    }

    #[test]
    fn calibration_recovers_known_exponents() {
        for beta in [0.25, 0.5, 1.0] {
            let est = calibration_oracle(beta, 10_000, 7).unwrap();
            assert!((est.exponent - beta).abs() < 0.02, "beta {beta}: {}", est.exponent);
            assert!(est.sample.normalized_rise(est.exponent) <= 1.0 + 0.05);
        }
    }

    #[test]
    fn too_few_scales_or_failures_are_errors() {
        let s = halving_ladder(0.1, 4);
        assert!(matches!(
            estimate_exponent(Ok, &UniformPairs { k: 5 }, &s, 10, 1),
            Err(LabError::InsufficientScales { .. })
        ));
        let failing = |p: TorusPoint| if p.x < 1.0 { Err(LabError::Numeric("x".into())) } else { Ok(p) };
        assert!(matches!(
            estimate_exponent(failing, &UniformPairs { k: 5 }, &default_scales(0.25), 200, 1),
            Err(LabError::EvaluatorFailures { .. })
        ));
    }

    #[test]
    fn estimates_are_reproducible() {
        let (map, frame) = default_setup(1.0);
        let field = DisplacementField::new(&map, 1e-9).unwrap();
        let near = NearOrbitPairs::for_map(&map, &frame, 0.25 / 20.0, 6);
        let run = || estimate_exponent(|p| Ok(field.eval(p)), &near, &default_scales(0.25), 200, 3).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.sample.worst(), b.sample.worst());
    }

    #[test]
    fn conjugacy_is_lipschitz_near_the_tangency_and_its_inverse_is_not() {
        let (map, frame) = default_setup(1.0);
        let field = DisplacementField::new(&map, 1e-9).unwrap();
        let scales = default_scales(0.25);
        let near = NearOrbitPairs::for_map(&map, &frame, 0.25 / 20.0, 6);
        let h = estimate_exponent(|p| Ok(field.eval(p)), &near, &scales, 1000, 5).unwrap();
        assert!(h.exponent > 0.9, "h near the orbit of R: {}", h.exponent);

        let grid = build_grid(&map, 320, 1e-9).unwrap();
        let images = NearOrbitPairs::images(&map, vec![field.eval(map.center)]);
        let inv = estimate_exponent(|y| conjugacy_inverse_eval(&grid, y, 1e-9), &images, &scales, 200, 5).unwrap();
        assert!(inv.exponent >= 0.2 && inv.exponent < 0.7, "h^-1 near h(R): {}", inv.exponent);
    }

    #[test]
    fn unperturbed_conjugacy_has_exponent_one_everywhere() {
        let (map, frame) = default_setup(0.0);
        let field = DisplacementField::new(&map, 1e-9).unwrap();
        let scales = default_scales(0.25);
        for sampler in
            [&UniformPairs { k: 5 } as &dyn PairSampler, &NearOrbitPairs::for_map(&map, &frame, 0.25 / 20.0, 6)]
        {
            let est = estimate_exponent(|p| Ok(field.eval(p)), sampler, &scales, 300, 2).unwrap();
            assert!((est.exponent - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn remark_bounds_hold_for_power_profiles() {
        use crate::cocycle::Orientation;
        use crate::perturbation::{BumpProfile, PerturbedMap};
        let (base, frame) = default_setup(1.0);
        let scales = default_scales(0.25);
        for alpha in [0.5, 1.0, 1.5] {
            let map = PerturbedMap::new(base.lin.clone(), base.center, BumpProfile::power(0.25, alpha).unwrap(), 1.0)
                .unwrap();
            let grid = build_grid(&map, 320, 1e-9).unwrap();
            let h = estimate_leafwise_exponent(
                &grid,
                &frame,
                LeafwiseTarget::Conjugacy,
                Orientation::Unstable,
                &scales,
                200,
                6,
            )
            .unwrap();
            assert!(h.exponent >= 1.0 / (1.0 + alpha), "alpha {alpha}: h leafwise {}", h.exponent);
            let centres = (-6..=6).map(|n| grid.field.eval(map.orbit_of_center(&frame, n))).collect();
            let inv = estimate_exponent(
                |y| conjugacy_inverse_eval(&grid, y, 1e-9),
                &NearOrbitPairs::images(&map, centres),
                &scales,
                200,
                6,
            )
            .unwrap();
            let floor = (2.0 - alpha) / (2.0 * (1.0 + alpha)) - 0.05;
            assert!(inv.exponent >= floor, "alpha {alpha}: h^-1 {} below {floor}", inv.exponent);
        }
    }
}
