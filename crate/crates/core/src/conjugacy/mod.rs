//! The conjugacy `h = id + u` with `h o f = L o h`.
//!
//! Writing `f = L + p` turns the functional equation into `u(x) = L^{-1}(p(x) + u(f(x)))`.
//! In eigen-coordinates the unstable part contracts under the forward recursion and the
//! stable part under the backward one:
//!
//! `u_u(x) = sum_{n>=0} mu_u^{-(n+1)} p_u(f^n x)`, `u_s(x) = -sum_{n>=1} mu_s^{n-1} p_s(f^{-n} x)`.
//!
//! Truncating both sums after `N` terms leaves the residual `mu_u^{-N} p_u(f^N x)` and
//! `mu_s^N p_s(f^{-N} x)`, so `|h(f x) - L h(x)| <= lambda^{-N} |p|_inf`.

mod grid;
mod inverse;

pub use grid::{
    build_grid, injectivity_probe, load_grid, product_structure_constant, save_grid, ConjugacyGrid, GridMeta,
    InjectivityReport,
};
pub use inverse::{conjugacy_inverse_eval, InverseSettings};

use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::TorusPoint;
use crate::{LabError, Result};

/// Largest series depth accepted.
pub const MAX_DEPTH: usize = 60;

/// `p(x) = f(x) - L(x)` as the shortest displacement on the cover.
pub fn forcing_term(map: &PerturbedMap, x: TorusPoint) -> Vec2 {
    map.lin.apply(x).displacement_to(map.apply_f(x))
}

/// `N = ceil(log(tol (1 - 1/lambda)) / log(1/lambda))`, which bounds the geometric tail by
/// `tol |p|_inf`.
pub fn truncation_depth(lambda: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(LabError::InvalidParameter(format!("series tolerance must lie in (0, 1), got {tol}")));
    }
    let inv = 1.0 / lambda;
    let n = ((tol * (1.0 - inv)).ln() / inv.ln()).ceil().max(1.0) as usize;
    if n > MAX_DEPTH {
        return Err(LabError::TruncationCapExceeded { needed: n, cap: MAX_DEPTH, tol });
    }
    Ok(n)
}

/// The displacement `u` evaluated pointwise from the truncated series.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub map: PerturbedMap,
    pub depth: usize,
    pub tol: f64,
}

impl DisplacementField {
    pub fn new(map: &PerturbedMap, tol: f64) -> Result<Self> {
        let depth = truncation_depth(map.lambda(), tol)?;
        Ok(DisplacementField { map: map.clone(), depth, tol })
    }

    pub fn with_depth(map: &PerturbedMap, depth: usize, tol: f64) -> Self {
        DisplacementField { map: map.clone(), depth, tol }
    }

    /// `lambda^{-N} sup|p| / (1 - 1/lambda)` with `sup|p| <= 2r`: bounds the change of `u`
    /// from any deeper truncation.
    pub fn tail_bound(&self) -> f64 {
        let lam = self.map.lambda();
        if self.map.t == 0.0 {
            return 0.0;
        }
        lam.powi(-(self.depth as i32)) * 2.0 * self.map.radius() / (1.0 - 1.0 / lam)
    }

    /// `u(x)` in eigen-coordinates.
    pub fn components(&self, x: TorusPoint) -> (f64, f64) {
        if self.map.t == 0.0 {
            return (0.0, 0.0);
        }
        let lin = &self.map.lin;
        let (mu_u, mu_s) = (lin.eigen.mu_u, lin.eigen.mu_s);
        let mut cu = 0.0;
        let mut z = x;
        let mut w = 1.0 / mu_u;
        for _ in 0..self.depth {
            let (pu, _) = lin.components(forcing_term(&self.map, z));
            cu += w * pu;
            w /= mu_u;
            z = self.map.apply_f(z);
        }
        let mut cs = 0.0;
        let mut z = x;
        let mut w = 1.0;
        for _ in 0..self.depth {
            z = self.map.apply_f_inv(z);
            let (_, ps) = lin.components(forcing_term(&self.map, z));
            cs -= w * ps;
            w *= mu_s;
        }
        (cu, cs)
    }

    pub fn displacement(&self, x: TorusPoint) -> Vec2 {
        let (cu, cs) = self.components(x);
        self.map.lin.from_components(cu, cs)
    }

    /// `h(x) = x + u(x)`.
    pub fn eval(&self, x: TorusPoint) -> TorusPoint {
        x.translate(self.displacement(x))
    }

    /// `distance(h(f(x)), L(h(x)))`.
    pub fn residual(&self, x: TorusPoint) -> f64 {
        self.eval(self.map.apply_f(x)).distance(self.map.lin.apply(self.eval(x)))
    }
}

/// `h(x)` to tolerance `tol`; fails when the depth needed exceeds [`MAX_DEPTH`].
pub fn conjugacy_eval(map: &PerturbedMap, x: TorusPoint, tol: f64) -> Result<TorusPoint> {
    Ok(DisplacementField::new(map, tol)?.eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::default_setup;
    use crate::torus::ToralAutomorphism;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_formula() {
        let cat = ToralAutomorphism::new([[2, 1], [1, 1]], 1).unwrap();
        let lam = cat.lambda();
        let n = truncation_depth(lam, 1e-9).unwrap();
        assert!(lam.powi(-(n as i32)) <= 1e-9 * (1.0 - 1.0 / lam));
        assert!(lam.powi(-(n as i32 - 1)) > 1e-9 * (1.0 - 1.0 / lam));
        assert!(n <= MAX_DEPTH);
        assert!(matches!(truncation_depth(lam, 1e-300), Err(LabError::TruncationCapExceeded { .. })));
        assert!(truncation_depth(lam, 0.0).is_err());
    }

    #[test]
    fn forcing_is_supported_on_the_preimage_of_the_ball() {
        let (f, _) = default_setup(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = f.radius();
        let mut inside = 0;
        for _ in 0..100_000 {
            let x = TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5);
            let p = forcing_term(&f, x);
            assert!(p.norm() <= 2.0 * r);
            if f.in_ball(f.lin.apply(x)) {
                inside += 1;
            } else {
                assert_eq!(p, Vec2::ZERO);
            }
        }
        assert!(inside > 0);
        let (g, _) = default_setup(0.0);
        assert_eq!(forcing_term(&g, TorusPoint::new(1.0, 2.0, 5)), Vec2::ZERO);
    }

    /// Brute force: iterate `u <- L^{-1}(p + u o f)` on the unstable part and the stable
    /// recursion `u_s(x) = mu_s u_s(f^{-1} x) - p_s(f^{-1} x)` from zero, along the orbit.
    #[test]
    fn series_matches_recursion() {
        let (f, _) = default_setup(1.0);
        let field = DisplacementField::new(&f, 1e-12).unwrap();
        let lin = &f.lin;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut nonzero = 0;
        for i in 0..400 {
            let x = if i % 2 == 0 {
                TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5)
            } else {
                let a = rng.gen_range(0.0..6.3f64);
                lin.apply_inv(f.center.translate(Vec2::new(a.cos(), a.sin()) * rng.gen_range(0.0..0.3)))
            };
            let n = field.depth;
            let orbit: Vec<TorusPoint> = (0..=n)
                .scan(x, |z, _| {
                    let cur = *z;
                    *z = f.apply_f(*z);
                    Some(cur)
                })
                .collect();
            let mut cu = 0.0;
            for z in orbit.iter().rev().skip(1) {
                cu = (lin.components(forcing_term(&f, *z)).0 + cu) / lin.eigen.mu_u;
            }
            let back: Vec<TorusPoint> = (0..=n)
                .scan(x, |z, _| {
                    *z = f.apply_f_inv(*z);
                    Some(*z)
                })
                .collect();
            let mut cs = 0.0;
            for z in back.iter().take(n).rev() {
                cs = lin.eigen.mu_s * cs - lin.components(forcing_term(&f, *z)).1;
            }
            let (su, ss) = field.components(x);
            assert!((su - cu).abs() < 1e-13 && (ss - cs).abs() < 1e-13, "{x:?}");
            if su != 0.0 || ss != 0.0 {
                nonzero += 1;
            }
        }
        assert!(nonzero > 100);
    }

    #[test]
    fn residual_and_fixed_points() {
        let (f, frame) = default_setup(1.0);
        let field = DisplacementField::new(&f, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let x = TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5);
            assert!(field.residual(x) < 1e-9);
        }
        assert_eq!(field.eval(frame.p), frame.p);
        for q in f.lin.fixed_points() {
            let hq = field.eval(q);
            assert!(f.lin.apply(hq).distance(hq) < 1e-9);
        }
        let (g, _) = default_setup(0.0);
        let id = DisplacementField::new(&g, 1e-9).unwrap();
        assert_eq!(id.eval(TorusPoint::new(3.3, 1.2, 5)), TorusPoint::new(3.3, 1.2, 5));
    }

    #[test]
    fn deeper_truncation_stays_within_the_tail_bound() {
        let (f, _) = default_setup(1.0);
        let field = DisplacementField::new(&f, 1e-6).unwrap();
        let deeper = DisplacementField::with_depth(&f, field.depth + 10, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let x = TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5);
            let d = (field.displacement(x) - deeper.displacement(x)).norm();
            assert!(d < field.tail_bound());
        }
    }
}
