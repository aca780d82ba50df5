//! Projective directions and the invariant line fields `E^u`, `E^s`.

use crate::geom::{tan_angle, Mat2, Vec2};
use crate::perturbation::PerturbedMap;
use crate::torus::TorusPoint;
use serde::Serialize;
use std::f64::consts::PI;

/// A tangent direction modulo `pi`, stored as its angle in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectiveDirection {
    angle: f64,
}

impl ProjectiveDirection {
    /// Panics on the zero vector: the cocycle is invertible, so a zero vector is a bug upstream.
    pub fn from_vec(v: Vec2) -> Self {
        assert!(v.x != 0.0 || v.y != 0.0, "zero vector has no direction");
        let mut a = v.y.atan2(v.x).rem_euclid(PI);
        if a >= PI {
            a = 0.0;
        }
        ProjectiveDirection { angle: a }
    }

    pub fn angle(self) -> f64 {
        self.angle
    }

    /// Unit representative with angle in `[0, pi)`.
    pub fn unit(self) -> Vec2 {
        Vec2::new(self.angle.cos(), self.angle.sin())
    }

    /// Unsigned angle to another direction, in `[0, pi/2]`.
    pub fn angle_to(self, other: ProjectiveDirection) -> f64 {
        let d = (self.angle - other.angle).abs();
        d.min(PI - d)
    }
}

/// `|tan|` of the angle between two directions; `inf` when perpendicular.
pub fn angle_tan(d1: ProjectiveDirection, d2: ProjectiveDirection) -> f64 {
    tan_angle(d1.unit(), d2.unit())
}

/// Direction of `Df^n(p) v` for `v` along `d`; negative `n` uses `Df^{-1}` along the backward orbit.
pub fn push_direction(map: &PerturbedMap, p: TorusPoint, d: ProjectiveDirection, n: i64) -> ProjectiveDirection {
    let mut v = d.unit();
    let mut z = p;
    if n >= 0 {
        for _ in 0..n {
            v = map.d_f(z).apply(v).normalized();
            z = map.apply_f(z);
        }
    } else {
        for _ in 0..(-n) {
            v = map.d_f_inv(z).apply(v).normalized();
            z = map.apply_f_inv(z);
        }
    }
    ProjectiveDirection::from_vec(v)
}

/// Result of a line-field evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DirectionEstimate {
    pub dir: ProjectiveDirection,
    pub converged: bool,
    /// Depth at which the estimate was returned.
    pub depth: usize,
    /// Last angle change between successive depths.
    pub cauchy: f64,
}

/// Depth and tolerance for line-field evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DirectionSettings {
    pub max_depth: usize,
    pub tol: f64,
    /// Extra steps after the Cauchy test passes; each one shrinks the error by about `lambda^-2`.
    pub extra_steps: usize,
}

impl Default for DirectionSettings {
    fn default() -> Self {
        DirectionSettings { max_depth: 400, tol: 1e-9, extra_steps: 3 }
    }
}

const SEED_JITTER: f64 = 1e-3;

/// Accumulates `M_n = J_1 J_2 ... J_n` and tracks the direction of `M_n seed`.
fn converge(seed: Vec2, settings: DirectionSettings, mut next_jacobian: impl FnMut() -> Mat2) -> DirectionEstimate {
    let mut prod = Mat2::IDENTITY;
    let mut prev = ProjectiveDirection::from_vec(seed);
    let mut cauchy = f64::INFINITY;
    let mut extra_left: Option<usize> = None;
    for depth in 1..=settings.max_depth {
        prod = prod * next_jacobian();
        let s = prod.max_abs();
        prod = prod.scale(1.0 / s);
        let dir = ProjectiveDirection::from_vec(prod.apply(seed));
        cauchy = dir.angle_to(prev);
        prev = dir;
        match extra_left {
            Some(0) => return DirectionEstimate { dir, converged: true, depth, cauchy },
            Some(ref mut left) => *left -= 1,
            None if cauchy < settings.tol => {
                if settings.extra_steps == 0 {
                    return DirectionEstimate { dir, converged: true, depth, cauchy };
                }
                extra_left = Some(settings.extra_steps - 1);
            }
            None => {}
        }
    }
    DirectionEstimate { dir: prev, converged: extra_left.is_some(), depth: settings.max_depth, cauchy }
}

/// `E^u(p)`: a seed near `e_u` pushed forward along the backward orbit of `p`.
pub fn unstable_direction(map: &PerturbedMap, p: TorusPoint, settings: DirectionSettings) -> DirectionEstimate {
    let seed = map.lin.e_u() + map.lin.e_s() * SEED_JITTER;
    let mut z = p;
    converge(seed, settings, || {
        z = map.apply_f_inv(z);
        map.d_f(z)
    })
}

/// `E^s(p)`: a seed near `e_s` pulled back along the forward orbit of `p`.
pub fn stable_direction(map: &PerturbedMap, p: TorusPoint, settings: DirectionSettings) -> DirectionEstimate {
    let seed = map.lin.e_s() + map.lin.e_u() * SEED_JITTER;
    let mut z = p;
    converge(seed, settings, || {
        z = map.apply_f(z);
        map.d_f_inv(z)
    })
}

/// `D^u(p) = |Df(p) v^u|` for the unit vector along the given `E^u(p)` estimate.
/// The flag is carried over from the estimate.
pub fn expansion_factor(map: &PerturbedMap, p: TorusPoint, eu: &DirectionEstimate) -> (f64, bool) {
    (map.d_f(p).apply(eu.dir.unit()).norm(), eu.converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::BumpProfile;
    use crate::torus::{build_heteroclinic_frame, ToralAutomorphism};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn default_map(t: f64) -> PerturbedMap {
        let lin = ToralAutomorphism::new([[2, 3], [3, 5]], 5).unwrap();
        let frame =
            build_heteroclinic_frame(&lin, TorusPoint::new(0.0, 0.0, 5), TorusPoint::new(1.0, 3.0, 5), 50.0).unwrap();
        PerturbedMap::new(lin, frame.r_point, BumpProfile::quadratic(0.25).unwrap(), t).unwrap()
    }

    #[test]
    fn angle_tan_examples() {
        let a = ProjectiveDirection::from_vec(Vec2::new(1.0, 0.0));
        let b = ProjectiveDirection::from_vec(Vec2::new(1.0, 1.0));
        let c = ProjectiveDirection::from_vec(Vec2::new(0.0, -2.0));
        assert_eq!(angle_tan(a, a), 0.0);
        assert!((angle_tan(a, b) - 1.0).abs() < 1e-15);
        assert!(angle_tan(a, c) > 1e15);
        let d = ProjectiveDirection::from_vec(Vec2::new(-1.0, -1e-300));
        assert!(d.angle() >= 0.0 && d.angle() < PI);
        assert_eq!(
            ProjectiveDirection::from_vec(Vec2::new(-3.0, 1.0)),
            ProjectiveDirection::from_vec(Vec2::new(3.0, -1.0))
        );
    }

    #[test]
    fn linear_map_keeps_eigendirections() {
        let f = default_map(0.0);
        let eu = ProjectiveDirection::from_vec(f.lin.e_u());
        let es = ProjectiveDirection::from_vec(f.lin.e_s());
        let p = TorusPoint::new(1.234, 0.5, 5);
        for n in [-5i64, 0, 3, 7] {
            // Rounding off a repelling eigendirection grows by lambda^2 per step.
            let tol = 1e-12 + 1e-15 * f.lambda().powi(2 * n.abs() as i32);
            assert!(push_direction(&f, p, eu, n).angle_to(eu) < tol);
            assert!(push_direction(&f, p, es, n).angle_to(es) < tol);
        }
        let est = unstable_direction(&f, p, DirectionSettings::default());
        assert!(est.converged && est.dir.angle_to(eu) < 1e-12);
        let est = stable_direction(&f, p, DirectionSettings::default());
        assert!(est.converged && est.dir.angle_to(es) < 1e-12);
        let (du, ok) = expansion_factor(&f, p, &unstable_direction(&f, p, DirectionSettings::default()));
        assert!(ok && (du - f.lambda()).abs() < 1e-9);
    }

    #[test]
    fn unstable_field_is_invariant() {
        let f = default_map(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DirectionSettings::default();
        for i in 0..2000 {
            let p = if i % 2 == 0 {
                TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5)
            } else {
                let a = rng.gen_range(0.0..6.3f64);
                f.center.translate(Vec2::new(a.cos(), a.sin()) * rng.gen_range(0.0..0.3))
            };
            let a = unstable_direction(&f, p, s);
            let b = unstable_direction(&f, f.apply_f(p), s);
            if a.converged && b.converged {
                let pushed = push_direction(&f, p, a.dir, 1);
                assert!(pushed.angle_to(b.dir) < 1e-8, "E^u not invariant at {p:?}");
            }
            let a = stable_direction(&f, p, s);
            let b = stable_direction(&f, f.apply_f(p), s);
            if a.converged && b.converged {
                let pushed = push_direction(&f, p, a.dir, 1);
                assert!(pushed.angle_to(b.dir) < 1e-8, "E^s not invariant at {p:?}");
            }
        }
    }

    #[test]
    fn expansion_factor_bounds() {
        let f = default_map(1.0);
        let lam = f.lambda();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = DirectionSettings::default();
        let mut max_inside: f64 = 0.0;
        for _ in 0..20_000 {
            let p = TorusPoint::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), 5);
            let (du, ok) = expansion_factor(&f, p, &unstable_direction(&f, p, s));
            if !ok {
                continue;
            }
            assert!(du >= 1.0 / lam - 1e-9 && du <= 2.0 * lam, "D^u = {du} at {p:?}");
            if f.in_ball(f.lin.apply(p)) {
                max_inside = max_inside.max(du);
            } else {
                assert!(du <= lam + 1e-9);
            }
        }
        assert!(max_inside > lam, "rotation never boosted expansion: {max_inside}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn push_is_a_cocycle(x in 0.0..5.0f64, y in 0.0..5.0f64, a in 0.0..3.14f64, m in -6i64..6, n in -6i64..6) {
            let f = default_map(1.0);
            let p = TorusPoint::new(x, y, 5);
            let d = ProjectiveDirection::from_vec(Vec2::new(a.cos(), a.sin()));
            // Opposite-sign legs undo a projective contraction and lose about lambda^(2|m|) in
            // relative accuracy, so the identity is checked on same-sign legs.
            let (m, n) = if m.signum() * n.signum() < 0 { (m, -n) } else { (m, n) };
            let whole = push_direction(&f, p, d, m + n);
            let split = push_direction(&f, f.iterate(p, m), push_direction(&f, p, d, m), n);
            prop_assert!(whole.angle_to(split) < 1e-10);
        }
    }
}
