//! The rotation bump around `R` and the perturbed map `f_t = theta_t o L`.
//!
//! `theta_t` rotates each circle of radius `rho < r` about `R` by `t * gamma(rho)` and is
//! the identity elsewhere. Every derivative below is closed form.

use crate::geom::Mat2;
use crate::torus::{HeteroclinicFrame, ToralAutomorphism, TorusPoint};
use crate::{LabError, Result};
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;

/// Angle profile `gamma` on `[0, r]`; zero beyond `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpProfile {
    /// `pi/2 (1 - rho/r)^2`: Lipschitz derivative, `gamma'(0) = -pi/r`, quadratic tangency.
    Quadratic { r: f64 },
    /// `pi/2 - pi/2 (rho/r)^alpha` on `[0, r/2]`, cubic Hermite blend to zero on `[r/2, r]`.
    Power { r: f64, alpha: f64 },
}

impl BumpProfile {
    pub fn quadratic(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(LabError::InvalidProfile(format!("radius must be positive, got {r}")));
        }
        Ok(BumpProfile::Quadratic { r })
    }

    /// `alpha` in `(0, 2]`; `alpha = 2` is the smooth profile with `gamma'(0) = 0`.
    pub fn power(r: f64, alpha: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(LabError::InvalidProfile(format!("radius must be positive, got {r}")));
        }
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(LabError::InvalidProfile(format!("alpha must lie in (0, 2], got {alpha}")));
        }
        Ok(BumpProfile::Power { r, alpha })
    }

    pub fn smooth(r: f64) -> Result<Self> {
        Self::power(r, 2.0)
    }

    pub fn radius(&self) -> f64 {
        match *self {
            BumpProfile::Quadratic { r } | BumpProfile::Power { r, .. } => r,
        }
    }

    /// Exponent of the angle deviation `pi/2 - gamma(rho) ~ rho^exponent` near zero.
    pub fn tangency_exponent(&self) -> f64 {
        match *self {
            BumpProfile::Quadratic { .. } => 1.0,
            BumpProfile::Power { alpha, .. } => alpha,
        }
    }

    /// `(gamma, gamma')` at `rho`.
    pub fn gamma_eval(&self, rho: f64) -> Result<(f64, f64)> {
        if rho < 0.0 || rho.is_nan() {
            return Err(LabError::NegativeRadius(rho));
        }
        Ok(self.eval(rho))
    }

    pub(crate) fn eval(&self, rho: f64) -> (f64, f64) {
        let r = self.radius();
        if rho >= r {
            return (0.0, 0.0);
        }
        match *self {
            BumpProfile::Quadratic { r } => {
                let s = 1.0 - rho / r;
                (FRAC_PI_2 * s * s, -FRAC_PI_2 * 2.0 * s / r)
            }
            BumpProfile::Power { r, alpha } => {
                let half = 0.5 * r;
                if rho <= half {
                    let u = rho / r;
                    let g = FRAC_PI_2 * (1.0 - u.powf(alpha));
                    let dg = if rho == 0.0 {
                        match alpha {
                            a if a > 1.0 => 0.0,
                            a if a == 1.0 => -FRAC_PI_2 / r,
                            _ => f64::NEG_INFINITY,
                        }
                    } else {
                        -FRAC_PI_2 * alpha * u.powf(alpha - 1.0) / r
                    };
                    (g, dg)
                } else {
                    // Hermite data at the left end: value y0, slope m0 (in the unit parameter).
                    let y0 = FRAC_PI_2 * (1.0 - 0.5f64.powf(alpha));
                    let m0 = -FRAC_PI_2 * alpha * 0.5f64.powf(alpha - 1.0) / r * half;
                    let s = (rho - half) / half;
                    let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
                    let h10 = s * s * s - 2.0 * s * s + s;
                    let d00 = 6.0 * s * s - 6.0 * s;
                    let d10 = 3.0 * s * s - 4.0 * s + 1.0;
                    (h00 * y0 + h10 * m0, (d00 * y0 + d10 * m0) / half)
                }
            }
        }
    }
}

/// Rotation matrix with exact entries at a quarter turn, so that `e_s` maps exactly onto `e_u`.
fn rotation_snapped(angle: f64) -> Mat2 {
    if angle == FRAC_PI_2 {
        Mat2([[0.0, -1.0], [1.0, 0.0]])
    } else if angle == -FRAC_PI_2 {
        Mat2([[0.0, 1.0], [-1.0, 0.0]])
    } else {
        Mat2::rotation(angle)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbedMap {
    pub lin: ToralAutomorphism,
    pub center: TorusPoint,
    pub profile: BumpProfile,
    pub t: f64,
}

impl PerturbedMap {
    pub fn new(lin: ToralAutomorphism, center: TorusPoint, profile: BumpProfile, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(LabError::InvalidParameter(format!("t must lie in [0, 1], got {t}")));
        }
        if center.k != lin.k {
            return Err(LabError::InvalidParameter("center lives on a different cover".into()));
        }
        if 2.0 * profile.radius() >= lin.k as f64 {
            return Err(LabError::InvalidProfile("bump radius must be below k/2".into()));
        }
        Ok(PerturbedMap { lin, center, profile, t })
    }

    pub fn with_t(&self, t: f64) -> Result<Self> {
        Self::new(self.lin.clone(), self.center, self.profile, t)
    }

    pub fn radius(&self) -> f64 {
        self.profile.radius()
    }

    pub fn lambda(&self) -> f64 {
        self.lin.lambda()
    }

    pub fn k(&self) -> u32 {
        self.lin.k
    }

    /// Whether `p` lies in the open ball `B(R, r)`.
    pub fn in_ball(&self, p: TorusPoint) -> bool {
        self.center.distance(p) < self.radius()
    }

    fn rotate(&self, p: TorusPoint, sign: f64) -> TorusPoint {
        let d = self.center.displacement_to(p);
        let rho = d.norm();
        if rho >= self.radius() || rho == 0.0 || self.t == 0.0 {
            return p;
        }
        let (g, _) = self.profile.eval(rho);
        self.center.translate(d.rotated(sign * self.t * g))
    }

    pub fn theta(&self, p: TorusPoint) -> TorusPoint {
        self.rotate(p, 1.0)
    }

    pub fn theta_inv(&self, p: TorusPoint) -> TorusPoint {
        self.rotate(p, -1.0)
    }

    fn d_rotate(&self, p: TorusPoint, sign: f64) -> Mat2 {
        let d = self.center.displacement_to(p);
        let rho = d.norm();
        if rho >= self.radius() {
            return Mat2::IDENTITY;
        }
        let (g, dg) = self.profile.eval(rho);
        let rot = rotation_snapped(sign * self.t * g);
        if rho == 0.0 {
            return rot;
        }
        // Rot(phi) (I + t gamma'(rho)/rho * perp(d) d^T)
        let c = sign * self.t * dg / rho;
        let jd = d.perp();
        let shear = Mat2([[1.0 + c * jd.x * d.x, c * jd.x * d.y], [c * jd.y * d.x, 1.0 + c * jd.y * d.y]]);
        rot * shear
    }

    pub fn d_theta(&self, p: TorusPoint) -> Mat2 {
        self.d_rotate(p, 1.0)
    }

    /// Jacobian of `theta^{-1}` at `p`.
    pub fn d_theta_inv(&self, p: TorusPoint) -> Mat2 {
        self.d_rotate(p, -1.0)
    }

    /// `D theta` in the circle frames: rows are the images of the outward normal `v` and the
    /// clockwise tangent `u` at `p`, in the frame `(v, u)` at `theta(p)`. Equals `[[1, a], [0, 1]]`.
    pub fn shear_frame(&self, p: TorusPoint) -> Option<Mat2> {
        let d = self.center.displacement_to(p);
        let rho = d.norm();
        if rho == 0.0 || rho >= self.radius() {
            return None;
        }
        let v = d * (1.0 / rho);
        let u = -v.perp();
        let (g, _) = self.profile.eval(rho);
        let rot = Mat2::rotation(self.t * g);
        let (v2, u2) = (rot.apply(v), rot.apply(u));
        let dt = self.d_theta(p);
        let (iv, iu) = (dt.apply(v), dt.apply(u));
        Some(Mat2([[iv.dot(v2), iv.dot(u2)], [iu.dot(v2), iu.dot(u2)]]))
    }

    /// Closed-form shear entry `-t rho gamma'(rho)`.
    pub fn shear_alpha(&self, rho: f64) -> f64 {
        let (_, dg) = self.profile.eval(rho);
        -self.t * rho * dg
    }

    pub fn apply_f(&self, p: TorusPoint) -> TorusPoint {
        let q = self.lin.apply(p);
        if self.center.distance(q) >= self.radius() {
            return q;
        }
        self.theta(q)
    }

    pub fn apply_f_inv(&self, p: TorusPoint) -> TorusPoint {
        self.lin.apply_inv(self.theta_inv(p))
    }

    pub fn d_f(&self, p: TorusPoint) -> Mat2 {
        self.d_theta(self.lin.apply(p)) * self.lin.matrix()
    }

    /// Jacobian of `f^{-1}` at `p`.
    pub fn d_f_inv(&self, p: TorusPoint) -> Mat2 {
        self.lin.inverse_matrix() * self.d_theta_inv(p)
    }

    /// `Df(p) v` with `v` and the result in eigen-coordinates. Steps where `f = L` never mix
    /// the coordinates, so a vector on an eigenline stays on it through long products.
    pub fn push_components(&self, p: TorusPoint, c: (f64, f64)) -> (f64, f64) {
        let c = self.lin.step_components(c);
        let q = self.lin.apply(p);
        if self.t == 0.0 || self.center.distance(q) >= self.radius() {
            return c;
        }
        let v = self.d_theta(q).apply(self.lin.from_components(c.0, c.1));
        self.lin.components(v)
    }

    /// `Df^{-1}(p) v` in eigen-coordinates.
    pub fn pull_components(&self, p: TorusPoint, c: (f64, f64)) -> (f64, f64) {
        let c = if self.t != 0.0 && self.in_ball(p) {
            self.lin.components(self.d_theta_inv(p).apply(self.lin.from_components(c.0, c.1)))
        } else {
            c
        };
        self.lin.step_components_inv(c)
    }

    /// `f^n(p)` for integer `n` of either sign.
    pub fn iterate(&self, p: TorusPoint, n: i64) -> TorusPoint {
        let mut z = p;
        if n >= 0 {
            for _ in 0..n {
                z = self.apply_f(z);
            }
        } else {
            for _ in 0..(-n) {
                z = self.apply_f_inv(z);
            }
        }
        z
    }

    /// Point `f^n(R)` from the closed form along the leaves of the frame:
    /// forward iterates stay on the stable line of `P`, backward ones on the unstable line of `Q`.
    /// Iterating numerically would lose the orbit after a few dozen steps.
    pub fn orbit_of_center(&self, frame: &HeteroclinicFrame, n: i64) -> TorusPoint {
        let e = &self.lin.eigen;
        match n {
            0 => self.center,
            n if n > 0 => frame.p.translate(e.e_s * (frame.s_pr * e.mu_s.powi(n as i32))),
            n => frame.q.translate(e.e_u * (frame.t_qr * e.mu_u.powi(n as i32))),
        }
    }

    /// Norms `|Df^n v|` for `n` in `[-n_max, n_max]`, `v = e_s` at `R`, along the exact orbit of `R`.
    pub fn vertical_vector_decay(&self, frame: &HeteroclinicFrame, n_max: usize) -> DecayReport {
        let norm = |c: (f64, f64)| self.lin.from_components(c.0, c.1).norm();
        let mut forward = Vec::with_capacity(n_max + 1);
        let mut c = (0.0, 1.0);
        forward.push(1.0);
        for n in 0..n_max as i64 {
            c = self.push_components(self.orbit_of_center(frame, n), c);
            forward.push(norm(c));
        }
        let mut backward = Vec::with_capacity(n_max);
        let mut c = (0.0, 1.0);
        for n in 0..n_max as i64 {
            c = self.pull_components(self.orbit_of_center(frame, -n), c);
            backward.push(norm(c));
        }
        let mut norms: Vec<(i64, f64)> =
            backward.iter().enumerate().rev().map(|(i, &x)| (-(i as i64) - 1, x)).collect();
        norms.extend(forward.iter().enumerate().map(|(i, &x)| (i as i64, x)));
        let warning = (self.t < 1.0)
            .then(|| format!("t = {} < 1: the vertical vector is not expected to decay in both directions", self.t));
        DecayReport { norms, warning }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    /// `(n, |Df^n v|)` sorted by `n`.
    pub norms: Vec<(i64, f64)>,
    pub warning: Option<String>,
}

impl DecayReport {
    pub fn norm_at(&self, n: i64) -> Option<f64> {
        self.norms.iter().find(|(i, _)| *i == n).map(|(_, x)| *x)
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().map(|(_, x)| *x).fold(0.0, f64::max)
    }
}

/// Worst-case errors of the closed-form derivatives over sampled points of the ball.
#[derive(Debug, Clone, Serialize)]
pub struct MapCheck {
    pub t: f64,
    pub samples: usize,
    /// `max |D theta - FD| / max|D theta|`, central differences with step `1e-6`.
    pub fd_rel_error: f64,
    pub det_defect: f64,
    /// Largest entry error of the circle-frame matrix against `[[1, alpha], [0, 1]]`.
    pub shear_error: f64,
    /// `max distance(f^{-1}(f(x)), x)` over the samples and their preimages.
    pub round_trip: f64,
    /// `max distance(f(x), L(x))`, zero exactly when `t = 0`.
    pub linear_defect: f64,
}

impl MapCheck {
    pub fn passes(&self, fd_tol: f64, det_tol: f64, shear_tol: f64) -> bool {
        self.fd_rel_error < fd_tol && self.det_defect < det_tol && self.shear_error < shear_tol
    }
}

/// Samples `samples` points of `B(R, r)`: a third near the centre, a third near the rim and
/// a third uniform in area.
pub fn map_check(map: &PerturbedMap, samples: usize, seed: u64) -> MapCheck {
    use rand::{Rng, SeedableRng};
    let r = map.radius();
    let h = 1e-6;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(f64, TorusPoint)> = (0..samples)
        .map(|i| {
            let rho = match i % 3 {
                0 => r * rng.gen_range(1e-3..0.02),
                1 => r * rng.gen_range(0.98..0.999),
                _ => r * rng.gen::<f64>().sqrt(),
            };
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            (rho, map.center.translate(crate::geom::Vec2::new(rho * ang.cos(), rho * ang.sin())))
        })
        .collect();
    let mut out = MapCheck {
        t: map.t,
        samples,
        fd_rel_error: 0.0,
        det_defect: 0.0,
        shear_error: 0.0,
        round_trip: 0.0,
        linear_defect: 0.0,
    };
    for &(rho, p) in &points {
        let a = map.d_theta(p);
        let col = |e: crate::geom::Vec2| {
            let fwd = map.theta(p.translate(e * h));
            let back = map.theta(p.translate(e * -h));
            back.displacement_to(fwd) * (0.5 / h)
        };
        let fd = Mat2::from_cols(col(crate::geom::Vec2::new(1.0, 0.0)), col(crate::geom::Vec2::new(0.0, 1.0)));
        out.fd_rel_error = out.fd_rel_error.max((a - fd).max_abs() / a.max_abs());
        out.det_defect = out.det_defect.max((a.det() - 1.0).abs());
        if let Some(s) = map.shear_frame(p) {
            let want = Mat2([[1.0, map.shear_alpha(rho)], [0.0, 1.0]]);
            out.shear_error = out.shear_error.max((s - want).max_abs());
        }
        let pre = map.lin.apply_inv(p);
        for x in [p, pre] {
            out.round_trip = out.round_trip.max(map.apply_f_inv(map.apply_f(x)).distance(x));
            out.linear_defect = out.linear_defect.max(map.apply_f(x).distance(map.lin.apply(x)));
        }
    }
    out
}
