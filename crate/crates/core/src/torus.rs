//! Points on the cover `R^2 / kZ^2`, hyperbolic automorphisms acting on it, and
//! the heteroclinic frame (two fixed points and a point where the stable line of
//! one meets the unstable line of the other).

use crate::geom::{Mat2, Vec2};
use crate::{LabError, Result};
use serde::{Deserialize, Serialize};

/// Canonical representative of `v` in `[0, k)`.
fn wrap_coord(v: f64, k: f64) -> f64 {
    let w = v.rem_euclid(k);
    // rem_euclid rounds tiny negatives up to exactly k.
    if w >= k {
        0.0
    } else {
        w
    }
}

/// Nearest representative of a displacement, in `[-k/2, k/2)`.
fn lift_coord(d: f64, k: f64) -> f64 {
    d - k * (d / k).round()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: f64,
    pub y: f64,
    pub k: u32,
}

impl TorusPoint {
    pub fn new(x: f64, y: f64, k: u32) -> Self {
        let kf = k as f64;
        TorusPoint { x: wrap_coord(x, kf), y: wrap_coord(y, kf), k }
    }

    pub fn from_vec(v: Vec2, k: u32) -> Self {
        Self::new(v.x, v.y, k)
    }

    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn size(self) -> f64 {
        self.k as f64
    }

    /// Shortest lift of `other - self`.
    pub fn displacement_to(self, other: TorusPoint) -> Vec2 {
        let k = self.size();
        Vec2::new(lift_coord(other.x - self.x, k), lift_coord(other.y - self.y, k))
    }

    /// Quotient metric.
    pub fn distance(self, other: TorusPoint) -> f64 {
        self.displacement_to(other).norm()
    }

    pub fn translate(self, v: Vec2) -> TorusPoint {
        TorusPoint::new(self.x + v.x, self.y + v.y, self.k)
    }
}

/// Eigenvalues and unit eigenvectors of a hyperbolic unimodular matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenData {
    /// Unstable eigenvalue modulus, `> 1`.
    pub lambda: f64,
    /// Signed unstable eigenvalue.
    pub mu_u: f64,
    /// Signed stable eigenvalue, `|mu_s| = 1 / lambda`.
    pub mu_s: f64,
    pub e_u: Vec2,
    pub e_s: Vec2,
}

fn check_matrix(m: [[i64; 2]; 2]) -> Result<()> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() != 1 {
        return Err(LabError::NotUnimodular(m, det));
    }
    let tr = m[0][0] + m[1][1];
    if tr.abs() <= 2 {
        return Err(LabError::NotHyperbolic(m, tr.abs()));
    }
    Ok(())
}

fn eigenvector(m: &Mat2, mu: f64) -> Vec2 {
    let a = m.0;
    // Pick the better conditioned of the two row-derived candidates.
    let c1 = Vec2::new(a[0][1], mu - a[0][0]);
    let c2 = Vec2::new(mu - a[1][1], a[1][0]);
    let v = if c1.norm() >= c2.norm() { c1 } else { c2 };
    let v = v.normalized();
    // Orientation: first nonzero coordinate positive.
    if v.x < 0.0 || (v.x == 0.0 && v.y < 0.0) {
        -v
    } else {
        v
    }
}

/// Closed-form eigendata of a hyperbolic unimodular integer matrix.
pub fn eigen_data(m: [[i64; 2]; 2]) -> Result<EigenData> {
    check_matrix(m)?;
    let mf = int_to_mat(m);
    let (big, small) = mf.real_eigenvalues().ok_or_else(|| LabError::NotHyperbolic(m, (m[0][0] + m[1][1]).abs()))?;
    let e_u = eigenvector(&mf, big);
    // For symmetric matrices the quarter turn is exact and keeps the frame exactly orthonormal.
    let mut e_s = if m[0][1] == m[1][0] { e_u.perp() } else { eigenvector(&mf, small) };
    // Right-handed frame (e_u, e_s).
    if e_u.cross(e_s) < 0.0 {
        e_s = -e_s;
    }
    Ok(EigenData { lambda: big.abs(), mu_u: big, mu_s: small, e_u, e_s })
}

fn int_to_mat(m: [[i64; 2]; 2]) -> Mat2 {
    Mat2([[m[0][0] as f64, m[0][1] as f64], [m[1][0] as f64, m[1][1] as f64]])
}

fn int_mul(a: [[i64; 2]; 2], b: [[i64; 2]; 2]) -> [[i64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a.abs(), a.signum(), 0)
    } else {
        let (g, x, y) = ext_gcd(b, a.rem_euclid(b));
        (g, y, x - a.div_euclid(b) * y)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToralAutomorphism {
    pub m: [[i64; 2]; 2],
    pub k: u32,
    pub eigen: EigenData,
    mat: Mat2,
    inv: Mat2,
    /// Rows are the dual covectors of (e_u, e_s).
    dual: Mat2,
}

impl ToralAutomorphism {
    pub fn new(m: [[i64; 2]; 2], k: u32) -> Result<Self> {
        if k == 0 {
            return Err(LabError::InvalidCover(0));
        }
        let eigen = eigen_data(m)?;
        let mat = int_to_mat(m);
        let inv = mat.inverse().expect("unimodular");
        let frame = Mat2::from_cols(eigen.e_u, eigen.e_s);
        let dual =
            if m[0][1] == m[1][0] { frame.transpose() } else { frame.inverse().expect("independent eigenvectors") };
        Ok(ToralAutomorphism { m, k, eigen, mat, inv, dual })
    }

    pub fn lambda(&self) -> f64 {
        self.eigen.lambda
    }

    pub fn e_u(&self) -> Vec2 {
        self.eigen.e_u
    }

    pub fn e_s(&self) -> Vec2 {
        self.eigen.e_s
    }

    pub fn matrix(&self) -> Mat2 {
        self.mat
    }

    pub fn inverse_matrix(&self) -> Mat2 {
        self.inv
    }

    pub fn apply(&self, p: TorusPoint) -> TorusPoint {
        self.apply_split(self.m, self.mat, p)
    }

    pub fn apply_inv(&self, p: TorusPoint) -> TorusPoint {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        self.apply_split([[d * det, -b * det], [-c * det, a * det]], self.inv, p)
    }

    /// `m p` with `p` split at the nearest lattice point: the integer part maps exactly and
    /// the floating-point products stay below `|m|` in magnitude instead of `k |m|`.
    fn apply_split(&self, m: [[i64; 2]; 2], mat: Mat2, p: TorusPoint) -> TorusPoint {
        let (nx, ny) = (p.x.round(), p.y.round());
        let k = self.k as i64;
        let (ix, iy) = (nx as i64, ny as i64);
        let whole = Vec2::new(
            (m[0][0] * ix + m[0][1] * iy).rem_euclid(k) as f64,
            (m[1][0] * ix + m[1][1] * iy).rem_euclid(k) as f64,
        );
        TorusPoint::from_vec(whole + mat.apply(Vec2::new(p.x - nx, p.y - ny)), p.k)
    }

    pub fn apply_vec(&self, v: Vec2) -> Vec2 {
        self.mat.apply(v)
    }

    pub fn apply_vec_inv(&self, v: Vec2) -> Vec2 {
        self.inv.apply(v)
    }

    /// Coordinates of `v` in the eigenbasis: `v = cu * e_u + cs * e_s`.
    pub fn components(&self, v: Vec2) -> (f64, f64) {
        let c = self.dual.apply(v);
        (c.x, c.y)
    }

    pub fn from_components(&self, cu: f64, cs: f64) -> Vec2 {
        self.eigen.e_u * cu + self.eigen.e_s * cs
    }

    /// Forward step in eigen-coordinates; exact up to one rounding per coordinate.
    pub fn step_components(&self, c: (f64, f64)) -> (f64, f64) {
        (c.0 * self.eigen.mu_u, c.1 * self.eigen.mu_s)
    }

    pub fn step_components_inv(&self, c: (f64, f64)) -> (f64, f64) {
        (c.0 / self.eigen.mu_u, c.1 / self.eigen.mu_s)
    }

    /// Integer matrix power `m^p`.
    pub fn int_power(&self, p: u32) -> [[i64; 2]; 2] {
        (0..p).fold([[1, 0], [0, 1]], |acc, _| int_mul(acc, self.m))
    }

    /// `|det(m^p - I)|`, the number of points with `L^p x = x` on any cover.
    pub fn periodic_count(&self, period: u32) -> u128 {
        let a = self.int_power(period);
        let d = (a[0][0] as i128 - 1) * (a[1][1] as i128 - 1) - (a[0][1] as i128) * (a[1][0] as i128);
        d.unsigned_abs()
    }

    pub fn fixed_points(&self) -> Vec<TorusPoint> {
        self.solve_periodic(1)
    }

    /// All solutions of `L^p x = x` on the cover, refusing periods above `cap`.
    pub fn periodic_points_linear(&self, period: u32, cap: u32) -> Result<Vec<TorusPoint>> {
        if period == 0 {
            return Err(LabError::InvalidPeriod);
        }
        if period > cap {
            // Estimate from the eigenvalue: the power would overflow well before the count matters.
            let count = self.lambda().powi(period as i32).round() as u128;
            return Err(LabError::PeriodCapExceeded { period, count, cap });
        }
        Ok(self.solve_periodic(period))
    }

    /// Enumerates `x = k A^{-1} n` over coset representatives `n` of `Z^2 / A Z^2`,
    /// `A = m^p - I`, using the column Hermite form `[[g, 0], [b, D/g]]`.
    fn solve_periodic(&self, period: u32) -> Vec<TorusPoint> {
        let mp = self.int_power(period);
        let a = [[mp[0][0] as i128 - 1, mp[0][1] as i128], [mp[1][0] as i128, mp[1][1] as i128 - 1]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let dabs = det.abs();
        let (g, _, _) = ext_gcd(a[0][0], a[0][1]);
        let rows = g;
        let cols = dabs / g;
        let adj = [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]];
        let k = self.k as f64;
        let mut pts = Vec::with_capacity(dabs as usize);
        for i in 0..rows {
            for j in 0..cols {
                let vx = (adj[0][0] * i + adj[0][1] * j) * det.signum();
                let vy = (adj[1][0] * i + adj[1][1] * j) * det.signum();
                let fx = vx.rem_euclid(dabs) as f64 / dabs as f64;
                let fy = vy.rem_euclid(dabs) as f64 / dabs as f64;
                pts.push(TorusPoint::new(k * fx, k * fy, self.k));
            }
        }
        pts
    }
}

/// Two fixed points and a heteroclinic point on the stable line of `p` and the unstable line of `q`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HeteroclinicFrame {
    pub p: TorusPoint,
    pub q: TorusPoint,
    pub r_point: TorusPoint,
    /// Signed leaf coordinate: `R = P + s_pr * e_s` in the lift.
    pub s_pr: f64,
    /// Signed leaf coordinate: `R = Q + t_qr * e_u` in the lift.
    pub t_qr: f64,
    pub dist_pr: f64,
    pub dist_qr: f64,
}

impl HeteroclinicFrame {
    pub fn mismatch(&self) -> f64 {
        (self.dist_pr - self.dist_qr).abs() / self.dist_pr
    }
}

/// Mismatch threshold under which the two leaf distances count as equal.
pub const FRAME_MISMATCH_TOL: f64 = 0.05;

/// Finds `R` with `P + s e_s = Q + t e_u + k n` for integer `n`, `|s|, |t| <= search_radius`.
///
/// Among intersections with relative mismatch below [`FRAME_MISMATCH_TOL`] the one with
/// the shortest leaf segments wins; if none qualifies, the smallest mismatch wins.
pub fn build_heteroclinic_frame(
    lin: &ToralAutomorphism,
    p: TorusPoint,
    q: TorusPoint,
    search_radius: f64,
) -> Result<HeteroclinicFrame> {
    if p.distance(q) < 1e-9 {
        return Err(LabError::CoincidentFixedPoints);
    }
    let k = lin.k as f64;
    let (e_u, e_s) = (lin.e_u(), lin.e_s());
    // s e_s - t e_u = (q - p) + k n
    let solve = Mat2::from_cols(e_s, -e_u).inverse().expect("independent eigenvectors");
    let base = q.as_vec() - p.as_vec();
    let span = (search_radius / k).ceil() as i64 + 1;
    let mut candidates = Vec::new();
    for nx in -span..=span {
        for ny in -span..=span {
            let rhs = base + Vec2::new(nx as f64, ny as f64) * k;
            let st = solve.apply(rhs);
            let (s, t) = (st.x, st.y);
            if s.abs() > search_radius || t.abs() > search_radius || s.abs() < 1e-9 || t.abs() < 1e-9 {
                continue;
            }
            candidates.push((s, t));
        }
    }
    let mismatch = |c: &(f64, f64)| (c.0.abs() - c.1.abs()).abs() / c.0.abs();
    let length = |c: &(f64, f64)| c.0.abs().max(c.1.abs());
    let good = candidates
        .iter()
        .filter(|c| mismatch(c) < FRAME_MISMATCH_TOL)
        .min_by(|a, b| length(a).total_cmp(&length(b)).then(mismatch(a).total_cmp(&mismatch(b))));
    let best = good
        .or_else(|| {
            candidates.iter().min_by(|a, b| mismatch(a).total_cmp(&mismatch(b)).then(a.0.abs().total_cmp(&b.0.abs())))
        })
        .ok_or(LabError::NoHeteroclinic(search_radius))?;
    let (s, t) = *best;
    let r_point = TorusPoint::from_vec(p.as_vec() + e_s * s, lin.k);
    Ok(HeteroclinicFrame { p, q, r_point, s_pr: s, t_qr: t, dist_pr: s.abs(), dist_qr: t.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];
    const CAT2: [[i64; 2]; 2] = [[2, 3], [3, 5]];

    #[test]
    fn cat_map_eigendata() {
        let e = eigen_data(CAT).unwrap();
        assert!((e.lambda - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert!((e.e_u.y / e.e_u.x - golden).abs() < 1e-14);
        let m = int_to_mat(CAT);
        assert!((m.apply(e.e_u) - e.e_u * e.mu_u).norm() < 1e-12);
        assert!((m.apply(e.e_s) - e.e_s * e.mu_s).norm() < 1e-12);
        assert!((e.mu_s.abs() * e.lambda - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_parabolic_and_non_unimodular() {
        assert!(matches!(eigen_data([[1, 1], [0, 1]]), Err(LabError::NotHyperbolic(..))));
        assert!(matches!(eigen_data([[2, 0], [0, 1]]), Err(LabError::NotUnimodular(..))));
    }

    #[test]
    fn eigendata_ignores_cover() {
        let a = ToralAutomorphism::new(CAT, 1).unwrap();
        let b = ToralAutomorphism::new(CAT, 7).unwrap();
        assert_eq!(a.eigen, b.eigen);
    }

    #[test]
    fn wrap_never_returns_k() {
        let p = TorusPoint::new(-1e-18, -0.0, 5);
        assert!(p.x < 5.0 && p.x >= 0.0);
        assert!(p.y < 5.0 && p.y >= 0.0);
    }

    #[test]
    fn cat_map_periodic_counts_on_unit_cover() {
        let l = ToralAutomorphism::new(CAT, 1).unwrap();
        assert_eq!(l.fixed_points().len(), 1);
        assert_eq!(l.periodic_points_linear(2, 10).unwrap().len(), 5);
        assert!(matches!(l.periodic_points_linear(11, 10), Err(LabError::PeriodCapExceeded { .. })));
    }

    #[test]
    fn periodic_counts_match_determinant_formula() {
        for m in [CAT, CAT2, [[3, 1], [2, 1]], [[1, 2], [1, 3]]] {
            for k in 1..=5u32 {
                let l = ToralAutomorphism::new(m, k).unwrap();
                for p in 1..=6u32 {
                    let pts = l.periodic_points_linear(p, 10).unwrap();
                    assert_eq!(pts.len() as u128, l.periodic_count(p), "m={m:?} k={k} p={p}");
                    if pts.len() <= 2000 {
                        let mut xs: Vec<(i64, i64)> =
                            pts.iter().map(|q| ((q.x * 1e9).round() as i64, (q.y * 1e9).round() as i64)).collect();
                        xs.sort();
                        xs.dedup();
                        assert_eq!(xs.len(), pts.len(), "duplicates for m={m:?} k={k} p={p}");
                    }
                    for q in pts.iter().step_by(1 + pts.len() / 200) {
                        let mut z = *q;
                        for _ in 0..p {
                            z = l.apply(z);
                        }
                        // Absolute error grows with the matrix power and the cover size.
                        let tol = 1e-12 * (k as f64) * l.lambda().powi(p as i32);
                        assert!(z.distance(*q) < tol.max(1e-12), "m={m:?} k={k} p={p}");
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_points_are_exact() {
        let l = ToralAutomorphism::new(CAT2, 5).unwrap();
        let fps = l.fixed_points();
        assert_eq!(fps.len(), 5);
        for p in fps {
            assert!(l.apply(p).distance(p) < 1e-12);
        }
    }

    #[test]
    fn frame_requires_distinct_points() {
        let l = ToralAutomorphism::new(CAT, 1).unwrap();
        let p = TorusPoint::new(0.0, 0.0, 1);
        assert!(matches!(build_heteroclinic_frame(&l, p, p, 10.0), Err(LabError::CoincidentFixedPoints)));
    }

    #[test]
    fn default_frame_geometry() {
        let l = ToralAutomorphism::new(CAT2, 5).unwrap();
        let p = TorusPoint::new(0.0, 0.0, 5);
        let q = TorusPoint::new(1.0, 3.0, 5);
        let f = build_heteroclinic_frame(&l, p, q, 50.0).unwrap();
        assert!(f.mismatch() < FRAME_MISMATCH_TOL);
        let on_stable = TorusPoint::from_vec(p.as_vec() + l.e_s() * f.s_pr, 5);
        let on_unstable = TorusPoint::from_vec(q.as_vec() + l.e_u() * f.t_qr, 5);
        assert!(on_stable.distance(f.r_point) < 1e-10);
        assert!(on_unstable.distance(f.r_point) < 1e-10);
        assert!((f.dist_pr - 6.604395050930093).abs() < 1e-9);
        assert!((f.dist_qr - 6.432881625776282).abs() < 1e-9);
    }

    #[test]
    fn cat_map_frame_on_five_cover() {
        // The cat map has a single fixed point on every cover; line membership does not need q fixed.
        let l = ToralAutomorphism::new(CAT, 5).unwrap();
        assert_eq!(l.fixed_points().len(), 1);
        let p = TorusPoint::new(0.0, 0.0, 5);
        let q = TorusPoint::new(1.0, 2.0, 5);
        let f = build_heteroclinic_frame(&l, p, q, 50.0).unwrap();
        let a = TorusPoint::from_vec(p.as_vec() + l.e_s() * f.s_pr, 5);
        let b = TorusPoint::from_vec(q.as_vec() + l.e_u() * f.t_qr, 5);
        assert!(a.distance(b) < 1e-10);
    }

    fn arb_point() -> impl Strategy<Value = TorusPoint> {
        (0.0..5.0f64, 0.0..5.0f64).prop_map(|(x, y)| TorusPoint::new(x, y, 5))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn quotient_metric_axioms(a in arb_point(), b in arb_point(), c in arb_point()) {
            prop_assert!((a.distance(b) - b.distance(a)).abs() < 1e-12);
            prop_assert!(a.distance(c) <= a.distance(b) + b.distance(c) + 1e-12);
            prop_assert!(a.distance(b) <= 5.0 / 2f64.sqrt() + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn canonical_after_operations(x in -100.0..100.0f64, y in -100.0..100.0f64, dx in -7.0..7.0f64) {
            let l = ToralAutomorphism::new(CAT2, 5).unwrap();
            let p = TorusPoint::new(x, y, 5).translate(Vec2::new(dx, -dx));
            for z in [p, l.apply(p), l.apply_inv(p)] {
                prop_assert!(z.x >= 0.0 && z.x < 5.0 && z.y >= 0.0 && z.y < 5.0);
            }
            prop_assert!(l.apply_inv(l.apply(p)).distance(p) < 1e-12);
        }

        #[test]
        fn eigenline_scaling(s in -0.3..0.3f64) {
            let l = ToralAutomorphism::new(CAT2, 5).unwrap();
            let lam = l.lambda();
            for fp in l.fixed_points() {
                let a = fp.translate(l.e_u() * s);
                let b = fp.translate(l.e_s() * s);
                prop_assert!((l.apply(a).distance(fp) - lam * s.abs()).abs() < 1e-10);
                prop_assert!((l.apply(b).distance(fp) - s.abs() / lam).abs() < 1e-10);
            }
        }
    }
}
