//! Regions around the orbit of the tangency point.
//!
//! Local coordinates at a center `c` are `(x, y)` with `p - c = x e_u + y e_s`.
//! `U` is the tube of half-width `u_halfwidth` around the segment `[P, R]`; `V` is the tube
//! around `[Q, f^{-1}(R)]` together with `f^{-1}(B)`.

use crate::geom::Vec2;
use crate::perturbation::PerturbedMap;
use crate::torus::{HeteroclinicFrame, TorusPoint};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Region {
    /// Rectangle of the forward chain around `f^n(R)`.
    BarB(usize),
    /// Mirror rectangle around `f^{-n}(R)`, `n >= 1`.
    VBar(usize),
    /// `f^{-n}(p)` is in `B` and the backward path stays in `U`.
    B(usize),
    /// In `U` but not in `B_inf`.
    U,
    V,
    Outside,
}

impl Region {
    pub fn in_bbar_inf(self) -> bool {
        matches!(self, Region::BarB(_) | Region::VBar(_))
    }

    pub fn in_u(self) -> bool {
        matches!(self, Region::BarB(_) | Region::B(_) | Region::U)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::BarB(n) => write!(f, "bbar_{n}"),
            Region::VBar(n) => write!(f, "vbar_{n}"),
            Region::B(n) => write!(f, "b_{n}"),
            Region::U => write!(f, "u"),
            Region::V => write!(f, "v"),
            Region::Outside => write!(f, "outside"),
        }
    }
}

/// A straight segment in the lift: `start + s * dir`, `s in [0, len]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Segment {
    pub start: Vec2,
    pub dir: Vec2,
    pub len: f64,
}

impl Segment {
    /// Quotient distance from `p` to the segment, minimizing over integer translates.
    pub fn distance(&self, p: TorusPoint) -> f64 {
        let k = p.size();
        let w0 = p.as_vec() - self.start;
        let w0 = Vec2::new(w0.x - k * (w0.x / k).round(), w0.y - k * (w0.y / k).round());
        let span = (self.len / k).ceil() as i64 + 1;
        let mut best = f64::INFINITY;
        for nx in -span..=span {
            for ny in -span..=span {
                let w = w0 + Vec2::new(nx as f64, ny as f64) * k;
                let s = w.dot(self.dir).clamp(0.0, self.len);
                best = best.min((w - self.dir * s).norm());
            }
        }
        best
    }

    pub fn point(&self, s: f64, k: u32) -> TorusPoint {
        TorusPoint::from_vec(self.start + self.dir * s, k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionAtlas {
    pub frame: HeteroclinicFrame,
    pub map: PerturbedMap,
    pub r: f64,
    pub rtilde: f64,
    pub u_halfwidth: f64,
    pub v_halfwidth: f64,
    /// Number of rectangles on each side of the chain.
    pub depth: usize,
    /// Backward steps allowed when testing membership in `B_n`.
    pub b_depth: usize,
    pub seg_u: Segment,
    pub seg_v: Segment,
    forward: Vec<TorusPoint>,
    backward: Vec<TorusPoint>,
}

impl RegionAtlas {
    pub fn new(map: &PerturbedMap, frame: &HeteroclinicFrame, rtilde: f64, halfwidth: f64, depth: usize) -> Self {
        let lin = &map.lin;
        let e = &lin.eigen;
        let seg_u = Segment { start: frame.p.as_vec(), dir: e.e_s * frame.s_pr.signum(), len: frame.dist_pr };
        let back = map.orbit_of_center(frame, -1);
        let t1 = frame.t_qr / e.mu_u;
        let seg_v = Segment { start: frame.q.as_vec(), dir: e.e_u * t1.signum(), len: t1.abs() };
        debug_assert!(seg_v.point(seg_v.len, lin.k).distance(back) < 1e-9);
        RegionAtlas {
            frame: *frame,
            map: map.clone(),
            r: map.radius(),
            rtilde,
            u_halfwidth: halfwidth,
            v_halfwidth: halfwidth,
            depth,
            b_depth: 60,
            seg_u,
            seg_v,
            forward: (0..=depth as i64).map(|i| map.orbit_of_center(frame, i)).collect(),
            backward: (0..=depth as i64).map(|i| map.orbit_of_center(frame, -i)).collect(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.map.lambda()
    }

    /// Center of the `i`-th forward rectangle, `f^i(R)`.
    pub fn forward_center(&self, i: usize) -> TorusPoint {
        self.forward[i]
    }

    /// `f^{-i}(R)`.
    pub fn backward_center(&self, i: usize) -> TorusPoint {
        self.backward[i]
    }

    /// `(x, y)` coordinates of `p` around `c`.
    pub fn local(&self, c: TorusPoint, p: TorusPoint) -> (f64, f64) {
        self.map.lin.components(c.displacement_to(p))
    }

    /// Half-sides `(x, y)` of the forward rectangle `i`.
    pub fn bbar_half_sides(&self, i: usize) -> (f64, f64) {
        let l = self.lambda();
        (self.rtilde * l.powi(-(i as i32)), self.rtilde * l.powi(-3 * i as i32))
    }

    /// Half-sides of the mirror rectangle around `f^{-i}(R)`: the image of the square of
    /// half-side `rtilde` under `L^{-1}`, then the forward scaling with the axes swapped.
    pub fn vbar_half_sides(&self, i: usize) -> (f64, f64) {
        let l = self.lambda();
        let j = (i - 1) as i32;
        (self.rtilde / l * l.powi(-3 * j), self.rtilde * l * l.powi(-j))
    }

    pub fn in_u(&self, p: TorusPoint) -> bool {
        self.map.in_ball(p) || self.seg_u.distance(p) <= self.u_halfwidth
    }

    pub fn in_v(&self, p: TorusPoint) -> bool {
        self.map.in_ball(self.map.lin.apply(p)) || self.seg_v.distance(p) <= self.v_halfwidth
    }

    /// Distance to the segment `[P, R]`.
    pub fn distance_to_pr(&self, p: TorusPoint) -> f64 {
        self.seg_u.distance(p)
    }

    fn in_rect(&self, c: TorusPoint, p: TorusPoint, half: (f64, f64)) -> bool {
        if c.distance(p) > half.0 + half.1 {
            return false;
        }
        let (x, y) = self.local(c, p);
        x.abs() <= half.0 && y.abs() <= half.1
    }

    /// Smallest `n` with `f^{-n}(p)` in `B` and `f^{-j}(p)` in `U` for `j <= n`.
    pub fn b_index(&self, p: TorusPoint) -> Option<usize> {
        let mut z = p;
        for n in 0..=self.b_depth {
            if self.map.in_ball(z) {
                return Some(n);
            }
            if !self.in_u(z) {
                return None;
            }
            z = self.map.apply_f_inv(z);
        }
        None
    }

    /// Finest region containing `p`: rectangles first, then `B_n`, `U`, `V`.
    pub fn classify(&self, p: TorusPoint) -> Region {
        for i in 0..=self.depth {
            if self.in_rect(self.forward[i], p, self.bbar_half_sides(i)) {
                return Region::BarB(i);
            }
        }
        for i in 1..=self.depth {
            if self.in_rect(self.backward[i], p, self.vbar_half_sides(i)) {
                return Region::VBar(i);
            }
        }
        if self.in_u(p) {
            return match self.b_index(p) {
                Some(n) => Region::B(n),
                None => Region::U,
            };
        }
        if self.in_v(p) {
            return Region::V;
        }
        Region::Outside
    }
}
