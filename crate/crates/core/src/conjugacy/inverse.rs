//! `h^{-1}` by damped fixed-point iteration seeded from the grid.

use super::grid::ConjugacyGrid;
use crate::geom::{Mat2, Vec2};
use crate::torus::TorusPoint;
use crate::{LabError, Result};

#[derive(Debug, Clone, Copy)]
pub struct InverseSettings {
    pub damping: f64,
    pub max_iter: usize,
    /// The solver aims this far below the requested tolerance, so that `x` itself, and not
    /// only `h(x)`, lands within tolerance where `h` is close to an isometry.
    pub margin: f64,
    /// Iterations without a new best residual before the patch search takes over.
    pub patience: usize,
    /// Cap on patch-search rounds; each round costs `(2 * PATCH + 1)^2` evaluations.
    pub max_rounds: usize,
}

impl Default for InverseSettings {
    fn default() -> Self {
        InverseSettings { damping: 0.5, max_iter: 200, margin: 0.01, patience: 8, max_rounds: 600 }
    }
}

const PATCH: i32 = 2;

/// `x` with `distance(h(x), y) < tol`. The damped iteration `x <- (1 - beta) x + beta (y - u(x))`
/// runs until it reaches `tol * margin` or stops improving, and Newton polishing follows. If
/// that fails, a local patch search takes over: the best node of a `(2 PATCH + 1)^2` patch
/// becomes the new centre, and the spacing halves whenever the centre is already best.
pub fn conjugacy_inverse_eval(grid: &ConjugacyGrid, y: TorusPoint, tol: f64) -> Result<TorusPoint> {
    solve(grid, y, tol, InverseSettings::default())
}

pub(crate) fn solve(grid: &ConjugacyGrid, y: TorusPoint, tol: f64, s: InverseSettings) -> Result<TorusPoint> {
    let target = tol * s.margin;
    let miss = |x: TorusPoint| y.displacement_to(grid.eval(x)).norm();
    let mut x = y.translate(-grid.interpolate(y));
    let mut d = y.displacement_to(grid.eval(x));
    let (mut best, mut best_res) = (x, d.norm());
    let mut since_best = 0;
    for _ in 0..s.max_iter {
        if best_res < target || since_best >= s.patience {
            break;
        }
        x = x.translate(-(d * s.damping));
        d = y.displacement_to(grid.eval(x));
        if d.norm() < best_res {
            best = x;
            best_res = d.norm();
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    if best_res == 0.0 {
        return Ok(best);
    }

    let polished = refine(grid, y, best, target, s.max_iter);
    if polished.residual < best_res || polished.step_ok {
        best = polished.x;
        best_res = polished.residual;
        if polished.step_ok && best_res < target {
            return Ok(best);
        }
    }

    let mut step = grid.spacing();
    let floor = f64::EPSILON * grid.meta.k as f64;
    let mut rounds = 0;
    while best_res >= target && step > floor && rounds < s.max_rounds {
        rounds += 1;
        let centre = best;
        for i in -PATCH..=PATCH {
            for j in -PATCH..=PATCH {
                if i == 0 && j == 0 {
                    continue;
                }
                let c = centre.translate(Vec2::new(i as f64, j as f64) * step);
                let r = miss(c);
                if r < best_res {
                    best = c;
                    best_res = r;
                }
            }
        }
        if best == centre {
            step *= 0.5;
        }
    }
    if best_res < tol {
        Ok(best)
    } else {
        Err(LabError::InversionFailed { x: best.x, y: best.y, residual: best_res })
    }
}

struct Refined {
    x: TorusPoint,
    residual: f64,
    /// The last Newton correction in `x` was below the target.
    step_ok: bool,
}

/// Newton on the truncated series, which is smooth even where the limit is only Hoelder.
/// `Dh` comes from central differences. Near the tangency orbit the smallest singular value of
/// `Dh` is of order the distance to `R`, so a small residual alone does not pin `x`; the loop
/// stops on the size of the correction. Steps that raise the residual fall back to
/// Levenberg-Marquardt with damping relative to `|Dh^T Dh|`.
fn refine(grid: &ConjugacyGrid, y: TorusPoint, x0: TorusPoint, target: f64, max_iter: usize) -> Refined {
    let miss = |x: TorusPoint| y.displacement_to(grid.eval(x));
    let (mut x, mut d) = (x0, miss(x0));
    for _ in 0..max_iter {
        let delta = (d.norm().sqrt() * 1e-4).clamp(1e-9, 1e-6);
        let col = |e: Vec2| (miss(x.translate(e * delta)) - miss(x.translate(-(e * delta)))) * (0.5 / delta);
        let jac = Mat2::from_cols(col(Vec2::new(1.0, 0.0)), col(Vec2::new(0.0, 1.0)));
        let newton = jac.inverse().map(|inv| inv.apply(d));
        if let Some(dx) = newton {
            if dx.norm() < target && d.norm() < target {
                return Refined { x, residual: d.norm(), step_ok: true };
            }
            let cand = x.translate(-dx);
            let dc = miss(cand);
            if dc.norm() < d.norm() {
                x = cand;
                d = dc;
                continue;
            }
        }
        let jt = jac.transpose();
        let normal = jt * jac;
        let g = jt.apply(d);
        let mut mu = 1e-8 * normal.max_abs();
        let mut moved = false;
        while mu <= normal.max_abs() * 1e8 {
            if let Some(inv) = (normal + Mat2::IDENTITY.scale(mu)).inverse() {
                let cand = x.translate(-inv.apply(g));
                let dc = miss(cand);
                if dc.norm() < d.norm() {
                    x = cand;
                    d = dc;
                    moved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !moved {
            break;
        }
    }
    Refined { x, residual: d.norm(), step_ok: false }
}
