//! Least-squares line fits in log-log coordinates.

use crate::{LabError, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope (normal approximation).
    pub slope_ci95: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(&x, &y)| (x, y)).collect();
    let n = pts.len();
    if n < 2 {
        return Err(LabError::InsufficientScales { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Numeric("degenerate abscissae in fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_ci95 = if n > 2 { 1.96 * (sse / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LineFit { slope, intercept, slope_ci95, r_squared, n })
}

/// Fit `log y = slope * log x + c`; non-positive entries are dropped.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).unzip();
    linear_fit(&lx, &ly)
}

/// `count` points geometrically spaced from `hi` down to `lo`, both included.
pub fn geometric_ladder(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    (0..count).map(|i| hi * ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let xs = geometric_ladder(1.0, 1e-4, 9);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.37)).collect();
        let f = loglog_fit(&xs, &ys).unwrap();
        assert!((f.slope - 0.37).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ladder_endpoints() {
        let l = geometric_ladder(0.5, 0.5 / 1024.0, 11);
        assert!((l[10] - 0.5 / 1024.0).abs() < 1e-15);
        assert!((l[1] - 0.25).abs() < 1e-15);
    }
}
