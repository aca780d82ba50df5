//! Lattice cache of `u` and its `ANOCONJ1` file format.
//!
//! Layout: magic `ANOCONJ1`; `u32` line count; each metadata line as `u32` byte length plus
//! UTF-8 `key=value`; the `u_x` plane then the `u_y` plane, row-major with `y` as the row
//! index, as `f64`; a `u64` sum of all preceding bytes. Integers are little-endian.

use super::DisplacementField;
use crate::geom::Vec2;
use crate::perturbation::{BumpProfile, PerturbedMap};
use crate::torus::{ToralAutomorphism, TorusPoint};
use crate::{LabError, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ANOCONJ1";
/// Minimum lattice nodes per unit length.
pub const MIN_NODES_PER_UNIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMeta {
    pub matrix: [[i64; 2]; 2],
    pub k: u32,
    pub r: f64,
    pub t: f64,
    /// `quadratic` or `power`.
    pub profile: String,
    pub alpha: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Nodes per side over the whole cover.
    pub resolution: usize,
    pub tol: f64,
    pub truncation: usize,
}

impl GridMeta {
    fn describe(field: &DisplacementField, resolution: usize) -> Self {
        let map = &field.map;
        let (profile, alpha) = match map.profile {
            BumpProfile::Quadratic { .. } => ("quadratic", 1.0),
            BumpProfile::Power { alpha, .. } => ("power", alpha),
        };
        GridMeta {
            matrix: map.lin.m,
            k: map.lin.k,
            r: map.radius(),
            t: map.t,
            profile: profile.to_string(),
            alpha,
            center_x: map.center.x,
            center_y: map.center.y,
            resolution,
            tol: field.tol,
            truncation: field.depth,
        }
    }

    fn lines(&self) -> Vec<String> {
        let m = self.matrix;
        vec![
            format!("m00={}", m[0][0]),
            format!("m01={}", m[0][1]),
            format!("m10={}", m[1][0]),
            format!("m11={}", m[1][1]),
            format!("k={}", self.k),
            format!("r={}", self.r),
            format!("t={}", self.t),
            format!("profile={}", self.profile),
            format!("alpha={}", self.alpha),
            format!("center_x={}", self.center_x),
            format!("center_y={}", self.center_y),
            format!("resolution={}", self.resolution),
            format!("tol={}", self.tol),
            format!("truncation={}", self.truncation),
        ]
    }

    fn parse(lines: &[String]) -> Result<Self> {
        let lookup = |key: &str| -> Result<&str> {
            lines
                .iter()
                .find_map(|l| l.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
                .ok_or_else(|| LabError::GridFormat(format!("missing header field `{key}`")))
        };
        fn num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
            raw.parse().map_err(|_| LabError::GridFormat(format!("header field `{key}`: invalid value `{raw}`")))
        }
        let get = |key: &str| lookup(key).and_then(|v| num::<f64>(key, v));
        let geti = |key: &str| lookup(key).and_then(|v| num::<i64>(key, v));
        let profile = lookup("profile")?.to_string();
        if profile != "quadratic" && profile != "power" {
            return Err(LabError::GridFormat(format!("header field `profile`: invalid value `{profile}`")));
        }
        Ok(GridMeta {
            matrix: [[geti("m00")?, geti("m01")?], [geti("m10")?, geti("m11")?]],
            k: lookup("k").and_then(|v| num("k", v))?,
            r: get("r")?,
            t: get("t")?,
            profile,
            alpha: get("alpha")?,
            center_x: get("center_x")?,
            center_y: get("center_y")?,
            resolution: lookup("resolution").and_then(|v| num("resolution", v))?,
            tol: get("tol")?,
            truncation: lookup("truncation").and_then(|v| num("truncation", v))?,
        })
    }

    /// Rebuilds the map the grid was computed for.
    pub fn map(&self) -> Result<PerturbedMap> {
        let lin = ToralAutomorphism::new(self.matrix, self.k)?;
        let profile = match self.profile.as_str() {
            "quadratic" => BumpProfile::quadratic(self.r)?,
            _ => BumpProfile::power(self.r, self.alpha)?,
        };
        PerturbedMap::new(lin, TorusPoint::new(self.center_x, self.center_y, self.k), profile, self.t)
    }

    /// Rejects a grid computed for different map parameters, naming the first mismatch.
    pub fn check_matches(&self, map: &PerturbedMap, tol: f64) -> Result<()> {
        let want = GridMeta::describe(&DisplacementField::with_depth(map, self.truncation, tol), self.resolution);
        for (have, exp) in self.lines().iter().zip(want.lines()) {
            if *have != exp {
                let key = have.split('=').next().unwrap_or_default();
                return Err(LabError::GridFormat(format!("header field `{key}`: stored `{have}`, expected `{exp}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConjugacyGrid {
    pub meta: GridMeta,
    pub field: DisplacementField,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl ConjugacyGrid {
    pub fn resolution(&self) -> usize {
        self.meta.resolution
    }

    pub fn spacing(&self) -> f64 {
        self.meta.k as f64 / self.meta.resolution as f64
    }

    pub fn node(&self, i: usize, j: usize) -> TorusPoint {
        let h = self.spacing();
        TorusPoint::new(i as f64 * h, j as f64 * h, self.meta.k)
    }

    pub fn node_displacement(&self, i: usize, j: usize) -> Vec2 {
        let idx = j * self.meta.resolution + i;
        Vec2::new(self.ux[idx], self.uy[idx])
    }

    /// Bilinear interpolation of the stored `u`; wraps around the cover.
    pub fn interpolate(&self, x: TorusPoint) -> Vec2 {
        let n = self.meta.resolution;
        let h = self.spacing();
        let (fx, fy) = (x.x / h, x.y / h);
        let (i0, j0) = (fx.floor() as usize % n, fy.floor() as usize % n);
        let (sx, sy) = (fx - fx.floor(), fy - fy.floor());
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        self.node_displacement(i0, j0) * ((1.0 - sx) * (1.0 - sy))
            + self.node_displacement(i1, j0) * (sx * (1.0 - sy))
            + self.node_displacement(i0, j1) * ((1.0 - sx) * sy)
            + self.node_displacement(i1, j1) * (sx * sy)
    }

    /// `h(x)` from the series, for points off the lattice.
    pub fn eval(&self, x: TorusPoint) -> TorusPoint {
        self.field.eval(x)
    }

    /// `x + interpolated u(x)`.
    pub fn eval_interpolated(&self, x: TorusPoint) -> TorusPoint {
        x.translate(self.interpolate(x))
    }

    /// `max |u|` over the lattice.
    pub fn sup_norm(&self) -> f64 {
        self.ux.iter().zip(&self.uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    pub fn values(&self) -> (&[f64], &[f64]) {
        (&self.ux, &self.uy)
    }

    /// Largest `distance(h_I(f(x)), L(h_I(x)))` over the probes, with `h_I` the bilinear
    /// interpolant. Converges only at first order in the spacing: `u` is Hoelder, not C^2,
    /// across the images of the tangency orbit.
    pub fn interpolated_residual(&self, probes: &[TorusPoint]) -> f64 {
        let map = &self.field.map;
        probes
            .par_iter()
            .map(|&x| self.eval_interpolated(map.apply_f(x)).distance(map.lin.apply(self.eval_interpolated(x))))
            .reduce(|| 0.0, f64::max)
    }
}

pub fn build_grid(map: &PerturbedMap, resolution: usize, tol: f64) -> Result<ConjugacyGrid> {
    let k = map.k() as usize;
    if resolution < MIN_NODES_PER_UNIT * k {
        return Err(LabError::InvalidParameter(format!(
            "grid resolution {resolution} is below {MIN_NODES_PER_UNIT} nodes per unit length on the {k}-cover"
        )));
    }
    let field = DisplacementField::new(map, tol)?;
    let h = k as f64 / resolution as f64;
    let rows: Vec<Vec<Vec2>> = (0..resolution)
        .into_par_iter()
        .map(|j| {
            (0..resolution).map(|i| field.displacement(TorusPoint::new(i as f64 * h, j as f64 * h, map.k()))).collect()
        })
        .collect();
    let ux = rows.iter().flatten().map(|v| v.x).collect();
    let uy = rows.iter().flatten().map(|v| v.y).collect();
    Ok(ConjugacyGrid { meta: GridMeta::describe(&field, resolution), field, ux, uy })
}

struct SummingWriter<W: Write> {
    inner: W,
    sum: u64,
}

impl<W: Write> SummingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.sum = bytes.iter().fold(self.sum, |s, &b| s.wrapping_add(b as u64));
        self.inner.write_all(bytes)
    }
}

pub fn save_grid(grid: &ConjugacyGrid, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = SummingWriter { inner: BufWriter::new(file), sum: 0 };
    w.put(MAGIC)?;
    let lines = grid.meta.lines();
    w.put(&(lines.len() as u32).to_le_bytes())?;
    for line in &lines {
        w.put(&(line.len() as u32).to_le_bytes())?;
        w.put(line.as_bytes())?;
    }
    for plane in [&grid.ux, &grid.uy] {
        for v in plane.iter() {
            w.put(&v.to_le_bytes())?;
        }
    }
    let sum = w.sum;
    w.inner.write_all(&sum.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

struct SummingReader<R: Read> {
    inner: R,
    sum: u64,
}

impl<R: Read> SummingReader<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| LabError::GridFormat(format!("truncated file while reading {what}")))?;
        self.sum = buf.iter().fold(self.sum, |s, &b| s.wrapping_add(b as u64));
        Ok(buf)
    }

    fn take_vec(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| LabError::GridFormat(format!("truncated file while reading {what}")))?;
        self.sum = buf.iter().fold(self.sum, |s, &b| s.wrapping_add(b as u64));
        Ok(buf)
    }
}

/// Reads a grid and rebuilds its map from the header.
pub fn load_grid(path: &Path) -> Result<ConjugacyGrid> {
    let mut r = SummingReader { inner: BufReader::new(std::fs::File::open(path)?), sum: 0 };
    if &r.take::<8>("magic")? != MAGIC {
        return Err(LabError::GridFormat("bad magic, expected ANOCONJ1".into()));
    }
    let count = u32::from_le_bytes(r.take::<4>("line count")?) as usize;
    const MAX_LINES: usize = 256;
    if count > MAX_LINES {
        return Err(LabError::GridFormat(format!("line count {count} exceeds {MAX_LINES}")));
    }
    let mut lines = Vec::with_capacity(count);
    for i in 0..count {
        let len = u32::from_le_bytes(r.take::<4>("line length")?) as usize;
        let raw = r.take_vec(len, "metadata line")?;
        lines
            .push(String::from_utf8(raw).map_err(|_| LabError::GridFormat(format!("metadata line {i} is not UTF-8")))?);
    }
    let meta = GridMeta::parse(&lines)?;
    let n = meta.resolution * meta.resolution;
    let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (plane, name) in planes.iter_mut().zip(["u_x plane", "u_y plane"]) {
        let raw = r.take_vec(8 * n, name)?;
        plane.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))));
    }
    let computed = r.sum;
    let mut tail = [0u8; 8];
    r.inner.read_exact(&mut tail).map_err(|_| LabError::GridFormat("truncated file while reading checksum".into()))?;
    let stored = u64::from_le_bytes(tail);
    if stored != computed {
        return Err(LabError::Checksum { stored, computed });
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(LabError::GridFormat("trailing bytes after checksum".into()));
    }
    let map = meta.map()?;
    let field = DisplacementField::with_depth(&map, meta.truncation, meta.tol);
    let [ux, uy] = planes;
    Ok(ConjugacyGrid { meta, field, ux, uy })
}

/// Half the product-structure size of `L`: local stable and unstable leaves of size below it
/// meet exactly once. Computed as half the smallest sup-norm, in eigen-coordinates, of a
/// nonzero vector of `kZ^2`.
pub fn product_structure_constant(lin: &ToralAutomorphism) -> f64 {
    let k = lin.k as f64;
    const SEARCH: i64 = 12;
    let mut best = f64::INFINITY;
    for a in -SEARCH..=SEARCH {
        for b in -SEARCH..=SEARCH {
            if a == 0 && b == 0 {
                continue;
            }
            let (cu, cs) = lin.components(Vec2::new(a as f64 * k, b as f64 * k));
            best = best.min(cu.abs().max(cs.abs()));
        }
    }
    0.5 * best
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectivityReport {
    pub scale: f64,
    pub pairs: usize,
    /// Smallest `d(h a, h b) / d(a, b)`.
    pub min_ratio: f64,
    pub min_image_distance: f64,
    /// Pairs with `d(h a, h b) < tol`.
    pub collapses: usize,
}

/// Compares lattice nodes at distance in `[scale, scale + 2 spacing)`, anchors taken every
/// `stride` nodes in each direction.
pub fn injectivity_probe(grid: &ConjugacyGrid, scale: f64, stride: usize) -> InjectivityReport {
    let n = grid.resolution();
    let h = grid.spacing();
    let reach = ((scale + 2.0 * h) / h).ceil() as i64;
    let offsets: Vec<(i64, i64)> = (-reach..=reach)
        .flat_map(|a| (0..=reach).map(move |b| (a, b)))
        .filter(|&(a, b)| b > 0 || a > 0)
        .filter(|&(a, b)| {
            let d = ((a * a + b * b) as f64).sqrt() * h;
            d >= scale && d < scale + 2.0 * h
        })
        .collect();
    let stride = stride.max(1);
    let tol = grid.meta.tol;
    let anchors: Vec<(usize, usize)> =
        (0..n).step_by(stride).flat_map(|j| (0..n).step_by(stride).map(move |i| (i, j))).collect();
    let (min_ratio, min_dist, collapses) = anchors
        .par_iter()
        .map(|&(i, j)| {
            let a = grid.node(i, j);
            let ha = a.translate(grid.node_displacement(i, j));
            let mut acc = (f64::INFINITY, f64::INFINITY, 0usize);
            for &(di, dj) in &offsets {
                let bi = (i as i64 + di).rem_euclid(n as i64) as usize;
                let bj = (j as i64 + dj).rem_euclid(n as i64) as usize;
                let b = grid.node(bi, bj);
                let hb = b.translate(grid.node_displacement(bi, bj));
                let d_img = ha.distance(hb);
                acc.0 = acc.0.min(d_img / a.distance(b));
                acc.1 = acc.1.min(d_img);
                acc.2 += (d_img < tol) as usize;
            }
            acc
        })
        .reduce(|| (f64::INFINITY, f64::INFINITY, 0), |x, y| (x.0.min(y.0), x.1.min(y.1), x.2 + y.2));
    InjectivityReport {
        scale,
        pairs: anchors.len() * offsets.len(),
        min_ratio,
        min_image_distance: min_dist,
        collapses,
    }
}
