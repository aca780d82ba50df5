//! Subcommands: each builds the map from the config, runs one experiment and writes
//! `<name>.csv`, `<name>.json` and `<name>.svg` into the output directory.

use super::config::ExperimentConfig;
use super::report::{write_csv, write_json, Axis, Plot, Series};
use super::seeds::{SeedSplitter, Stream};
use crate::cocycle::{tangency_order, verify_cone_conditions, Orientation, RegionAtlas};
use crate::conjugacy::{build_grid, conjugacy_inverse_eval, load_grid, save_grid, ConjugacyGrid};
use crate::fit::{geometric_ladder, loglog_fit};
use crate::holder::{
    beak_probe, calibration_oracle, estimate_exponent, estimate_leafwise_exponent, halving_ladder, tube_exponent_scan,
    ExponentEstimate, LeafwiseTarget, NearOrbitPairs, Stratum, UniformPairs,
};
use crate::perturbation::{map_check, PerturbedMap};
use crate::shadowing::{brute_force_shadow, fisher_experiment, shadow_linear, synthetic_pseudo_orbit};
use crate::spectrum::{periodic_spectrum, spectral_gap_from, RefineSettings};
use crate::torus::{HeteroclinicFrame, TorusPoint};
use crate::{LabError, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// File name of the cached conjugacy grid inside the output directory.
pub const GRID_FILE: &str = "conjugacy.grid";

/// Windows up to this length get the brute-force minimax comparison.
const ORACLE_WINDOW: i64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    MapCheck,
    Cones,
    Tangency,
    Conjugacy,
    Holder,
    Spectrum,
    Shadow,
    Fisher,
    All,
}

impl Subcommand {
    /// Every experiment, in the order `all` runs them.
    pub const EXPERIMENTS: [Subcommand; 8] = [
        Subcommand::MapCheck,
        Subcommand::Cones,
        Subcommand::Tangency,
        Subcommand::Conjugacy,
        Subcommand::Holder,
        Subcommand::Spectrum,
        Subcommand::Shadow,
        Subcommand::Fisher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::MapCheck => "map-check",
            Subcommand::Cones => "cones",
            Subcommand::Tangency => "tangency",
            Subcommand::Conjugacy => "conjugacy",
            Subcommand::Holder => "holder",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Shadow => "shadow",
            Subcommand::Fisher => "fisher",
            Subcommand::All => "all",
        }
    }

    fn file_stem(self) -> String {
        self.name().replace('-', "_")
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::EXPERIMENTS
            .iter()
            .chain([&Subcommand::All])
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown subcommand `{s}`"))
    }
}

/// One named pass/fail statement about a measured quantity.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub subcommand: Subcommand,
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<Check>,
    /// Progress messages such as grid cache hits; not part of the numeric output.
    #[serde(skip)]
    pub log: Vec<String>,
    /// Experiments of an `all` run that stopped with an error.
    pub failed: Vec<(Subcommand, String)>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.failed.is_empty()
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    map: PerturbedMap,
    frame: HeteroclinicFrame,
    seeds: SeedSplitter,
    log: Vec<String>,
    artifacts: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.artifacts.push(p.clone());
        p
    }

    fn csv<T: Serialize>(&mut self, sub: Subcommand, header: &[&str], rows: &[T]) -> Result<()> {
        let p = self.path(&format!("{}.csv", sub.file_stem()));
        write_csv(&p, header, rows)
    }

    fn svg(&mut self, sub: Subcommand, plot: &Plot) -> Result<()> {
        let p = self.path(&format!("{}.svg", sub.file_stem()));
        plot.write(&p)
    }

    fn summary(&mut self, sub: Subcommand, results: Value, checks: &[Check]) -> Result<()> {
        let p = self.path(&format!("{}.json", sub.file_stem()));
        write_json(&p, &json!({ "subcommand": sub, "config": self.cfg, "results": results, "checks": checks }))
    }

    fn scales(&self) -> Vec<f64> {
        halving_ladder(self.cfg.r / 10.0, self.cfg.holder_scales)
    }

    /// Loads the cached grid when its header matches the config, else builds and saves one.
    fn grid(&mut self) -> Result<ConjugacyGrid> {
        let path = self.out.join(GRID_FILE);
        if path.exists() {
            match load_grid(&path).and_then(|g| {
                g.meta.check_matches(&self.map, self.cfg.conjugacy_tol)?;
                if g.resolution() != self.cfg.grid_resolution {
                    return Err(LabError::GridFormat(format!(
                        "resolution {} differs from configured {}",
                        g.resolution(),
                        self.cfg.grid_resolution
                    )));
                }
                Ok(g)
            }) {
                Ok(g) => {
                    self.log.push(format!("conjugacy grid cache hit: {} (checksum verified)", path.display()));
                    return Ok(g);
                }
                Err(e) => self.log.push(format!("conjugacy grid cache miss: {e}")),
            }
        }
        let grid = build_grid(&self.map, self.cfg.grid_resolution, self.cfg.conjugacy_tol)?;
        save_grid(&grid, &path)?;
        self.log.push(format!("conjugacy grid built and saved: {}", path.display()));
        Ok(grid)
    }
}

/// Runs `sub` and writes its artifacts into `cfg.output_dir`. For `all`, an experiment that
/// stops with an error is recorded in [`RunOutcome::failed`] and the rest still run.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let (map, frame) = cfg.build()?;
    let mut ctx =
        Ctx { cfg, out: &out, map, frame, seeds: SeedSplitter::new(cfg.seed), log: Vec::new(), artifacts: Vec::new() };
    let mut checks = Vec::new();
    let mut failed = Vec::new();
    if sub == Subcommand::All {
        for exp in Subcommand::EXPERIMENTS {
            match run_one(exp, &mut ctx) {
                Ok(c) => checks.extend(c.into_iter().map(|c| Check { name: format!("{exp}/{}", c.name), ..c })),
                Err(e) => {
                    ctx.log.push(format!("{exp} failed: {e}"));
                    failed.push((exp, e.to_string()));
                }
            }
        }
        let partial = !failed.is_empty();
        let results = json!({ "partial": partial, "failed": failed });
        ctx.summary(Subcommand::All, results, &checks)?;
    } else {
        checks = run_one(sub, &mut ctx)?;
    }
    Ok(RunOutcome { subcommand: sub, artifacts: ctx.artifacts, checks, log: ctx.log, failed })
}

fn run_one(sub: Subcommand, ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    match sub {
        Subcommand::MapCheck => run_map_check(ctx),
        Subcommand::Cones => run_cones(ctx),
        Subcommand::Tangency => run_tangency(ctx),
        Subcommand::Conjugacy => run_conjugacy(ctx),
        Subcommand::Holder => run_holder(ctx),
        Subcommand::Spectrum => run_spectrum(ctx),
        Subcommand::Shadow => run_shadow(ctx),
        Subcommand::Fisher => run_fisher(ctx),
        Subcommand::All => unreachable!("`all` is expanded by run"),
    }
}

#[derive(Serialize)]
struct MetricRow {
    metric: &'static str,
    value: f64,
}

fn run_map_check(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::MapCheck;
    let mc = map_check(&ctx.map, ctx.cfg.map_check_samples, ctx.seeds.seed(Stream::MapCheck));
    let mut checks = vec![
        Check::new("fd-jacobian", mc.fd_rel_error < 1e-5, format!("relative error {:.3e}", mc.fd_rel_error)),
        Check::new("unimodular", mc.det_defect < 1e-12, format!("|det - 1| {:.3e}", mc.det_defect)),
        Check::new("shear-frame", mc.shear_error < 1e-8, format!("entry error {:.3e}", mc.shear_error)),
        Check::new("round-trip", mc.round_trip < 1e-12, format!("distance {:.3e}", mc.round_trip)),
    ];
    if ctx.map.t == 0.0 {
        checks.push(Check::new("linear-at-t0", mc.linear_defect == 0.0, format!("defect {:.3e}", mc.linear_defect)));
    }
    let rows = [
        MetricRow { metric: "fd_rel_error", value: mc.fd_rel_error },
        MetricRow { metric: "det_defect", value: mc.det_defect },
        MetricRow { metric: "shear_error", value: mc.shear_error },
        MetricRow { metric: "round_trip", value: mc.round_trip },
        MetricRow { metric: "linear_defect", value: mc.linear_defect },
    ];
    ctx.csv(sub, &["metric", "value"], &rows)?;
    let r = ctx.map.radius();
    let alpha: Vec<(f64, f64)> =
        geometric_ladder(0.99 * r, 1e-3 * r, 40).into_iter().map(|rho| (rho, ctx.map.shear_alpha(rho))).collect();
    ctx.svg(
        sub,
        &Plot::loglog("Shear entry of the rotation derivative", "rho", "alpha(rho)").push(Series::new("alpha", alpha)),
    )?;
    ctx.summary(sub, serde_json::to_value(&mc)?, &checks)?;
    Ok(checks)
}

fn run_cones(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Cones;
    let r = ctx.map.radius();
    let atlas = RegionAtlas::new(&ctx.map, &ctx.frame, r / 20.0, r, 10);
    let rep = verify_cone_conditions(
        &atlas,
        ctx.cfg.cone_samples,
        ctx.seeds.seed(Stream::Cones),
        0.1,
        ctx.cfg.direction_settings(),
    );
    let share = rep.unconverged as f64 / rep.samples.max(1) as f64;
    let mut checks = vec![
        Check::new("cone-violations", rep.violations() == 0, format!("{} violations", rep.violations())),
        Check::new("unconverged-share", share < 5e-3, format!("{} of {}", rep.unconverged, rep.samples)),
    ];
    if let Some(fit) = rep.envelope_fit {
        checks.push(Check::new("quadratic-envelope", fit.slope >= 1.9, format!("slope {:.3}", fit.slope)));
    }
    ctx.csv(sub, &["x", "y", "region", "tan_es", "tan_eu", "du", "dist_pr", "converged"], &rep.rows)?;
    let pts = rep.rows.iter().filter(|s| s.converged).map(|s| (s.dist_pr, s.tan_es)).collect();
    let mut series = Series::new("tan(E^s, e_s)", pts);
    if let Some(fit) = rep.envelope_fit {
        series = series.with_fit(fit);
    }
    ctx.svg(sub, &Plot::loglog("Stable direction tilt", "distance to [P, R]", "tan").push(series))?;
    ctx.summary(sub, serde_json::to_value(&rep)?, &checks)?;
    Ok(checks)
}

fn run_tangency(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Tangency;
    let rep = tangency_order(&ctx.map, ctx.cfg.tangency_scales, ctx.cfg.direction_settings())?;
    let expected = ctx.map.profile.tangency_exponent();
    let checks = vec![Check::new(
        "tangency-order",
        (rep.fit.slope - expected).abs() <= 0.1 * expected,
        format!("slope {:.4}, expected {expected}", rep.fit.slope),
    )];
    ctx.csv(sub, &["rho", "tan", "tan_exact", "converged"], &rep.samples)?;
    let pts = rep.samples.iter().map(|s| (s.rho, s.tan)).collect();
    ctx.svg(
        sub,
        &Plot::loglog("Unstable direction against e_s near R", "rho", "tan(E^u, e_s)")
            .push(Series::new("measured", pts).with_fit(rep.fit)),
    )?;
    ctx.summary(sub, serde_json::to_value(&rep)?, &checks)?;
    Ok(checks)
}

#[derive(Serialize)]
struct ResidualRow {
    x: f64,
    y: f64,
    dist_r: f64,
    residual: f64,
}

fn run_conjugacy(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Conjugacy;
    let grid = build_grid(&ctx.map, ctx.cfg.grid_resolution, ctx.cfg.conjugacy_tol)?;
    let grid_path = ctx.path(GRID_FILE);
    save_grid(&grid, &grid_path)?;
    ctx.log.push(format!("conjugacy grid saved: {}", grid_path.display()));
    let n = grid.resolution();
    let node_residual =
        (0..n * n).into_par_iter().map(|i| grid.field.residual(grid.node(i % n, i / n))).reduce(|| 0.0, f64::max);
    let mut rng = ctx.seeds.rng(Stream::Probes);
    let k = ctx.map.k();
    let probes: Vec<TorusPoint> =
        (0..10_000).map(|_| TorusPoint::new(rng.gen_range(0.0..k as f64), rng.gen_range(0.0..k as f64), k)).collect();
    let rows: Vec<ResidualRow> = probes
        .par_iter()
        .map(|&p| ResidualRow { x: p.x, y: p.y, dist_r: p.distance(ctx.map.center), residual: grid.field.residual(p) })
        .collect();
    let probe_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let bound = 10.0 * ctx.cfg.conjugacy_tol;
    let checks = vec![
        Check::new("node-residual", node_residual < bound, format!("max {node_residual:.3e} over {} nodes", n * n)),
        Check::new(
            "probe-residual",
            probe_residual < bound,
            format!("max {probe_residual:.3e} over {} probes", rows.len()),
        ),
    ];
    ctx.csv(sub, &["x", "y", "dist_r", "residual"], &rows)?;
    let pts = rows.iter().map(|r| (r.dist_r, r.residual)).collect();
    ctx.svg(
        sub,
        &Plot::loglog("Conjugacy residual at random probes", "distance to R", "residual")
            .push(Series::new("probes", pts)),
    )?;
    let results = json!({
        "resolution": n,
        "truncation": grid.meta.truncation,
        "tail_bound": grid.field.tail_bound(),
        "sup_norm": grid.sup_norm(),
        "node_residual": node_residual,
        "probe_residual": probe_residual,
    });
    ctx.summary(sub, results, &checks)?;
    Ok(checks)
}

#[derive(Serialize)]
struct ExponentRow {
    target: String,
    exponent: f64,
    ci95: f64,
    r_squared: f64,
    constant: f64,
    pairs: usize,
}

impl ExponentRow {
    fn of(target: impl Into<String>, est: &ExponentEstimate) -> Self {
        ExponentRow {
            target: target.into(),
            exponent: est.exponent,
            ci95: est.fit.slope_ci95,
            r_squared: est.fit.r_squared,
            constant: est.constant,
            pairs: est.sample.pairs(),
        }
    }
}

fn run_holder(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Holder;
    let grid = ctx.grid()?;
    let (map, frame, cfg) = (&ctx.map, &ctx.frame, ctx.cfg);
    let seed = ctx.seeds.seed(Stream::Holder);
    let scales = ctx.scales();
    let pairs = cfg.holder_pairs;
    let r = map.radius();
    let inverse = |y| conjugacy_inverse_eval(&grid, y, 1e-9);

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for beta in [0.25, 0.5, 1.0] {
        let est = calibration_oracle(beta, pairs, seed)?;
        checks.push(Check::new(
            &format!("calibration-{beta}"),
            (est.exponent - beta).abs() <= 0.02,
            format!("{:.4}", est.exponent),
        ));
        rows.push(ExponentRow::of(format!("calibration-{beta}"), &est));
    }
    let near = estimate_exponent(
        |p| Ok(grid.eval(p)),
        &NearOrbitPairs::for_map(map, frame, r / 20.0, 6),
        &scales,
        pairs,
        seed,
    )?;
    let uniform = estimate_exponent(|p| Ok(grid.eval(p)), &UniformPairs { k: map.k() }, &scales, pairs, seed)?;
    let leaf_h = estimate_leafwise_exponent(
        &grid,
        frame,
        LeafwiseTarget::Conjugacy,
        Orientation::Unstable,
        &scales,
        pairs,
        seed,
    )?;
    let centres = (-6..=6).map(|n| grid.eval(map.orbit_of_center(frame, n))).collect();
    let near_inv = estimate_exponent(inverse, &NearOrbitPairs::images(map, centres), &scales, pairs, seed)?;
    let leaf_inv =
        estimate_leafwise_exponent(&grid, frame, LeafwiseTarget::Inverse, Orientation::Unstable, &scales, pairs, seed)?;
    checks.push(Check::new("h-near-orbit-band", (0.4..=0.6).contains(&near.exponent), format!("{:.4}", near.exponent)));
    checks.push(Check::new("h-leafwise", leaf_h.exponent >= 0.85, format!("{:.4}", leaf_h.exponent)));
    checks.push(Check::new("h-inverse", near_inv.exponent >= 0.2, format!("{:.4}", near_inv.exponent)));
    for (name, est) in [
        ("h-near-orbit", &near),
        ("h-uniform", &uniform),
        ("h-leafwise", &leaf_h),
        ("h-inverse-near-images", &near_inv),
        ("h-inverse-leafwise", &leaf_inv),
    ] {
        rows.push(ExponentRow::of(name, est));
    }

    let atlas = RegionAtlas::new(map, frame, r / 20.0, r, 6);
    let strata = tube_exponent_scan(&grid, &atlas, &scales, pairs, seed);
    for s in &strata {
        if let Some(est) = &s.estimate {
            rows.push(ExponentRow::of(format!("stratum-{}", s.stratum.label()), est));
            if s.stratum == Stratum::OutsideU {
                checks.push(Check::new("h-outside-u", est.exponent >= 0.85, format!("{:.4}", est.exponent)));
            }
        }
    }

    let beak = beak_probe(map, frame, 0, cfg.beak_samples, ctx.seeds.seed(Stream::Beak))?;
    checks.push(Check::new(
        "beak-case-a",
        beak.case_a.violations == 0,
        format!("{} violations in {}", beak.case_a.violations, beak.case_a.samples),
    ));
    checks.push(Check::new(
        "beak-case-b",
        beak.case_b.violations == 0,
        format!("{} violations in {}", beak.case_b.violations, beak.case_b.samples),
    ));
    checks.push(Check::new("beak-constant", beak.stable_within(2.0), format!("spread {:.3}", beak.spread)));

    ctx.csv(sub, &["target", "exponent", "ci95", "r_squared", "constant", "pairs"], &rows)?;
    let envelope = |est: &ExponentEstimate| est.sample.scales().into_iter().zip(est.sample.worst()).collect::<Vec<_>>();
    let plot = Plot::loglog("Worst-case modulus of continuity", "pair distance", "image distance")
        .push(Series::new("h near orbit of R", envelope(&near)).with_fit(near.fit))
        .push(Series::new("h^-1 near images", envelope(&near_inv)).with_fit(near_inv.fit))
        .push(Series::new("h leafwise", envelope(&leaf_h)).with_fit(leaf_h.fit));
    ctx.svg(sub, &plot)?;
    let strata_json: Vec<Value> = strata
        .iter()
        .map(|s| json!({ "stratum": s.stratum.label(), "exponent": s.estimate.as_ref().map(|e| e.exponent), "min_pairs": s.min_pairs }))
        .collect();
    let results = json!({
        "exponents": rows,
        "strata": strata_json,
        "beak": {
            "constant": beak.constant(),
            "spread": beak.spread,
            "decades": beak.decades,
            "case_a": beak.case_a,
            "case_b": beak.case_b,
            "skipped": beak.skipped,
        },
    });
    ctx.summary(sub, results, &checks)?;
    Ok(checks)
}

#[derive(Serialize)]
struct RecordRow {
    period: u32,
    x: f64,
    y: f64,
    rate_u: f64,
    rate_s: f64,
    residual: f64,
    det: f64,
    flag: String,
}

fn run_spectrum(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Spectrum;
    let grid = ctx.grid()?;
    let spectrum = periodic_spectrum(&ctx.map, &grid, ctx.cfg.period_cap, &RefineSettings::default())?;
    let gap = spectral_gap_from(&ctx.map, &ctx.frame, &spectrum, ctx.cfg.probe_n)?;
    let checks = vec![
        Check::new(
            "probe-rate",
            gap.probe_bounded(0.05),
            format!("|rate| {:.4} at |n| = {}", gap.probe_rate, gap.probe_n),
        ),
        Check::new(
            "periodic-gap",
            gap.periodic_hyperbolic(0.5),
            format!("min |log rate| {:.4} against {:.4}", gap.min_log_rate, 0.5 * gap.log_lambda),
        ),
        Check::new("unimodular", gap.max_unimodularity_defect < 1e-8, format!("{:.3e}", gap.max_unimodularity_defect)),
    ];
    let rows: Vec<RecordRow> = spectrum
        .records
        .iter()
        .map(|r| RecordRow {
            period: r.period,
            x: r.point.x,
            y: r.point.y,
            rate_u: r.rates[0],
            rate_s: r.rates[1],
            residual: r.residual,
            det: r.det,
            flag: r.flag.map(|f| format!("{f:?}")).unwrap_or_default(),
        })
        .collect();
    ctx.csv(sub, &["period", "x", "y", "rate_u", "rate_s", "residual", "det", "flag"], &rows)?;
    let pts = gap.probes.iter().map(|g| (g.n as f64, g.log_norm)).collect();
    ctx.svg(
        sub,
        &Plot::loglog("Vertical vector at R", "n", "log |Df^n v|")
            .axes(Axis::Linear, Axis::Linear)
            .push(Series::new("probe", pts)),
    )?;
    let results = json!({
        "log_lambda": gap.log_lambda,
        "probe_rate": gap.probe_rate,
        "probe_n": gap.probe_n,
        "min_log_rate": gap.min_log_rate,
        "max_unimodularity_defect": gap.max_unimodularity_defect,
        "max_residual": spectrum.max_residual,
        "records": gap.records,
        "flagged": gap.flagged,
    });
    ctx.summary(sub, results, &checks)?;
    Ok(checks)
}

#[derive(Serialize)]
struct ShadowRow {
    xi: f64,
    trial: usize,
    window: i64,
    defect: f64,
    delta: f64,
    constant: f64,
    /// Series `delta` over the brute-force minimum; empty above the oracle window.
    oracle_ratio: Option<f64>,
}

fn run_shadow(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Shadow;
    let lin = &ctx.map.lin;
    let k = lin.k as f64;
    let mut rng = ctx.seeds.rng(Stream::Shadow);
    let mut rows = Vec::new();
    let draw = |window: i64, xi: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let y0 = TorusPoint::new(rng.gen_range(0.0..k), rng.gen_range(0.0..k), lin.k);
        synthetic_pseudo_orbit(lin, y0, window, window, xi, rng)
    };
    for &xi in &ctx.cfg.shadow_defects {
        for trial in 0..ctx.cfg.shadow_trials {
            let pseudo = draw(ctx.cfg.shadow_window as i64, xi, &mut rng);
            let s = shadow_linear(lin, &pseudo)?;
            let constant = s.constant.unwrap_or(f64::NAN);
            rows.push(ShadowRow {
                xi,
                trial,
                window: ctx.cfg.shadow_window as i64,
                defect: pseudo.defect,
                delta: s.delta,
                constant,
                oracle_ratio: None,
            });
        }
    }
    let xi0 = ctx.cfg.shadow_defects.first().copied().unwrap_or(1e-3);
    for window in 1..=ORACLE_WINDOW {
        for trial in 0..ctx.cfg.shadow_trials {
            let pseudo = draw(window, xi0, &mut rng);
            let s = shadow_linear(lin, &pseudo)?;
            let brute = brute_force_shadow(lin, &pseudo, s.x, 4.0 * xi0, 41, 8);
            rows.push(ShadowRow {
                xi: xi0,
                trial,
                window,
                defect: pseudo.defect,
                delta: s.delta,
                constant: s.constant.unwrap_or(f64::NAN),
                oracle_ratio: Some(s.delta / brute.delta),
            });
        }
    }
    let bound_ratio = rows.iter().map(|r| r.delta / (r.constant * r.defect)).fold(0.0, f64::max);
    let oracle = rows.iter().filter_map(|r| r.oracle_ratio).fold(0.0, f64::max);
    let checks = vec![
        Check::new("upper-bound", bound_ratio <= 1.0, format!("max delta / (C xi) = {bound_ratio:.4}")),
        Check::new("minimax-oracle", oracle <= 1.01, format!("max series / minimax = {oracle:.4}")),
    ];
    ctx.csv(sub, &["xi", "trial", "window", "defect", "delta", "constant", "oracle_ratio"], &rows)?;
    let long: Vec<(f64, f64)> = rows.iter().filter(|r| r.oracle_ratio.is_none()).map(|r| (r.defect, r.delta)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = long.iter().copied().unzip();
    let mut series = Series::new("series shadowing", long);
    if let Ok(fit) = loglog_fit(&xs, &ys) {
        series = series.with_fit(fit);
    }
    ctx.svg(sub, &Plot::loglog("Linear shadowing distance", "defect xi", "delta").push(series))?;
    let results = json!({
        "constant": rows.first().map(|r| r.constant),
        "max_bound_ratio": bound_ratio,
        "max_oracle_ratio": oracle,
        "trials": rows.len(),
    });
    ctx.summary(sub, results, &checks)?;
    Ok(checks)
}

fn run_fisher(ctx: &mut Ctx<'_>) -> Result<Vec<Check>> {
    let sub = Subcommand::Fisher;
    let grid = ctx.grid()?;
    let rep = fisher_experiment(&ctx.map, &ctx.frame, &grid, &ctx.cfg.fisher_epsilons, ctx.cfg.fisher_window)?;
    let mut checks = vec![
        Check::new(
            "defect-exponent",
            (rep.defect_exponent.slope - 2.0).abs() <= 0.2,
            format!("{:.4}", rep.defect_exponent.slope),
        ),
        Check::new("upper-bound", rep.bound_ratio <= 1.0, format!("max delta / (C xi) = {:.4}", rep.bound_ratio)),
    ];
    if ctx.map.t == 1.0 {
        checks.push(Check::new("kappa", rep.kappa.slope >= 0.9, format!("{:.4}", rep.kappa.slope)));
    }
    ctx.csv(sub, &["eps", "defect_f", "c_tilde", "delta_self", "xi", "delta", "delta_series", "boundary"], &rep.rows)?;
    let plot = Plot::loglog("Transported tangent pseudo-orbits", "xi, eps", "delta, defect")
        .push(Series::new("delta against xi", rep.rows.iter().map(|r| (r.xi, r.delta)).collect()).with_fit(rep.kappa))
        .push(
            Series::new("defect against eps", rep.rows.iter().map(|r| (r.eps, r.defect_f)).collect())
                .with_fit(rep.defect_exponent),
        );
    ctx.svg(sub, &plot)?;
    ctx.summary(sub, serde_json::to_value(&rep)?, &checks)?;
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            map_check_samples: 300,
            cone_samples: 200,
            tangency_scales: 6,
            holder_scales: 6,
            holder_pairs: 30,
            beak_samples: 15,
            period_cap: 2,
            probe_n: 20,
            shadow_window: 20,
            shadow_trials: 2,
            fisher_window: 20,
            fisher_epsilons: vec![1e-2, 1e-3, 1e-4],
            output_dir: out.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn subcommand_names_round_trip() {
        for s in Subcommand::EXPERIMENTS.iter().chain([&Subcommand::All]) {
            assert_eq!(s.name().parse::<Subcommand>().unwrap(), *s);
        }
        assert!("bogus".parse::<Subcommand>().is_err());
    }

    #[test]
    fn map_check_at_t0_passes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { t: 0.0, ..small(dir.path()) };
        let out = run(Subcommand::MapCheck, &cfg).unwrap();
        assert!(out.all_passed(), "{:?}", out.checks);
        assert!(out.checks.iter().any(|c| c.name == "linear-at-t0"));
        for ext in ["csv", "json", "svg"] {
            assert!(dir.path().join(format!("map_check.{ext}")).exists());
        }
    }

    #[test]
    fn tangency_slope_for_quadratic_profile() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(Subcommand::Tangency, &small(dir.path())).unwrap();
        assert!(out.all_passed(), "{:?}", out.checks);
    }

    #[test]
    fn holder_reuses_the_saved_grid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        run(Subcommand::Conjugacy, &cfg).unwrap();
        let out = run(Subcommand::Holder, &cfg).unwrap();
        assert!(out.log.iter().any(|l| l.contains("cache hit")), "{:?}", out.log);
        // A different map invalidates the cache.
        let other = ExperimentConfig { t: 0.5, ..cfg };
        let out = run(Subcommand::Fisher, &other);
        assert!(matches!(out, Err(LabError::UnboundedTangent { .. })) || out.is_ok());
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("holder.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["seed"], 1);
    }

    #[test]
    fn summary_echoes_the_config_and_csv_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        run(Subcommand::Shadow, &cfg).unwrap();
        let first = std::fs::read(dir.path().join("shadow.csv")).unwrap();
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("shadow.json")).unwrap()).unwrap();
        assert_eq!(summary["config"], serde_json::to_value(&cfg).unwrap());
        run(Subcommand::Shadow, &cfg).unwrap();
        assert_eq!(std::fs::read(dir.path().join("shadow.csv")).unwrap(), first);
        let reseeded = ExperimentConfig { seed: 2, ..cfg };
        run(Subcommand::Shadow, &reseeded).unwrap();
        assert_ne!(std::fs::read(dir.path().join("shadow.csv")).unwrap(), first);
    }

    #[test]
    fn all_records_failed_experiments_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        // At t = 0 the tangent construction at R has no bounded direction.
        let cfg = ExperimentConfig { t: 0.0, cone_samples: 50, ..small(dir.path()) };
        let out = run(Subcommand::All, &cfg).unwrap();
        assert_eq!(out.failed.len(), 1, "{:?}", out.failed);
        assert_eq!(out.failed[0].0, Subcommand::Fisher);
        assert!(!out.all_passed());
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("all.json")).unwrap()).unwrap();
        assert_eq!(summary["results"]["partial"], true);
        assert!(dir.path().join("spectrum.csv").exists());
    }
}
