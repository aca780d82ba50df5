//! Flat `key = value` experiment configuration with dotted namespaces and `#` comments.

use crate::cocycle::DirectionSettings;
use crate::perturbation::{BumpProfile, PerturbedMap};
use crate::torus::{build_heteroclinic_frame, HeteroclinicFrame, ToralAutomorphism, TorusPoint};
use crate::{LabError, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

/// Prefix of environment variables that override config keys: `map.k` is
/// `TANGENCY_LAB_MAP_K`.
pub const ENV_PREFIX: &str = "TANGENCY_LAB_";

/// Search radius, in fundamental domains, for the heteroclinic point.
const FRAME_SEARCH: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileId {
    Quadratic,
    Power,
    Smooth,
}

impl FromStr for ProfileId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(ProfileId::Quadratic),
            "power" => Ok(ProfileId::Power),
            "smooth" => Ok(ProfileId::Smooth),
            _ => Err(format!("unknown profile `{s}`, expected quadratic, power or smooth")),
        }
    }
}

impl ProfileId {
    fn as_str(self) -> &'static str {
        match self {
            ProfileId::Quadratic => "quadratic",
            ProfileId::Power => "power",
            ProfileId::Smooth => "smooth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub matrix: [[i64; 2]; 2],
    pub k: u32,
    /// Fixed points spanning the heteroclinic frame.
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub r: f64,
    pub t: f64,
    pub profile: ProfileId,
    pub tangency_alpha: f64,
    pub seed: u64,
    pub conjugacy_tol: f64,
    pub direction_tol: f64,
    pub grid_resolution: usize,
    pub map_check_samples: usize,
    pub cone_samples: usize,
    pub tangency_scales: usize,
    pub holder_scales: usize,
    pub holder_pairs: usize,
    pub beak_samples: usize,
    pub period_cap: u32,
    pub probe_n: i64,
    pub shadow_window: usize,
    pub shadow_defects: Vec<f64>,
    pub shadow_trials: usize,
    pub fisher_epsilons: Vec<f64>,
    pub fisher_window: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            matrix: [[2, 3], [3, 5]],
            k: 5,
            p: (0.0, 0.0),
            q: (1.0, 3.0),
            r: 0.25,
            t: 1.0,
            profile: ProfileId::Quadratic,
            tangency_alpha: 1.0,
            seed: 1,
            conjugacy_tol: 1e-10,
            direction_tol: 1e-9,
            grid_resolution: 320,
            map_check_samples: 100_000,
            cone_samples: 20_000,
            tangency_scales: 12,
            holder_scales: 11,
            holder_pairs: 200,
            beak_samples: 600,
            period_cap: 6,
            probe_n: 100,
            shadow_window: 200,
            shadow_defects: vec![1e-3, 1e-4, 1e-5],
            shadow_trials: 20,
            fisher_epsilons: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            fisher_window: 200,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    raw.split(',').map(|s| s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim()))).collect()
}

fn parse_one<T: FromStr>(raw: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("`{raw}`: {e}"))
}

fn pair(raw: &str) -> std::result::Result<(f64, f64), String> {
    match parse_list::<f64>(raw)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        other => Err(format!("expected two numbers, got {}", other.len())),
    }
}

impl ExperimentConfig {
    /// Every key in file order.
    pub const KEYS: [&'static str; 26] = [
        "map.matrix",
        "map.k",
        "map.p",
        "map.q",
        "map.r",
        "map.t",
        "map.profile",
        "map.tangency_alpha",
        "seed",
        "tol.conjugacy",
        "tol.direction",
        "grid.resolution",
        "map_check.samples",
        "cones.samples",
        "tangency.scales",
        "holder.scales",
        "holder.pairs",
        "holder.beak_samples",
        "spectrum.period_cap",
        "spectrum.probe_n",
        "shadow.window",
        "shadow.defects",
        "shadow.trials",
        "fisher.epsilons",
        "fisher.window",
        "output.dir",
    ];

    fn get(&self, key: &str) -> String {
        let m = self.matrix;
        match key {
            "map.matrix" => list(&[m[0][0], m[0][1], m[1][0], m[1][1]]),
            "map.k" => self.k.to_string(),
            "map.p" => list(&[self.p.0, self.p.1]),
            "map.q" => list(&[self.q.0, self.q.1]),
            "map.r" => self.r.to_string(),
            "map.t" => self.t.to_string(),
            "map.profile" => self.profile.as_str().to_string(),
            "map.tangency_alpha" => self.tangency_alpha.to_string(),
            "seed" => self.seed.to_string(),
            "tol.conjugacy" => self.conjugacy_tol.to_string(),
            "tol.direction" => self.direction_tol.to_string(),
            "grid.resolution" => self.grid_resolution.to_string(),
            "map_check.samples" => self.map_check_samples.to_string(),
            "cones.samples" => self.cone_samples.to_string(),
            "tangency.scales" => self.tangency_scales.to_string(),
            "holder.scales" => self.holder_scales.to_string(),
            "holder.pairs" => self.holder_pairs.to_string(),
            "holder.beak_samples" => self.beak_samples.to_string(),
            "spectrum.period_cap" => self.period_cap.to_string(),
            "spectrum.probe_n" => self.probe_n.to_string(),
            "shadow.window" => self.shadow_window.to_string(),
            "shadow.defects" => list(&self.shadow_defects),
            "shadow.trials" => self.shadow_trials.to_string(),
            "fisher.epsilons" => list(&self.fisher_epsilons),
            "fisher.window" => self.fisher_window.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => unreachable!("key list and accessor disagree on `{key}`"),
        }
    }

    /// Sets one key; `Ok(false)` for an unknown key.
    fn set(&mut self, key: &str, raw: &str) -> std::result::Result<bool, String> {
        match key {
            "map.matrix" => match parse_list::<i64>(raw)?.as_slice() {
                [a, b, c, d] => self.matrix = [[*a, *b], [*c, *d]],
                other => return Err(format!("expected four integers, got {}", other.len())),
            },
            "map.k" => self.k = parse_one(raw)?,
            "map.p" => self.p = pair(raw)?,
            "map.q" => self.q = pair(raw)?,
            "map.r" => self.r = parse_one(raw)?,
            "map.t" => self.t = parse_one(raw)?,
            "map.profile" => self.profile = raw.parse()?,
            "map.tangency_alpha" => self.tangency_alpha = parse_one(raw)?,
            "seed" => self.seed = parse_one(raw)?,
            "tol.conjugacy" => self.conjugacy_tol = parse_one(raw)?,
            "tol.direction" => self.direction_tol = parse_one(raw)?,
            "grid.resolution" => self.grid_resolution = parse_one(raw)?,
            "map_check.samples" => self.map_check_samples = parse_one(raw)?,
            "cones.samples" => self.cone_samples = parse_one(raw)?,
            "tangency.scales" => self.tangency_scales = parse_one(raw)?,
            "holder.scales" => self.holder_scales = parse_one(raw)?,
            "holder.pairs" => self.holder_pairs = parse_one(raw)?,
            "holder.beak_samples" => self.beak_samples = parse_one(raw)?,
            "spectrum.period_cap" => self.period_cap = parse_one(raw)?,
            "spectrum.probe_n" => self.probe_n = parse_one(raw)?,
            "shadow.window" => self.shadow_window = parse_one(raw)?,
            "shadow.defects" => self.shadow_defects = parse_list(raw)?,
            "shadow.trials" => self.shadow_trials = parse_one(raw)?,
            "fisher.epsilons" => self.fisher_epsilons = parse_list(raw)?,
            "fisher.window" => self.fisher_window = parse_one(raw)?,
            "output.dir" => self.output_dir = PathBuf::from(raw),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a config file body on top of the defaults. Later lines win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split_once('#').map_or(raw, |(b, _)| b).trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| LabError::Config { line, msg: format!("expected `key = value`, got `{body}`") })?;
            let (key, value) = (key.trim(), value.trim());
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(LabError::Config { line, msg: format!("unknown key `{key}`") }),
                Err(msg) => return Err(LabError::Config { line, msg: format!("{key}: {msg}") }),
            }
        }
        cfg.validate("config file")?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `TANGENCY_LAB_*` overrides from `vars`. A prefixed variable that names no key
    /// is an error.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = Self::KEYS.iter().find(|k| k.to_uppercase().replace('.', "_") == rest).ok_or_else(|| {
                LabError::ConfigValue {
                    key: name.clone(),
                    origin: "environment".into(),
                    msg: "names no config key".into(),
                }
            })?;
            self.set(key, value.trim()).map_err(|msg| LabError::ConfigValue {
                key: key.to_string(),
                origin: format!("environment variable {name}"),
                msg,
            })?;
        }
        self.validate("environment")
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let bad = |key: &str, msg: String| LabError::ConfigValue { key: key.into(), origin: origin.into(), msg };
        if !(self.r > 0.0) {
            return Err(bad("map.r", format!("radius must be positive, got {}", self.r)));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(bad("map.t", format!("t must lie in [0, 1], got {}", self.t)));
        }
        if !(self.tangency_alpha > 0.0 && self.tangency_alpha <= 2.0) {
            return Err(bad("map.tangency_alpha", format!("must lie in (0, 2], got {}", self.tangency_alpha)));
        }
        if self.k == 0 {
            return Err(bad("map.k", "cover size must be positive".into()));
        }
        for (key, xs) in [("shadow.defects", &self.shadow_defects), ("fisher.epsilons", &self.fisher_epsilons)] {
            if xs.iter().any(|&x| !(x > 0.0)) {
                return Err(bad(key, "entries must be positive".into()));
            }
        }
        Ok(())
    }

    /// Config file text with every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        Self::KEYS.iter().map(|&k| (k, self.get(k))).collect()
    }

    pub fn profile(&self) -> Result<BumpProfile> {
        match self.profile {
            ProfileId::Quadratic => BumpProfile::quadratic(self.r),
            ProfileId::Power => BumpProfile::power(self.r, self.tangency_alpha),
            ProfileId::Smooth => BumpProfile::smooth(self.r),
        }
    }

    pub fn build(&self) -> Result<(PerturbedMap, HeteroclinicFrame)> {
        let lin = ToralAutomorphism::new(self.matrix, self.k)?;
        let frame = build_heteroclinic_frame(
            &lin,
            TorusPoint::new(self.p.0, self.p.1, self.k),
            TorusPoint::new(self.q.0, self.q.1, self.k),
            FRAME_SEARCH,
        )?;
        let map = PerturbedMap::new(lin, frame.r_point, self.profile()?, self.t)?;
        Ok((map, frame))
    }

    pub fn direction_settings(&self) -> DirectionSettings {
        DirectionSettings { tol: self.direction_tol, ..DirectionSettings::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn shipped_config_is_the_default() {
        let text = include_str!("../../../../configs/default.cfg");
        assert_eq!(ExperimentConfig::parse(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let cfg = ExperimentConfig::parse("# header\n\nmap.k = 3 # cover\nmap.t=0.5\nmap.k = 4\n").unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.t, 0.5);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        match ExperimentConfig::parse("map.k = 5\n\nmap.kk = 3\n") {
            Err(LabError::Config { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("map.kk"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("map.k 5"), Err(LabError::Config { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("map.k = five"), Err(LabError::Config { line: 1, .. })));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let err = ExperimentConfig::parse("map.t = 1.5").unwrap_err();
        assert!(matches!(err, LabError::ConfigValue { ref key, .. } if key == "map.t"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn environment_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_env([
            ("TANGENCY_LAB_MAP_T".to_string(), "0.25".to_string()),
            ("TANGENCY_LAB_FISHER_EPSILONS".to_string(), "1e-2,1e-3".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.t, 0.25);
        assert_eq!(cfg.fisher_epsilons, vec![1e-2, 1e-3]);
        let err = cfg.apply_env([("TANGENCY_LAB_MAP_Z".to_string(), "1".to_string())]).unwrap_err();
        assert!(matches!(err, LabError::ConfigValue { .. }));
        let err = cfg.apply_env([("TANGENCY_LAB_MAP_K".to_string(), "x".to_string())]).unwrap_err();
        assert!(err.to_string().contains("TANGENCY_LAB_MAP_K"));
    }

    #[test]
    fn builds_the_default_map() {
        let (map, frame) = ExperimentConfig::default().build().unwrap();
        assert!((map.center.x - 4.381966).abs() < 1e-6 && (map.center.y - 3.472136).abs() < 1e-6);
        assert_eq!(frame.r_point, map.center);
    }

    proptest! {
        #[test]
        fn arbitrary_configs_round_trip(
            k in 1u32..9,
            r in 1e-3f64..0.5,
            t in 0.0f64..=1.0,
            alpha in 0.1f64..=2.0,
            seed in any::<u64>(),
            eps in proptest::collection::vec(1e-8f64..1.0, 1..6),
            profile in prop_oneof![Just(ProfileId::Quadratic), Just(ProfileId::Power), Just(ProfileId::Smooth)],
        ) {
            let cfg = ExperimentConfig {
                k, r, t, tangency_alpha: alpha, seed, profile,
                fisher_epsilons: eps,
                output_dir: PathBuf::from("runs/a b"),
                ..ExperimentConfig::default()
            };
            prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
