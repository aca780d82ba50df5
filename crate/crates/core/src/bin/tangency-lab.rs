use anyhow::{Context, Result};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use tangency_lab::harness::{run, ExperimentConfig, RunOutcome, Subcommand};
use tangency_lab::LabError;

/// Experiments on the perturbed toral automorphism. Exit codes: 0 ok, 2 config error,
/// 3 numeric failure, 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "tangency-lab", version)]
struct Cli {
    /// map-check, cones, tangency, conjugacy, holder, spectrum, shadow, fisher or all
    subcommand: Subcommand,
    /// Config file of `key = value` lines; missing keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(&cli.config).with_context(|| format!("reading config {}", cli.config.display()))?;
    cfg.apply_env(env)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<RunOutcome> {
    let cfg = load_config(cli, env)?;
    Ok(run(cli.subcommand, &cfg)?)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(|e| e.downcast_ref::<LabError>()).map_or(1, |e| e.exit_code() as u8)
}

fn report(outcome: &RunOutcome) {
    for line in &outcome.log {
        eprintln!("{line}");
    }
    for c in &outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for (sub, err) in &outcome.failed {
        println!("ERROR {sub}: {err}");
    }
    for a in &outcome.artifacts {
        eprintln!("wrote {}", a.display());
    }
}

/// Runs the CLI on `args` and returns the process exit code.
fn main_with<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, env) {
        Ok(outcome) => {
            report(&outcome);
            // An `all` run with a failed experiment has partial artifacts.
            if outcome.failed.is_empty() {
                0
            } else {
                3
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(main_with(std::env::args_os(), std::env::vars()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const SMALL: &str = "\
map_check.samples = 300
cones.samples = 100
holder.scales = 6
holder.pairs = 20
holder.beak_samples = 10
shadow.window = 20
shadow.trials = 2
";

    fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("lab.cfg");
        std::fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
        (dir, cfg)
    }

    fn cli(sub: &str, cfg: &Path, out: &Path, rest: &[&str]) -> Vec<String> {
        let mut args: Vec<String> = ["tangency-lab", sub, "--config"].iter().map(|s| s.to_string()).collect();
        args.push(cfg.display().to_string());
        args.push("--out".into());
        args.push(out.display().to_string());
        args.extend(rest.iter().map(|s| s.to_string()));
        args
    }

    #[test]
    fn map_check_at_t0_exits_zero() {
        let (dir, cfg) = setup("map.t = 0\n");
        let out = dir.path().join("out");
        assert_eq!(main_with(cli("map-check", &cfg, &out, &[]), []), 0);
        let summary = std::fs::read_to_string(out.join("map_check.json")).unwrap();
        assert!(summary.contains("\"linear-at-t0\""));
        assert!(!summary.contains("\"passed\": false"));
    }

    #[test]
    fn holder_after_conjugacy_hits_the_grid_cache() {
        let (dir, cfg) = setup("");
        let out = dir.path().join("out");
        assert_eq!(main_with(cli("conjugacy", &cfg, &out, &[]), []), 0);
        let built = std::fs::metadata(out.join("conjugacy.grid")).unwrap().modified().unwrap();
        let parsed = Cli::try_parse_from(cli("holder", &cfg, &out, &[])).unwrap();
        let outcome = execute(&parsed, []).unwrap();
        assert!(outcome.log.iter().any(|l| l.contains("cache hit")), "{:?}", outcome.log);
        let after = std::fs::metadata(out.join("conjugacy.grid")).unwrap().modified().unwrap();
        assert_eq!(built, after);
    }

    #[test]
    fn same_seed_gives_identical_csv() {
        let (dir, cfg) = setup("");
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        assert_eq!(main_with(cli("cones", &cfg, &a, &["--seed", "7"]), []), 0);
        assert_eq!(main_with(cli("cones", &cfg, &b, &["--seed", "7"]), []), 0);
        let read = |d: &Path| std::fs::read(d.join("cones.csv")).unwrap();
        assert_eq!(read(&a), read(&b));
        let json = |d: &Path| std::fs::read_to_string(d.join("cones.json")).unwrap();
        assert_eq!(json(&a).replace(&a.display().to_string(), ""), json(&b).replace(&b.display().to_string(), ""));
    }

    #[test]
    fn env_overrides_the_file() {
        let (dir, cfg) = setup("seed = 3\n");
        let parsed = Cli::try_parse_from(cli("map-check", &cfg, dir.path(), &[])).unwrap();
        let env = [("TANGENCY_LAB_SEED".to_string(), "11".to_string()), ("PATH".into(), "/bin".into())];
        assert_eq!(load_config(&parsed, env).unwrap().seed, 11);
        let parsed = Cli::try_parse_from(cli("map-check", &cfg, dir.path(), &["--seed", "5"])).unwrap();
        let env = [("TANGENCY_LAB_SEED".to_string(), "11".to_string())];
        assert_eq!(load_config(&parsed, env).unwrap().seed, 5);
    }

    #[test]
    fn config_errors_exit_two() {
        let (dir, cfg) = setup("holder.colour = blue\n");
        assert_eq!(main_with(cli("map-check", &cfg, dir.path(), &[]), []), 2);
        let (dir, cfg) = setup("");
        let env = [("TANGENCY_LAB_NOT_A_KEY".to_string(), "1".to_string())];
        assert_eq!(main_with(cli("map-check", &cfg, dir.path(), &[]), env), 2);
        assert_eq!(main_with(cli("bogus", &cfg, dir.path(), &[]), []), 2);
        assert_eq!(main_with(["tangency-lab", "map-check"], []), 2);
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("absent.cfg");
        assert_eq!(main_with(cli("map-check", &cfg, dir.path(), &[]), []), 4);
    }
}
