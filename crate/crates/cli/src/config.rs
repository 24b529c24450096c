use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use voltvar::SubproblemMethod;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dvo,
    Rvo,
    Evaluate,
    Sweep,
    Simulate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subproblem {
    Auto,
    Heuristic,
    DualBnb,
    Enumerate,
}

impl From<Subproblem> for SubproblemMethod {
    fn from(s: Subproblem) -> Self {
        match s {
            Subproblem::Auto => SubproblemMethod::Auto,
            Subproblem::Heuristic => SubproblemMethod::Heuristic,
            Subproblem::DualBnb => SubproblemMethod::DualBnb,
            Subproblem::Enumerate => SubproblemMethod::Enumerate,
        }
    }
}

/// Robust Volt-VAR dispatch studies on radial feeders.
#[derive(Debug, Parser)]
#[command(name = "voltvar", version)]
pub struct Cli {
    /// JSON run configuration; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Box half-width as a fraction of the forecast.
    #[arg(long)]
    pub volatility: Option<f64>,
    /// Comma-separated volatilities for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub volatilities: Option<Vec<f64>>,
    /// Stopping tolerance on `UB − LB`, p.u.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// `time,load_mult,pv_mult` CSV for `simulate`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Relative optimality gap of the branch-and-bound.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub node_limit: Option<usize>,
    #[arg(long, value_enum)]
    pub subproblem: Option<Subproblem>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Use whole-horizon extremes for the robust boxes in `simulate`.
    #[arg(long)]
    pub whole_horizon: bool,
    /// Record wall-clock times in trace.csv (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

/// Every entry is optional; missing entries fall back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub network: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub volatility: Option<f64>,
    pub volatilities: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub profile: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub gap: Option<f64>,
    pub node_limit: Option<usize>,
    pub subproblem: Option<Subproblem>,
    pub max_iterations: Option<usize>,
    pub whole_horizon: Option<bool>,
    pub timings: Option<bool>,
    pub slow_minutes: Option<u32>,
    pub fast_minutes: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub network: PathBuf,
    pub mode: Mode,
    pub volatility: f64,
    pub volatilities: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub samples: usize,
    pub profile: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
    pub gap: f64,
    pub node_limit: usize,
    pub subproblem: Subproblem,
    pub max_iterations: usize,
    pub whole_horizon: bool,
    pub timings: bool,
    pub slow_minutes: u32,
    pub fast_minutes: u32,
}

impl RunConfig {
    pub fn resolve(cli: Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let network = cli.network.or(file.network).context("--network is required")?;
        let mode = cli.mode.or(file.mode).context("--mode is required")?;
        let cfg = RunConfig {
            network,
            mode,
            volatility: cli.volatility.or(file.volatility).unwrap_or(0.1),
            volatilities: cli.volatilities.or(file.volatilities).unwrap_or_else(|| vec![0.02, 0.04, 0.06, 0.08, 0.1]),
            epsilon: cli.epsilon.or(file.epsilon).unwrap_or(1e-4),
            seed: cli.seed.or(file.seed).unwrap_or(1),
            samples: cli.samples.or(file.samples).unwrap_or(100),
            profile: cli.profile.or(file.profile),
            out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            workers: cli.workers.or(file.workers).unwrap_or(1),
            gap: cli.gap.or(file.gap).unwrap_or(1e-6),
            node_limit: cli.node_limit.or(file.node_limit).unwrap_or(20_000),
            subproblem: cli.subproblem.or(file.subproblem).unwrap_or(Subproblem::Auto),
            max_iterations: cli.max_iterations.or(file.max_iterations).unwrap_or(30),
            whole_horizon: cli.whole_horizon || file.whole_horizon.unwrap_or(false),
            timings: cli.timings || file.timings.unwrap_or(false),
            slow_minutes: file.slow_minutes.unwrap_or(120),
            fast_minutes: file.fast_minutes.unwrap_or(15),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for &nu in std::iter::once(&self.volatility).chain(&self.volatilities) {
            if !(0.0..1.0).contains(&nu) {
                bail!("volatility {nu} must lie in [0, 1)");
            }
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be positive, got {}", self.epsilon);
        }
        if !(self.gap >= 0.0) {
            bail!("gap must be non-negative, got {}", self.gap);
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.node_limit == 0 {
            bail!("node limit must be at least 1");
        }
        if self.mode == Mode::Evaluate && self.samples == 0 {
            bail!("evaluate needs at least one sample");
        }
        if self.mode == Mode::Simulate && self.profile.is_none() {
            bail!("simulate needs --profile");
        }
        if self.mode == Mode::Sweep && self.volatilities.is_empty() {
            bail!("sweep needs at least one volatility");
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"network": "a.json", "mode": "rvo", "volatility": 0.2, "seed": 9}"#).unwrap();
        let cli = Cli::parse_from(["voltvar", "--config", path.to_str().unwrap(), "--volatility", "0.05"]);
        let cfg = RunConfig::resolve(cli).unwrap();
        assert_eq!(cfg.volatility, 0.05);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, Mode::Rvo);
        assert_eq!(cfg.epsilon, 1e-4);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = |args: &[&str]| RunConfig::resolve(Cli::parse_from(args)).is_err();
        assert!(bad(&["voltvar", "--network", "n.json", "--mode", "rvo", "--volatility", "1.0"]));
        assert!(bad(&["voltvar", "--network", "n.json", "--mode", "rvo", "--epsilon", "0"]));
        assert!(bad(&["voltvar", "--network", "n.json", "--mode", "simulate"]));
        assert!(bad(&["voltvar", "--mode", "dvo"]));
    }
}
