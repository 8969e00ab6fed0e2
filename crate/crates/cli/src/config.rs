//! TOML run configuration with one table per command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dccox::estimator::SolverConfig;
use dccox::hypothesis::TestKind;
use dccox::kernel::KernelFamily;
use dccox::simulate::Scenario;
use serde::Deserialize;

use crate::cli::{Command, Flags};

/// Every key any command understands; which ones a command accepts is checked separately.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub events: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub tau: Option<f64>,
    pub nodes: Option<usize>,
    pub p: Option<usize>,
    pub reference: Option<String>,
    pub kernel: Option<KernelFamily>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub grid: Option<usize>,
    pub grid_points: Option<Vec<f64>>,
    pub level: Option<f64>,
    pub strict: Option<bool>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub solver: Option<SolverConfig>,
    pub h1_grid: Option<Vec<f64>>,
    pub h2_grid: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub kind: Option<TestKind>,
    pub nu: Option<f64>,
    pub nboot: Option<usize>,
    pub scenario: Option<Scenario>,
}

const INPUT: &[&str] = &[
    "events", "covariates", "tau", "nodes", "p", "reference", "kernel", "grid", "grid_points", "out", "threads",
    "solver",
];

fn allowed(cmd: Command) -> Vec<&'static str> {
    let extra: &[&str] = match cmd {
        Command::Fit => &["h1", "h2", "level", "strict"],
        Command::Cv => &["h1_grid", "h2_grid", "folds", "seed"],
        Command::Test => &["h1", "h2", "kind", "nu", "nboot", "seed"],
        Command::Gof => &["h1", "h2", "strict"],
        Command::Simulate => return vec!["scenario", "grid", "grid_points", "out", "threads", "seed", "tau"],
    };
    INPUT.iter().chain(extra).copied().collect()
}

/// Load the table for `cmd` from a config file; relative paths resolve against the file's directory.
pub fn load_section(path: &Path, cmd: Command) -> anyhow::Result<Section> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    for key in doc.keys() {
        if !["fit", "cv", "test", "gof", "simulate"].contains(&key.as_str()) {
            bail!("config {}: unknown section [{key}]", path.display());
        }
    }
    let Some(table) = doc.remove(cmd.name()) else {
        return Ok(Section::default());
    };
    let toml::Value::Table(table) = table else {
        bail!("config {}: [{}] must be a table", path.display(), cmd.name());
    };
    let ok = allowed(cmd);
    if let Some(bad) = table.keys().find(|k| !ok.contains(&k.as_str())) {
        bail!("config {}: key {bad:?} is not valid in [{}]", path.display(), cmd.name());
    }
    let mut s: Section = table
        .try_into()
        .with_context(|| format!("config {}: invalid [{}] table", path.display(), cmd.name()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut s.events, &mut s.covariates, &mut s.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(s)
}

/// Apply command-line flags on top of the config table.
pub fn merge(mut s: Section, f: &Flags, cmd: Command) -> anyhow::Result<Section> {
    let ok = allowed(cmd);
    let set = |key: &str, present: bool| -> anyhow::Result<bool> {
        if present && !ok.contains(&key) {
            bail!("--{} does not apply to `{}`", key.replace('_', "-"), cmd.name());
        }
        Ok(present)
    };
    macro_rules! over {
        ($field:ident, $key:literal) => {
            if set($key, f.$field.is_some())? {
                s.$field = f.$field.clone();
            }
        };
    }
    over!(events, "events");
    over!(covariates, "covariates");
    over!(tau, "tau");
    over!(nodes, "nodes");
    over!(reference, "reference");
    over!(kernel, "kernel");
    over!(h1, "h1");
    over!(h2, "h2");
    over!(grid, "grid");
    over!(level, "level");
    over!(strict, "strict");
    over!(out, "out");
    over!(threads, "threads");
    over!(folds, "folds");
    over!(seed, "seed");
    over!(kind, "kind");
    over!(nu, "nu");
    over!(nboot, "nboot");
    if set("grid", f.grid.is_some())? {
        s.grid_points = None;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn reads_the_command_table() {
        let (dir, path) = write("[fit]\nevents = \"ev.csv\"\nh1 = 0.2\nh2 = 0.02\n[fit.solver]\ntol = 1e-4\n");
        let s = load_section(&path, Command::Fit).unwrap();
        assert_eq!(s.events.unwrap(), dir.path().join("ev.csv"));
        assert_eq!(s.h1, Some(0.2));
        assert_eq!(s.solver.unwrap().tol, 1e-4);
        assert!(load_section(&path, Command::Cv).unwrap().events.is_none());
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        let (_d, path) = write("[fit]\nbandwidth = 0.2\n");
        assert!(load_section(&path, Command::Fit).is_err());
        let (_d, path) = write("[fit]\nnboot = 10\n");
        assert!(load_section(&path, Command::Fit).is_err());
        let (_d, path) = write("[fitting]\nh1 = 0.2\n");
        assert!(load_section(&path, Command::Fit).is_err());
        let (_d, path) = write("[fit.solver]\ntolerance = 1\n");
        assert!(load_section(&path, Command::Fit).is_err());
    }

    #[test]
    fn flags_override_config() {
        let (_d, path) = write("[test]\nh1 = 0.2\nnboot = 10\ngrid_points = [0.5]\n");
        let s = load_section(&path, Command::Test).unwrap();
        let f = Flags {
            nboot: Some(99),
            grid: Some(5),
            ..Flags::default()
        };
        let m = merge(s, &f, Command::Test).unwrap();
        assert_eq!(m.nboot, Some(99));
        assert_eq!(m.h1, Some(0.2));
        assert_eq!(m.grid, Some(5));
        assert!(m.grid_points.is_none());
        let bad = Flags {
            nboot: Some(1),
            ..Flags::default()
        };
        assert!(merge(Section::default(), &bad, Command::Fit).is_err());
    }
}
