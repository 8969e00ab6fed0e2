use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dccox::hypothesis::TestKind;
use dccox::kernel::KernelFamily;

#[derive(Debug, Parser)]
#[command(name = "dccox", version, about = "Degree-corrected Cox models for directed event networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Fit parameter curves with pointwise confidence intervals.
    Fit(Flags),
    /// Choose (h1, h2) by K-fold cross-validation.
    Cv(Flags),
    /// Multiplier-bootstrap tests.
    Test(Flags),
    /// Observed against fitted cumulative counts per node.
    Gof(Flags),
    /// Generate a synthetic event stream from a scenario.
    Simulate(Flags),
}

impl Sub {
    pub fn split(&self) -> (Command, &Flags) {
        match self {
            Sub::Fit(f) => (Command::Fit, f),
            Sub::Cv(f) => (Command::Cv, f),
            Sub::Test(f) => (Command::Test, f),
            Sub::Gof(f) => (Command::Gof, f),
            Sub::Simulate(f) => (Command::Simulate, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Cv,
    Test,
    Gof,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Cv => "cv",
            Command::Test => "test",
            Command::Gof => "gof",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Epanechnikov => KernelFamily::Epanechnikov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    TemporalEta,
    TemporalGamma,
    DegreeAlpha,
    DegreeBeta,
}

impl From<KindArg> for TestKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::TemporalEta => TestKind::TemporalEta,
            KindArg::TemporalGamma => TestKind::TemporalGamma,
            KindArg::DegreeAlpha => TestKind::DegreeAlpha,
            KindArg::DegreeBeta => TestKind::DegreeBeta,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with a table per command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub h1: Option<f64>,
    #[arg(long)]
    pub h2: Option<f64>,
    /// Number of equally spaced evaluation points in (0, tau).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "DCCOX_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub nboot: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Number of nodes when it exceeds the largest numeric id.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Node whose in-degree parameter is pinned to zero (default: the last node).
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long = "kernel", value_enum)]
    pub kernel_arg: Option<KernelArg>,
    #[arg(long = "kind", value_enum)]
    pub kind_arg: Option<KindArg>,
    /// Exit non-zero when any grid point fails to converge.
    #[arg(long)]
    pub strict: Option<bool>,
    /// Report errors as a JSON object on stderr.
    #[arg(long)]
    pub error_json: bool,

    #[arg(skip)]
    pub kernel: Option<KernelFamily>,
    #[arg(skip)]
    pub kind: Option<TestKind>,
}

impl Flags {
    /// Fill the library-typed fields from their clap counterparts.
    pub fn normalised(mut self) -> Self {
        self.kernel = self.kernel_arg.map(Into::into);
        self.kind = self.kind_arg.map(Into::into);
        self
    }
}
