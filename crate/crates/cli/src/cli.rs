use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "lcga",
    version,
    about = "Latent class growth analysis for bounded ordinal longitudinal scores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known trajectory groups.
    Simulate(SimulateArgs),
    /// Fit one class count and write parameters and posteriors.
    Fit(FitArgs),
    /// Fit a range of class counts and select one by BIC.
    Select(FitArgs),
    /// Run a replicate study over simulated cohorts.
    Study(StudyArgs),
    /// Emit trajectory and category-probability curves of a fitted model.
    Plotdata(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Cnorm,
    Probit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Em,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConvergenceArg {
    Loglik,
    Triple,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Ladder,
    MinBic,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Map raw 0-10 scores to the three ordinal categories.
    #[arg(long, num_args = 0..=1, default_missing_value = "on")]
    pub categorize: Option<Switch>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub family: Option<FamilyArg>,
    /// Single class count.
    #[arg(long, conflicts_with = "class_range")]
    pub classes: Option<usize>,
    /// Inclusive class-count range such as `1..4` or `1-4`.
    #[arg(long)]
    pub class_range: Option<String>,
    #[arg(long)]
    pub poly_order: Option<usize>,
    /// Baseline covariates in the class-membership model.
    #[arg(long)]
    pub covariates: Option<Switch>,
    /// Class-count selection rule.
    #[arg(long)]
    pub rule: Option<RuleArg>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimationArgs {
    /// Random starts per class count.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub convergence: Option<ConvergenceArg>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Design 1 (covariate-driven) or 2 (adds pre-event rate shift).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: Option<u8>,
    /// Subjects per group as `low,increasing,decreasing`.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Long-format CSV: subject_id,time,score[,z1..zp][,true_class].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: Option<u8>,
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Previously written fit.json; when absent the model is fitted first.
    #[arg(long)]
    pub fit_file: Option<PathBuf>,
}
