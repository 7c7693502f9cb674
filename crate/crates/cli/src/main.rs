//! habitforge: batch analytics over gym cohort files — synthetic cohort
//! generation, visit clustering, survival streaks, critical-visit milestones,
//! demographic deviations, matched causal effects, and an SVG report.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{resolve, ConfigOverlay, RunConfig};

#[derive(Parser)]
#[command(
    name = "habitforge",
    version,
    about = "Cohort analytics: visit clustering, survival streaks, milestones, and matched intervention effects",
    after_help = "Config resolution: defaults < --config file < flags; HABITFORGE_SEED fills the seed when unset.\n\
                  Every run writes manifest_<subcommand>.json; re-running with --config <manifest> reproduces it byte for byte."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Input directory with members.csv / visits.csv / interventions.csv.
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed for every randomized stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Config file (JSON); a previous run's manifest also works.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Cluster count.
    #[arg(long)]
    k: Option<usize>,
    /// Observation window in membership weeks.
    #[arg(long)]
    window: Option<u32>,
    /// Later window for the transition matrix.
    #[arg(long)]
    transition_window: Option<u32>,
    /// Refit the later window instead of projecting onto fixed components.
    #[arg(long)]
    refit: bool,
    /// Absent weeks tolerated inside a streak.
    #[arg(long)]
    gap_tolerance: Option<u32>,
    /// Inclusive week range, e.g. 6..17.
    #[arg(long)]
    weeks: Option<String>,
    /// Treatment name, `all`, or `self_reported`.
    #[arg(long)]
    treatment: Option<String>,
    /// Contrast level: low|moderate|high, gtN, or all.
    #[arg(long)]
    level: Option<String>,
    /// Random-common-cause refuter draws (0 = off).
    #[arg(long)]
    refute: Option<usize>,
    /// Also rerun causal cells inside each cluster.
    #[arg(long)]
    per_cluster: bool,
    /// Members to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Scale visit rows to unit sum before factorizing.
    #[arg(long)]
    normalize: bool,
}

impl CommonArgs {
    fn overlay(&self) -> ConfigOverlay {
        ConfigOverlay {
            input: self.input.clone(),
            out: self.out.clone(),
            seed: self.seed,
            k: self.k,
            window: self.window,
            transition_window: self.transition_window,
            refit: self.refit.then_some(true),
            gap_tolerance: self.gap_tolerance,
            weeks: self.weeks.clone(),
            treatment: self.treatment.clone(),
            level: self.level.clone(),
            refute: self.refute,
            per_cluster: self.per_cluster.then_some(true),
            n: self.n,
            normalize_rows: self.normalize.then_some(true),
            ..Default::default()
        }
    }

    fn resolve(&self) -> anyhow::Result<RunConfig> {
        resolve(self.config.as_deref(), self.overlay())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with ground-truth labels.
    Generate(CommonArgs),
    /// Build the member-by-hour visit count matrix.
    Vectorize(CommonArgs),
    /// Factorize visit patterns into clusters and the transition matrix.
    Cluster(CommonArgs),
    /// Survival streaks, CDFs, and gap-week statistics.
    Survival(CommonArgs),
    /// Per-week critical visit counts and the milestone line fit.
    Critical(CommonArgs),
    /// Demographic deviations per cluster.
    Deviations(CommonArgs),
    /// Propensity-matched effect estimates.
    Causal(CommonArgs),
    /// The full pipeline rendered as SVG figures plus summary.json.
    Report(CommonArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(args) => {
            commands::generate(&args.resolve()?).map_err(|e| commands::qualify("generate", e))
        }
        Command::Vectorize(args) => {
            commands::vectorize(&args.resolve()?).map_err(|e| commands::qualify("vectorize", e))
        }
        Command::Cluster(args) => {
            commands::cluster(&args.resolve()?).map_err(|e| commands::qualify("cluster", e))
        }
        Command::Survival(args) => {
            commands::survival(&args.resolve()?).map_err(|e| commands::qualify("survival", e))
        }
        Command::Critical(args) => {
            commands::critical(&args.resolve()?).map_err(|e| commands::qualify("critical", e))
        }
        Command::Deviations(args) => {
            commands::deviations(&args.resolve()?).map_err(|e| commands::qualify("deviations", e))
        }
        Command::Causal(args) => {
            commands::causal(&args.resolve()?).map_err(|e| commands::qualify("causal", e))
        }
        Command::Report(args) => {
            commands::report::report(&args.resolve()?).map_err(|e| commands::qualify("report", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
