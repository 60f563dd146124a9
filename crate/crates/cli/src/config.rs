use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsqstab::conjecture::EntryDistribution;
use nsqstab::dominance::BalanceForm;
use nsqstab::{SolverOptions, Tolerances};
use serde::Serialize;

/// Environment variable overriding the selection enumeration cap.
pub const CAP_ENV: &str = "NSQSTAB_CAP";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "nsqstab",
    version,
    about = "Stability checks for block-structured non-square matrices"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Write a machine-readable report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub eig_tol: f64,
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub sym_tol: f64,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub margin_tol: f64,
    /// Iteration budget of the diagonal search.
    #[arg(long, global = true, default_value_t = 5000)]
    pub solver_budget: usize,
    /// Optimality gap at which the diagonal search stops.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub gap_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VlMode {
    /// One diagonal shared by every squared matrix.
    Sim,
    /// A separate diagonal per squared matrix.
    Ind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormArg {
    Symmetric,
    EntrywiseAbsolute,
}

impl From<FormArg> for BalanceForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Symmetric => BalanceForm::Symmetric,
            FormArg::EntrywiseAbsolute => BalanceForm::EntrywiseAbsolute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionArg {
    Uniform,
    ClassFShifted,
    Symmetric,
}

impl From<DistributionArg> for EntryDistribution {
    fn from(d: DistributionArg) -> Self {
        match d {
            DistributionArg::Uniform => EntryDistribution::Uniform,
            DistributionArg::ClassFShifted => EntryDistribution::ClassFShifted,
            DistributionArg::Symmetric => EntryDistribution::Symmetric,
        }
    }
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// List the squared matrices of a plant.
    Enum {
        file: PathBuf,
        /// Enumerate reduced selections with this many active groups instead.
        #[arg(long)]
        reduced: Option<usize>,
    },
    /// Search for a diagonal Lyapunov certificate.
    Vl {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "sim")]
        mode: VlMode,
    },
    /// Search for a diagonal making every balanced matrix column dominant.
    Dom {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "symmetric")]
        form: FormArg,
    },
    /// Test the eigenvalue condition over sampled detunings.
    Dus {
        file: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        /// Evaluations spent on targeted falsification after the sweep.
        #[arg(long, default_value_t = 0)]
        falsify_budget: usize,
    },
    /// Check the aggregation identity for the file's `E` and `K`.
    GammaVerify {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Check the normal class-F hypotheses, then the common-diagonal pipeline.
    Theorem2 {
        file: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        falsify_budget: usize,
    },
    /// Random search for plants whose squared matrices are individually
    /// certified but which violate the eigenvalue condition.
    Conjecture {
        /// Group sizes, e.g. `2,1,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Number of instances to draw.
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "uniform")]
        distribution: DistributionArg,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        shift: f64,
        #[arg(long, default_value_t = 500)]
        falsify_budget: usize,
        /// Random positive gains each witness must also violate.
        #[arg(long, default_value_t = 8)]
        gain_samples: usize,
        #[arg(long, default_value_t = 1000)]
        max_retries: usize,
        /// Append candidates to this file, one report per line.
        #[arg(long, value_name = "PATH")]
        archive: Option<PathBuf>,
    },
    /// Integrate the static loop `de/dt = -(A E K) e`.
    Demo {
        file: PathBuf,
        /// Step size (default `0.05 / spectral radius`).
        #[arg(long)]
        dt: Option<f64>,
        /// Horizon (default `20 / |margin|`).
        #[arg(long)]
        t: Option<f64>,
        /// Initial state (default all ones).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
    },
}

/// Everything that determines a run's output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub args: Command,
    pub report: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub tolerances: Tolerances,
    pub solver: SolverOptions,
    pub cap: usize,
}

impl RunConfig {
    pub fn new(cli: &Cli, cap: usize) -> Self {
        let g = &cli.global;
        Self {
            args: cli.command.clone(),
            report: g.report.clone(),
            jobs: g.jobs,
            tolerances: Tolerances {
                eig_tol: g.eig_tol,
                sym_tol: g.sym_tol,
                margin_tol: g.margin_tol,
            },
            solver: SolverOptions {
                budget: g.solver_budget,
                gap_tol: g.gap_tol,
                ..SolverOptions::default()
            },
            cap,
        }
    }
}
