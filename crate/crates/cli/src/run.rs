use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;
use nsqstab::block::{
    assemble_aek, enumerate_full_selections, enumerate_reduced_selections, extract_squared,
    full_squared_matrices, DEFAULT_SELECTION_CAP,
};
use nsqstab::conjecture::{search_conjecture, InstanceSpec, SearchConfig, SearchSummary};
use nsqstab::dominance::{dominance_implies_vl, find_balance_d};
use nsqstab::dus::{
    falsify_condition, loop_spectral_radius, simulate_static_loop, sweep_condition, theorem2_check,
    DusReport, DusVerdict, FalsifyOutcome, PipelineConfig, SamplerConfig,
};
use nsqstab::gamma::verify_aggregation_identity;
use nsqstab::linalg::min_real_eig;
use nsqstab::lyapunov::{find_common_d, find_individual_ds};
use nsqstab::{
    Detuning, FeasibilityStatus, FeasibilityVerdict, GainMatrix, RealMatrix, SquaredSelection,
};
use serde::Serialize;
use thiserror::Error;

use crate::config::{Cli, Command, RunConfig, VlMode, CAP_ENV};
use crate::format::{format_matrix, parse_matrix_file, FileError, MatrixFile};
use crate::report::{sha256_hex, to_line, Report};

pub mod exit {
    pub const HOLDS: i32 = 0;
    pub const REFUTED: i32 = 1;
    pub const UNKNOWN: i32 = 2;
    pub const USAGE: i32 = 64;
    pub const DATA: i32 = 65;
    pub const NO_INPUT: i32 = 66;
    pub const SOFTWARE: i32 = 70;
    pub const IO: i32 = 74;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}")]
    Core(#[from] nsqstab::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::File(FileError::Read { .. }) => exit::NO_INPUT,
            CliError::File(FileError::Parse { .. }) => exit::DATA,
            CliError::Core(nsqstab::Error::Numerical(_)) => exit::SOFTWARE,
            CliError::Core(_) => exit::DATA,
            CliError::Io { .. } => exit::IO,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn status_code(s: FeasibilityStatus) -> i32 {
    match s {
        FeasibilityStatus::Feasible => exit::HOLDS,
        FeasibilityStatus::Infeasible => exit::REFUTED,
        FeasibilityStatus::Unknown => exit::UNKNOWN,
    }
}

fn selection_cap() -> Result<usize, CliError> {
    match std::env::var(CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| {
                CliError::Usage(format!("{CAP_ENV} must be a positive integer, got `{v}`"))
            }),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_SELECTION_CAP),
        Err(e) => Err(CliError::Usage(format!("{CAP_ENV}: {e}"))),
    }
}

struct Ctx<'a> {
    config: RunConfig,
    input_hash: Option<String>,
    out: &'a mut (dyn Write + Send),
}

impl Ctx<'_> {
    fn finish<T: Serialize>(&mut self, code: i32, result: &T) -> Result<i32, CliError> {
        if let Some(path) = &self.config.report {
            let line = to_line(&Report::new(
                &self.config,
                self.input_hash.as_deref(),
                code,
                result,
            ));
            std::fs::write(path, format!("{line}\n")).map_err(io_err(path))?;
        }
        Ok(code)
    }

    fn load(&mut self, path: &Path) -> Result<MatrixFile, CliError> {
        let (file, bytes) = parse_matrix_file(path)?;
        self.input_hash = Some(sha256_hex(&bytes));
        Ok(file)
    }
}

macro_rules! say {
    ($ctx:expr, $($arg:tt)*) => {
        // Summary output is best effort; a closed pipe must not change the verdict.
        let _ = writeln!($ctx.out, $($arg)*);
    };
}

fn status_name(s: FeasibilityStatus) -> &'static str {
    match s {
        FeasibilityStatus::Feasible => "FEASIBLE",
        FeasibilityStatus::Infeasible => "INFEASIBLE",
        FeasibilityStatus::Unknown => "UNKNOWN",
    }
}

fn verdict_line(v: &FeasibilityVerdict) -> String {
    format!(
        "{}: best margin {}, upper bound {}, d = {:?}",
        status_name(v.status),
        v.best_objective,
        v.upper_bound,
        v.best_d
    )
}

#[derive(Serialize)]
struct EnumEntry {
    active: Vec<usize>,
    choice: Vec<usize>,
    matrix: Vec<Vec<f64>>,
}

fn cmd_enum(ctx: &mut Ctx, file: &Path, reduced: Option<usize>) -> Result<i32, CliError> {
    let a = ctx.load(file)?.plant;
    let cap = ctx.config.cap;
    let sels: Vec<SquaredSelection> = match reduced {
        Some(k) => enumerate_reduced_selections(a.structure(), k, cap)?,
        None => enumerate_full_selections(a.structure(), cap)?,
    };
    say!(ctx, "{} selections", sels.len());
    let mut entries = Vec::with_capacity(sels.len());
    for sel in &sels {
        let m = extract_squared(&a, sel)?;
        say!(
            ctx,
            "active {:?} choice {:?}\n{}",
            sel.active,
            sel.choice,
            format_matrix(&m, "  ").trim_end()
        );
        entries.push(EnumEntry {
            active: sel.active.clone(),
            choice: sel.choice.clone(),
            matrix: m.rows(),
        });
    }
    ctx.finish(exit::HOLDS, &entries)
}

#[derive(Serialize)]
struct VlResult {
    squared_matrices: usize,
    verdicts: Vec<FeasibilityVerdict>,
}

fn cmd_vl(ctx: &mut Ctx, file: &Path, mode: VlMode) -> Result<i32, CliError> {
    let a = ctx.load(file)?.plant;
    let mats = full_squared_matrices(&a, ctx.config.cap)?;
    let (tol, opts) = (ctx.config.tolerances, ctx.config.solver);
    let verdicts = match mode {
        VlMode::Sim => vec![find_common_d(&mats, &opts, &tol)?],
        VlMode::Ind => find_individual_ds(&mats, &opts, &tol)?,
    };
    for (i, v) in verdicts.iter().enumerate() {
        let label = if mode == VlMode::Sim {
            "common".to_string()
        } else {
            format!("matrix {i}")
        };
        say!(ctx, "{label}: {}", verdict_line(v));
    }
    let code = if verdicts
        .iter()
        .any(|v| v.status == FeasibilityStatus::Infeasible)
    {
        exit::REFUTED
    } else if verdicts.iter().all(FeasibilityVerdict::is_feasible) {
        exit::HOLDS
    } else {
        exit::UNKNOWN
    };
    ctx.finish(
        code,
        &VlResult {
            squared_matrices: mats.len(),
            verdicts,
        },
    )
}

#[derive(Serialize)]
struct DomResult {
    report: nsqstab::dominance::DominanceReport,
    implies_vl: Option<bool>,
}

fn cmd_dom(
    ctx: &mut Ctx,
    file: &Path,
    form: nsqstab::dominance::BalanceForm,
) -> Result<i32, CliError> {
    let a = ctx.load(file)?.plant;
    let mats = full_squared_matrices(&a, ctx.config.cap)?;
    let report = find_balance_d(&mats, form, &ctx.config.solver, &ctx.config.tolerances)?;
    say!(ctx, "{}", verdict_line(&report.verdict));
    let implies_vl = if report.verdict.is_feasible() {
        let holds = dominance_implies_vl(&mats, &report)?;
        say!(
            ctx,
            "balancing diagonal satisfies the Lyapunov inequalities: {holds}"
        );
        Some(holds)
    } else {
        None
    };
    let code = status_code(report.verdict.status);
    ctx.finish(code, &DomResult { report, implies_vl })
}

fn gain_or_ones(file: &MatrixFile) -> GainMatrix {
    file.gain
        .clone()
        .unwrap_or_else(|| GainMatrix::ones(file.plant.structure()))
}

#[derive(Serialize)]
struct DusResult {
    sweep: DusReport,
    falsification: Option<FalsifyOutcome>,
    refuted: bool,
}

fn cmd_dus(
    ctx: &mut Ctx,
    file: &Path,
    samples: usize,
    seed: u64,
    budget: usize,
) -> Result<i32, CliError> {
    let f = ctx.load(file)?;
    let k = gain_or_ones(&f);
    let tol = ctx.config.tolerances;
    let sweep = sweep_condition(
        &f.plant,
        &k,
        &SamplerConfig::new(samples, seed),
        ctx.config.cap,
        &tol,
    )?;
    say!(
        ctx,
        "sweep: {} over {} detunings, worst margin {}{}",
        if sweep.verdict == DusVerdict::Refuted {
            "REFUTED"
        } else {
            "HOLDS-ON-SAMPLES"
        },
        sweep.samples_tested,
        sweep.worst_margin,
        if sweep.marginal { " (marginal)" } else { "" }
    );
    let falsification = if budget > 0 {
        let out = falsify_condition(&f.plant, &k, budget, seed, -tol.eig_tol)?;
        say!(
            ctx,
            "falsification: best margin {} after {} evaluations",
            out.best_margin,
            out.evaluations
        );
        Some(out)
    } else {
        None
    };
    let refuted = sweep.verdict == DusVerdict::Refuted
        || falsification.as_ref().is_some_and(|o| o.witness.is_some());
    let witness = falsification
        .as_ref()
        .and_then(|o| o.witness.as_ref())
        .or(sweep
            .witness
            .as_ref()
            .filter(|_| sweep.verdict == DusVerdict::Refuted));
    if let (true, Some(w)) = (refuted, witness) {
        say!(
            ctx,
            "witness: E = {:?}, subsystem {:?}, margin {}",
            w.e,
            w.subset,
            w.margin
        );
    }
    let code = if refuted { exit::REFUTED } else { exit::HOLDS };
    ctx.finish(
        code,
        &DusResult {
            sweep,
            falsification,
            refuted,
        },
    )
}

fn cmd_gamma(ctx: &mut Ctx, file: &Path, tol: f64) -> Result<i32, CliError> {
    let f = ctx.load(file)?;
    let k = gain_or_ones(&f);
    let e = f
        .detuning
        .clone()
        .unwrap_or_else(|| Detuning::ones(f.plant.structure()));
    let check = verify_aggregation_identity(&f.plant, &e, &k, ctx.config.cap, tol)?;
    say!(
        ctx,
        "aggregation identity {}: residual {} (tolerance {tol:e}); without column scaling {}",
        if check.holds { "holds" } else { "FAILS" },
        check.residual,
        check.unscaled_residual
    );
    say!(
        ctx,
        "diagonal {:?}, scaling {:?}, anchors {:?}",
        check.d_used,
        check.scaling,
        check.anchors
    );
    let code = if check.holds {
        exit::HOLDS
    } else {
        exit::REFUTED
    };
    ctx.finish(code, &check)
}

fn pipeline(ctx: &Ctx, samples: usize, seed: u64, falsify_budget: usize) -> PipelineConfig {
    PipelineConfig {
        solver: ctx.config.solver,
        sampler: SamplerConfig::new(samples, seed),
        falsify_budget,
        cap: ctx.config.cap,
    }
}

fn cmd_theorem2(
    ctx: &mut Ctx,
    file: &Path,
    samples: usize,
    seed: u64,
    budget: usize,
) -> Result<i32, CliError> {
    let a = ctx.load(file)?.plant;
    let cfg = pipeline(ctx, samples, seed, budget);
    let report = theorem2_check(&a, &cfg, &ctx.config.tolerances)?;
    for h in &report.hypotheses {
        say!(
            ctx,
            "choice {:?}: normal {}, class F {}, positive stable {}",
            h.choice,
            h.normal,
            h.class_f,
            h.positive_stable
        );
    }
    let code = match &report.conclusion {
        None => {
            say!(ctx, "hypotheses REJECTED");
            exit::REFUTED
        }
        Some(c) => {
            say!(ctx, "common diagonal: {}", verdict_line(&c.certificate));
            match c.contract_holds {
                Some(true) => {
                    say!(ctx, "eigenvalue condition HOLDS-ON-SAMPLES");
                    exit::HOLDS
                }
                Some(false) => {
                    say!(ctx, "eigenvalue condition REFUTED");
                    exit::REFUTED
                }
                None => status_code(c.certificate.status),
            }
        }
    };
    ctx.finish(code, &report)
}

#[derive(Serialize)]
struct ConjectureResult<'a> {
    summary: &'a SearchSummary,
    /// Gains with zero entries are not searched.
    scope: &'static str,
}

fn cmd_conjecture(
    ctx: &mut Ctx,
    cfg: SearchConfig,
    archive: Option<&PathBuf>,
) -> Result<i32, CliError> {
    let (budget, gain_samples) = (cfg.budget, cfg.gain_samples);
    let tol = ctx.config.tolerances;
    let mut sink_file = match archive {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io_err(p))?,
        ),
        None => None,
    };
    let config = ctx.config.clone();
    let mut io_failure = None;
    let summary = search_conjecture(&cfg, &tol, |c| {
        if let (Some(f), Some(p)) = (sink_file.as_mut(), archive) {
            let line = to_line(&Report::new(&config, None, exit::REFUTED, c));
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.sync_data()) {
                io_failure = Some(CliError::Io {
                    path: p.display().to_string(),
                    source: e,
                });
                return Err(nsqstab::Error::InvalidInput("archive write failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = io_failure {
        return Err(e);
    }
    let summary = summary?;
    say!(
        ctx,
        "{} instances drawn, {} tested, {} skipped, {} candidates, {} duplicates",
        summary.instances_drawn,
        summary.instances_tested,
        summary.instances_skipped,
        summary.candidates,
        summary.duplicates
    );
    say!(ctx, "scope: strictly positive gains (all-ones plus {gain_samples} random transfers per witness)");
    let code = if budget == 0 {
        exit::UNKNOWN
    } else if summary.candidates > 0 {
        exit::REFUTED
    } else {
        exit::HOLDS
    };
    ctx.finish(
        code,
        &ConjectureResult {
            summary: &summary,
            scope: "strictly positive gains",
        },
    )
}

#[derive(Serialize)]
struct DemoResult {
    min_real_eigenvalue: f64,
    spectral_radius: f64,
    positive_stable: bool,
    simulation: nsqstab::dus::Simulation,
}

fn cmd_demo(
    ctx: &mut Ctx,
    file: &Path,
    dt: Option<f64>,
    t: Option<f64>,
    x0: Option<&Vec<f64>>,
) -> Result<i32, CliError> {
    let f = ctx.load(file)?;
    let k = gain_or_ones(&f);
    let e = f
        .detuning
        .clone()
        .unwrap_or_else(|| Detuning::ones(f.plant.structure()));
    let aek: RealMatrix = assemble_aek(&f.plant, &e, &k)?;
    let margin = min_real_eig(&aek)?;
    let radius = loop_spectral_radius(&aek)?;
    let dt = dt.unwrap_or(if radius > 0.0 { 0.05 / radius } else { 0.05 });
    let t = t.unwrap_or(if margin != 0.0 {
        20.0 / margin.abs()
    } else {
        100.0
    });
    let x0 = x0.cloned().unwrap_or_else(|| vec![1.0; aek.nrows()]);
    let simulation = simulate_static_loop(&f.plant, &e, &k, &x0, dt, t)?;
    let stable = margin > ctx.config.tolerances.eig_tol;
    say!(ctx, "min Re eigenvalue {margin}, spectral radius {radius}");
    say!(
        ctx,
        "{} steps of {dt}: |e(0)| = {}, |e(T)| = {} -> {}",
        simulation.steps,
        simulation.initial_norm,
        simulation.final_norm,
        if simulation.decays {
            "decays"
        } else {
            "does not decay"
        }
    );
    let code = if simulation.decays {
        exit::HOLDS
    } else {
        exit::REFUTED
    };
    ctx.finish(
        code,
        &DemoResult {
            min_real_eigenvalue: margin,
            spectral_radius: radius,
            positive_stable: stable,
            simulation,
        },
    )
}

fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<i32, CliError> {
    let config = RunConfig::new(cli, selection_cap()?);
    config.tolerances.validate()?;
    let mut ctx = Ctx {
        config,
        input_hash: None,
        out,
    };
    match &cli.command {
        Command::Enum { file, reduced } => cmd_enum(&mut ctx, file, *reduced),
        Command::Vl { file, mode } => cmd_vl(&mut ctx, file, *mode),
        Command::Dom { file, form } => cmd_dom(&mut ctx, file, (*form).into()),
        Command::Dus {
            file,
            samples,
            seed,
            falsify_budget,
        } => cmd_dus(&mut ctx, file, *samples, *seed, *falsify_budget),
        Command::GammaVerify { file, tol } => cmd_gamma(&mut ctx, file, *tol),
        Command::Theorem2 {
            file,
            samples,
            seed,
            falsify_budget,
        } => cmd_theorem2(&mut ctx, file, *samples, *seed, *falsify_budget),
        Command::Conjecture {
            sizes,
            budget,
            seed,
            distribution,
            scale,
            shift,
            falsify_budget,
            gain_samples,
            max_retries,
            archive,
        } => {
            let mut spec = InstanceSpec::new(sizes.clone(), (*distribution).into(), *seed);
            spec.scale = *scale;
            spec.diag_shift = *shift;
            spec.max_retries = *max_retries;
            let cfg = SearchConfig {
                spec,
                budget: *budget,
                falsify_budget: *falsify_budget,
                gain_samples: *gain_samples,
                cap: ctx.config.cap,
                batch: 64,
            };
            cmd_conjecture(&mut ctx, cfg, archive.as_ref())
        }
        Command::Demo { file, dt, t, x0 } => cmd_demo(&mut ctx, file, *dt, *t, x0.as_ref()),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    exit::HOLDS
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    exit::USAGE
                }
            };
        }
    };
    let result = match cli.global.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli, out)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} workers: {e}"))),
        },
        None => execute(&cli, out),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        e.exit_code()
    })
}
