//! Batch driver: configuration loading, the transform-solve-untransform
//! simulation workflow, gauge fixing, the verification suite, restriction
//! norms, and the convention experiment.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 iteration/blow-up failure, 4 I/O failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis::{regularity_report, AnalysisError, RunTrace};
use crate::config::{ConfigError, RunConfig};
use crate::dynamics::{
    conserved_diagnostics, convention_experiment, step, DynError, SimulationState,
};
use crate::fields::{
    checkpoint_read, checkpoint_write, random_small_data, FieldError, InitialData,
};
use crate::gauge::{apply_gauge, gauge_fix, inverse_gauge, GaugeError, GaugeFixOutcome};
use crate::liealg::Convention;
use crate::spectral::Grid;

/// Curl-free removal target; slightly above the spectral-truncation floor of
/// dealiased products on coarse grids.
const GAUGE_FIX_TOL: f64 = 1e-9;
const GAUGE_FIX_MAX_ITERS: usize = 50;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DYNAMICS: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Parser)]
#[command(
    name = "ymd",
    version,
    about = "Pseudospectral workbench for the coupled Yang-Mills-Dirac system in temporal gauge"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate data, gauge-fix, evolve the split system, untransform, and
    /// emit checkpoints plus diagnostics CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove the curl-free part of a state, from a checkpoint or from
    /// freshly generated data.
    GaugeFix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property-verification suite; exits 0 iff every property holds.
    Verify {
        /// Optional config; validated when present (the suite itself uses
        /// fixed desk-scale grids).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trim sampling-heavy properties.
        #[arg(long)]
        quick: bool,
    },
    /// Restriction-norm report over a completed checkpoint trace.
    Norms {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the checkpoints (defaults to the config output).
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Evolve identical data under both coupling conventions and report
    /// which one propagates the Gauss constraint at the integrator's order.
    Convention {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Cap the worker pool from `YMD_THREADS` before any parallel kernel runs.
fn init_threads() {
    if let Ok(v) = std::env::var("YMD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

struct CommandError {
    code: i32,
    message: String,
}

impl CommandError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<FieldError> for CommandError {
    fn from(e: FieldError) -> Self {
        let code = match e {
            FieldError::NonConvergence { .. } => EXIT_DYNAMICS,
            FieldError::InadmissibleExponents { .. } | FieldError::GridMismatch => EXIT_CONFIG,
            _ => EXIT_IO,
        };
        Self::new(code, e.to_string())
    }
}

impl From<DynError> for CommandError {
    fn from(e: DynError) -> Self {
        Self::new(EXIT_DYNAMICS, e.to_string())
    }
}

impl From<GaugeError> for CommandError {
    fn from(e: GaugeError) -> Self {
        let code = match e {
            GaugeError::NoConvergence { .. } => EXIT_DYNAMICS,
            GaugeError::GridMismatch => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<AnalysisError> for CommandError {
    fn from(e: AnalysisError) -> Self {
        Self::new(EXIT_IO, e.to_string())
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_IO, e.to_string())
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, out.as_deref()),
        Command::GaugeFix { config, checkpoint, out } => {
            cmd_gauge_fix(&config, checkpoint.as_deref(), out.as_deref())
        }
        Command::Verify { config, quick } => cmd_verify(config.as_deref(), quick),
        Command::Norms { config, trace_dir } => cmd_norms(&config, trace_dir.as_deref()),
        Command::Convention { config } => cmd_convention(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn write_gauge_history(path: &Path, outcome: &GaugeFixOutcome) -> Result<(), CommandError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# ymd-gauge-history-v1")?;
    writeln!(f, "iteration,v_norm,cf_norm")?;
    for row in &outcome.history {
        writeln!(f, "{},{:.17e},{:.17e}", row.iteration, row.v_norm, row.cf_norm)?;
    }
    Ok(())
}

fn fix_generated(
    cfg: &RunConfig,
) -> Result<(InitialData, GaugeFixOutcome), CommandError> {
    let grid = Grid::new(cfg.grid.n, cfg.grid.l);
    let conv = Convention::from(cfg.convention);
    let data = random_small_data(
        grid,
        cfg.exponents.s,
        cfg.exponents.l,
        cfg.data.eps,
        cfg.data.seed,
        cfg.data.abelian_flag,
        conv,
    )?;
    let outcome = gauge_fix(
        &data.a0,
        &data.a1,
        &data.psi0,
        cfg.exponents.s,
        GAUGE_FIX_TOL,
        GAUGE_FIX_MAX_ITERS,
    )?;
    Ok((data, outcome))
}

fn cmd_simulate(config_path: &Path, out_override: Option<&Path>) -> Result<i32, CommandError> {
    let cfg = RunConfig::load(config_path)?;
    let out_dir = out_override.unwrap_or(&cfg.output.directory).to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    let conv = Convention::from(cfg.convention);
    let (data, outcome) = fix_generated(&cfg)?;
    write_gauge_history(&out_dir.join("gauge_history.csv"), &outcome)?;
    let inverse = inverse_gauge(&outcome.transform);

    let fixed = InitialData {
        a0: outcome.a.clone(),
        a1: outcome.dta.clone(),
        psi0: outcome.psi.clone(),
        quoted_norm: data.quoted_norm,
    };
    let mut state = SimulationState::from_initial_data(&fixed, conv);
    let opts = crate::dynamics::RhsOptions {
        picard_tol: cfg.integrator.picard_tol,
        picard_max: cfg.integrator.picard_max,
        linear_only: false,
    };
    let dt = cfg.integrator.dt;
    let nsteps = (cfg.integrator.t / dt).round() as usize;

    let diag_path = out_dir.join("diagnostics.csv");
    let mut diag = std::io::BufWriter::new(std::fs::File::create(&diag_path)?);
    writeln!(diag, "# ymd-diagnostics-v1")?;
    writeln!(diag, "t,gauss_residual,charge,energy,adf_hs,acf_hs,psi_hl")?;

    let emit = |state: &SimulationState,
                    step_idx: usize,
                    diag: &mut std::io::BufWriter<std::fs::File>|
     -> Result<(), CommandError> {
        // untransform: the physical trajectory carries the original gauge
        let (a, dta, psi) = state.reconstruct();
        let (a, dta, psi) = apply_gauge(&inverse, &a, &dta, &psi)?;
        let untransformed = InitialData { a0: a, a1: dta, psi0: psi, quoted_norm: 0.0 };
        let mut phys = SimulationState::from_initial_data(&untransformed, conv);
        phys.t = state.t;
        let d = conserved_diagnostics(&phys, cfg.exponents.s, cfg.exponents.l);
        writeln!(
            diag,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            phys.t, d.gauss_residual, d.charge, d.energy, d.adf_sobolev, d.acf_sobolev,
            d.psi_sobolev
        )?;
        let name = format!("checkpoint_{step_idx:06}.bin");
        checkpoint_write(&phys, &out_dir.join(name))?;
        Ok(())
    };

    emit(&state, 0, &mut diag)?;
    for k in 1..=nsteps {
        state = step(&state, dt, &opts)?;
        if k % cfg.output.snapshot_stride == 0 || k == nsteps {
            emit(&state, k, &mut diag)?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_gauge_fix(
    config_path: &Path,
    checkpoint: Option<&Path>,
    out_override: Option<&Path>,
) -> Result<i32, CommandError> {
    let cfg = RunConfig::load(config_path)?;
    let out_dir = out_override.unwrap_or(&cfg.output.directory).to_path_buf();
    std::fs::create_dir_all(&out_dir)?;
    let conv = Convention::from(cfg.convention);
    let (outcome, t) = match checkpoint {
        Some(path) => {
            let state = checkpoint_read(path, cfg.grid.l)?;
            let (a, dta, psi) = state.reconstruct();
            (gauge_fix(&a, &dta, &psi, cfg.exponents.s, GAUGE_FIX_TOL, GAUGE_FIX_MAX_ITERS)?, state.t)
        }
        None => (fix_generated(&cfg)?.1, 0.0),
    };
    write_gauge_history(&out_dir.join("gauge_history.csv"), &outcome)?;
    let fixed = InitialData {
        a0: outcome.a.clone(),
        a1: outcome.dta.clone(),
        psi0: outcome.psi.clone(),
        quoted_norm: 0.0,
    };
    let mut state = SimulationState::from_initial_data(&fixed, conv);
    state.t = t;
    checkpoint_write(&state, &out_dir.join("gauge_fixed.bin"))?;
    if !outcome.monotone {
        eprintln!("warning: gauge-fix history is not monotone");
    }
    Ok(EXIT_OK)
}

fn cmd_verify(config_path: Option<&Path>, quick: bool) -> Result<i32, CommandError> {
    if let Some(path) = config_path {
        RunConfig::load(path)?;
    }
    let results = crate::verify::run_suite(&crate::verify::FaultInjection::default(), quick);
    let mut all_pass = true;
    for r in &results {
        println!(
            "{} measured={:.6e} threshold={:.1e} {}",
            r.name,
            r.measured,
            r.threshold,
            if r.pass { "PASS" } else { "FAIL" }
        );
        all_pass &= r.pass;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_VERIFY_FAIL })
}

fn cmd_norms(config_path: &Path, trace_dir: Option<&Path>) -> Result<i32, CommandError> {
    let cfg = RunConfig::load(config_path)?;
    let dir = trace_dir.unwrap_or(&cfg.output.directory).to_path_buf();
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("checkpoint_") && n.ends_with(".bin"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.len() < 8 {
        return Err(CommandError::new(
            EXIT_IO,
            format!("need at least 8 checkpoints in {}, found {}", dir.display(), files.len()),
        ));
    }
    let mut run = RunTrace { t_total: cfg.integrator.t, ..Default::default() };
    for f in &files {
        let state = checkpoint_read(f, cfg.grid.l)?;
        run.push(&state);
    }
    let rows = regularity_report(&run, cfg.exponents.s, cfg.exponents.l, cfg.exponents.delta)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("norms.csv"))?);
    writeln!(out, "# ymd-norms-v1")?;
    writeln!(out, "field,s,b,norm")?;
    println!("field,s,b,norm");
    for row in &rows {
        writeln!(out, "{},{:.4},{:.4},{:.17e}", row.field, row.s, row.b, row.norm)?;
        println!("{},{:.4},{:.4},{:.6e}", row.field, row.s, row.b, row.norm);
    }
    Ok(EXIT_OK)
}

fn cmd_convention(config_path: &Path) -> Result<i32, CommandError> {
    let cfg = RunConfig::load(config_path)?;
    let grid = Grid::new(cfg.grid.n, cfg.grid.l);
    // short horizon: the experiment refines dt tenfold internally
    let t_end = cfg.integrator.t.min(0.1);
    let report = convention_experiment(
        grid,
        cfg.exponents.s,
        cfg.exponents.l,
        cfg.data.eps,
        cfg.data.seed,
        t_end,
        cfg.integrator.dt,
    )?;
    println!("convention,charge_drift,residual_growth_coarse,residual_growth_fine,refinement_slope");
    for row in &report.rows {
        println!(
            "{},{:.6e},{:.6e},{:.6e},{:.3}",
            row.convention,
            row.charge_drift,
            row.residual_growth_coarse,
            row.residual_growth_fine,
            row.refinement_slope
        );
    }
    match report.consistent {
        Some(conv) => println!("consistent: {conv}"),
        None => println!("consistent: none"),
    }
    Ok(EXIT_OK)
}
