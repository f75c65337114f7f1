//! `pdmp`: solve, simulate and explore linear PDMPs with renewal resets.
//!
//! Exit codes: 0 success, 2 input error, 3 infeasible (unstable or divergent
//! moments), 4 numerical failure.

pub mod model_file;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdmp_core::distributions::{DistributionError, InterEventDistribution};
use pdmp_core::gene_expression::{
    protein_cv2, protein_cv2_stable_limit, sweep_noise_vs_cvt, sweep_noise_vs_gamma,
    GeneExpressionError, NoiseDecomposition, ProteinModelParams, SweepMode,
};
use pdmp_core::simulator::{
    compare_with_solution, estimate_stationary_moments, simulate_trajectory, OffsetSampler,
    ResetSampler, Samplers, SimError, DEFAULT_BURNIN_CYCLES,
};
use pdmp_core::solver::{stationary_mean, stationary_second, SolveOptions, SolverError};
use pdmp_core::tolerances::Tolerance;
use serde::Serialize;

use model_file::ModelFile;
use output::{emit_json, input_digest, write_atomic, ResultFile, SimulationFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Output(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match &e {
            SolverError::Invalid(_) => CliError::Input(e.to_string()),
            SolverError::Unstable(r) => CliError::Infeasible(format!(
                "unstable: spectral radius of {} is {} (must be below 1)",
                r.matrix_checked, r.spectral_radius
            )),
            _ if e.is_infeasible() => CliError::Infeasible(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFinite { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<GeneExpressionError> for CliError {
    fn from(e: GeneExpressionError) -> Self {
        match &e {
            GeneExpressionError::InvalidParameter { .. }
            | GeneExpressionError::Distribution(DistributionError::InvalidParameter { .. }) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pdmp",
    version,
    about = "Stationary moments and simulation of linear PDMPs with renewal resets"
)]
pub struct Cli {
    /// Log progress and warnings to standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file; exit 0 iff it is valid.
    Validate { model: PathBuf },
    /// Exact stationary moments.
    Solve(SolveArgs),
    /// Monte Carlo estimate of the stationary moments.
    Simulate(SimulateArgs),
    /// Protein-expression case study: noise decomposition and sweeps.
    #[command(alias = "sweep")]
    Casestudy(CasestudyArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub model: PathBuf,
    /// 1 for the mean only, 2 for second moments too.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub order: u8,
    /// Relative quadrature tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output file (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerKind {
    /// Moment-matched Gaussian.
    Gaussian,
    /// Moment-matched Gaussian clipped at zero (biases the moments).
    GaussianClamped,
    /// `x -> J x + R`.
    Affine,
    /// `Binomial(round(x), p)`; one-dimensional models.
    Binomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OffsetKind {
    Auto,
    Deterministic,
    Gaussian,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n_traj: usize,
    #[arg(long, default_value_t = DEFAULT_BURNIN_CYCLES)]
    pub burnin_cycles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplerKind::Gaussian)]
    pub sampler: SamplerKind,
    /// Success probability of the binomial sampler.
    #[arg(long, default_value_t = 0.5)]
    pub binomial_p: f64,
    /// Law of the Poisson reset offsets.
    #[arg(long, value_enum, default_value_t = OffsetKind::Auto)]
    pub offsets: OffsetKind,
    /// Add the exact moments and z-scores.
    #[arg(long)]
    pub compare: bool,
    /// Worker threads (all cores if omitted); results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the event log of one trajectory (from zero, seed `--seed`)
    /// on `[0, --t-end]` as CSV.
    #[arg(long, requires = "t_end")]
    pub event_log: Option<PathBuf>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    #[value(name = "cvT", alias = "cvt")]
    CvT,
    Gamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Protein,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeKind {
    /// Rescale the burst rate so every row has the base mean.
    HoldMean,
    /// Keep the burst rate fixed.
    FreeMean,
}

/// Defaults: stable protein, deterministic unit cell cycle, unit bursts and
/// no partitioning noise, where the cell-cycle component is exactly 1/27.
#[derive(Debug, Args)]
pub struct CasestudyArgs {
    #[arg(long, value_enum, default_value_t = Preset::Protein)]
    pub preset: Preset,
    /// Burst rate.
    #[arg(long, default_value_t = 1000.0)]
    pub k: f64,
    /// Mean burst size.
    #[arg(long, default_value_t = 1.0)]
    pub u_mean: f64,
    /// Second moment of the burst size (defaults to the square of the mean).
    #[arg(long)]
    pub u_second: Option<f64>,
    /// Decay rate.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Partitioning noise slope.
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    /// Mean cell-cycle time.
    #[arg(long, default_value_t = 1.0)]
    pub t_mean: f64,
    /// Squared CV of the (gamma) cell-cycle time; 0 is deterministic.
    #[arg(long, default_value_t = 0.0)]
    pub cv2_t: f64,
    #[arg(long, value_enum)]
    pub sweep: Option<SweepKind>,
    /// Comma-separated sweep values (default depends on the sweep).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ModeKind::HoldMean)]
    pub mode: ModeKind,
    /// CSV for sweeps, JSON otherwise (standard output if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CasestudyArgs {
    pub fn params(&self) -> Result<ProteinModelParams, CliError> {
        let t_dist = InterEventDistribution::gamma_with_mean_cv2(self.t_mean, self.cv2_t)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let p = ProteinModelParams {
            k: self.k,
            u_mean: self.u_mean,
            u_second: self.u_second.unwrap_or(self.u_mean * self.u_mean),
            gamma: self.gamma,
            b: self.b,
            t_dist,
        };
        p.validate()?;
        Ok(p)
    }
}

/// `CV_T^2` from 0 to 1 in steps of 0.05.
pub fn default_cvt_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// `gamma = 0`, then five points per decade from 0.01 to 1000.
pub fn default_gamma_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=25).map(|i| 10f64.powf(-2.0 + 0.2 * i as f64)))
        .collect()
}

fn tolerance(tol: Option<f64>) -> Result<Tolerance, CliError> {
    let mut t = Tolerance::default();
    if let Some(rel) = tol {
        if !(rel.is_finite() && rel > 0.0 && rel < 1.0) {
            return Err(CliError::Input(format!(
                "--tol must lie in (0, 1), got {rel}"
            )));
        }
        t.rel = rel;
    }
    Ok(t)
}

fn load(path: &Path) -> Result<(pdmp_core::model::PdmpModel, String), CliError> {
    let (file, bytes) = ModelFile::read(path)?;
    let model = file
        .to_model()
        .map_err(|r| CliError::Input(format!("{}: invalid model:\n{r}", path.display())))?;
    Ok((model, input_digest(&bytes)))
}

pub fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let (m, _) = load(path)?;
    eprintln!(
        "{}: valid ({}-dimensional, {} Poisson reset families, {} renewal law)",
        path.display(),
        m.dim(),
        m.poisson.len(),
        m.general.dist.kind()
    );
    Ok(())
}

pub fn cmd_solve(a: &SolveArgs) -> Result<ResultFile, CliError> {
    let (m, digest) = load(&a.model)?;
    let tol = tolerance(a.tol)?;
    let opts = SolveOptions::with_tolerance(tol);
    let result = if a.order == 1 {
        ResultFile::from_mean(stationary_mean(&m, &opts)?, digest, tol)
    } else {
        ResultFile::from_second(stationary_second(&m, &opts)?, digest, tol)
    };
    for w in &result.warnings {
        log::warn!("{w}");
    }
    emit_json(&result, a.out.as_deref())?;
    Ok(result)
}

fn samplers(a: &SimulateArgs) -> Samplers {
    Samplers {
        general: match a.sampler {
            SamplerKind::Gaussian => ResetSampler::MomentMatchedGaussian {
                clamp_negative: false,
            },
            SamplerKind::GaussianClamped => ResetSampler::MomentMatchedGaussian {
                clamp_negative: true,
            },
            SamplerKind::Affine => ResetSampler::AffineDeterministic,
            SamplerKind::Binomial => ResetSampler::BinomialPartition { p: a.binomial_p },
        },
        poisson: match a.offsets {
            OffsetKind::Auto => OffsetSampler::Auto,
            OffsetKind::Deterministic => OffsetSampler::Deterministic,
            OffsetKind::Gaussian => OffsetSampler::Gaussian,
        },
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<SimulationFile, CliError> {
    let (m, digest) = load(&a.model)?;
    let s = samplers(a);
    let run = || -> Result<SimulationFile, CliError> {
        let stats = estimate_stationary_moments(&m, &s, a.n_traj, a.burnin_cycles, a.seed)?;
        let comparison = if a.compare {
            let exact = stationary_second(&m, &SolveOptions::default())?;
            Some(compare_with_solution(&stats, &exact))
        } else {
            None
        };
        Ok(SimulationFile {
            schema_version: output::SCHEMA_VERSION,
            tool_version: output::TOOL_VERSION.into(),
            input_digest: digest.clone(),
            sampler: s.general,
            offsets: s.poisson,
            stats,
            comparison,
        })
    };
    let file = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Input(format!("--threads: {e}")))?
            .install(run)?,
        None => run()?,
    };
    if let (Some(path), Some(t_end)) = (&a.event_log, a.t_end) {
        let traj = simulate_trajectory(&m, &s, &vec![0.0; m.dim()], t_end, a.seed, &[])?;
        write_atomic(path, |w| output::write_event_log_csv(&traj, w))?;
    }
    emit_json(&file, a.out.as_deref())?;
    Ok(file)
}

#[derive(Debug, Serialize)]
struct CasestudyReport {
    schema_version: u32,
    tool_version: &'static str,
    parameters: ProteinModelParams,
    noise: NoiseDecomposition,
    /// Stable-protein formula, for `gamma = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    stable_limit: Option<NoiseDecomposition>,
}

pub fn cmd_casestudy(a: &CasestudyArgs) -> Result<(), CliError> {
    let p = a.params()?;
    let mode = match a.mode {
        ModeKind::HoldMean => SweepMode::HoldMean,
        ModeKind::FreeMean => SweepMode::FreeMean,
    };
    let Some(kind) = a.sweep else {
        let report = CasestudyReport {
            schema_version: output::SCHEMA_VERSION,
            tool_version: output::TOOL_VERSION,
            noise: protein_cv2(&p)?,
            stable_limit: if p.gamma == 0.0 {
                Some(protein_cv2_stable_limit(&p)?)
            } else {
                None
            },
            parameters: p,
        };
        return emit_json(&report, a.out.as_deref());
    };
    let rows = match kind {
        SweepKind::CvT => {
            let grid = a.grid.clone().unwrap_or_else(default_cvt_grid);
            sweep_noise_vs_cvt(&p, &grid, mode)?
        }
        SweepKind::Gamma => {
            let grid = a.grid.clone().unwrap_or_else(default_gamma_grid);
            sweep_noise_vs_gamma(&p, &grid, mode)?
        }
    };
    match &a.out {
        Some(path) => write_atomic(path, |w| output::write_sweep_csv(&rows, w)),
        None => match output::write_sweep_csv(&rows, &mut std::io::stdout().lock()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                Err(CliError::Output(e.to_string()))
            }
            _ => Ok(()),
        },
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { model } => cmd_validate(model),
        Command::Solve(a) => cmd_solve(a).map(drop),
        Command::Simulate(a) => cmd_simulate(a).map(drop),
        Command::Casestudy(a) => cmd_casestudy(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code, printing errors to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
