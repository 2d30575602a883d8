mod reproduce;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gsca::data::CoupledData;
use gsca::error::{GscaError, Result};
use gsca::experiments::{rmse_path_against, SweepConfig};
use gsca::io::{self, RunManifest};
use gsca::likelihood::LinkKind;
use gsca::model_selection::{self, CvMode, GridSpec, PathConfig};
use gsca::penalty::{PenaltyFamily, PenaltySpec};
use gsca::simulation::{self, NoiseEnergy, SimParams};
use gsca::solver::{self, FitConfig};

use crate::reproduce::Experiment;

#[derive(Parser, Debug)]
#[command(
    name = "gsca",
    version,
    about = "Generalized simultaneous component analysis of coupled binary and quantitative data"
)]
struct Cli {
    /// Worker threads for independent fits (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a coupled binary / quantitative data set with known truth.
    Simulate(SimulateArgs),
    /// Fit a penalized GSCA model at one lambda.
    Fit(FitArgs),
    /// Fit a GSCA model with a fixed number of components.
    ExactRank(ExactRankArgs),
    /// Select lambda by K-fold missing-value cross-validation.
    Cv(CvArgs),
    /// Fit a lambda path and score every fit against a simulated truth.
    Path(PathArgs),
    /// Rerun one of the simulation experiments and write its result table.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Serialize)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, env = "GSCA_OUT_DIR", default_value = "gsca-out")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct InputArgs {
    /// Binary block: CSV with a header row, cells 0, 1 or NA.
    #[arg(long)]
    x1: PathBuf,
    /// Quantitative block: CSV with a header row, numbers or NA.
    #[arg(long)]
    x2: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Family {
    Nuclear,
    Lq,
    Scad,
    Gdp,
}

#[derive(Args, Debug, Serialize)]
struct PenaltyArgs {
    #[arg(long, value_enum, default_value_t = Family::Gdp)]
    penalty: Family,
    /// Concavity parameter of SCAD (default 5) or GDP (default 1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Exponent of the Lq penalty (default 0.1).
    #[arg(long)]
    q: Option<f64>,
}

impl PenaltyArgs {
    fn family(&self) -> Result<PenaltyFamily> {
        let (name, hyper, ignored) = match self.penalty {
            Family::Nuclear => ("nuclear", None, self.gamma.or(self.q)),
            Family::Lq => ("lq", self.q, self.gamma),
            Family::Scad => ("scad", self.gamma, self.q),
            Family::Gdp => ("gdp", self.gamma, self.q),
        };
        if ignored.is_some() {
            log::warn!("hyper-parameter not used by the {name} penalty is ignored");
        }
        PenaltyFamily::parse(name, hyper)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Link {
    Logit,
    Probit,
}

impl From<Link> for LinkKind {
    fn from(l: Link) -> Self {
        match l {
            Link::Logit => LinkKind::Logit,
            Link::Probit => LinkKind::Probit,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Link::Logit)]
    link: Link,
    /// Stop when the relative decrease of the objective falls below this.
    #[arg(long, default_value_t = solver::DEFAULT_EPS_F)]
    eps: f64,
    #[arg(long, default_value_t = solver::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Seed of the random initialization (and of the fold pattern for cv).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self, penalty: PenaltySpec) -> FitConfig {
        FitConfig::new(penalty)
            .with_eps(self.eps)
            .with_max_iter(self.max_iter)
            .with_seed(self.seed)
            .with_link(self.link.into())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Energy {
    Expected,
    Realized,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 160)]
    rows: usize,
    #[arg(long, default_value_t = 410)]
    j1: usize,
    #[arg(long, default_value_t = 1000)]
    j2: usize,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, default_value_t = 1.0)]
    snr1: f64,
    #[arg(long, default_value_t = 1.0)]
    snr2: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// One-column CSV of marginal probabilities of the binary columns;
    /// their logits become the binary offsets. Default: Beta(2, 28) draws.
    #[arg(long)]
    mu1_file: Option<PathBuf>,
    /// Noise energy used to scale the signal to the requested SNR.
    #[arg(long, value_enum, default_value_t = Energy::Expected)]
    c2_energy: Energy,
    /// Keep binary columns without both outcomes.
    #[arg(long)]
    keep_constant_columns: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct ExactRankArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    rank: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    /// Folds in sequence, each warm-started from the previous one.
    Warm,
    /// Folds concurrently from cold starts.
    Parallel,
}

#[derive(Args, Debug, Serialize)]
struct GridArgs {
    /// Length of the automatic log-spaced grid.
    #[arg(long, default_value_t = model_selection::DEFAULT_GRID_LEN)]
    grid_len: usize,
    /// Explicit comma-separated lambdas, replacing the automatic grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Tolerance of the fits that bracket the automatic grid.
    #[arg(long, default_value_t = model_selection::DEFAULT_SEARCH_EPS)]
    search_eps: f64,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        match &self.lambdas {
            Some(l) => GridSpec::Explicit(l.clone()),
            None => GridSpec::Auto { len: self.grid_len },
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[arg(long, default_value_t = model_selection::DEFAULT_FOLDS)]
    folds: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = Mode::Warm)]
    mode: Mode,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct PathArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory written by `gsca simulate`.
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct ReproduceArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Seed of the simulated data set. The default draw has nine signal
    /// components above the noise level, like the acceptance seeds.
    #[arg(long, default_value_t = 4)]
    seed: u64,
    /// Seed of the random initialization of the fits.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Fit tolerance; default 1e-5 for the cross-validation experiments
    /// (fig8, fig9), 1e-8 otherwise.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = model_selection::DEFAULT_GRID_LEN)]
    grid_len: usize,
    /// Number of SNR levels for fig7.
    #[arg(long, default_value_t = 20)]
    snr_count: usize,
    /// Iteration cap; default 100000 for fig2-overfit, 10000 otherwise.
    #[arg(long)]
    max_iter: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
        Command::ExactRank(a) => exact_rank(&a),
        Command::Cv(a) => cv(&a),
        Command::Path(a) => path(&a),
        Command::Reproduce(a) => reproduce::run(&a),
    }
}

fn parameters<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Stamps the elapsed time, records outputs and writes the manifest.
fn finish(mut manifest: RunManifest, dir: &Path, outputs: &[PathBuf], start: Instant) -> Result<()> {
    for p in outputs {
        manifest.add_output(p);
    }
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    let p = manifest.write(dir)?;
    log::info!("wrote {}", p.display());
    Ok(())
}

struct Loaded {
    data: CoupledData,
    names: Vec<String>,
}

fn load(input: &InputArgs, manifest: &mut RunManifest) -> Result<Loaded> {
    let (data, n1, n2) = io::read_coupled(&input.x1, &input.x2)?;
    manifest.add_input(&input.x1)?;
    manifest.add_input(&input.x2)?;
    let names = n1.into_iter().chain(n2).collect();
    Ok(Loaded { data, names })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("simulate", parameters(a), Some(a.seed));
    let mut params = SimParams::with_random_offsets(a.rows, a.j1, a.j2, a.rank, a.snr1, a.sigma2, a.seed);
    params.snr2 = a.snr2;
    params.c2_energy = match a.c2_energy {
        Energy::Expected => NoiseEnergy::Expected,
        Energy::Realized => NoiseEnergy::Realized,
    };
    if let Some(path) = &a.mu1_file {
        let m = io::read_matrix(path)?;
        if m.values.ncols() != 1 || !m.observed.iter().all(|&o| o) {
            return Err(GscaError::InvalidData(format!(
                "{}: expected one fully observed column of marginal probabilities",
                path.display()
            )));
        }
        let marginals = m.values.column(0).to_vec();
        params.mu1 = simulation::offsets_from_marginals(&marginals, a.rows)?;
        manifest.add_input(path)?;
    }
    let truth = simulation::simulate_coupled(&params)?;
    let (truth, kept) = if a.keep_constant_columns {
        let all: Vec<usize> = (0..truth.j1()).collect();
        (truth, all)
    } else {
        let q1 = ndarray::Array2::from_elem(truth.x1.dim(), true);
        let (_, _, keep) = simulation::drop_uninformative_binary_columns(truth.x1.view(), q1.view())?;
        if keep.len() < truth.j1() {
            log::warn!("dropped {} binary columns without both outcomes", truth.j1() - keep.len());
            (truth.retain_binary_columns(&keep)?, keep)
        } else {
            (truth, keep)
        }
    };
    prepare_out(&a.out.out)?;
    let outputs = io::write_simulation(&a.out.out, &truth, &kept)?;
    finish(manifest, &a.out.out, &outputs, start)
}

fn report_fit(fit: &solver::ModelFit) {
    if fit.warned_saturated {
        log::warn!("fit stopped early: sigma2 fell below the floor (over-fitting)");
    } else if !fit.converged {
        log::warn!("fit hit the iteration cap before converging");
    }
    println!(
        "rank {} sigma2 {} iterations {} converged {}",
        fit.rank(),
        io::format_f64(fit.sigma2),
        fit.iterations,
        fit.converged
    );
}

fn fit(a: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("fit", parameters(a), Some(a.solver.seed));
    let input = load(&a.input, &mut manifest)?;
    let spec = PenaltySpec::new(a.penalty.family()?, a.lambda)?;
    let fit = solver::fit_gsca(&input.data, &a.solver.config(spec))?;
    report_fit(&fit);
    prepare_out(&a.out.out)?;
    let outputs = io::write_fit(&a.out.out, &fit, a.solver.eps, &input.names)?;
    finish(manifest, &a.out.out, &outputs, start)
}

fn exact_rank(a: &ExactRankArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("exact-rank", parameters(a), Some(a.solver.seed));
    let input = load(&a.input, &mut manifest)?;
    // the penalty is not used by the exact-rank solver
    let fit = solver::fit_exact_rank(&input.data, a.rank, &a.solver.config(PenaltySpec::nuclear(0.0)?))?;
    report_fit(&fit);
    prepare_out(&a.out.out)?;
    let outputs = io::write_fit(&a.out.out, &fit, a.solver.eps, &input.names)?;
    finish(manifest, &a.out.out, &outputs, start)
}

fn cv(a: &CvArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("cv", parameters(a), Some(a.solver.seed));
    let input = load(&a.input, &mut manifest)?;
    let config = PathConfig {
        folds: a.folds,
        fold_seed: a.solver.seed,
        grid: a.grid.spec(),
        search_eps: a.grid.search_eps,
        mode: match a.mode {
            Mode::Warm => CvMode::WarmSequential,
            Mode::Parallel => CvMode::ParallelCold,
        },
        ..PathConfig::new(a.solver.config(PenaltySpec::new(a.penalty.family()?, 1.0)?))
    };
    let (result, fit) = model_selection::lambda_path(&input.data, &config)?;
    println!(
        "best lambda {} cv error {} (se {})",
        io::format_f64(result.best_lambda),
        io::format_f64(result.cv_error[result.best_index]),
        io::format_f64(result.cv_se[result.best_index])
    );
    report_fit(&fit);
    prepare_out(&a.out.out)?;
    let mut outputs = io::write_fit(&a.out.out, &fit, a.solver.eps, &input.names)?;
    let p = a.out.out.join("cv.json");
    io::write_json(&p, &result)?;
    outputs.push(p);
    let p = a.out.out.join("cv_log.csv");
    io::write_table(&p, &result.log)?;
    outputs.push(p);
    finish(manifest, &a.out.out, &outputs, start)
}

fn path(a: &PathArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("path", parameters(a), Some(a.solver.seed));
    let input = load(&a.input, &mut manifest)?;
    let truth = io::read_truth(&a.truth)?;
    manifest.add_input(a.truth.join("truth.json"))?;
    let family = a.penalty.family()?;
    let sweep = SweepConfig {
        eps_f: a.solver.eps,
        max_iter: a.solver.max_iter,
        grid_len: a.grid.grid_len,
        search_eps: a.grid.search_eps,
        init_seed: a.solver.seed,
        link: a.solver.link.into(),
        ..SweepConfig::default()
    };
    let grid = match a.grid.spec() {
        GridSpec::Explicit(l) => l,
        GridSpec::Auto { len } => {
            let probe = sweep.fit_config(PenaltySpec::new(family, 1.0)?);
            let b = model_selection::lambda_bounds(&input.data, &probe, sweep.search_start, sweep.search_eps)?;
            model_selection::log_grid(b.upper, b.lower, len)?
        }
    };
    let result = rmse_path_against(truth.view(), &input.data, family, &grid, &sweep)?;
    let best = result.best();
    println!(
        "best lambda {} rmse(theta) {} rank {}",
        io::format_f64(best.lambda),
        io::format_f64(best.rmse_theta),
        best.rank
    );
    prepare_out(&a.out.out)?;
    let mut outputs = io::write_fit(&a.out.out, &result.best_fit, a.solver.eps, &input.names)?;
    let p = a.out.out.join("path.csv");
    io::write_table(&p, &result.points)?;
    outputs.push(p);
    finish(manifest, &a.out.out, &outputs, start)
}
