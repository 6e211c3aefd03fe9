use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};
use serde::Serialize;

use gabp::analysis::{certify, information_fixed_point, CertifyOptions, FixedPointOptions};
use gabp::bp::{BpError, BpOptions, BpStatus, InitStrategy, Problem, Schedule};
use gabp::graph::TopologyKind;
use gabp::io::{self, IoError, Provenance};
use gabp::model::{centralized_solve, posterior_solve, random_model, ModelError, RandomModelSpec};
use gabp::mrf_bridge::{
    check_walk_summability, factor_width_two, mrf_to_linear_gaussian, normalize_mrf, MrfError,
};

const EXIT_DOMAIN: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_MAX_ITERS: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_EXISTENCE: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "gabp",
    version,
    about = "Gaussian belief propagation for distributed linear models"
)]
struct Cli {
    /// Directory for output files; without it the main artifact goes to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file against the modelling assumptions.
    Validate { model: PathBuf },
    /// Centralized posterior means and covariance blocks.
    Solve {
        model: PathBuf,
        /// Accept models whose stacked coefficient matrix is rank deficient
        /// (the prior alone keeps the posterior proper).
        #[arg(long)]
        posterior: bool,
    },
    /// Run belief propagation and write trajectory and belief CSVs.
    Run(RunArgs),
    /// Convergence analysis: bounds, fixed point, rho(Q), verdict, rate.
    Analyze {
        model: PathBuf,
        /// Also run BP and compare against the centralized solution.
        #[arg(long)]
        certify: bool,
    },
    /// Convert a walk-summable Gaussian MRF into a linear Gaussian model.
    ConvertMrf {
        mrf: PathBuf,
        /// Diagonal shift; defaults to half of lambda_min, capped at 0.5.
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Generate a random model with a requested topology.
    Gen(GenArgs),
}

#[derive(Parser, Debug)]
struct RunArgs {
    model: PathBuf,
    /// zero, lower, upper or custom:<path>
    #[arg(long, default_value = "zero")]
    init: String,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Sync)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = gabp::bp::DEFAULT_TOL_J)]
    tol_j: f64,
    #[arg(long, default_value_t = gabp::bp::DEFAULT_TOL_V)]
    tol_v: f64,
    #[arg(long, default_value_t = gabp::bp::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Seed for the random schedule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check message existence and positive definiteness every iteration.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Sync,
    Seq,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TopologyArg {
    Forest,
    SingleLoop,
    MultiLoop,
}

#[derive(Parser, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    agents: usize,
    #[arg(long, value_enum, default_value_t = TopologyArg::Forest)]
    topology: TopologyArg,
    #[arg(long, default_value_t = 1)]
    min_dim: usize,
    #[arg(long, default_value_t = 1)]
    max_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    coeff_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn new(code: u8, err: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            err: err.into(),
        }
    }
}

fn input(err: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_INPUT, err)
}

fn domain(err: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_DOMAIN, err)
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        input(e)
    }
}

fn bp_failure(e: BpError) -> Failure {
    match e {
        BpError::Existence { .. } | BpError::NotPositiveDefinite { .. } => {
            Failure::new(EXIT_EXISTENCE, e)
        }
        BpError::InvalidInit(_) => input(e),
        _ => domain(e),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GABP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let out = cli.out.as_deref();
    let result = match &cli.command {
        Command::Validate { model } => cmd_validate(model, out),
        Command::Solve { model, posterior } => cmd_solve(model, *posterior, out),
        Command::Run(args) => cmd_run(args, out),
        Command::Analyze { model, certify } => cmd_analyze(model, *certify, out),
        Command::ConvertMrf { mrf, omega } => cmd_convert_mrf(mrf, *omega, out),
        Command::Gen(args) => cmd_gen(args, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}

/// Writes `text` to `<out>/<name>` if an output directory was given,
/// otherwise to stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => write_file(dir, name, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, text))
        .map_err(|e| input(anyhow!("writing {}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_valid_model(path: &Path) -> Result<gabp::LinearGaussianModel, Failure> {
    let (model, _) = io::read_model(path)?;
    let report = model.validate();
    for w in &report.warnings {
        warn!("{w}");
    }
    if !report.is_valid() {
        return Err(domain(ModelError::Invalid(report)));
    }
    Ok(model)
}

fn cmd_validate(path: &Path, out: Option<&Path>) -> CmdResult {
    let (model, _) = io::read_model(path)?;
    let report = model.validate();
    let json = io::validation_to_json(&report);
    print!("{json}");
    if let Some(dir) = out {
        write_file(dir, "validation.json", &json)?;
    }
    if report.is_valid() {
        Ok(0)
    } else {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        Ok(EXIT_DOMAIN)
    }
}

fn cmd_solve(path: &Path, posterior: bool, out: Option<&Path>) -> CmdResult {
    let model = load_valid_model(path)?;
    let sol = if posterior {
        posterior_solve(&model)
    } else {
        centralized_solve(&model)
    };
    let sol = sol.map_err(domain)?;
    emit(out, "solution.json", &io::solution_to_json(&sol))?;
    Ok(0)
}

#[derive(Serialize)]
struct RunSummary {
    #[serde(flatten)]
    status: BpStatus,
    iterations: usize,
    schedule: String,
    init: String,
    /// "centralized" when the stacked model is observable, else "posterior".
    reference: Option<&'static str>,
    max_mean_error: Option<f64>,
}

fn parse_init(spec: &str, problem: &Problem) -> Result<(InitStrategy, io::EdgeVectors), Failure> {
    let init = match spec {
        "zero" => InitStrategy::Zero,
        "lower" => InitStrategy::LowerBound,
        "upper" => InitStrategy::UpperBound,
        other => {
            let Some(path) = other.strip_prefix("custom:") else {
                return Err(input(anyhow!(
                    "unknown init '{other}' (zero, lower, upper, custom:<path>)"
                )));
            };
            let (infos, means) = io::custom_init_from_json(&io::read_text(Path::new(path))?)?;
            for &(factor, var) in infos.keys() {
                if problem.index().f2v_position(factor, var).is_none() {
                    return Err(input(anyhow!(
                        "custom init names unknown edge f{factor}->x{var}"
                    )));
                }
            }
            return Ok((InitStrategy::CustomPsd(infos), means));
        }
    };
    Ok((init, Default::default()))
}

fn cmd_run(args: &RunArgs, out: Option<&Path>) -> CmdResult {
    if !(args.tol_j > 0.0 && args.tol_v > 0.0) {
        return Err(input(anyhow!("tolerances must be positive")));
    }
    if args.max_iters == 0 {
        return Err(input(anyhow!("--max-iters must be at least 1")));
    }
    let model = load_valid_model(&args.model)?;
    let problem = Problem::new(&model).map_err(domain)?;
    let (init, means) = parse_init(&args.init, &problem)?;
    let mut msgs = problem.init_messages(&init).map_err(bp_failure)?;
    for (&(factor, var), v) in &means {
        let p = problem
            .index()
            .f2v_position(factor, var)
            .expect("checked in parse_init");
        if v.len() != msgs.f2v[p].mean.len() {
            return Err(input(anyhow!(
                "custom init mean on f{factor}->x{var} has wrong length"
            )));
        }
        msgs.f2v[p].mean = v.clone();
    }
    let schedule = match args.schedule {
        ScheduleArg::Sync => Schedule::Synchronous,
        ScheduleArg::Seq => Schedule::SequentialAscending,
        ScheduleArg::Random => Schedule::RandomPermutation(args.seed),
    };
    let reference =
        information_fixed_point(&problem, &InitStrategy::Zero, &FixedPointOptions::default())
            .ok()
            .filter(|fp| fp.converged)
            .map(|fp| fp.j_star);
    if reference.is_none() {
        debug!("no information fixed point; part-metric column left empty");
    }
    let opts = BpOptions {
        tol_j: args.tol_j,
        tol_v: args.tol_v,
        max_iters: args.max_iters,
        strict: args.strict,
        reference,
        ..Default::default()
    };
    let run = problem
        .run_bp_from(msgs, schedule, &opts)
        .map_err(bp_failure)?;

    let (reference, sol) = match centralized_solve(&model) {
        Ok(sol) => (Some("centralized"), Some(sol)),
        Err(_) => match posterior_solve(&model) {
            Ok(sol) => (Some("posterior"), Some(sol)),
            Err(_) => (None, None),
        },
    };
    let beliefs = problem.compute_beliefs(&run.messages);
    let max_mean_error = match (&beliefs, &sol) {
        (Ok(beliefs), Some(sol)) if run.status.is_converged() => Some(
            beliefs
                .iter()
                .map(|b| (&b.mean - sol.mean_of(b.var).expect("variable")).amax())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    let summary = RunSummary {
        status: run.status,
        iterations: run.trajectory.iterations.len(),
        schedule: format!("{:?}", args.schedule).to_lowercase(),
        init: args.init.clone(),
        reference,
        max_mean_error,
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    match out {
        Some(dir) => {
            write_file(dir, "trajectory.csv", &io::trajectory_csv(&run.trajectory))?;
            match &beliefs {
                Ok(b) => write_file(dir, "beliefs.csv", &io::beliefs_csv(b))?,
                Err(e) => warn!("beliefs unavailable: {e}"),
            }
            write_file(dir, "run.json", &json)?;
        }
        None => print!("{json}"),
    }
    Ok(match run.status {
        BpStatus::Converged { .. } => 0,
        BpStatus::MaxIters => EXIT_MAX_ITERS,
        BpStatus::Diverged { .. } => EXIT_DIVERGED,
    })
}

fn cmd_analyze(path: &Path, with_bp: bool, out: Option<&Path>) -> CmdResult {
    let model = load_valid_model(path)?;
    let opts = CertifyOptions {
        cross_check: with_bp.then(|| BpOptions {
            record_edges: false,
            ..Default::default()
        }),
        ..Default::default()
    };
    let report = certify(&model, &opts).map_err(bp_failure)?;
    info!("verdict {} (rho(Q) = {})", report.verdict, report.rho_q);
    emit(out, "report.json", &io::report_to_json(&report))?;
    Ok(0)
}

fn mrf_failure(e: MrfError) -> Failure {
    match e {
        MrfError::NotSquare { .. } | MrfError::DimensionMismatch { .. } => input(e),
        _ => domain(e),
    }
}

fn cmd_convert_mrf(path: &Path, omega: Option<f64>, out: Option<&Path>) -> CmdResult {
    let (j, h) = io::mrf_from_json(&io::read_text(path)?)?;
    let mrf = normalize_mrf(&j, &h).map_err(mrf_failure)?;
    let ws = check_walk_summability(&mrf);
    if !ws.walk_summable {
        if let Some(dir) = out {
            let text = serde_json::to_string_pretty(&ws).expect("serializable") + "\n";
            write_file(dir, "walk_summability.json", &text)?;
        }
        eprintln!("not walk-summable: lambda_min = {:.4}", ws.lambda_min);
        return Ok(EXIT_DOMAIN);
    }
    let fac = factor_width_two(&mrf, omega).map_err(mrf_failure)?;
    let model = mrf_to_linear_gaussian(&mrf, &fac).map_err(mrf_failure)?;
    let provenance = Provenance {
        omega: fac.omega,
        columns: fac.v.ncols(),
    };
    emit(
        out,
        "model.json",
        &io::model_to_json(&model, Some(&provenance)),
    )?;
    Ok(0)
}

fn cmd_gen(args: &GenArgs, out: Option<&Path>) -> CmdResult {
    let topology = match args.topology {
        TopologyArg::Forest => TopologyKind::Forest,
        TopologyArg::SingleLoop => TopologyKind::SingleLoopPlusForest,
        TopologyArg::MultiLoop => TopologyKind::MultiLoop,
    };
    let spec = RandomModelSpec::new(args.seed, args.agents, topology)
        .dims(args.min_dim, args.max_dim)
        .scales(args.coeff_scale, args.noise_scale);
    let model = random_model(&spec).map_err(domain)?;
    emit(out, "model.json", &io::model_to_json(&model, None))?;
    Ok(0)
}
