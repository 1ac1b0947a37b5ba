use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ddstab::certify::{build_xi_psi, certify, xi_margin_check};
use ddstab::datamat::{is_persistently_exciting, numerical_rank, DEFAULT_RANK_TOL};
use ddstab::experiment::{adversarial_theta_input, random_experiment, run_experiment, DEFAULT_AMPLITUDE, DEFAULT_HORIZON};
use ddstab::io;
use ddstab::plant::remainder_sequence;
use ddstab::sdp::{build_design, solve_design, InteriorPointSolver, IpmSettings};
use ddstab::verify::{
    alpha_convergence_diagnostic, epsilon_sweep, simulate_closed_loop_stability, spectral_radius_closed_loop,
    validate_grid, SimSettings, SweepOptions, VerdictKind, SWEEP_SOLVER_TOL,
};
use ddstab::{BuiltinPlant, DataMatrices, DesignStatus, Plant, PlantConfig, ScalarQuadratic, Trajectory};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_NOT_PE: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;
const EXIT_SWEEP_NOT_CERTIFIED: u8 = 4;

#[derive(Parser)]
#[command(name = "ddstab", version, about = "Data-driven local stabilization from scaled experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an input signal for persistency of excitation.
    PeCheck(PeCheckArgs),
    /// Design a state-feedback gain from a recorded trajectory.
    Design(DesignArgs),
    /// Certify the data conditions of a recorded trajectory.
    Certify(CertifyArgs),
    /// Run scaled experiments on a configured plant and tabulate the results.
    Sweep(SweepArgs),
    /// Built-in demonstrations.
    Demo(DemoArgs),
}

#[derive(Args)]
struct PeCheckArgs {
    /// Input-signal CSV (`k,u_1,..,u_m`).
    #[arg(long)]
    data: PathBuf,
    /// Hankel depth.
    #[arg(long)]
    order: usize,
    /// Relative rank tolerance.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Trajectory CSV (`k,u_1,..,u_m,x_1,..,x_n`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Plant configuration; its equilibrium defines the deviation coordinates.
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Use the plant's linearization to compute gamma (requires --plant).
    #[arg(long)]
    oracle: bool,
    /// Fail when gamma cannot be checked.
    #[arg(long)]
    strict: bool,
    /// Relative rank tolerance.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    /// Solver tolerance (overrides DDSTAB_SOLVER_TOL).
    #[arg(long)]
    solver_tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: DesignArgs,
    /// Optimal value of the design program; solved for when omitted.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Plant configuration JSON; the pendulum with default parameters if omitted.
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Strictly decreasing scale factors.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5, 0.1, 0.01])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "T", default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
    amplitude: f64,
    /// Relative rank tolerance.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    /// Solver tolerance (overrides DDSTAB_SOLVER_TOL).
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Accepted for symmetry with the other commands; sweeps use the oracle
    /// unless --data-only is given.
    #[arg(long)]
    oracle: bool,
    /// Do not use the plant's linearization; gamma stays unknown.
    #[arg(long, conflicts_with = "oracle")]
    data_only: bool,
    /// Fail when the verdict is heuristic only.
    #[arg(long)]
    strict: bool,
    /// Omit the timestamp line from the CSV.
    #[arg(long)]
    no_timestamp: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoName {
    Scalar,
    Pendulum,
}

#[derive(Args)]
struct DemoArgs {
    name: DemoName,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "T", default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
    amplitude: f64,
    /// Scale factor applied to the pendulum experiment.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run leaves no partial output.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, contents.as_bytes()),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load_plant(path: Option<&Path>) -> Result<BuiltinPlant> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PlantConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PlantConfig::Pendulum { params: Default::default() },
    };
    Ok(BuiltinPlant::from_config(&cfg)?)
}

fn solver_settings(explicit: Option<f64>, default_tol: f64) -> Result<IpmSettings> {
    match explicit {
        Some(t) if t > 0.0 && t.is_finite() => Ok(IpmSettings::with_tol(t)),
        Some(t) => bail!("solver tolerance must be positive, got {t}"),
        None => Ok(IpmSettings::from_env_or(default_tol)),
    }
}

fn rank_tol(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        bail!("rank tolerance must lie in (0, 1), got {t}");
    }
    Ok(t)
}

fn pe_check(a: &PeCheckArgs) -> Result<u8> {
    let file = fs::File::open(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let inputs = io::read_input_csv::<f64, _>(file)?;
    let report = is_persistently_exciting(&inputs, a.order, rank_tol(a.tol)?)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    emit(a.out.as_deref(), &text)?;
    Ok(if report.persistently_exciting { EXIT_OK } else { EXIT_NOT_PE })
}

/// Loads the trajectory and builds data matrices, with `D0` in oracle mode.
fn load_data(a: &DesignArgs) -> Result<(DataMatrices, Option<BuiltinPlant>)> {
    if a.oracle && a.plant.is_none() {
        bail!("--oracle requires --plant");
    }
    let file = fs::File::open(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let traj: Trajectory = io::read_trajectory_csv(file, a.n, a.m)?;
    let plant = a.plant.as_deref().map(|p| load_plant(Some(p))).transpose()?;
    let dm = match &plant {
        Some(p) if a.oracle => remainder_sequence(p, &traj)?,
        Some(p) => {
            let (xe, ue) = p.equilibrium();
            if traj.state_dim() != xe.len() || traj.input_dim() != ue.len() {
                bail!("trajectory dimensions do not match the plant");
            }
            ddstab::build_data_matrices(&traj.to_deviation(&xe, &ue))
        }
        None => ddstab::build_data_matrices(&traj),
    };
    Ok((dm, plant))
}

fn design(a: &DesignArgs) -> Result<u8> {
    let (dm, plant) = load_data(a)?;
    let settings = solver_settings(a.solver_tol, ddstab::sdp::ipm::DEFAULT_SOLVER_TOL)?;
    let res = solve_design(&build_design(&dm)?, &mut InteriorPointSolver::new(settings))?;
    let optimal = res.status == DesignStatus::Optimal;
    let cert = certify(&dm, optimal.then_some(res.alpha), rank_tol(a.tol)?)?;
    let mut out = io::design_result_json(&res);
    out["certificate"] = io::cert_report_json(&cert)?;
    if let (Some(k), Some(p)) = (&res.k, &plant) {
        out["spectral_radius"] = json!(spectral_radius_closed_loop(&ddstab::plant::linearize(p), k)?);
    }
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    if !optimal || !cert.assumption1_holds || cert.gamma_condition_holds == Some(false) {
        return Ok(EXIT_NOT_CERTIFIED);
    }
    if a.strict && cert.gamma_condition_holds.is_none() {
        eprintln!("gamma is unknown without --oracle; --strict rejects a heuristic verdict");
        return Ok(EXIT_NOT_CERTIFIED);
    }
    Ok(EXIT_OK)
}

fn certify_cmd(a: &CertifyArgs) -> Result<u8> {
    let c = &a.common;
    let (dm, _) = load_data(c)?;
    let alpha = match a.alpha {
        Some(v) if v > 0.0 && v.is_finite() => Some(v),
        Some(v) => bail!("alpha must be positive, got {v}"),
        None => {
            let settings = solver_settings(c.solver_tol, ddstab::sdp::ipm::DEFAULT_SOLVER_TOL)?;
            let res = solve_design(&build_design(&dm)?, &mut InteriorPointSolver::new(settings))?;
            (res.status == DesignStatus::Optimal).then_some(res.alpha)
        }
    };
    let cert = certify(&dm, alpha, rank_tol(c.tol)?)?;
    let mut out = io::cert_report_json(&cert)?;
    out["verdict"] = json!(if cert.gamma_min.is_some() { "oracle" } else { VerdictKind::Heuristic.label() });
    emit(c.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    if !cert.assumption1_holds || cert.gamma_condition_holds == Some(false) {
        return Ok(EXIT_NOT_CERTIFIED);
    }
    if c.strict && cert.gamma_condition_holds.is_none() {
        eprintln!("gamma condition not verified; --strict rejects a heuristic verdict");
        return Ok(EXIT_NOT_CERTIFIED);
    }
    Ok(EXIT_OK)
}

fn sweep(a: &SweepArgs) -> Result<u8> {
    validate_grid(&a.eps)?;
    let plant = load_plant(a.plant.as_deref())?;
    let base = random_experiment(plant.state_dim(), plant.input_dim(), a.horizon, a.amplitude, a.seed)?;
    let options = SweepOptions {
        oracle: !a.data_only,
        solver: solver_settings(a.solver_tol, SWEEP_SOLVER_TOL)?,
        rank_tol: rank_tol(a.tol)?,
        ..Default::default()
    };
    let result = epsilon_sweep(&plant, &base, &a.eps, &options)?;

    let mut buf = Vec::new();
    if !a.no_timestamp {
        writeln!(buf, "# generated {}", chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))?;
    }
    io::write_sweep_csv(&result.rows, &mut buf)?;
    match &a.out {
        Some(p) => write_atomic(p, &buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }

    for r in result.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("eps = {}: {}", r.epsilon, r.error.as_deref().unwrap_or_default());
    }
    if let Some(r) = &result.reference {
        eprintln!("reference alpha = {:.6e}, K = {:?}", r.alpha, io::matrix_rows(&r.k));
    }
    match alpha_convergence_diagnostic(&result.rows) {
        Ok(d) => eprintln!(
            "alpha convergence: slope {:.3} ({})",
            d.slope,
            if d.superlinear { "superlinear" } else { "not superlinear" }
        ),
        Err(e) => eprintln!("alpha convergence: {e}"),
    }
    eprintln!("verdict: {}", result.verdict_kind.label());

    let last = result.last().expect("grid is non-empty");
    match result.verdict_kind {
        VerdictKind::Oracle => Ok(if last.fully_certified() { EXIT_OK } else { EXIT_SWEEP_NOT_CERTIFIED }),
        VerdictKind::Heuristic if a.strict => {
            eprintln!("--strict rejects a heuristic verdict");
            Ok(EXIT_SWEEP_NOT_CERTIFIED)
        }
        VerdictKind::Heuristic => {
            let converging = alpha_convergence_diagnostic(&result.rows).is_ok_and(|d| d.superlinear);
            let ok = last.assumption1 && last.stability_achieved() && converging;
            Ok(if ok { EXIT_OK } else { EXIT_SWEEP_NOT_CERTIFIED })
        }
    }
}

fn demo_scalar(theta: f64) -> Result<u8> {
    let spec = adversarial_theta_input(theta);
    let run = run_experiment(&ScalarQuadratic, &spec, true)?;
    let lin = run.linearized.as_ref().expect("oracle run");
    let tol = DEFAULT_RANK_TOL;
    let nl = numerical_rank(&run.data.stacked_ux(), tol)?;
    let ld = numerical_rank(&lin.stacked_ux(), tol)?;
    println!("scalar plant x+ = x^2 + u, theta = {theta}");
    println!("inputs: {:?}", spec.inputs.iter().map(|u| u[0]).collect::<Vec<_>>());
    println!("[U0; X0] from the plant:       rank {} (singular values {:?})", nl.numerical_rank, nl.singular_values);
    println!("[U0; X0] from the linearization: rank {} (singular values {:?})", ld.numerical_rank, ld.singular_values);
    if theta == 0.0 {
        println!("warning: theta = 0 gives all-zero data; both matrices are degenerate");
    } else if nl.numerical_rank < 2 && ld.numerical_rank == 2 {
        println!("the input is persistently exciting, yet the plant's data lose rank: U0 and X0 coincide");
    }
    Ok(EXIT_OK)
}

fn demo_pendulum(a: &DemoArgs) -> Result<u8> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        bail!("--eps must be positive");
    }
    let plant = ddstab::Pendulum::default();
    let base = random_experiment(2, 1, a.horizon, a.amplitude, a.seed)?;
    let spec = ddstab::experiment::scale_experiment(&base, a.eps)?;
    let run = run_experiment(&plant, &spec, true)?;
    let res = solve_design(&build_design(&run.data)?, &mut InteriorPointSolver::new(IpmSettings::from_env_or(SWEEP_SOLVER_TOL)))?;
    let alpha = (res.status == DesignStatus::Optimal).then_some(res.alpha);
    let cert = certify(&run.data, alpha, DEFAULT_RANK_TOL)?;
    let lin = run.linearization.as_ref().expect("oracle run");
    println!("pendulum, seed {}, T = {}, amplitude {}, eps = {}", a.seed, a.horizon, a.amplitude, a.eps);
    println!("A = {:?}, B = {:?}", io::matrix_rows(&lin.a), io::matrix_rows(&lin.b));
    println!("assumption 1: {}", cert.assumption1_holds);
    println!("design status: {:?}, alpha = {:.6e}", res.status, res.alpha);
    if let Some(g) = cert.gamma_min {
        println!("gamma_min = {g:.6e}, threshold = {:.6e}", ddstab::certify::gamma_threshold(res.alpha));
    }
    // the margin refers to the unscaled linearized data
    let lin_sv = ddstab::datamat::min_singular_value(&run.linearized.as_ref().expect("oracle run").stacked_ux())? / a.eps;
    if let Ok(m) = xi_margin_check(&build_xi_psi(&run.data, lin)?, lin_sv, a.eps) {
        println!("|Xi| = {:.3e} vs margin {:.3e}", m.spectral_norm, m.bound);
    }
    let Some(k) = res.k else {
        println!("no controller");
        return Ok(EXIT_NOT_CERTIFIED);
    };
    println!("K = {:?}", io::matrix_rows(&k));
    println!("spectral radius of A + BK: {:.6}", spectral_radius_closed_loop(lin, &k)?);
    let sim = simulate_closed_loop_stability(&plant, &k, SimSettings { seed: a.seed, ..Default::default() })?;
    println!("simulation from 20 states within 0.05 rad: worst contraction {:.3e}, stable {}", sim.worst_ratio, sim.stable);
    println!("certified: {}", cert.fully_certified());
    Ok(if cert.fully_certified() && sim.stable { EXIT_OK } else { EXIT_NOT_CERTIFIED })
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::PeCheck(a) => pe_check(a),
        Command::Design(a) => design(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Demo(a) => match a.name {
            DemoName::Scalar => demo_scalar(a.theta),
            DemoName::Pendulum => demo_pendulum(a),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
