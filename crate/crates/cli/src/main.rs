//! `mfgplan`: command-line front end for the planning solver.
//!
//! Exit codes: 0 on success (including findings such as a positive regret
//! or a failed certificate), 1 on a numerical failure, 2 on usage, parse or
//! input errors.

mod inputs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_planning::analysis::{check_classical, concavity_check, monotonicity_check, solve_mfg_fixedpoint, PhiBox};
use mfg_planning::chain::{simulate_paths_with, ChainOptions};
use mfg_planning::dynamics::{forward_linear, forward_nonlinear, DistributionFlow, RandomizedStrategy, TimeGrid};
use mfg_planning::hamiltonian::{backward_bellman, greedy_strategy, payoff};
use mfg_planning::model::{eval_terminal, validate_model};
use mfg_planning::planning::{
    discretization_error, minimal_regret_sequence, regret_j, AlphaSchedule, Decision, OptimizerSettings,
};
use mfg_planning::ModelSpec;
use serde_json::{json, Value};

use inputs::{CliError, CONTROLS};

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mfgplan", version, about = "Planning for finite state mean field games")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model name or path to a model file.
    #[arg(long)]
    model: String,
    /// Number of time steps on [0, T].
    #[arg(long, default_value_t = 400)]
    steps: usize,
}

#[derive(Args)]
struct StrategyArgs {
    /// Strategy CSV (state,step,action_index,weight).
    #[arg(long)]
    strategy: Option<PathBuf>,
    /// Named control; one of section4-utilde, uniform, min, max.
    #[arg(long)]
    control: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the forward equation under a strategy; CSV of m(t).
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Initial distribution, e.g. "1,0,0" (default: all mass in state 1).
        #[arg(long)]
        m0: Option<String>,
        /// Target distribution; its distance to m(T) is reported.
        #[arg(long = "mT")]
        m_t: Option<String>,
        /// Write the flow CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the backward Bellman equation along a population flow.
    Bellman {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Population flow CSV; otherwise simulated from --m0 and the strategy.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        m0: Option<String>,
        /// Terminal payoff (default: the model's sigma at m(T)).
        #[arg(long = "phi-T")]
        phi_t: Option<String>,
        /// Weights for the reported value (default: m(0)).
        #[arg(long)]
        mu0: Option<String>,
        /// Write the value flow CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the greedy strategy CSV here.
        #[arg(long)]
        greedy_out: Option<PathBuf>,
    },
    /// Damped Picard iteration for the mean field equilibrium.
    Mfg {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        m0: Option<String>,
        /// Weight on the new flow in each damped update.
        #[arg(long, default_value_t = 0.5)]
        damping: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Directory for m.csv, phi.csv and strategy.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Minimal regret sequence over an increasing schedule of radii.
    Plan {
        #[command(flatten)]
        model: ModelArgs,
        /// Problem file with `m0 = ...`, `mT = ...` and optionally `mu0 = ...`.
        #[arg(long)]
        problem: PathBuf,
        /// Radii for the terminal payoff, strictly increasing.
        #[arg(long, default_value = "1,2,4,8,16,32")]
        schedule: String,
        /// Optimizer settings file of `key = value` lines.
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Override one setting, e.g. `--set n_starts=4`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for per-radius strategy, m and phi CSVs.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Certify a candidate and test the structural conditions; JSON report.
    Check {
        #[command(flatten)]
        model: ModelArgs,
        /// Problem file; with a strategy and --phi-T the candidate is checked.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long = "phi-T")]
        phi_t: Option<String>,
        /// Slack on the argmax and terminal conditions.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Random samples for the monotonicity and concavity tests.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Box for phi in the concavity test, as "lo,hi" in every coordinate.
        #[arg(long, default_value = "-1,1")]
        phi_box: String,
    },
    /// Monte Carlo paths of one player against a fixed population flow.
    Montecarlo {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        m0: Option<String>,
        /// Initial law of the player (default: m(0)).
        #[arg(long)]
        mu0: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Terminal payoff added to each path (default: sigma at m(T), else none).
        #[arg(long = "phi-T")]
        phi_t: Option<String>,
        /// Absolute slack added to 3 standard errors in the agreement ratio.
        #[arg(long, default_value_t = 2e-3)]
        slack: f64,
        /// Write this many sample trajectories as CSV to --paths-out.
        #[arg(long, default_value_t = 0)]
        keep_paths: usize,
        #[arg(long)]
        paths_out: Option<PathBuf>,
    },
    /// Sample a model for generator and regularity defects; JSON report.
    Validate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfgplan: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--workers: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            model,
            strategy,
            m0,
            m_t,
            out,
        } => simulate(model, strategy, m0, m_t, out),
        Command::Bellman {
            model,
            strategy,
            flow,
            m0,
            phi_t,
            mu0,
            out,
            greedy_out,
        } => bellman(model, strategy, flow, m0, phi_t, mu0, out, greedy_out),
        Command::Mfg {
            model,
            m0,
            damping,
            max_iters,
            out_dir,
        } => mfg(model, m0, damping, max_iters, out_dir),
        Command::Plan {
            model,
            problem,
            schedule,
            settings,
            overrides,
            out_dir,
        } => plan(model, problem, schedule, settings, overrides, out_dir, seed),
        Command::Check {
            model,
            problem,
            strategy,
            phi_t,
            tol,
            samples,
            phi_box,
        } => check(model, problem, strategy, phi_t, tol, samples, phi_box, seed),
        Command::Montecarlo {
            model,
            strategy,
            flow,
            m0,
            mu0,
            paths,
            phi_t,
            slack,
            keep_paths,
            paths_out,
        } => montecarlo(
            model, strategy, flow, m0, mu0, paths, phi_t, slack, keep_paths, paths_out, seed,
        ),
        Command::Validate { model, samples } => {
            let model = inputs::load_model(&model)?;
            if samples == 0 {
                return Err(CliError::Usage("--samples must be positive".into()));
            }
            print_json(&serde_json::to_value(validate_model(&model, samples, seed)).expect("serializable"));
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn say(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    say(&format!("{}\n", serde_json::to_string_pretty(v).expect("serializable")));
}

fn setup(args: &ModelArgs) -> CliResult<(ModelSpec, TimeGrid)> {
    let model = inputs::load_model(&args.model)?;
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be positive".into()));
    }
    let grid = TimeGrid::new(args.steps, model.horizon)?;
    Ok((model, grid))
}

fn vector_flag(raw: &str, flag: &str, dim: usize) -> CliResult<Vec<f64>> {
    let v = inputs::parse_vector(raw).map_err(|e| CliError::Usage(format!("{flag}: {e}")))?;
    if v.len() != dim {
        return Err(CliError::Usage(format!(
            "{flag} has {} entries, the model has {dim} states",
            v.len()
        )));
    }
    Ok(v)
}

fn distribution_flag(raw: &str, flag: &str, model: &ModelSpec) -> CliResult<Vec<f64>> {
    let v = vector_flag(raw, flag, model.dim)?;
    model
        .check_distribution(&v, flag)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(v)
}

fn strategy(args: &StrategyArgs, model: &ModelSpec, grid: TimeGrid) -> CliResult<RandomizedStrategy> {
    inputs::strategy_from(args.strategy.as_ref(), args.control.as_deref(), model, grid)
}

/// A flow from a CSV file, or integrated from `m0` under the strategy.
fn population(
    model: &ModelSpec,
    grid: TimeGrid,
    flow: Option<&Path>,
    m0: Option<&str>,
    nu: &RandomizedStrategy,
) -> CliResult<DistributionFlow> {
    match flow {
        Some(path) => {
            if m0.is_some() {
                return Err(CliError::Usage("give either --flow or --m0, not both".into()));
            }
            let f = inputs::load_flow(path)?;
            if f.grid.steps != grid.steps || f.dim() != model.dim {
                return Err(CliError::Input(format!(
                    "{}: flow has {} steps and {} states, expected {} and {}",
                    path.display(),
                    f.grid.steps,
                    f.dim(),
                    grid.steps,
                    model.dim
                )));
            }
            Ok(f)
        }
        None => {
            let m0 = inputs::initial(m0, model)?;
            Ok(forward_nonlinear(model, &m0, nu)?)
        }
    }
}

/// The given terminal payoff, else sigma at `m(T)` when the model has one.
fn terminal(model: &ModelSpec, raw: Option<&str>, m_t: &[f64]) -> CliResult<Option<Vec<f64>>> {
    match raw {
        Some(r) => Ok(Some(vector_flag(r, "--phi-T", model.dim)?)),
        None if model.terminal.is_some() => Ok(Some(eval_terminal(model, m_t)?)),
        None => Ok(None),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => inputs::write(p, text),
        None => {
            say(text);
            Ok(())
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn simulate(
    args: ModelArgs,
    strat: StrategyArgs,
    m0: Option<String>,
    m_t: Option<String>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    let target = m_t.map(|r| distribution_flag(&r, "--mT", &model)).transpose()?;
    let nu = strategy(&strat, &model, grid)?;
    let m0 = inputs::initial(m0.as_deref(), &model)?;
    let m = forward_nonlinear(&model, &m0, &nu)?;
    emit(out.as_deref(), &m.to_csv())?;
    let last = m.last();
    match target {
        Some(t) => {
            let gap = mfg_planning::planning::euclidean(&last.iter().zip(&t).map(|(a, b)| a - b).collect::<Vec<_>>());
            say(&format!("m(T) = {}  |m(T) - mT| = {gap:.3e}\n", fmt_vec(last)));
        }
        None => say(&format!("m(T) = {}\n", fmt_vec(last))),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bellman(
    args: ModelArgs,
    strat: StrategyArgs,
    flow: Option<PathBuf>,
    m0: Option<String>,
    phi_t: Option<String>,
    mu0: Option<String>,
    out: Option<PathBuf>,
    greedy_out: Option<PathBuf>,
) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    let nu = strategy(&strat, &model, grid)?;
    let m = population(&model, grid, flow.as_deref(), m0.as_deref(), &nu)?;
    let phi_t = terminal(&model, phi_t.as_deref(), m.last())?
        .ok_or_else(|| CliError::Usage("the model has no sigma; pass --phi-T".into()))?;
    let mu0 = match mu0 {
        Some(r) => distribution_flag(&r, "--mu0", &model)?,
        None => m.initial().to_vec(),
    };
    let phi = backward_bellman(&model, &m, &phi_t)?;
    if let Some(p) = out.as_deref() {
        inputs::write(p, &phi.to_csv())?;
    }
    let greedy = greedy_strategy(&model, &m, &phi)?;
    if let Some(p) = greedy_out.as_deref() {
        inputs::write(p, &greedy.to_csv())?;
    }
    let value: f64 = mu0.iter().zip(phi.initial()).map(|(a, b)| a * b).sum();
    let strategy_payoff = payoff(&model, &mu0, &nu, &m, &phi_t)?;
    print_json(&json!({
        "phi_0": phi.initial(),
        "value": value,
        "strategy_payoff": strategy_payoff,
        "regret_of_strategy": value - strategy_payoff,
    }));
    Ok(())
}

fn mfg(args: ModelArgs, m0: Option<String>, damping: f64, max_iters: usize, out_dir: Option<PathBuf>) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(CliError::Usage("--damping must lie in (0, 1]".into()));
    }
    let m0 = inputs::initial(m0.as_deref(), &model)?;
    let fp = solve_mfg_fixedpoint(&model, &m0, grid, damping, max_iters)?;
    if let Some(dir) = out_dir {
        inputs::write(&dir.join("m.csv"), &fp.m_flow.to_csv())?;
        inputs::write(&dir.join("phi.csv"), &fp.phi_flow.to_csv())?;
        inputs::write(&dir.join("strategy.csv"), &fp.strategy.to_csv())?;
    }
    print_json(&json!({
        "converged": fp.converged,
        "iterations": fp.residuals.len(),
        "residuals": fp.residuals,
        "m_T": fp.m_flow.last(),
        "phi_0": fp.phi_flow.initial(),
    }));
    Ok(())
}

fn settings_from(file: Option<&Path>, overrides: &[String], seed: u64) -> CliResult<OptimizerSettings> {
    let mut s = match file {
        Some(p) => {
            let text = inputs::read(p)?;
            OptimizerSettings::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => OptimizerSettings::default(),
    };
    s.seed = seed;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        s.set(k.trim(), v.trim())
            .map_err(|e| CliError::Usage(format!("--set {o}: {e}")))?;
    }
    s.check().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

fn plan(
    args: ModelArgs,
    problem: PathBuf,
    schedule: String,
    settings: Option<PathBuf>,
    overrides: Vec<String>,
    out_dir: Option<PathBuf>,
    seed: u64,
) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    let schedule = AlphaSchedule::parse(&schedule).map_err(|e| CliError::Usage(format!("--schedule: {e}")))?;
    let settings = settings_from(settings.as_deref(), &overrides, seed)?;
    let problem = inputs::load_problem(&problem, grid)?;
    problem.check_model(&model)?;
    let report = minimal_regret_sequence(&model, &problem, &schedule, &settings)?;
    if let Some(dir) = out_dir {
        for (i, r) in report.results.iter().enumerate() {
            inputs::write(
                &dir.join(format!("alpha{i}_strategy.csv")),
                &r.decision.strategy.to_csv(),
            )?;
            inputs::write(&dir.join(format!("alpha{i}_m.csv")), &r.m_flow.to_csv())?;
            inputs::write(&dir.join(format!("alpha{i}_phi.csv")), &r.phi_flow.to_csv())?;
        }
        inputs::write(
            &dir.join("report.json"),
            &serde_json::to_string_pretty(&report.to_json()).expect("json"),
        )?;
    }
    print_json(&report.to_json());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn check(
    args: ModelArgs,
    problem: Option<PathBuf>,
    strat: StrategyArgs,
    phi_t: Option<String>,
    tol: f64,
    samples: usize,
    phi_box: String,
    seed: u64,
) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    if samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(CliError::Usage("--tol must be nonnegative".into()));
    }
    let bounds = inputs::parse_vector(&phi_box).map_err(|e| CliError::Usage(format!("--phi-box: {e}")))?;
    let phi_box = match bounds[..] {
        [lo, hi] => PhiBox::cube(model.dim, lo, hi).map_err(|e| CliError::Usage(format!("--phi-box: {e}")))?,
        _ => return Err(CliError::Usage("--phi-box expects lo,hi".into())),
    };
    let has_candidate = strat.strategy.is_some() || strat.control.is_some() || phi_t.is_some();
    let classical = match (problem, has_candidate) {
        (Some(path), true) => {
            let problem = inputs::load_problem(&path, grid)?;
            let raw = phi_t.ok_or_else(|| CliError::Usage("checking a candidate needs --phi-T".into()))?;
            let nu = strategy(&strat, &model, grid)?;
            let decision = Decision::new(nu, vector_flag(&raw, "--phi-T", model.dim)?)?;
            let report = check_classical(&model, &decision, &problem, tol)?;
            let j = regret_j(&model, &problem, &decision)?.j;
            let eps = discretization_error(&model, &problem, &decision).ok();
            json!({
                "passed": report.passed,
                "terminal_gap": report.terminal_gap,
                "boundary_ok": report.boundary_ok,
                "argmax_ok": report.argmax_ok,
                "violations": report.violations.len(),
                "worst": report.worst,
                "J": j,
                "discretization_error": eps,
            })
        }
        (None, true) => return Err(CliError::Usage("checking a candidate needs --problem".into())),
        (Some(_), false) => {
            return Err(CliError::Usage(format!(
                "--problem needs a candidate: --phi-T with --strategy or --control ({})",
                CONTROLS.join(", ")
            )))
        }
        (None, false) => Value::Null,
    };
    // Conditions that do not apply to the model are reported, not fatal.
    let outcome = |r: mfg_planning::Result<Value>| r.unwrap_or_else(|e| json!({ "not_applicable": e.to_string() }));
    let monotonicity = outcome(monotonicity_check(&model, samples, seed).map(|r| json!(r)));
    let concavity = outcome(concavity_check(&model, &phi_box, samples, seed).map(|r| json!(r)));
    print_json(&json!({
        "classical": classical,
        "monotonicity": monotonicity,
        "concavity": concavity,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn montecarlo(
    args: ModelArgs,
    strat: StrategyArgs,
    flow: Option<PathBuf>,
    m0: Option<String>,
    mu0: Option<String>,
    paths: usize,
    phi_t: Option<String>,
    slack: f64,
    keep_paths: usize,
    paths_out: Option<PathBuf>,
    seed: u64,
) -> CliResult<()> {
    let (model, grid) = setup(&args)?;
    if paths == 0 {
        return Err(CliError::Usage("--paths must be positive".into()));
    }
    if keep_paths > 0 && paths_out.is_none() {
        return Err(CliError::Usage("--keep-paths needs --paths-out".into()));
    }
    let nu = strategy(&strat, &model, grid)?;
    let m = population(&model, grid, flow.as_deref(), m0.as_deref(), &nu)?;
    let mu0 = match mu0 {
        Some(r) => distribution_flag(&r, "--mu0", &model)?,
        None => m.initial().to_vec(),
    };
    let term = terminal(&model, phi_t.as_deref(), m.last())?;
    let opts = ChainOptions {
        terminal: term.clone(),
        keep_paths: if paths_out.is_some() {
            keep_paths.max(1).min(paths)
        } else {
            0
        },
        ..ChainOptions::new(paths, seed)
    };
    let est = simulate_paths_with(&model, &m, &nu, &mu0, &opts)?;
    if let Some(p) = paths_out.as_deref() {
        inputs::write(p, &est.paths_csv())?;
    }
    let reference = forward_linear(&model, &mu0, &m, &nu)?;
    let sigma = term.unwrap_or_else(|| vec![0.0; model.dim]);
    let ode_payoff = payoff(&model, &mu0, &nu, &m, &sigma)?;
    // worst standardized deviation per state over all nodes
    let n = paths as f64;
    let mut z = vec![0.0_f64; model.dim];
    for (emp, ode) in est.flow.values.iter().zip(&reference.values) {
        for (i, (e, p)) in emp.iter().zip(ode).enumerate() {
            let p = p.clamp(0.0, 1.0);
            let se = (p * (1.0 - p) / n).sqrt();
            let dev = (e - p).abs();
            let zi = if se > 0.0 {
                dev / se
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            z[i] = z[i].max(zi);
        }
    }
    let payoff_z = (est.payoff_mean - ode_payoff).abs() / est.payoff_se.max(f64::MIN_POSITIVE);
    print_json(&json!({
        "paths": paths,
        "agreement_ratio": est.agreement_ratio(&reference, slack),
        "max_z_by_state": z.iter().map(|v| if v.is_finite() { json!(v) } else { json!("inf") }).collect::<Vec<_>>(),
        "payoff_mean": est.payoff_mean,
        "payoff_se": est.payoff_se,
        "payoff_ode": ode_payoff,
        "payoff_z": payoff_z,
        "m_T_empirical": est.flow.last(),
        "m_T_ode": reference.last(),
    }));
    Ok(())
}
