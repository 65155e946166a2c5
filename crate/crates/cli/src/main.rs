use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gridmarket::admm::{admm_solve, partition_by_branch, solve_surrogate, write_trace_csv, AdmmOptions, DEFAULT_RHO};
use gridmarket::model::{report_distance, validate_instance, MarketInstance};
use gridmarket::scenarios::{
    builtin_scenario, builtin_scenarios, der_gain, load_gain, run_scenario, write_csv, LambdaSpec, RunOptions, Scenario,
    SolverKind,
};
use gridmarket::{solve_scalarized, Solution, SolverOptions};

/// Peer-to-peer energy market optimizer: single solves, discount sweeps and
/// the region-distributed solver.
#[derive(Parser, Debug)]
#[command(name = "gridmarket", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario config (JSON)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file; stdout when omitted
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Discount cap for single solves; defaults to the first grid value
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Weights: "default" or a comma-separated G+2L vector summing to 1
    #[arg(long, global = true, value_name = "SPEC")]
    lambda: Option<String>,

    /// Stationarity tolerance (ADMM residual tolerance with --solver admm)
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Iteration cap (ADMM rounds with --solver admm)
    #[arg(long, global = true)]
    max_iter: Option<usize>,

    /// Seed of the multi-start draws
    #[arg(long, global = true, env = "GRIDMARKET_SEED", default_value_t = 0)]
    seed: u64,

    /// Solver; overrides the config's choice
    #[arg(long, global = true, value_enum)]
    solver: Option<SolverArg>,

    /// ADMM penalty
    #[arg(long, global = true)]
    rho: Option<f64>,

    /// Worker threads for sweeps
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Exit with status 2 when any solve does not converge
    #[arg(long, global = true)]
    strict: bool,

    /// Builtin scenario (tight, unbalanced_tight, loose)
    #[arg(long, global = true)]
    name: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve one instance and print the solution as JSON
    Solve,
    /// Sweep the config's discount grid and write CSV
    Sweep,
    /// Run the distributed solver at one discount cap and write its residual trace as CSV
    Admm,
    /// Sweep a builtin scenario (--name) and write CSV
    Scenario,
    /// Check a config and list every violation
    Validate,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SolverArg {
    Central,
    Admm,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Central => SolverKind::Central,
            SolverArg::Admm => SolverKind::Admm,
        }
    }
}

/// Raised when `--strict` is set and some solve did not converge.
#[derive(Debug)]
struct NotConverged;

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solver did not converge")
    }
}

impl std::error::Error for NotConverged {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<NotConverged>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::Validate => validate(cli),
        Command::Solve => solve(cli),
        Command::Sweep => {
            let scenario = load_config(cli)?;
            sweep(cli, &scenario)
        }
        Command::Scenario => {
            let name = cli.name.as_deref().context("--name is required")?;
            let scenario = builtin_scenario(name).with_context(|| {
                let names: Vec<String> = builtin_scenarios().into_iter().map(|s| s.name).collect();
                format!("unknown scenario \"{name}\" (known: {})", names.join(", "))
            })?;
            sweep(cli, &scenario)
        }
        Command::Admm => admm(cli),
    }
}

fn load_config(cli: &Cli) -> Result<Scenario> {
    let path = cli.config.as_deref().context("--config is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("malformed config {}", path.display()))
}

/// Scenario from `--config`, else from `--name`.
fn scenario_arg(cli: &Cli) -> Result<Scenario> {
    match (&cli.config, &cli.name) {
        (Some(_), _) => load_config(cli),
        (None, Some(name)) => builtin_scenario(name).with_context(|| format!("unknown scenario \"{name}\"")),
        (None, None) => bail!("--config or --name is required"),
    }
}

fn validate(cli: &Cli) -> Result<()> {
    let scenario = scenario_arg(cli)?;
    let problems = scenario.validate();
    if problems.is_empty() {
        println!("ok");
        return Ok(());
    }
    for p in &problems {
        println!("{p}");
    }
    bail!("{} violation(s)", problems.len())
}

fn solver_options(cli: &Cli) -> Result<SolverOptions> {
    let mut opts = SolverOptions {
        rng_seed: cli.seed,
        ..SolverOptions::default()
    };
    if cli.solver_kind_is_central() {
        if let Some(t) = cli.tol {
            opts.tol_grad = t;
        }
        if let Some(n) = cli.max_iter {
            opts.max_iter = n;
        }
    }
    opts.validate()?;
    Ok(opts)
}

fn admm_options(cli: &Cli, local: SolverOptions) -> AdmmOptions {
    let mut opts = AdmmOptions {
        local,
        ..AdmmOptions::default()
    };
    if let Some(t) = cli.tol {
        opts.tol = t;
    }
    if let Some(n) = cli.max_iter {
        opts.max_iter = n;
    }
    opts
}

impl Cli {
    fn solver_kind_is_central(&self) -> bool {
        !matches!(self.solver, Some(SolverArg::Admm))
    }

    fn lambda_spec(&self) -> Result<Option<LambdaSpec>> {
        self.lambda.as_deref().map(LambdaSpec::parse).transpose().map_err(Into::into)
    }
}

/// The scenario's market at `--alpha` (or its first grid value), checked.
fn instance_at(cli: &Cli, scenario: &Scenario) -> Result<MarketInstance> {
    let alpha = match cli.alpha {
        Some(a) => a,
        None => *scenario.alpha_grid.first().context("alpha_grid is empty and --alpha is not set")?,
    };
    let inst = scenario.instance(alpha)?;
    let problems = validate_instance(&inst);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("{p}");
        }
        bail!("invalid instance: {}", problems[0]);
    }
    Ok(inst)
}

fn solve(cli: &Cli) -> Result<()> {
    let scenario = scenario_arg(cli)?;
    let inst = instance_at(cli, &scenario)?;
    let spec = cli.lambda_spec()?.unwrap_or_else(|| scenario.lambda.clone());
    let weights = spec.resolve(inst.num_ders, inst.num_loads)?;
    let kind = cli.solver.map(SolverKind::from).unwrap_or(scenario.solver);
    let opts = solver_options(cli)?;
    let solution = match kind {
        SolverKind::Central => solve_scalarized(&inst, &weights, &opts)?,
        SolverKind::Admm => {
            let partition = partition_by_branch(&inst)?;
            admm_solve(&inst, &weights, &partition, cli.rho.unwrap_or(DEFAULT_RHO), &admm_options(cli, opts))?.solution
        }
    };
    let text = serde_json::to_string_pretty(&report(&inst, &solution, kind))? + "\n";
    emit(cli.out.as_deref(), text.as_bytes())?;
    strict_check(cli, solution.converged)
}

fn report(inst: &MarketInstance, solution: &Solution, kind: SolverKind) -> serde_json::Value {
    json!({
        "solver": kind,
        "alpha": inst.discount_cap,
        "objective": solution.objective,
        "converged": solution.converged,
        "kkt_residual": solution.kkt_residual,
        "iterations": solution.iterations,
        "der_gain_pct": der_gain(inst, solution),
        "load_gain_pct": load_gain(inst, solution),
        "distance": report_distance(inst, &solution.state),
        "objective_parts": solution.objective_parts,
        "state": solution.state,
    })
}

fn sweep(cli: &Cli, scenario: &Scenario) -> Result<()> {
    let opts = RunOptions {
        solver: solver_options(cli)?,
        admm: admm_options(cli, SolverOptions::default()),
        rho: cli.rho,
        solver_kind: cli.solver.map(Into::into),
        lambda: cli.lambda_spec()?,
        jobs: cli.jobs,
    };
    let records = run_scenario(scenario, &opts)?;
    let mut buf = Vec::new();
    write_csv(&records, &mut buf)?;
    emit(cli.out.as_deref(), &buf)?;
    strict_check(cli, records.iter().all(|r| r.converged))
}

fn admm(cli: &Cli) -> Result<()> {
    let scenario = scenario_arg(cli)?;
    let inst = instance_at(cli, &scenario)?;
    let spec = cli.lambda_spec()?.unwrap_or_else(|| scenario.lambda.clone());
    let weights = spec.resolve(inst.num_ders, inst.num_loads)?;
    let partition = partition_by_branch(&inst)?;
    let opts = admm_options(cli, SolverOptions { rng_seed: cli.seed, ..SolverOptions::default() });
    let result = admm_solve(&inst, &weights, &partition, cli.rho.unwrap_or(DEFAULT_RHO), &opts)?;
    let central = solve_surrogate(&inst, &weights, &opts.local)?;
    let mut buf = Vec::new();
    write_trace_csv(&result.trace, &mut buf)?;
    emit(cli.out.as_deref(), &buf)?;
    if cli.out.is_some() {
        let s = &result.solution;
        println!(
            "regions={} iterations={} converged={} objective={:e} centralized={:e}",
            partition.num_regions(),
            s.iterations,
            s.converged,
            s.objective,
            central.objective
        );
    }
    strict_check(cli, result.solution.converged)
}

fn strict_check(cli: &Cli, converged: bool) -> Result<()> {
    if cli.strict && !converged {
        return Err(NotConverged.into());
    }
    Ok(())
}

/// Writes to `path` through a temp file in the same directory, so readers
/// never see a partial file; stdout without a path.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let Some(path) = path else {
        std::io::stdout().write_all(bytes)?;
        return Ok(());
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
