//! Command-line front end.

use crate::heuristic::greedy_relocate;
use crate::instances::{
    generate_random_instance, instance_to_json, load_instance, small_network,
    verification_instance, GeneratorParams, InstanceError,
};
use crate::model::{build_problem, solve_exact, validate_solution, Instance, ModelError};
use crate::policies::{PolicyKind, Solver};
use crate::queueing::{build_rho_table, QueueParams};
use crate::sim::{
    histogram_tables, run_simulation, write_event_log, Event, Lag, Metrics, SimConfig, Timing,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

/// Default directory for `simulate` and `compare` artifacts.
pub const OUT_DIR_ENV: &str = "EVSHARE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_BAD_INPUT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("model is infeasible")]
    Infeasible,
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_BAD_INPUT,
            CliError::Infeasible => EXIT_INFEASIBLE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::TimeLimit { .. } | ModelError::Engine(_) => CliError::Internal(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "evshare",
    version,
    about = "Electric carshare rebalancing toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Print utilization thresholds for 1..=C servers.
    RhoTable(RhoArgs),
    /// Solve one relocation problem.
    Solve(SolveArgs),
    /// Simulate one policy over several seeded runs.
    Simulate(SimulateArgs),
    /// Simulate several policies on the same seeds and tabulate them.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Random,
    Small,
    Verification,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "random")]
    preset: Preset,
    #[arg(long, default_value_t = 10)]
    zones: usize,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    fleet_fraction: Option<f64>,
    #[arg(long)]
    station_fraction: Option<f64>,
    #[arg(long)]
    mu_multiplier: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "b")]
    queue_len: Option<usize>,
    #[arg(long)]
    servers: Option<usize>,
    /// Ports per station for the verification preset.
    #[arg(long, default_value_t = 1)]
    ports: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RhoArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long = "b", default_value_t = 0)]
    queue_len: usize,
    #[arg(long, default_value_t = 4)]
    servers: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Heuristic,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    method: Method,
    #[arg(long)]
    myopic: bool,
    /// Seconds.
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyName {
    NoRebalance,
    Myopic,
    #[value(alias = "nonmyopic")]
    NonMyopic,
    #[value(alias = "nonmyopic-heuristic")]
    NonMyopicHeuristic,
    Online,
    ChargerChasing,
}

#[derive(Debug, Clone, Args)]
struct ScenarioArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minutes.
    #[arg(long, default_value_t = 5000)]
    horizon: u64,
    /// Minutes between rebalancing epochs.
    #[arg(long, default_value_t = 1)]
    interval: u64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "b")]
    queue_len: Option<usize>,
    #[arg(long)]
    servers: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// Solver for the myopic policy.
    #[arg(long, value_enum, default_value = "exact")]
    solver: Method,
    /// Minutes of access a customer accepts.
    #[arg(long)]
    pickup_limit: Option<f64>,
    /// Minutes from empty to full.
    #[arg(long)]
    full_charge: Option<f64>,
    #[arg(long)]
    non_ev: bool,
    /// Seconds an online decision takes to apply.
    #[arg(long)]
    lag: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    bins: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "myopic")]
    policy: PolicyName,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "myopic,non-myopic,no-rebalance,charger-chasing"
    )]
    policies: Vec<PolicyName>,
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// status. Reports go to `out`, diagnostics to the log.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_BAD_INPUT
            } else {
                EXIT_OK
            };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a, out),
        Command::RhoTable(a) => rho_table(a, out),
        Command::Solve(a) => solve(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Compare(a) => compare(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            let _ = writeln!(out, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inst = match a.preset {
        Preset::Small => small_network(a.lambda_max.unwrap_or(0.1), a.seed)?,
        Preset::Verification => verification_instance(a.ports)?,
        Preset::Random => {
            let mut p = GeneratorParams::with_size(a.zones, a.levels, a.seed);
            p.lambda_max = a.lambda_max.unwrap_or(p.lambda_max);
            p.fleet_fraction = a.fleet_fraction.unwrap_or(p.fleet_fraction);
            p.station_fraction = a.station_fraction.unwrap_or(p.station_fraction);
            p.mu_multiplier = a.mu_multiplier.unwrap_or(p.mu_multiplier);
            p.theta = a.theta.unwrap_or(p.theta);
            p.eta = a.eta.unwrap_or(p.eta);
            p.queue_len = a.queue_len.unwrap_or(p.queue_len);
            p.max_servers = a.servers.unwrap_or(p.max_servers);
            generate_random_instance(&p)?
        }
    };
    write_file(&a.out, instance_to_json(&inst).as_bytes())?;
    writeln!(
        out,
        "wrote {}: {} zones, {} levels, {} idle vehicles, total demand {:.4}/h",
        a.out.display(),
        inst.graph.zone_count(),
        inst.graph.levels(),
        inst.fleet_idle(),
        inst.total_lambda()
    )?;
    Ok(())
}

fn rho_table(a: RhoArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let q = QueueParams::new(a.eta, a.queue_len, a.servers)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let t = build_rho_table(q).map_err(|e| CliError::Input(e.to_string()))?;
    let rho: Vec<f64> = (1..=a.servers).map(|m| t.rho(m)).collect();
    if a.json {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&rho).expect("floats serialize")
        )?;
    } else {
        writeln!(out, "m\trho\tincrement")?;
        for m in 1..=a.servers {
            writeln!(out, "{m}\t{:.6}\t{:.6}", t.rho(m), t.increment(m))?;
        }
    }
    Ok(())
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.time_limit.is_finite() && a.time_limit > 0.0) {
        return Err(CliError::Input("time limit must be positive".into()));
    }
    let inst = load_instance(&a.input)?;
    let rho = build_rho_table(inst.queue).map_err(|e| CliError::Input(e.to_string()))?;
    let problem = build_problem(inst, rho, a.myopic).map_err(model_error)?;
    let solution = match a.method {
        Method::Exact => {
            solve_exact(&problem, Duration::from_secs_f64(a.time_limit)).map_err(model_error)?
        }
        Method::Heuristic => greedy_relocate(&problem),
    };
    if let Some(path) = &a.out {
        write_file(path, solution.to_json().as_bytes())?;
    }
    if !solution.is_feasible() {
        writeln!(out, "status: infeasible")?;
        return Err(CliError::Infeasible);
    }
    let violations = validate_solution(&problem, &solution);
    writeln!(
        out,
        "status: {}",
        serde_json::to_string(&solution.status)
            .expect("status serializes")
            .trim_matches('"')
    )?;
    writeln!(out, "objective: {}", solution.objective)?;
    if let Some(b) = solution.bound {
        writeln!(out, "bound: {b}")?;
    }
    writeln!(
        out,
        "arc flow: {}",
        solution.flows.iter().map(|f| f.flow).sum::<f64>()
    )?;
    if violations.is_empty() {
        writeln!(out, "validation: ok")?;
    } else {
        writeln!(out, "validation: {} violations", violations.len())?;
        for v in &violations {
            writeln!(
                out,
                "  {:?} at {}: residual {}",
                v.family, v.location, v.residual
            )?;
        }
        return Err(CliError::Internal("solution failed validation".into()));
    }
    Ok(())
}

fn policy_kind(
    name: PolicyName,
    s: &ScenarioArgs,
    inst: &Instance,
) -> Result<PolicyKind, CliError> {
    let theta = s.theta.unwrap_or(inst.theta);
    let queue = QueueParams::new(
        s.eta.unwrap_or(inst.queue.eta),
        s.queue_len.unwrap_or(inst.queue.queue_len),
        s.servers.unwrap_or(inst.queue.max_servers),
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    let solver = match s.solver {
        Method::Exact => Solver::Exact,
        Method::Heuristic => Solver::Heuristic,
    };
    Ok(match name {
        PolicyName::NoRebalance => PolicyKind::NoRebalance,
        PolicyName::Myopic => PolicyKind::Myopic { theta, solver },
        PolicyName::NonMyopic => PolicyKind::NonMyopicExact { theta, queue },
        PolicyName::NonMyopicHeuristic => PolicyKind::NonMyopicHeuristic { theta, queue },
        PolicyName::Online => PolicyKind::NonMyopicOnline { theta, queue },
        PolicyName::ChargerChasing => PolicyKind::ChargerChasing,
    })
}

fn sim_config(s: &ScenarioArgs) -> Result<SimConfig, CliError> {
    if s.runs == 0 {
        return Err(CliError::Input("at least one run is required".into()));
    }
    let mut c = SimConfig::small_network();
    c.horizon = s.horizon * 60;
    c.rebalance_interval = s.interval * 60;
    c.pickup_limit = s.pickup_limit;
    c.full_charge_time = s.full_charge.unwrap_or(c.full_charge_time);
    c.non_ev = s.non_ev;
    if let Some(seconds) = s.lag {
        c.online_lag = Lag::Fixed { seconds };
    }
    Ok(c)
}

fn out_dir(s: &ScenarioArgs) -> Result<PathBuf, CliError> {
    let dir = s
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: Metrics,
}

/// Averages over runs of the headline statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub wait_mean: f64,
    pub wait_std: f64,
    pub queue_mean: f64,
    pub queue_std: f64,
    pub rebalance_mean: f64,
    pub rebalance_std: f64,
    pub rebalance_km: f64,
    pub delay: f64,
    pub total_cost: f64,
}

impl ScenarioRow {
    fn average(runs: &[RunRecord]) -> Self {
        let n = runs.len().max(1) as f64;
        let avg = |f: &dyn Fn(&Metrics) -> f64| runs.iter().fold(0.0, |a, r| a + f(&r.metrics)) / n;
        Self {
            wait_mean: avg(&|m| m.wait_with_censored.mean),
            wait_std: avg(&|m| m.wait_with_censored.std),
            queue_mean: avg(&|m| m.queue.mean),
            queue_std: avg(&|m| m.queue.std),
            rebalance_mean: avg(&|m| m.rebalance_distance.mean),
            rebalance_std: avg(&|m| m.rebalance_distance.std),
            rebalance_km: avg(&|m| m.rebalance_km),
            delay: avg(&|m| m.total_delay),
            total_cost: avg(&|m| m.total_cost),
        }
    }
}

/// Everything `simulate` reports for one scenario. Wall-clock timing is
/// written separately so this document is reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub policy: PolicyKind,
    pub config: SimConfig,
    pub theta: f64,
    pub runs: Vec<RunRecord>,
    pub average: ScenarioRow,
}

struct Scenario {
    report: RunReport,
    logs: Vec<Vec<Event>>,
    timing: Vec<Timing>,
}

fn run_scenario(name: PolicyName, s: &ScenarioArgs) -> Result<Scenario, CliError> {
    let inst = load_instance(&s.input)?;
    let policy = policy_kind(name, s, &inst)?;
    let config = sim_config(s)?;
    let seeds: Vec<u64> = (0..s.runs as u64).map(|i| s.seed + i).collect();
    let outputs = seeds
        .par_iter()
        .map(|&seed| run_simulation(&config, &inst, &policy, seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let runs: Vec<RunRecord> = seeds
        .iter()
        .zip(&outputs)
        .map(|(&seed, o)| RunRecord {
            seed,
            metrics: o.metrics.clone(),
        })
        .collect();
    let average = ScenarioRow::average(&runs);
    Ok(Scenario {
        report: RunReport {
            scenario: policy.name().to_string(),
            policy,
            config,
            theta: inst.theta,
            runs,
            average,
        },
        timing: outputs.iter().map(|o| o.timing.clone()).collect(),
        logs: outputs.into_iter().map(|o| o.events).collect(),
    })
}

fn write_scenario(dir: &Path, sc: &Scenario, bins: usize) -> Result<(), CliError> {
    let name = &sc.report.scenario;
    for (run, log) in sc.report.runs.iter().zip(&sc.logs) {
        let mut buf = Vec::new();
        write_event_log(log, &mut buf)?;
        write_file(
            &dir.join(format!("{name}-events-seed{}.jsonl", run.seed)),
            &buf,
        )?;
        write_file(
            &dir.join(format!("{name}-histograms-seed{}.tsv", run.seed)),
            histogram_tables(log, bins).as_bytes(),
        )?;
        write_file(
            &dir.join(format!("{name}-series-seed{}.tsv", run.seed)),
            epoch_series(log).as_bytes(),
        )?;
    }
    let report = serde_json::to_string_pretty(&sc.report).expect("report serializes");
    write_file(&dir.join(format!("{name}-report.json")), report.as_bytes())?;
    let timing = serde_json::to_string_pretty(&sc.timing).expect("timing serializes");
    write_file(&dir.join(format!("{name}-timing.json")), timing.as_bytes())?;
    Ok(())
}

/// Per-epoch queue length, idle count and kilometres rebalanced.
fn epoch_series(log: &[Event]) -> String {
    let mut rows: Vec<(u64, usize, usize, f64)> = Vec::new();
    for e in log {
        match e {
            Event::Epoch { t, queue, idle, .. } => rows.push((*t, *queue, *idle, 0.0)),
            Event::Rebalance { km, .. } => {
                if let Some(r) = rows.last_mut() {
                    r.3 += km;
                }
            }
            _ => {}
        }
    }
    let mut s = String::from("minute\tqueue\tidle\trebalance_km\n");
    for (t, q, i, km) in rows {
        writeln!(s, "{}\t{q}\t{i}\t{km}", t / 60).unwrap();
    }
    s
}

fn summary_table(r: &RunReport) -> String {
    let mut s = String::new();
    let row = |s: &mut String, label: &str, f: &dyn Fn(&Metrics) -> (f64, f64)| {
        let n = r.runs.len().max(1) as f64;
        let (m, d) = r
            .runs
            .iter()
            .map(|x| f(&x.metrics))
            .fold((0.0, 0.0), |(a, b), (m, d)| (a + m / n, b + d / n));
        writeln!(s, "{label:<32}{m:>12.3}{d:>12.3}").unwrap();
    };
    writeln!(s, "{} ({} runs)", r.scenario, r.runs.len()).unwrap();
    writeln!(s, "{:<32}{:>12}{:>12}", "", "mean", "std").unwrap();
    row(&mut s, "waiting time (min)", &|m| {
        (m.wait_with_censored.mean, m.wait_with_censored.std)
    });
    row(&mut s, "customers in queue", &|m| {
        (m.queue.mean, m.queue.std)
    });
    row(&mut s, "rebalance distance (km)", &|m| {
        (m.rebalance_distance.mean, m.rebalance_distance.std)
    });
    writeln!(s, "{:<32}{:>12.3}", "total cost", r.average.total_cost).unwrap();
    s
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(&a.scenario)?;
    let sc = run_scenario(a.policy, &a.scenario)?;
    write_scenario(&dir, &sc, a.scenario.bins)?;
    write!(out, "{}", summary_table(&sc.report))?;
    Ok(())
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.policies.is_empty() {
        return Err(CliError::Input("no policies to compare".into()));
    }
    let dir = out_dir(&a.scenario)?;
    let mut rows = Vec::new();
    for &p in &a.policies {
        let sc = run_scenario(p, &a.scenario)?;
        write_scenario(&dir, &sc, a.scenario.bins)?;
        rows.push((
            sc.report.scenario.clone(),
            sc.report.average.clone(),
            sc.report.theta,
        ));
    }
    let base = rows[0].1.total_cost;
    let mut table = format!(
        "{:<22}{:>12}{:>12}{:>12}{:>14}{:>14}{:>10}\n",
        "scenario", "wait", "queue", "reb km", "delay", "total cost", "change"
    );
    for (name, r, _) in &rows {
        let change = if base > 0.0 {
            format!("{:+.0}%", 100.0 * (r.total_cost - base) / base)
        } else {
            "-".into()
        };
        writeln!(
            table,
            "{name:<22}{:>12.3}{:>12.3}{:>12.1}{:>14.1}{:>14.1}{change:>10}",
            r.wait_mean, r.queue_mean, r.rebalance_km, r.delay, r.total_cost
        )
        .unwrap();
    }
    write_file(&dir.join("compare.tsv"), table.as_bytes())?;
    #[derive(Serialize)]
    struct Row<'a> {
        scenario: &'a str,
        theta: f64,
        #[serde(flatten)]
        row: &'a ScenarioRow,
    }
    let json: Vec<Row> = rows
        .iter()
        .map(|(n, r, theta)| Row {
            scenario: n,
            theta: *theta,
            row: r,
        })
        .collect();
    write_file(
        &dir.join("compare.json"),
        serde_json::to_string_pretty(&json)
            .expect("rows serialize")
            .as_bytes(),
    )?;
    write!(out, "{table}")?;
    Ok(())
}
