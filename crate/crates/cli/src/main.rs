//! Command-line front end for the carbon-aware offloading simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carbon_sched::model::intensity_to_trace_units;
use carbon_sched::oracle::{oracle_compare, OracleReport, RatioStats};
use carbon_sched::rounding::{ORACLE_MAX_LOCATIONS, ORACLE_MAX_TASKS};
use carbon_sched::sim::{run_simulation_with, CsvSink, RunOptions};
use carbon_sched::{load_trace, sweep, Error, PolicyKind, SimConfig, SweepParam};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "carbon-sched", version, about = "Carbon-aware ML inference offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one policy over the full horizon.
    Run(RunArgs),
    /// Run a parameter sweep over several policies and seeds.
    Sweep(SweepArgs),
    /// Compare R3DRA and IRR rounding against exhaustive search.
    OracleCompare(OracleArgs),
    /// Check a carbon intensity trace and print a short summary.
    ValidateTrace(TraceArgs),
}

/// Overrides shared by `run` and `sweep`. Each one beats the config file.
#[derive(Args, Debug)]
struct Overrides {
    /// JSON config file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: PathBuf,
    /// Lyapunov trade-off weight V.
    #[arg(long)]
    v: Option<f64>,
    /// Frame length T in slots.
    #[arg(long)]
    frame_length: Option<usize>,
    /// Number of frames K.
    #[arg(long)]
    frames: Option<usize>,
    /// Long-term budget in $ per slot.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives report.json and slots.csv.
    #[arg(long)]
    out: PathBuf,
    /// Skip the capacity repair pass (fault injection).
    #[arg(long)]
    no_repair: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values for the swept parameter.
    #[arg(long)]
    values: String,
    /// Comma-separated policy names.
    #[arg(long, default_value = "ttoa,acloud,otime,greedy")]
    policies: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    max_tasks: usize,
    #[arg(long, default_value_t = 4)]
    max_locations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the per-instance rows as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
}

/// Failure classes and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Data = 1,
    Usage = 2,
    Constraint = 3,
    Io = 4,
    Internal = 5,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Data => "data",
            Kind::Usage => "usage",
            Kind::Constraint => "constraint",
            Kind::Io => "io",
            Kind::Internal => "internal",
        }
    }
}

struct Failure {
    kind: Kind,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { kind: Kind::Usage, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Validation(_) | Error::Csv(_) | Error::Json(_) => Kind::Data,
            Error::TooLarge(_) => Kind::Usage,
            Error::Io { .. } => Kind::Io,
            Error::ConstraintViolation(_) => Kind::Constraint,
            Error::Invariant(_) | Error::Lp(_) | Error::InfeasibleSubproblem { .. } => Kind::Internal,
        };
        Failure { kind, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Error::Io { path: path.to_path_buf(), source: e }.into()
}

fn load_config(o: &Overrides) -> CliResult<SimConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure {
                kind: Kind::Data,
                message: format!("config {}: {e}", path.display()),
            })?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = o.v {
        cfg.lyapunov_v = v;
    }
    if let Some(t) = o.frame_length {
        cfg.frame_length = t;
    }
    if let Some(k) = o.frames {
        cfg.frame_count = k;
    }
    if let Some(b) = o.budget {
        cfg.budget_per_slot = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let cfg = load_config(&a.common)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let trace = load_trace(&a.common.trace)?;
    create_dir(&a.out)?;
    let mut sink = CsvSink::create(&a.out.join("slots.csv"))?;
    let opts = RunOptions { repair: !a.no_repair };
    let result = run_simulation_with(&cfg, a.policy, seed, &trace, opts, &mut |r| sink.push(r));
    let report = match result {
        Ok(r) => r,
        Err(Error::ConstraintViolation(dump)) => {
            let path = a.out.join("slot_dump.json");
            let text = serde_json::to_string_pretty(&dump).map_err(Error::from)?;
            std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
            return Err(Failure {
                kind: Kind::Constraint,
                message: format!(
                    "{}; slot state written to {}",
                    Error::ConstraintViolation(dump),
                    path.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    sink.finish()?;
    report.write_json(&a.out.join("report.json"))?;
    let s = &report.summary;
    println!(
        "{} seed {}: {} slots, loss/task {:.4}, cost/budget {:.4}, avg queue {:.4}, frame bound {}/{}",
        report.policy,
        seed,
        s.slots,
        s.loss_per_task,
        s.cost_budget_ratio,
        s.avg_queue,
        s.frames_bound_ok,
        s.frames
    );
    Ok(())
}

fn split_list(raw: &str, what: &str) -> CliResult<Vec<String>> {
    let items: Vec<String> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if items.is_empty() {
        return Err(Failure::usage(format!("--{what} needs at least one entry")));
    }
    Ok(items)
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let cfg = load_config(&a.common)?;
    let values = split_list(&a.values, "values")?;
    let policies = split_list(&a.policies, "policies")?
        .iter()
        .map(|p| p.parse::<PolicyKind>().map_err(|e| Failure::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let seeds = split_list(&a.seeds, "seeds")?
        .iter()
        .map(|s| s.parse::<u64>().map_err(|_| Failure::usage(format!("bad seed '{s}'"))))
        .collect::<CliResult<Vec<_>>>()?;
    // Reject values that don't parse before doing any work.
    for v in &values {
        a.param.apply(&cfg, v).map_err(|e| Failure::usage(e.to_string()))?;
    }
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Failure::usage("--jobs must be positive"));
    }
    let trace = load_trace(&a.common.trace)?;
    info!("sweeping {} over {} values on {jobs} threads", a.param, values.len());
    let result = sweep(&cfg, a.param, &values, &policies, &seeds, &trace, jobs)?;
    create_dir(&a.out)?;
    for (row, report) in result.rows.iter().zip(&result.reports) {
        let dir = a
            .out
            .join(format!("{}={}", row.param, row.value))
            .join(format!("{}_seed{}", row.policy, row.seed));
        create_dir(&dir)?;
        report.write_json(&dir.join("report.json"))?;
        report.write_csv(&dir.join("slots.csv"))?;
    }
    result.write_summary_csv(&a.out.join("summary.csv"))?;
    println!("{:<12} {:<8} {:>6} {:>10} {:>10} {:>10}", a.param, "policy", "seed", "loss/task", "cost/bud", "avg Q");
    for r in &result.rows {
        println!(
            "{:<12} {:<8} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            r.value,
            r.policy.to_string(),
            r.seed, r.loss_per_task, r.cost_budget_ratio, r.avg_queue
        );
    }
    Ok(())
}

fn stats_line(name: &str, s: &RatioStats) -> String {
    format!(
        "{name:<6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.1}% {:>10}",
        s.mean,
        s.p50,
        s.p95,
        s.max,
        100.0 * s.within_1_5,
        s.infeasible
    )
}

fn oracle_table(r: &OracleReport) -> String {
    format!(
        "instances {} seed {}\n{:<6} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}\n{}\n{}",
        r.instances,
        r.seed,
        "method",
        "mean",
        "p50",
        "p95",
        "max",
        "<=1.5",
        "infeasible",
        stats_line("r3dra", &r.r3dra),
        stats_line("irr", &r.irr)
    )
}

fn cmd_oracle(a: OracleArgs) -> CliResult<()> {
    if a.instances == 0 {
        return Err(Failure::usage("--instances must be positive"));
    }
    if a.max_tasks == 0 || a.max_tasks > ORACLE_MAX_TASKS {
        return Err(Failure::usage(format!("--max-tasks must be in 1..={ORACLE_MAX_TASKS}")));
    }
    if !(2..=ORACLE_MAX_LOCATIONS).contains(&a.max_locations) {
        return Err(Failure::usage(format!("--max-locations must be in 2..={ORACLE_MAX_LOCATIONS}")));
    }
    let report = oracle_compare(a.instances, a.max_tasks, a.max_locations, a.seed)?;
    println!("{}", oracle_table(&report));
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        std::fs::write(path, text).map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}

fn cmd_validate(a: TraceArgs) -> CliResult<()> {
    let t = load_trace(&a.trace)?;
    println!("{}: {} regions, {} slots", a.trace.display(), t.regions.len(), t.slots());
    for (k, name) in t.regions.iter().enumerate() {
        println!("  {name:<16} mean {:>8.2} g/kWh", intensity_to_trace_units(t.region_mean(k)));
    }
    Ok(())
}

fn report(f: &Failure) -> ExitCode {
    let code = f.kind as u8;
    eprintln!("error kind={} code={code}", f.kind.name());
    eprintln!("{}", f.message);
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARBON_SCHED_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&Failure::usage(e.to_string().trim_end().to_string())),
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::OracleCompare(a) => cmd_oracle(a),
        Command::ValidateTrace(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
