use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kairos_core::checker::{brute_force_serializable, check_timestamp_serializable, read_history, BRUTE_FORCE_LIMIT};
use kairos_core::config::SimConfig;
use kairos_core::experiments::{self, LeaseSweep, PointRow};
use kairos_core::par::Execution;

#[derive(Parser)]
#[command(name = "kairos", version, about = "Simulate a transactional key-value store with leased client caches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Simulation experiments.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Compare the lease model with a Monte Carlo simulation of one key.
    LeaseSweep(LeaseSweepArgs),
    /// Check a history dump for timestamp-order serializability.
    Check {
        history: PathBuf,
    },
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum SimCommand {
    /// Run a named experiment and write `<out>/<experiment>.csv`.
    Run(RunArgs),
    /// Print the effective configuration of an experiment as TOML.
    Config(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment whose preset to apply.
    experiment: Option<String>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct Settings {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set cache.strategy=ei`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    committed_target: Option<u64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    n_keys: Option<u64>,
    #[arg(long)]
    keys_per_txn: Option<usize>,
    #[arg(long)]
    read_only_ratio: Option<f64>,
    #[arg(long)]
    alpha_r: Option<f64>,
    #[arg(long)]
    alpha_rw: Option<f64>,
    #[arg(long)]
    rate_per_client: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// One of: strategy-compare, alpha-r-sweep, alpha-rw-sweep, ro-ratio-sweep,
    /// cache-size-sweep, lease-policy-compare, lease-sweep, failure-inject.
    experiment: String,
    #[command(flatten)]
    settings: Settings,
    /// Replicas per point, seeded consecutively from the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write each point's committed history as JSON Lines.
    #[arg(long)]
    dump_history: bool,
    /// Also write each point's event trace as JSON.
    #[arg(long)]
    trace: bool,
    /// Run points one after another on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct LeaseSweepArgs {
    /// Mean time between reads, ms.
    #[arg(long, default_value_t = 1.0)]
    r_mean: f64,
    /// Mean time between writes, ms.
    #[arg(long, default_value_t = 19.0)]
    w_mean: f64,
    /// Largest lease, ms; leases step by `r_mean`.
    #[arg(long, default_value_t = 50.0)]
    d_max: f64,
    /// Simulated reads per lease duration.
    #[arg(long, default_value_t = 10_000_000)]
    accesses: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

impl Settings {
    fn resolve(&self, experiment: Option<&str>) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                SimConfig::from_toml(&text)?
            }
            None => SimConfig::default(),
        };
        if let Some(name) = experiment {
            cfg = cfg.with_overrides(experiments::preset(name)?)?;
        }
        let mut sets: Vec<String> = Vec::new();
        let mut flag = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push(format!("{key}={v}"));
            }
        };
        flag("sim.seed", self.seed.map(|v| v.to_string()));
        flag("sim.clients", self.clients.map(|v| v.to_string()));
        flag("sim.committed_target", self.committed_target.map(|v| v.to_string()));
        flag("cache.strategy", self.strategy.as_ref().map(|v| format!("\"{v}\"")));
        flag("workload.n_keys", self.n_keys.map(|v| v.to_string()));
        flag("workload.keys_per_txn", self.keys_per_txn.map(|v| v.to_string()));
        flag("workload.read_only_ratio", self.read_only_ratio.map(|v| v.to_string()));
        flag("workload.alpha_r", self.alpha_r.map(|v| v.to_string()));
        flag("workload.alpha_rw", self.alpha_rw.map(|v| v.to_string()));
        flag("workload.rate_per_client", self.rate_per_client.map(|v| v.to_string()));
        sets.extend(self.overrides.iter().cloned());
        Ok(cfg.with_overrides(&sets)?)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sim { command: SimCommand::Run(args) } => sim_run(args),
        Command::Sim { command: SimCommand::Config(args) } => {
            let cfg = args.settings.resolve(args.experiment.as_deref())?;
            print!("{}", cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::LeaseSweep(args) => {
            let sweep = LeaseSweep {
                r_mean_ms: args.r_mean,
                w_mean_ms: args.w_mean,
                d_max_ms: args.d_max,
                accesses: args.accesses,
                seed: args.seed,
            };
            let rows = experiments::lease_sweep(&sweep, execution(args.sequential))?;
            match &args.out {
                Some(path) => write_csv_file(path, &rows)?,
                None => experiments::write_csv(io::stdout().lock(), &rows)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { history } => check(&history),
    }
}

fn write_csv_file<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    experiments::write_csv(BufWriter::new(file), rows)?;
    Ok(())
}

fn sim_run(args: RunArgs) -> Result<ExitCode> {
    let name = args.experiment.as_str();
    if !experiments::NAMES.contains(&name) {
        bail!("unknown experiment `{name}`; expected one of {}", experiments::NAMES.join(", "));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join(format!("{name}.csv"));
    let exec = execution(args.sequential);

    if name == "lease-sweep" {
        let base = args.settings.resolve(Some(name))?;
        let sweep = LeaseSweep { seed: base.sim.seed, ..LeaseSweep::default() };
        let rows = experiments::lease_sweep(&sweep, exec)?;
        write_csv_file(&csv_path, &rows)?;
        eprintln!("wrote {}", csv_path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let mut base = args.settings.resolve(Some(name))?;
    if args.trace {
        base.sim.trace = true;
    }
    let points = experiments::points(name, &base, args.seeds)?;
    eprintln!("{name}: {} points", points.len());
    let dump = (args.dump_history || args.trace).then_some(args.out.as_path());
    let rows = experiments::run_points(name, &points, exec, dump)?;
    write_csv_file(&csv_path, &rows)?;
    summarize(&rows);
    eprintln!("wrote {}", csv_path.display());

    let failed: Vec<&PointRow> = rows.iter().filter(|r| !r.ok()).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for r in failed {
            eprintln!("FAILED point {} ({}): {}", r.point, r.label, r.checker);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn summarize(rows: &[PointRow]) {
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "{:<44} {:>10} {:>7} {:>7} {:>9}  checker", "point", "tps", "hit", "abort", "stale_win");
    for r in rows {
        let _ = writeln!(
            err,
            "{:<44} {:>10.0} {:>7.3} {:>7.4} {:>8.0}u  {}",
            r.label, r.throughput_tps, r.hit_rate, r.abort_rate, r.mean_stale_window_us, r.checker
        );
    }
}

fn check(path: &Path) -> Result<ExitCode> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let history = read_history(BufReader::new(file))?;
    if let Err(v) = check_timestamp_serializable(&history) {
        println!("violation: txn {} key {:?}: {}", v.txn, v.key.map(|k| k.0), v.detail);
        return Ok(ExitCode::FAILURE);
    }
    if history.len() <= BRUTE_FORCE_LIMIT && !brute_force_serializable(&history)? {
        println!("violation: no serial order exists");
        return Ok(ExitCode::FAILURE);
    }
    println!("ok: {} committed transactions", history.len());
    Ok(ExitCode::SUCCESS)
}
