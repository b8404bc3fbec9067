//! `minicar`: run scenarios, compare schemes, export the track and host
//! interactive sessions.

mod sweep;

use std::fmt::Write as _;
use std::fs;
use std::io::{ErrorKind, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};
use minicar_core::config::{load_config, ScenarioConfig};
use minicar_core::error::{ConfigError, SimError};
use minicar_core::game::{replay, LoggedCommand};
use minicar_core::record::{export_record, RunRecord, Summary};
use minicar_core::sim::run_scenario;
use minicar_core::track::build_track;
use minicar_gateway::{Gateway, GatewayError};
use rayon::prelude::*;

use sweep::SweepRun;

#[derive(Parser)]
#[command(name = "minicar", version, about = "Multi-lane miniature-car traffic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config value, e.g. `--set idm.v0=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "MINICAR_OUTPUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and export its record.
    Run {
        /// Scenario file (TOML, or a run's summary.json). The `.toml`
        /// extension may be omitted.
        config: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Replay a command log recorded by `serve`.
        #[arg(long, value_name = "FILE")]
        commands: Option<PathBuf>,
    },
    /// Run several scenarios over several seeds and compare them.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Seeds per scenario, starting at `--seed` (default 0).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Write the lane centerlines as CSV.
    TrackExport {
        /// Scenario whose track to export; the default track otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample spacing (m).
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Host an interactive session over WebSocket.
    Serve {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Vehicle to hand to players. Repeatable; overrides the config.
        #[arg(long = "play", value_name = "ID")]
        play: Vec<usize>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
    Collision(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Collision(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Collision(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, scenario, commands } => cmd_run(&config, &scenario, commands.as_deref()),
        Cmd::Sweep { configs, seeds, scenario } => cmd_sweep(&configs, seeds, &scenario),
        Cmd::TrackExport { config, resolution, output } => {
            cmd_track_export(config.as_deref(), resolution, output.as_deref())
        }
        Cmd::Serve { config, bind, play, scenario } => cmd_serve(&config, bind, &play, &scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Resolves `name` or `name.toml`.
fn locate(path: &Path) -> PathBuf {
    if !path.exists() && path.extension().is_none() {
        let with_ext = path.with_extension("toml");
        if with_ext.exists() {
            return with_ext;
        }
    }
    path.to_owned()
}

fn load(path: &Path, args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_config(&locate(path), &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_dir(out: &Path, cfg: &ScenarioConfig) -> PathBuf {
    out.join(format!("{}-seed{}", cfg.name, cfg.seed))
}

fn export(record: &RunRecord, dir: &Path) -> Result<(), Failure> {
    export_record(record, dir).map(|_| ()).map_err(Failure::from)
}

fn report(s: &Summary, dir: &Path, overrides: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario      {} (seed {}, {:.1} s simulated)", s.name, s.seed, s.simulated_time);
    if !overrides.is_empty() {
        let _ = writeln!(out, "overrides     {}", overrides.join(", "));
    }
    let _ = writeln!(out, "throughput    {} cars/s over {} windows", s.throughput, s.throughput.windows);
    let _ = writeln!(
        out,
        "max queue     {} ({:.1} vehicle-seconds waiting)",
        s.queue.max_queue, s.queue.waiting_vehicle_seconds
    );
    let lc = s.lane_changes;
    let _ = writeln!(out, "lane changes  {} completed, {} abandoned, {} denied", lc.completed, lc.abandoned, lc.denied);
    let _ = writeln!(out, "collisions    {}{}", s.collisions.len(), if s.halted { " (halted)" } else { "" });
    let _ = write!(out, "artifacts     {}", dir.display());
    out
}

fn collision_check(s: &Summary) -> Result<(), Failure> {
    match s.collisions.first() {
        Some(c) if s.halted => {
            Err(Failure::Collision(format!("run halted at t = {:.2} s: vehicles {} and {} collided", c.t, c.a, c.b)))
        }
        _ => Ok(()),
    }
}

fn cmd_run(config: &Path, args: &ScenarioArgs, commands: Option<&Path>) -> Result<(), Failure> {
    let cfg = load(config, args)?;
    let record = match commands {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let log: Vec<LoggedCommand> = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("invalid command log {}: {e}", path.display())))?;
            replay(cfg.clone(), &log)?
        }
        None => run_scenario(cfg.clone())?,
    };
    let dir = run_dir(&args.out, &cfg);
    export(&record, &dir)?;
    let summary = record.summary();
    println!("{}", report(&summary, &dir, &args.overrides));
    collision_check(&summary)
}

fn cmd_sweep(configs: &[PathBuf], seeds: u64, args: &ScenarioArgs) -> Result<(), Failure> {
    if configs.len() < 2 {
        return Err(Failure::Usage("a sweep needs at least two scenarios; nothing to compare".into()));
    }
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let base_seed = args.seed.unwrap_or(0);
    let mut jobs = Vec::new();
    for (k, path) in configs.iter().enumerate() {
        let cfg = load_config(&locate(path), &args.overrides)?;
        for seed in base_seed..base_seed + seeds {
            jobs.push((k, ScenarioConfig { seed, ..cfg.clone() }));
        }
    }
    let aborted = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<SweepRun, Failure>>> = jobs
        .into_par_iter()
        .map(|(scheme, cfg)| {
            if aborted.load(Ordering::Relaxed) {
                return None;
            }
            let result = run_scenario(cfg.clone()).map_err(Failure::from).and_then(|record| {
                export(&record, &run_dir(&args.out, &cfg))?;
                Ok(SweepRun { scheme, summary: record.summary() })
            });
            if result.is_err() {
                aborted.store(true, Ordering::Relaxed);
            }
            Some(result)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failure = None;
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => runs.push(r),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    let rows = sweep::aggregate(&runs, configs.len());
    let gains = sweep::improvements(&rows);
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let write = |name: &str, text: String| {
        let path = args.out.join(name);
        fs::write(&path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
    };
    write("sweep.csv", sweep::csv(&rows))?;
    write(
        "sweep.json",
        serde_json::to_string_pretty(&serde_json::json!({ "schemes": rows, "improvements": gains }))
            .expect("serializes"),
    )?;
    print!("{}", sweep::table(&rows, &gains));
    match failure {
        Some(f) => Err(Failure::Runtime(format!(
            "sweep aborted, partial results kept in {}: {}",
            args.out.display(),
            f.message()
        ))),
        None => Ok(()),
    }
}

fn cmd_track_export(config: Option<&Path>, resolution: f64, output: Option<&Path>) -> Result<(), Failure> {
    if !(resolution > 0.0) {
        return Err(Failure::Usage(format!("resolution must be > 0, got {resolution}")));
    }
    let spec = match config {
        Some(path) => load_config(&locate(path), &[])?.track,
        None => ScenarioConfig::default().track,
    };
    let track = build_track(&spec).map_err(|e| Failure::Usage(format!("invalid track: {e}")))?;
    let csv = track.polyline_csv(resolution);
    match output {
        Some(path) => {
            fs::write(path, csv).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
        }
        None => match std::io::stdout().lock().write_all(csv.as_bytes()) {
            Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(Failure::Runtime(format!("cannot write output: {e}"))),
            _ => Ok(()),
        },
    }
}

fn cmd_serve(config: &Path, bind: SocketAddr, play: &[usize], args: &ScenarioArgs) -> Result<(), Failure> {
    let mut overrides = args.overrides.clone();
    if !play.is_empty() {
        let ids: Vec<String> = play.iter().map(usize::to_string).collect();
        overrides.push(format!("vehicles.gamified=[{}]", ids.join(",")));
    }
    let cfg = load(config, &ScenarioArgs { overrides, ..args.clone() })?;
    let dir = run_dir(&args.out, &cfg);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    let session = runtime
        .block_on(async {
            let gateway = Gateway::bind(cfg, bind).await?;
            println!(
                "listening on ws://{}/ws (track at http://{}/track); Ctrl-C to stop",
                gateway.local_addr(),
                gateway.local_addr()
            );
            gateway
                .run_until(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        })
        .map_err(|e| match e {
            GatewayError::NoPlayedVehicle => Failure::Usage(format!("{e} or pass --play ID")),
            GatewayError::Sim(s) => s.into(),
            other => Failure::Runtime(other.to_string()),
        })?;
    let log = serde_json::to_string_pretty(session.command_log()).expect("serializes");
    let record = session.into_record();
    export(&record, &dir)?;
    let path = dir.join("command_log.json");
    fs::write(&path, log).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    let summary = record.summary();
    println!("{}", report(&summary, &dir, &args.overrides));
    collision_check(&summary)
}
