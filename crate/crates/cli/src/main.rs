//! `neuroflight`: identify, train, fly, bench and report.

mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuroflight::bench::bench;
use neuroflight::config::{apply_sysid, load_config, read_table, PipelineConfig};
use neuroflight::flight::{run_flight, Scenario};
use neuroflight::modelpack::{self, DEFAULT_BUDGET_BYTES};
use neuroflight::runtime::InferenceRuntime;
use neuroflight::training::{write_curve_csv, Trainer};
use neuroflight::Error;

use manifest::RunManifest;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_FLIGHT_FAILED: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_) | Error::Parameter(_)) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Core(Error::Budget { .. }) => EXIT_BUDGET,
            CliError::Core(Error::TrainingDiverged(_) | Error::Diverged(_)) => EXIT_DIVERGED,
            CliError::Core(Error::FlightFailed(_)) => EXIT_FLIGHT_FAILED,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "neuroflight", version, about = "Neural quadrotor position control pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive k_thrust and the hover throttle from mass and hover speed, in place.
    Sysid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a policy with PPO and export the best-evaluated checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly a scripted scenario in the 650 Hz virtual-time stack.
    Fly {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the model named in the scenario.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
    /// Measure preprocess, inference and postprocess latency.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        budget: Budget,
    },
    /// Plot one or two telemetry logs as SVG figures.
    Report {
        /// Telemetry CSV files; two produce side-by-side figures.
        #[arg(required = true, num_args = 1..=2)]
        telemetry: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Budget {
    #[arg(long = "budget-bytes")]
    budget_bytes: Option<usize>,
}

fn load_pipeline(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn cmd_sysid(config: &Path) -> Result<(), CliError> {
    let mut table = read_table(config)?;
    let id = apply_sysid(&mut table)?;
    let (weight, thrust) = id.balance();
    println!("mass            {} kg", id.mass);
    println!("hover speed     {} rad/s", id.hover_speed);
    println!("k_thrust        {:.6e} N·s²/rad²", id.k_thrust);
    println!("hover throttle  {:.6}", id.hover_throttle);
    println!("balance         weight {weight:.6} N, 4·k·ω² {thrust:.6} N");
    let text = toml::to_string(&table).map_err(|e| CliError::Core(Error::Config(e.to_string())))?;
    std::fs::write(config, text).map_err(|e| CliError::io(config, e))?;
    Ok(())
}

fn cmd_train(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_pipeline(config)?;
    if let Some(s) = seed {
        cfg.ppo.seed = s;
    }
    let mut manifest = RunManifest::begin("train", config.into_iter().map(Path::to_path_buf).collect(), Some(cfg.ppo.seed), out)?;
    let trainer = Trainer::new(&cfg.vehicle, &cfg.reward, &cfg.ppo)?;
    let outcome = trainer.run(|row| {
        if let Some(e) = row.eval_error {
            eprintln!(
                "update {:5}  eval error {:.4} m  crashes {}  mean episode reward {:.1}",
                row.update,
                e,
                row.eval_crashes.unwrap_or(0),
                row.mean_episode_reward.unwrap_or(f64::NAN)
            );
        }
    })?;
    let mut curve = Vec::new();
    write_curve_csv(&mut curve, &outcome.curve).expect("write to memory");
    manifest.artifact("curve.csv", &curve)?;
    manifest.artifact("policy.nnfc", &modelpack::export(&outcome.policy))?;
    manifest.artifact("critic.nncv", &modelpack::export_critic(&outcome.critic))?;
    let eval = serde_json::json!({
        "updates_run": outcome.updates_run,
        "best_update": outcome.best_update,
        "best_eval": outcome.best_eval.as_ref().map(|e| serde_json::json!({
            "mean_final_error": e.mean_final_error,
            "max_final_error": e.max_final_error,
            "crashes": e.crashes,
            "episodes": e.episodes,
        })),
    });
    manifest.artifact("eval.json", format!("{eval:#}\n").as_bytes())?;
    manifest.write()?;
    match &outcome.best_eval {
        Some(e) => println!(
            "best eval error {:.4} m at update {} ({} updates run)",
            e.mean_final_error, outcome.best_update, outcome.updates_run
        ),
        None => println!("{} updates run, no evaluation", outcome.updates_run),
    }
    Ok(())
}

fn cmd_fly(
    scenario_path: &Path,
    config: Option<&Path>,
    model: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    budget: Option<usize>,
) -> Result<(), CliError> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if let Some(b) = budget {
        scenario.budget_bytes = b;
    }
    let cfg = load_pipeline(config)?;
    let model_path = match (model, &scenario.model) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(rel)) => Some(scenario_path.parent().unwrap_or(Path::new(".")).join(rel)),
        (None, None) => None,
    };
    let mut configs = vec![scenario_path.to_path_buf()];
    configs.extend(config.map(Path::to_path_buf));
    let mut manifest = RunManifest::begin("fly", configs, Some(scenario.seed), out)?;
    let blob = match (&model_path, scenario.neural) {
        (Some(p), true) => Some(read_file(p)?),
        (None, true) => return Err(CliError::Usage("neural scenario needs --model or a model entry".into())),
        _ => None,
    };
    let outcome = run_flight(&scenario, &cfg.vehicle, &cfg.cascade, blob.as_deref())?;
    manifest.artifact("telemetry.csv", outcome.telemetry.to_csv().as_bytes())?;
    let summary = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    manifest.artifact("summary.json", format!("{summary}\n").as_bytes())?;
    manifest.write()?;

    let s = &outcome.summary;
    println!("scenario {}: {} ticks, {:.2} s simulated", s.scenario, s.ticks, s.duration);
    println!("leg  waypoint                 reached  mean [m]  max [m]  steady [m]");
    for l in &s.legs {
        println!(
            "{:3}  ({:5.2}, {:5.2}, {:5.2})   {:7}  {:8.3}  {:7.3}  {:10.4}",
            l.waypoint, l.target[0], l.target[1], l.target[2], l.reached, l.mean_error, l.max_error, l.steady_state_error
        );
    }
    println!("mode timeline:");
    for m in &s.timeline {
        println!("  {:8.3} s  {:9}  {}", m.time, m.mode.name(), m.reason);
    }
    for r in &s.rejected_commands {
        println!("rejected: {r}");
    }
    if let Some(f) = &s.fault {
        println!(
            "fault injected at {:.3} s, fallback tick {:?} (injected {}), recovery {:?} s, recovered {}",
            f.injected_at, f.fallback_tick, f.injected_tick, f.recovery_time, f.recovered
        );
    }
    println!("fault fallbacks: {}", s.fault_fallbacks);
    match &s.failure {
        Some(reason) => Err(CliError::Core(Error::FlightFailed(reason.clone()))),
        None => Ok(()),
    }
}

fn cmd_bench(model: &Path, iterations: usize, out: Option<&Path>, budget: Option<usize>) -> Result<(), CliError> {
    let budget = budget.unwrap_or(DEFAULT_BUDGET_BYTES);
    let mut manifest = match out {
        Some(dir) => Some(RunManifest::begin("bench", vec![model.to_path_buf()], None, dir)?),
        None => None,
    };
    let blob = read_file(model)?;
    let mut runtime = InferenceRuntime::init(&blob, budget)?;
    let report = bench(&mut runtime, iterations, budget)?;
    print!("{}", report.to_table());
    if let Some(m) = manifest.as_mut() {
        m.artifact("bench.csv", report.to_csv().as_bytes())?;
        m.write()?;
    }
    Ok(())
}

fn cmd_report(telemetry: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut logs = Vec::new();
    for path in telemetry {
        let name = path
            .parent()
            .and_then(Path::file_name)
            .or_else(|| path.file_stem())
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        logs.push((name, report::load_log(path)?));
    }
    let mut manifest = RunManifest::begin("report", telemetry.to_vec(), None, out)?;
    for path in report::render(&logs, out)? {
        let bytes = read_file(&path)?;
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        manifest.artifacts.insert(name, manifest::sha256_hex(&bytes));
        println!("wrote {}", path.display());
    }
    manifest.write()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sysid { config } => cmd_sysid(&config),
        Command::Train { config, seed, out } => cmd_train(config.as_deref(), seed, &out),
        Command::Fly {
            scenario,
            config,
            model,
            seed,
            out,
            budget,
        } => cmd_fly(&scenario, config.as_deref(), model.as_deref(), seed, &out, budget.budget_bytes),
        Command::Bench {
            model,
            iterations,
            out,
            budget,
        } => cmd_bench(&model, iterations, out.as_deref(), budget.budget_bytes),
        Command::Report { telemetry, out } => cmd_report(&telemetry, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
