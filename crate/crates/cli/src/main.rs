use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use edgescale::harness::{
    compare_costs, cost_accounting, load_report, run_and_export, scenario_fleet, selftest, train_and_export,
    write_cost_csv, Approach, Scenario, StageOneSource,
};
use edgescale::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edgescale",
    version,
    about = "Device-aware DNN design optimization over a simulated edge fleet"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the scenario's `output_dir`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the device fleet and write `fleet.json`.
    GenFleet(ScenarioArgs),
    /// Run Stage 1 only and persist the trained models.
    TrainPredictors {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        approach: Option<String>,
    },
    /// Run a full scenario and export the report.
    Optimize {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// proxy | amortized (overrides the scenario).
        #[arg(long)]
        approach: Option<String>,
        /// Reuse `fleet.json` and `models/` from the output directory.
        #[arg(long)]
        skip_training: bool,
    },
    /// Print a summary of an exported run.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Per-device baseline cost, optionally compared with an exported run.
    CostTable {
        #[arg(long, default_value_t = 5000)]
        samples: u64,
        #[arg(long, default_value_t = 30.0)]
        seconds: f64,
        /// Target devices (default: those in `--run`, else 1).
        #[arg(long)]
        devices: Option<u64>,
        /// Exported run directory to compare against.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Exhaustive checks on the 128-design reduced space.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_scenario(args: &ScenarioArgs, approach: Option<&str>) -> edgescale::Result<Scenario> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::Config {
        path: args.config.display().to_string(),
        message: e.to_string(),
    })?;
    let mut value = Scenario::parse_json(&text)?;
    if let Some(map) = value.as_object_mut() {
        if let Some(seed) = args.seed {
            map.insert("seed".into(), seed.into());
        }
        if let Some(name) = approach {
            let parsed = Approach::parse(name).ok_or_else(|| Error::Config {
                path: "--approach".into(),
                message: format!("unknown approach `{name}`, expected proxy or amortized"),
            })?;
            map.insert("approach".into(), parsed.as_str().into());
        }
    }
    Scenario::from_value(value)
}

fn out_dir(args: &ScenarioArgs, scenario: &Scenario) -> PathBuf {
    args.out
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_report(dir: &Path) -> anyhow::Result<bool> {
    let report = load_report(dir).with_context(|| format!("reading report in {}", dir.display()))?;
    println!(
        "scenario {:?} seed {} approach {}",
        report.name,
        report.seed,
        report.approach.as_str()
    );
    println!(
        "{:<16} {:<20} {:>6} {:>9} {:>9} {:>9} {:>8}",
        "device", "design", "meas", "accuracy", "latency", "bound", "feasible"
    );
    for d in &report.devices {
        println!(
            "{:<16} {:<20} {:>6} {:>9.4} {:>9.3} {:>9} {:>8}",
            d.device_id,
            d.design.to_string(),
            d.measurements,
            d.true_accuracy,
            d.true_latency,
            d.latency_bound.map_or("-".into(), |b| format!("{b:.3}")),
            d.feasible
        );
    }
    for s in &report.stages {
        println!("stage {:<18} {:>8} measurements", s.stage, s.measurements);
    }
    println!("ledger total {}", report.ledger.total());
    write_cost_csv(&report.cost, std::io::stdout())?;
    Ok(report.infeasible)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenFleet(args) => {
            let scenario = load_scenario(&args, None)?;
            let dir = out_dir(&args, &scenario);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let fleet = scenario_fleet(&scenario)?;
            fleet.save_json(&dir.join("fleet.json"))?;
            println!(
                "wrote {} devices to {}",
                fleet.all().len(),
                dir.join("fleet.json").display()
            );
        }
        Command::TrainPredictors {
            scenario: args,
            approach,
        } => {
            let scenario = load_scenario(&args, approach.as_deref())?;
            let dir = out_dir(&args, &scenario);
            for s in train_and_export(&scenario, &dir)? {
                println!("stage {} {} measurements", s.stage, s.measurements);
            }
            println!("models written to {}", dir.join("models").display());
        }
        Command::Optimize {
            scenario: args,
            approach,
            skip_training,
        } => {
            let scenario = load_scenario(&args, approach.as_deref())?;
            let dir = out_dir(&args, &scenario);
            let source = if skip_training {
                StageOneSource::Reload(dir.clone())
            } else {
                StageOneSource::Train
            };
            let output = run_and_export(&scenario, &source, &dir)?;
            log::info!("run finished in {:.1} s", output.report.wall_time_s);
            if print_report(&dir)? {
                eprintln!("at least one device has no feasible design");
                return Ok(ExitCode::from(EXIT_INFEASIBLE));
            }
        }
        Command::Report { out } => {
            if print_report(&out)? {
                return Ok(ExitCode::from(EXIT_INFEASIBLE));
            }
        }
        Command::CostTable {
            samples,
            seconds,
            devices,
            run,
        } => {
            if samples == 0 || !(seconds > 0.0) {
                return Err(Error::Config {
                    path: "--samples/--seconds".into(),
                    message: "must be positive".into(),
                }
                .into());
            }
            let rows = match run {
                Some(dir) => {
                    let report = load_report(&dir)?;
                    let devices = devices.unwrap_or(report.devices.len() as u64);
                    compare_costs(samples, seconds, devices, &report)
                }
                None => cost_accounting(samples, seconds, devices.unwrap_or(1)),
            };
            write_cost_csv(&rows, std::io::stdout())?;
        }
        Command::Selftest { seed } => {
            let checks = selftest(seed)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config { .. }) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
