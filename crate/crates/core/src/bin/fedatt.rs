//! `fedatt` command-line entry point.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid configuration,
//! 3 runtime abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use fedatt::config::{Scenario, ScenarioConfig};
use fedatt::federation::{run_scenario, switch_demo, RoundMetrics, RunOptions};
use fedatt::gradcheck::{run_all, GRADCHECK_SEED, GRADCHECK_TOLERANCE};
use fedatt::Error;

#[derive(Parser, Debug)]
#[command(
    name = "fedatt",
    version,
    about = "Attentive federated averaging under concept drift"
)]
struct Cli {
    /// Scenario configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Save global parameters after every round.
    #[arg(long, global = true)]
    checkpoint: bool,
    /// Worker threads for client training (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// `dotted.path=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured scenario.
    Simulate,
    /// Check analytic gradients of every learner against finite differences.
    Gradcheck {
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt: f64,
    },
    /// Train and score the new-station query classifier.
    SwitchDemo,
}

enum Failure {
    Verification,
    Config(Error),
    Runtime(Error),
}

impl Failure {
    fn from_run(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } => Failure::Config(e),
            e => Failure::Runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Gradcheck { corrupt } => gradcheck(*corrupt),
        Command::SwitchDemo => switch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli, scenario_default: Scenario) -> Result<ScenarioConfig, Failure> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    let config = match &cli.config {
        Some(path) => ScenarioConfig::load(path, &overrides),
        None => {
            let base = ScenarioConfig::for_scenario(scenario_default)
                .to_json_pretty()
                .map_err(Failure::Config)?;
            ScenarioConfig::from_json_str(&base, &overrides)
        }
    };
    config.map_err(Failure::Config)
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::io(dir, e)))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: &ScenarioConfig,
    started: f64,
    mut outputs: Vec<PathBuf>,
) -> Result<(), Failure> {
    let config_path = out.join("config.json");
    write(
        &config_path,
        &config.to_json_pretty().map_err(Failure::Runtime)?,
    )?;
    outputs.push(config_path);
    let manifest = json!({
        "command": command,
        "version": concat!("v", env!("CARGO_PKG_VERSION")),
        "started_at": started,
        "finished_at": now(),
        "config": config,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(Error::from(e)))?;
    write(&out.join("manifest.json"), &text)
}

fn progress(total_rounds: usize) -> impl FnMut(usize, &RoundMetrics) {
    move |k, m| {
        let mean = m.per_fog_mae.iter().sum::<f64>() / m.per_fog_mae.len() as f64;
        let drifted: Vec<String> = m.drifted_fogs.iter().map(usize::to_string).collect();
        println!(
            "round {}/{total_rounds} k={k} mean_mae={mean:.4} agg_loss={:.4} drifted=[{}]",
            m.round + 1,
            m.aggregation_loss,
            drifted.join(",")
        );
    }
}

fn simulate(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli, Scenario::SingleDrift)?;
    let started = now();
    create_dir(&cli.out)?;
    let options = RunOptions {
        threads: cli.threads,
        out_dir: Some(cli.out.clone()),
        checkpoint: cli.checkpoint,
    };
    let outcomes =
        run_scenario(&config, &options, &mut progress(config.rounds)).map_err(Failure::from_run)?;
    let mut files = Vec::new();
    for o in &outcomes {
        if let Some(acc) = o.classifier_accuracy {
            println!("switch classifier accuracy {acc:.4}");
        }
        files.extend(o.files.iter().cloned());
    }
    write_manifest(&cli.out, "simulate", &config, started, files)
}

fn gradcheck(corrupt: f64) -> Result<(), Failure> {
    let results = run_all(GRADCHECK_SEED, corrupt).map_err(Failure::Runtime)?;
    let mut ok = true;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<15} params={:<5} max_rel_err={:.3e} {verdict}",
            r.kind.name(),
            r.parameters,
            r.max_relative_error
        );
        ok &= r.passed();
    }
    println!("tolerance {GRADCHECK_TOLERANCE:e}");
    if ok {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn switch(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli, Scenario::NewStation)?;
    let started = now();
    create_dir(&cli.out)?;
    let (_, accuracy, matrix) = switch_demo(&config).map_err(Failure::from_run)?;
    let path = cli.out.join("confusion.csv");
    matrix.save_csv(&path).map_err(Failure::Runtime)?;
    println!("switch classifier accuracy {accuracy}");
    write_manifest(&cli.out, "switch-demo", &config, started, vec![path])
}
