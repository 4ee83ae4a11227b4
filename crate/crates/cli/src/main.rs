use std::path::PathBuf;
use std::process::ExitCode;

use bohmlab::runner::{execute, summarize_finals};
use bohmlab::scenario::{presets, Overrides, ScenarioSpec};
use bohmlab::{io, write_artifacts, Emit};
use bohmlab_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bohmlab", version, about = "Pilot-wave trajectory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Preset name or path to a scenario file.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    snapshot_stride: Option<usize>,
}

impl Source {
    fn load(&self) -> Result<ScenarioSpec> {
        let o = Overrides {
            seed: self.seed,
            trajectories: self.trajectories,
            snapshot_stride: self.snapshot_stride,
        };
        ScenarioSpec::load(&self.scenario, &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report and artifacts.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, default_value = "bohmlab-out")]
        out: PathBuf,
        /// trajectories, histograms, fields, plots, timing, all or none.
        #[arg(long, default_value = "trajectories,histograms,timing")]
        emit: String,
    },
    /// Resolve and check a scenario without running it.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// List the built-in presets.
    Presets,
    /// Recompute summary statistics from a stored trajectory table.
    Report {
        /// Run directory containing trajectories.csv.
        dir: PathBuf,
    },
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { source, out, emit } => {
            let emit = Emit::parse(&emit)?;
            let spec = source.load()?;
            spec.experiment.validate()?;
            let result = execute(&spec).map_err(|e| {
                let _ = write_error(&out, &e);
                e
            })?;
            write_artifacts(&result, &out, emit)?;
            for c in result.report["checks"].as_array().into_iter().flatten() {
                let c: bohmlab_core::report::Check = serde_json::from_value(c.clone()).expect("check");
                eprintln!("{}", c.summary());
            }
            eprintln!("verdict: {}", result.report["verdict"].as_str().unwrap_or("?"));
            Ok(result.passed)
        }
        Command::Validate { source } => {
            let spec = source.load()?;
            let derived = spec.experiment.validate()?;
            print_json(&json!({ "scenario": spec.to_json(), "derived": derived }));
            Ok(true)
        }
        Command::Presets => {
            let list: Vec<_> = presets()
                .into_iter()
                .map(|p| {
                    json!({
                        "name": p.name,
                        "kind": p.scenario.experiment.kind(),
                        "claim": p.claim,
                        "acceptance": p.scenario.acceptance,
                    })
                })
                .collect();
            print_json(&json!(list));
            Ok(true)
        }
        Command::Report { dir } => {
            let finals = io::read_final_positions(&dir.join("trajectories.csv"))?;
            let stored = std::fs::read_to_string(dir.join("report.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok());
            print_json(&json!({
                "kind": stored.as_ref().and_then(|r| r["scenario"]["kind"].as_str().map(str::to_string)),
                "trajectories": finals.len(),
                "final_positions": summarize_finals(&finals),
            }));
            Ok(true)
        }
    }
}

fn error_record(e: &Error) -> serde_json::Value {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } })
}

fn write_error(dir: &std::path::Path, e: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("error.json"), error_record(e).to_string() + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}
