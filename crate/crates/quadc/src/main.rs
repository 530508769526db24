//! Scenario runner CLI: run presets or scenario files, validate configs,
//! and emit CSV logs plus a metrics report. Exit code 0 means every metric
//! threshold was met.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use quadc_core::harness::{preset, preset_names, run_scenario, write_log_csv, Scenario};

#[derive(Parser)]
#[command(name = "quadc", about = "Compliant quadruped locomotion scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a named preset.
    Run {
        /// Path to a scenario JSON file, or a preset name.
        #[arg(long)]
        scenario: String,
        /// Override the simulation RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the run duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory for the CSV log and the metrics report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path overrides into the scenario JSON, e.g.
        /// `--set controller.v_cmd=[0.3,0] --set sim.seed=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List built-in presets.
    ListPresets,
    /// Parse and validate a scenario file without running it.
    Validate { file: PathBuf },
}

fn load_scenario(spec: &str) -> Result<Scenario, String> {
    if let Some(s) = preset(spec) {
        return Ok(s);
    }
    let path = PathBuf::from(spec);
    if !path.exists() {
        return Err(format!(
            "'{spec}' is neither a preset ({}) nor an existing file",
            preset_names().join(", ")
        ));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| format!("reading {spec}: {e}"))?;
    Scenario::from_json(&text).map_err(|e| format!("parsing {spec}: {e}"))
}

/// Apply `key=value` overrides onto the scenario through its JSON form.
fn apply_overrides(scenario: Scenario, overrides: &[String]) -> Result<Scenario, String> {
    if overrides.is_empty() {
        return Ok(scenario);
    }
    let mut value =
        serde_json::to_value(&scenario).map_err(|e| format!("serializing scenario: {e}"))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| format!("override '{item}' is not KEY=VALUE"))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if i + 1 == parts.len() {
                match cursor {
                    serde_json::Value::Object(map) => {
                        map.insert(part.to_string(), parsed.clone());
                    }
                    _ => return Err(format!("cannot set '{key}': parent is not an object")),
                }
            } else {
                cursor = cursor
                    .get_mut(*part)
                    .ok_or_else(|| format!("unknown config path '{key}' (at '{part}')"))?;
            }
        }
    }
    serde_json::from_value(value).map_err(|e| format!("override produced invalid scenario: {e}"))
}

fn run(
    spec: &str,
    seed: Option<u64>,
    duration: Option<f64>,
    out_dir: Option<PathBuf>,
    overrides: &[String],
) -> Result<bool, String> {
    let mut scenario = apply_overrides(load_scenario(spec)?, overrides)?;
    if let Some(seed) = seed {
        scenario.sim.seed = seed;
    }
    if let Some(duration) = duration {
        scenario.duration_s = duration;
    }
    scenario
        .validate()
        .map_err(|e| format!("invalid scenario: {e}"))?;

    let output = run_scenario(&scenario).map_err(|e| format!("run failed: {e}"))?;
    let report = &output.report;
    println!(
        "scenario '{}': {} ({} control ticks, {:.1} s wall, {} stale MPC samples, {} degenerate estimates)",
        report.scenario,
        if report.completed { "completed" } else { "stopped early" },
        output.log.len(),
        report.wall_time_s,
        output.staleness_events,
        output.degenerate_estimates,
    );
    if report.fall {
        println!("  ROBOT FELL");
    }
    for r in &report.results {
        println!(
            "  [{}] {:<30} value {:+10.4}  threshold {:+10.4}",
            if r.pass && r.valid { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.threshold,
        );
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| format!("creating {dir:?}: {e}"))?;
        let log_path = dir.join(format!("{}_log.csv", report.scenario));
        write_log_csv(&log_path, &output.log).map_err(|e| format!("writing log: {e}"))?;
        let report_path = dir.join(format!("{}_metrics.json", report.scenario));
        let json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
        std::fs::write(&report_path, json).map_err(|e| format!("writing report: {e}"))?;
        println!("wrote {} and {}", log_path.display(), report_path.display());
    }
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            duration,
            out,
            overrides,
        } => match run(&scenario, seed, duration, out, &overrides) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => {
                eprintln!("one or more metrics failed");
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::ListPresets => {
            for name in preset_names() {
                let s = preset(name).expect("listed preset exists");
                println!("{name:<16} {:>5.1} s  {}", s.duration_s, describe(&s));
            }
            ExitCode::SUCCESS
        }
        Command::Validate { file } => {
            let text = match std::fs::read_to_string(&file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error reading {}: {e}", file.display());
                    return ExitCode::from(2);
                }
            };
            match Scenario::from_json(&text) {
                Ok(s) => {
                    println!(
                        "ok: scenario '{}' valid ({} metrics)",
                        s.name,
                        s.metrics.len()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

fn describe(s: &Scenario) -> &'static str {
    use quadc_core::simulator::DisturbanceProfile as D;
    match &s.disturbance {
        D::None => "undisturbed trot",
        D::ConstantLoad { .. } => "constant load on the base",
        D::CircularForce { .. } => "rotating horizontal force with vertical load",
        D::ImpulsePush { .. } => "repeated lateral pushes",
        D::ScriptedTimeline { .. } => "scripted push toward an obstacle",
        D::LeaderRod { .. } => "rod-guided leader following",
    }
}
