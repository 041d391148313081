use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use fpsim::accountant::ParticipationSchema;
use fpsim::harness::{self, config::parse_restarts, ExperimentConfig, LimitSource, NoiseSpec, PrivacyReport};

/// Federated training simulator with tree-aggregated DP noise and privacy accounting.
#[derive(Parser)]
#[command(name = "fpsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `$FPSIM_OUTPUT_ROOT/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate privacy over a grid of populations, rounds and report goals.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Output CSV; defaults to `$FPSIM_OUTPUT_ROOT/sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Privacy of a participation schema, or re-accounting of a finished run.
    Account {
        /// Comma-separated `key=value` pairs: rounds, min_sep, z (required),
        /// max_part, restarts (`none`, `periodic:F:P` or `r1;r2`), sigma_b, scale.
        #[arg(long, conflicts_with = "run", required_unless_present = "run")]
        schema: Option<String>,
        /// Run directory whose participation log is re-accounted.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Directory receiving privacy_report.{csv,txt}; prints to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two finished runs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Accuracy threshold for rounds-to-target; defaults to A's final accuracy.
        #[arg(long)]
        threshold: Option<f64>,
        /// Fail unless the final accuracies differ by at most this much.
        #[arg(long)]
        band: Option<f64>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out } => run(&config, out),
        Command::Sweep { grid, out } => {
            let out = out.unwrap_or_else(|| harness::output_root().join("sweep.csv"));
            let rows = harness::sweep_privacy(&grid, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Account { schema, run, out } => {
            let report = match (schema, run) {
                (Some(s), _) => schema_report(&s)?,
                (None, Some(dir)) => harness::account_run(&dir)?,
                (None, None) => bail!("either --schema or --run is required"),
            };
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    report.write(&dir)?;
                    println!("wrote privacy report to {}", dir.display());
                }
                None => print!("{}", report.to_text()),
            }
            Ok(())
        }
        Command::Compare { a, b, threshold, band } => {
            let cmp = harness::compare(&a, &b, threshold)?;
            print!("{}", cmp.to_table());
            if let Some(band) = band {
                if !cmp.within_band(band) {
                    bail!("final accuracies differ by more than {band}");
                }
            }
            Ok(())
        }
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let dir = out.unwrap_or_else(|| harness::run_dir(&cfg.name));
    let outcome = harness::run(&cfg, &dir)?;
    let last = outcome.metrics.last();
    println!("run `{}` finished: {} rounds in {}", cfg.name, outcome.metrics.len(), dir.display());
    if let Some(acc) = harness::compare::final_accuracy(&outcome.metrics) {
        println!("final eval accuracy: {acc:.4}");
    }
    if let Some(row) = last {
        println!("train loss: {:.4}", row.train_loss);
    }
    if outcome.report.rho.is_finite() {
        println!("rho = {:.6}, epsilon = {:.4} at delta = {:e}", outcome.report.rho, outcome.report.epsilon, outcome.report.delta);
    } else {
        println!("not private (zero noise)");
    }
    Ok(())
}

fn schema_report(spec: &str) -> Result<PrivacyReport> {
    let mut rounds = None;
    let mut min_sep = None;
    let mut max_part = None;
    let mut z = None;
    let mut restarts = None;
    let mut sigma_b = None;
    let mut scale = 1.0;
    for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{pair}`"))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |what: &str| -> Result<f64> { value.parse().map_err(|_| anyhow!("{what}: bad number `{value}`")) };
        let int = |what: &str| -> Result<u64> { value.parse().map_err(|_| anyhow!("{what}: bad integer `{value}`")) };
        match key {
            "rounds" => rounds = Some(int(key)?),
            "min_sep" => min_sep = Some(int(key)?),
            "max_part" => max_part = Some(int(key)?),
            "z" => z = Some(num(key)?),
            "restarts" => restarts = Some(value.replace(';', ",")),
            "sigma_b" => sigma_b = Some(num(key)?),
            "scale" => scale = num(key)?,
            _ => bail!("unknown schema key `{key}`"),
        }
    }
    let rounds = rounds.ok_or_else(|| anyhow!("schema needs rounds"))?;
    let min_sep = min_sep.ok_or_else(|| anyhow!("schema needs min_sep"))?;
    let z = z.ok_or_else(|| anyhow!("schema needs z"))?;
    let restarts = match restarts {
        Some(r) => parse_restarts(&r, rounds)?,
        None => fpsim::tree::RestartSchedule::none(),
    };
    let (schema, source) = match max_part {
        Some(p) => (ParticipationSchema::new(rounds, min_sep, p, restarts)?, LimitSource::Given),
        None => (ParticipationSchema::worst_case(rounds, min_sep, restarts)?, LimitSource::WorstCase),
    };
    let noise = NoiseSpec { z_delta: z, sigma_b, sensitivity_scale: scale };
    Ok(PrivacyReport::new(schema, noise, source, None)?)
}
