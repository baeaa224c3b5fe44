//! `fedgs-sim`: run FedGS / FedAvg experiments, export the difficulty curve,
//! and dump synthetic datasets.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedgs_core::config::{parse_config, ExperimentConfig};
use fedgs_core::difficulty::{curve_to_csv, difficulty_curve, CurveGrid};
use fedgs_core::experiment::{final_round_means, generate_data, run_and_write};
use fedgs_core::{Error, StrategyKind};

#[derive(Debug, Parser)]
#[command(name = "fedgs-sim", version, about = "Federated gradient-scaling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (seed, strategy) pair of a config and write results.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write the difficulty curve (inverse area, raw, gated) as CSV.
    Curve {
        /// Logarithm base.
        #[arg(long)]
        l: f64,
        /// Small-lesion threshold on the inverse area.
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        /// First grid point.
        #[arg(long, default_value_t = 1.0)]
        start: f64,
        /// Ratio between consecutive grid points.
        #[arg(long, default_value_t = 2.0)]
        ratio: f64,
        /// Number of grid points (default: as many as fit below 1e7).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Dump the federation for the config's first seed as PGM files plus a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration with comments.
    PrintDefaults,
}

fn exit_code(err: &Error) -> ExitCode {
    if err.is_io() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), Error> {
    let cfg = parse_config(&config)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    let (output, overhead, secs) = run_and_write(&cfg, &dir)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} rows to {} in {secs:.1}s",
        output.rows.len(),
        dir.join("results.csv").display()
    );
    for kind in &cfg.strategies {
        if let Some((dice, dice_s, dice_l)) = final_round_means(&output.rows, *kind) {
            let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            println!(
                "{:>6} final round: Dice {dice:.4}  DiceS {}  DiceL {}",
                kind.name(),
                show(dice_s),
                show(dice_l)
            );
        }
    }
    if let Some(report) = overhead {
        if cfg.record_wall_time {
            println!(
                "{} wall time per round vs {}: {:+.2}%",
                StrategyKind::FedGs.name(),
                StrategyKind::FedAvg.name(),
                report.overhead_percent()
            );
        }
    }
    Ok(())
}

fn curve(l: f64, tau: f64, out: PathBuf, start: f64, ratio: f64, count: Option<usize>) -> Result<(), Error> {
    let count = match count {
        Some(c) => c,
        None if ratio > 1.0 && start >= CurveGrid::MIN => {
            let mut n = 0;
            while start * ratio.powi(n as i32) <= CurveGrid::MAX {
                n += 1;
            }
            n
        }
        None => 0,
    };
    let points = difficulty_curve(l, tau, &CurveGrid::Geometric { start, ratio, count })?;
    fs::write(&out, curve_to_csv(&points)).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    println!("wrote {} points to {}", points.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, out, threads } => run(config, out, threads),
        Command::Curve {
            l,
            tau,
            out,
            start,
            ratio,
            count,
        } => curve(l, tau, out, start, ratio, count),
        Command::GenData { config, out } => parse_config(&config).and_then(|cfg| generate_data(&cfg, &out)),
        Command::PrintDefaults => {
            print!("{}", ExperimentConfig::default().to_ini());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
