//! Multi-seed FedGS / FedAvg experiments and their CSV outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fl::{run_round, RoundStream, StrategyKind};
use crate::metrics::evaluate;
use crate::model::{init_params, ParamVector};
use crate::synth::{build_federation, dump_federation, foreground_violation_rate, Federation};

/// First line of every results CSV.
pub const CSV_VERSION_LINE: &str = "# fedgs-sim v1";
pub const CSV_HEADER: &str = "seed,strategy,round,dice,dice_s,dice_l,mean_eta,max_eta,steps_total,wall_ms";

/// Foreground pixels allowed below `intensity − 5σ` before a warning.
pub const VIOLATION_WARN_RATE: f64 = 1e-3;

/// One evaluated round of one (seed, strategy) run. Rounds are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub round: usize,
    pub dice: f64,
    pub dice_s: Option<f64>,
    pub dice_l: Option<f64>,
    pub mean_eta: f64,
    pub max_eta: f64,
    pub steps_total: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    /// Sorted by `(seed, strategy, round)`.
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
}

/// Trains one strategy on an already-built federation for `cfg.rounds` rounds.
pub fn run_strategy(
    cfg: &ExperimentConfig,
    federation: &Federation<f64>,
    seed: u64,
    strategy: StrategyKind,
) -> Result<Vec<ResultRow>> {
    let setup = cfg.setup(strategy);
    let mut global: ParamVector<f64> = init_params(&cfg.arch, seed);
    let mut rows = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let stream = RoundStream {
            experiment_seed: seed,
            round: round as u64,
        };
        let (next, stats) = run_round(&global, &federation.clients, &setup, stream, true)?;
        if !next.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite parameters after round {round} (seed {seed}, {})",
                strategy.name()
            )));
        }
        global = next;
        let eval = evaluate(
            &cfg.arch,
            &global,
            &federation.test.samples,
            &cfg.difficulty,
            cfg.eval_threshold,
        )?;
        rows.push(ResultRow {
            seed,
            strategy,
            round,
            dice: eval.dice,
            dice_s: eval.dice_s,
            dice_l: eval.dice_l,
            mean_eta: stats.mean_eta,
            max_eta: stats.max_eta,
            steps_total: stats.steps_total,
            wall_ms: if cfg.record_wall_time {
                stats.wall.as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
    }
    Ok(rows)
}

fn check_federation(cfg: &ExperimentConfig, federation: &Federation<f64>, seed: u64) -> Vec<String> {
    let datasets = federation.clients.iter().chain(std::iter::once(&federation.test));
    let mut warnings = Vec::new();
    for (spec, data) in cfg.clients.iter().zip(datasets) {
        let rate = foreground_violation_rate(&data.samples, spec);
        if rate > VIOLATION_WARN_RATE {
            warnings.push(format!(
                "seed {seed}, client {}: {:.3}% of lesion pixels fall below intensity - 5 sigma",
                data.client_id,
                rate * 100.0
            ));
        }
    }
    warnings
}

/// Runs every `(seed, strategy)` pair. Output is independent of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(Vec<ResultRow>, Vec<String>)> {
            let federation = build_federation::<f64>(&cfg.clients, seed)?;
            let warnings = check_federation(cfg, &federation, seed);
            let rows = cfg
                .strategies
                .par_iter()
                .map(|&s| run_strategy(cfg, &federation, seed, s))
                .collect::<Result<Vec<_>>>()?;
            Ok((rows.into_iter().flatten().collect(), warnings))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::default();
    for (rows, warnings) in per_seed {
        out.rows.extend(rows);
        out.warnings.extend(warnings);
    }
    out.rows.sort_by_key(|r| (r.seed, r.strategy, r.round));
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8}")).unwrap_or_default()
}

/// Results CSV: version line, header, then one line per row. Absent DiceS /
/// DiceL are empty fields.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{CSV_VERSION_LINE}\n{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.8},{},{},{:.8},{:.8},{},{:.3}",
            r.seed,
            r.strategy.name(),
            r.round,
            r.dice,
            opt(r.dice_s),
            opt(r.dice_l),
            r.mean_eta,
            r.max_eta,
            r.steps_total,
            r.wall_ms
        );
    }
    s
}

/// Mean per-round wall time of FedGS relative to FedAvg.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    /// `(round, mean FedGS ms, mean FedAvg ms)` averaged over seeds.
    pub per_round: Vec<(usize, f64, f64)>,
    pub fedgs_mean_ms: f64,
    pub fedavg_mean_ms: f64,
}

impl OverheadReport {
    /// `None` unless both strategies ran with wall-time recording.
    pub fn from_rows(rows: &[ResultRow]) -> Option<Self> {
        let mean = |kind: StrategyKind, round: Option<usize>| -> Option<f64> {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == kind && round.is_none_or(|n| r.round == n))
                .map(|r| r.wall_ms)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let fedgs_mean_ms = mean(StrategyKind::FedGs, None)?;
        let fedavg_mean_ms = mean(StrategyKind::FedAvg, None)?;
        if fedavg_mean_ms <= 0.0 {
            return None;
        }
        let max_round = rows.iter().map(|r| r.round).max().unwrap_or(0);
        let per_round = (1..=max_round)
            .filter_map(|n| Some((n, mean(StrategyKind::FedGs, Some(n))?, mean(StrategyKind::FedAvg, Some(n))?)))
            .collect();
        Some(Self {
            per_round,
            fedgs_mean_ms,
            fedavg_mean_ms,
        })
    }

    pub fn overhead_percent(&self) -> f64 {
        (self.fedgs_mean_ms / self.fedavg_mean_ms - 1.0) * 100.0
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("round,fedgs_ms,fedavg_ms,overhead_pct\n");
        for &(n, gs, avg) in &self.per_round {
            let pct = if avg > 0.0 { (gs / avg - 1.0) * 100.0 } else { f64::NAN };
            let _ = writeln!(s, "{n},{gs:.3},{avg:.3},{pct:.2}");
        }
        let _ = writeln!(
            s,
            "# mean per round: fedgs {:.3} ms, fedavg {:.3} ms, overhead {:+.2}%",
            self.fedgs_mean_ms,
            self.fedavg_mean_ms,
            self.overhead_percent()
        );
        s
    }
}

/// Final-round means per strategy: `(dice, dice_s, dice_l)`, skipping absent values.
pub fn final_round_means(rows: &[ResultRow], strategy: StrategyKind) -> Option<(f64, Option<f64>, Option<f64>)> {
    let last = rows.iter().filter(|r| r.strategy == strategy).map(|r| r.round).max()?;
    let finals: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.strategy == strategy && r.round == last)
        .collect();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Some((
        mean(finals.iter().map(|r| r.dice).collect())?,
        mean(finals.iter().filter_map(|r| r.dice_s).collect()),
        mean(finals.iter().filter_map(|r| r.dice_l).collect()),
    ))
}

/// Writes `results.csv` and, when both strategies ran, `overhead.csv` into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Option<OverheadReport>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("results.csv");
    fs::write(&path, rows_to_csv(&output.rows)).map_err(|e| Error::io(&path, e))?;
    let overhead = OverheadReport::from_rows(&output.rows);
    if let Some(report) = &overhead {
        let path = dir.join("overhead.csv");
        fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(overhead)
}

/// Dumps the federation generated for the config's first seed.
pub fn generate_data(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let federation = build_federation::<f64>(&cfg.clients, seed)?;
    dump_federation(&federation, &cfg.clients, dir)
}

/// Runs an experiment, timing it, and writes all outputs.
pub fn run_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<(ExperimentOutput, Option<OverheadReport>, f64)> {
    let start = Instant::now();
    let output = run_experiment(cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let overhead = write_outputs(&output, dir)?;
    Ok((output, overhead, secs))
}
