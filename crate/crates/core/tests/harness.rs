use std::path::Path;

use fedgs_core::experiment::{rows_to_csv, write_outputs, CSV_HEADER, CSV_VERSION_LINE};
use fedgs_core::synth::default_federation_specs;
use fedgs_core::{parse_config, parse_config_str, run_experiment, ClientDataSpec, Error, ExperimentConfig, StrategyKind};

fn quick(seeds: Vec<u64>, rounds: usize, strategies: Vec<StrategyKind>) -> ExperimentConfig {
    ExperimentConfig {
        seeds,
        rounds,
        strategies,
        clients: default_federation_specs()
            .into_iter()
            .map(|s| ClientDataSpec {
                n_samples: 8,
                height: 20,
                width: 20,
                ..s
            })
            .collect(),
        record_wall_time: false,
        ..ExperimentConfig::default()
    }
}

#[test]
fn shipped_default_config_is_canonical() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.ini");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, ExperimentConfig::default().to_ini());
    assert_eq!(parse_config(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn ini_round_trip() {
    let cfg = quick(vec![3, 7], 4, vec![StrategyKind::FedAvg]);
    assert_eq!(parse_config_str(&cfg.to_ini()).unwrap(), cfg);
}

#[test]
fn config_errors() {
    let base = ExperimentConfig::default().to_ini();
    let zero = base.replace("rounds = 20", "rounds = 0");
    assert!(matches!(parse_config_str(&zero), Err(Error::Validation(_))));

    let unknown = base.replace("local_epochs = 2", "local_epochs = 2\nlr_decay = 0.5");
    match parse_config_str(&unknown) {
        Err(Error::Parse { message, .. }) => assert!(message.contains("lr_decay"), "{message}"),
        other => panic!("{other:?}"),
    }
    let dup = base.replace("local_epochs = 2", "local_epochs = 2\nlocal_epochs = 3");
    assert!(matches!(parse_config_str(&dup), Err(Error::Parse { .. })));
    let bad = base.replace("batch_size = 4", "batch_size = four");
    assert!(matches!(parse_config_str(&bad), Err(Error::Parse { .. })));
    let no_test = &base[..base.find("# held-out").unwrap()];
    assert!(parse_config_str(no_test).is_err());
    assert!(matches!(parse_config("/nonexistent/x.ini"), Err(Error::Io { .. })));
}

#[test]
fn one_row_per_seed_strategy_round() {
    let cfg = quick(vec![0, 1], 10, vec![StrategyKind::FedGs, StrategyKind::FedAvg]);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 40);
    let keys: Vec<_> = out.rows.iter().map(|r| (r.seed, r.strategy, r.round)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(keys, sorted);
    for r in &out.rows {
        assert!((0.0..=1.0).contains(&r.dice));
        assert!(r.dice_s.is_none_or(|d| (0.0..=1.0).contains(&d)));
        assert!(r.dice_l.is_none_or(|d| (0.0..=1.0).contains(&d)));
        assert!((1.0..3.0).contains(&r.mean_eta));
        assert!(r.max_eta >= r.mean_eta && r.max_eta < 3.0);
        assert_eq!(r.steps_total, 4 * 2 * 2);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = quick(vec![5], 3, vec![StrategyKind::FedGs, StrategyKind::FedAvg]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
    write_outputs(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
    let csv_a = std::fs::read(a.path().join("results.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.path().join("results.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_VERSION_LINE));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 6);
    assert!(!a.path().join("overhead.csv").exists());
}

#[test]
fn fedavg_only_reports_unit_eta() {
    let cfg = quick(vec![2], 3, vec![StrategyKind::FedAvg]);
    let out = run_experiment(&cfg).unwrap();
    assert!(out.rows.iter().all(|r| r.mean_eta == 1.0 && r.max_eta == 1.0));
    let dir = tempfile::tempdir().unwrap();
    assert!(write_outputs(&out, dir.path()).unwrap().is_none());
    assert!(!dir.path().join("overhead.csv").exists());
    for line in rows_to_csv(&out.rows).lines().skip(2) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 10);
        assert_eq!((cols[6], cols[7]), ("1.00000000", "1.00000000"));
    }
}
