mod common;

use fedgs_core::fl::{aggregate_reports, run_client_round_observed};
use fedgs_core::{
    aggregate_fedgs, backward, build_federation, difficulty_factor, init_params, run_client_round, run_round,
    ArchDescriptor, ClientDataSpec, ClientDataset, ClientRoundReport, ClientState, DifficultyConfig, Federation,
    OptimizerConfig, ParamVector, RoundStream, Sample, StrategyConfig, StrategyKind, TrainingSetup,
};

use common::disks;

fn setup(kind: StrategyKind, optimizer: OptimizerConfig) -> TrainingSetup {
    TrainingSetup {
        arch: ArchDescriptor::default(),
        optimizer,
        strategy: StrategyConfig {
            kind,
            difficulty: DifficultyConfig {
                threshold: 18.0,
                ..DifficultyConfig::polyp()
            },
            batch_size: 4,
            local_epochs: 1,
        },
    }
}

fn specs(small_fraction: f64, n: usize) -> Vec<ClientDataSpec> {
    (0..3)
        .map(|k| ClientDataSpec {
            n_samples: n,
            small_fraction,
            seed_offset: k,
            ..ClientDataSpec::default()
        })
        .collect()
}

fn stream(round: u64) -> RoundStream {
    RoundStream {
        experiment_seed: 5,
        round,
    }
}

fn max_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.max_abs_diff(b).unwrap()
}

#[test]
fn cumulative_gradient_is_scaled_decrement() {
    let s = setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-2));
    let fed: Federation = build_federation(&specs(0.5, 40), 1).unwrap();
    let samples = &fed.clients[0].samples;
    let batch: Vec<&Sample> = samples.iter().take(4).collect();
    let global: ParamVector = init_params(&s.arch, 0);
    let mut state = ClientState::start_round(0, &global, s.optimizer);
    let stats = state.local_iteration(&s.arch, &batch, &s.strategy).unwrap();
    let deltas: f64 = batch
        .iter()
        .map(|x| difficulty_factor(&x.mask, &s.strategy.difficulty).delta)
        .sum();
    assert_eq!(stats.eta, 1.0 + 0.5 * deltas);
    let dec = global.sub(&state.params).unwrap();
    for (g, d) in state.cumulative_gradient.as_slice().iter().zip(dec.as_slice()) {
        assert_eq!(*g, stats.eta * d);
    }
    assert_eq!(state.steps_this_round, 1);
    assert!(state.local_iteration(&s.arch, &[], &s.strategy).is_err());
}

#[test]
fn eta_scales_the_stored_decrement() {
    let s = setup(StrategyKind::FedGs, OptimizerConfig::sgd(0.1));
    let small = Sample {
        image: fedgs_core::Grid::filled(32, 32, 0.0),
        mask: disks(32, 32, &[(10.0, 10.0, 2.0)]),
        provenance: fedgs_core::synth::Provenance { client: 0, index: 0 },
        small_by_construction: true,
    };
    let large = Sample {
        mask: disks(32, 32, &[(16.0, 16.0, 7.0)]),
        ..small.clone()
    };
    let batch = [&small, &large, &large, &large];
    let d = difficulty_factor(&small.mask, &s.strategy.difficulty).delta;
    assert!(d > 0.0);
    let global = ParamVector::from_vec(vec![0.05; 77]);
    let mut state = ClientState::start_round(0, &global, s.optimizer);
    let stats = state.local_iteration(&s.arch, &batch, &s.strategy).unwrap();
    assert!((stats.eta - (1.0 + 0.5 * d)).abs() < 1e-15);
    let dec = global.sub(&state.params).unwrap();
    let mut expect = dec.clone();
    expect.scale(stats.eta);
    assert_eq!(state.cumulative_gradient, expect);
}

#[test]
fn steps_per_round() {
    let s = TrainingSetup {
        strategy: StrategyConfig {
            local_epochs: 5,
            ..setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-4)).strategy
        },
        ..setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-4))
    };
    let fed: Federation = build_federation(&specs(0.3, 10), 0).unwrap();
    let global: ParamVector = init_params(&s.arch, 0);
    let a = run_client_round(&global, &fed.clients[0], &s, stream(1)).unwrap();
    assert_eq!(a.steps, 15);
    let b = run_client_round(&global, &fed.clients[0], &s, stream(1)).unwrap();
    assert_eq!(a, b);
    let c = run_client_round(&global, &fed.clients[0], &s, stream(2)).unwrap();
    assert_ne!(a.final_params, c.final_params);
}

#[test]
fn single_sample_sgd_round_stores_one_step() {
    let lr = 0.05;
    let s = setup(StrategyKind::FedGs, OptimizerConfig::sgd(lr));
    let fed: Federation = build_federation(&specs(0.0, 1), 2).unwrap();
    let client = &fed.clients[0];
    let global: ParamVector = init_params(&s.arch, 3);
    let r = run_client_round(&global, client, &s, stream(1)).unwrap();
    assert_eq!(r.steps, 1);
    assert_eq!(r.eta_max, 1.0);
    let mut expect = backward(&s.arch, &global, &client.samples[0].image, &client.samples[0].mask);
    expect.scale(lr);
    assert!(max_diff(&r.cumulative_gradient, &expect) < 1e-15);
}

#[test]
fn telescoping_without_scaling() {
    for opt in [OptimizerConfig::sgd(0.3), OptimizerConfig::adamw(1e-2)] {
        let mut s = setup(StrategyKind::FedAvg, opt);
        s.strategy.local_epochs = 3;
        let fed: Federation = build_federation(&specs(0.4, 18), 4).unwrap();
        let global: ParamVector = init_params(&s.arch, 1);
        let r = run_client_round(&global, &fed.clients[1], &s, stream(1)).unwrap();
        let diff = global.sub(&r.final_params).unwrap();
        assert!(max_diff(&r.cumulative_gradient, &diff) < 1e-12);
    }
}

#[test]
fn local_trajectory_ignores_strategy() {
    let fed: Federation = build_federation(&specs(0.5, 12), 6).unwrap();
    let gs = setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-2));
    let avg = gs.with_kind(StrategyKind::FedAvg);
    let global: ParamVector = init_params(&gs.arch, 2);
    for client in &fed.clients {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let ra = run_client_round_observed(&global, client, &gs, stream(1), |p| a.push(p.clone())).unwrap();
        let rb = run_client_round_observed(&global, client, &avg, stream(1), |p| b.push(p.clone())).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.final_params, rb.final_params);
        assert!(ra.eta_max > 1.0);
        assert_ne!(ra.cumulative_gradient, rb.cumulative_gradient);
    }
}

#[test]
fn raising_one_eta_shifts_the_pseudo_gradient_linearly() {
    let s = setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-2));
    let plain = s.strategy;
    let flat = StrategyConfig {
        kind: StrategyKind::FedAvg,
        ..plain
    };
    let fed: Federation = build_federation(&specs(0.5, 12), 8).unwrap();
    let global: ParamVector = init_params(&s.arch, 0);
    let samples: Vec<&Sample> = fed.clients[0].samples.iter().collect();
    let batches: Vec<&[&Sample]> = samples.chunks(4).collect();
    let scaled_batch = batches
        .iter()
        .position(|b| b.iter().any(|x| difficulty_factor(&x.mask, &plain.difficulty).is_small))
        .expect("a batch with a small lesion");

    let run = |scaled: Option<usize>| {
        let mut st = ClientState::start_round(0, &global, s.optimizer);
        let mut info = (1.0, ParamVector::zeros(77));
        for (j, b) in batches.iter().enumerate() {
            let before = st.params.clone();
            let cfg = if Some(j) == scaled { &plain } else { &flat };
            let stats = st.local_iteration(&s.arch, b, cfg).unwrap();
            if Some(j) == scaled {
                info = (stats.eta, before.sub(&st.params).unwrap());
            }
        }
        (st, info)
    };
    let (base, _) = run(None);
    let (bumped, (eta, dec)) = run(Some(scaled_batch));
    assert!(eta > 1.0);
    assert_eq!(base.params, bumped.params);

    let other = run_client_round(&global, &fed.clients[1], &s.with_kind(StrategyKind::FedAvg), stream(1)).unwrap();
    let report = |st: &ClientState| ClientRoundReport {
        client_id: 0,
        cumulative_gradient: st.cumulative_gradient.clone(),
        steps: st.steps_this_round,
        final_params: st.params.clone(),
        n_samples: 12,
        eta_sum: 0.0,
        eta_max: 1.0,
        loss_sum: 0.0,
    };
    let ga = aggregate_fedgs(&[report(&base), other.clone()]).unwrap();
    let gb = aggregate_fedgs(&[report(&bumped), other.clone()]).unwrap();
    let w = base.steps_this_round as f64 / (base.steps_this_round + other.steps) as f64;
    let mut expect = dec.clone();
    expect.scale(w * (eta - 1.0));
    assert!(max_diff(&gb.sub(&ga).unwrap(), &expect) < 1e-15);
}

#[test]
fn single_client_round_lands_on_client_params() {
    let fed: Federation = build_federation(&specs(0.0, 16), 3).unwrap();
    let one = vec![fed.clients[0].clone()];
    for kind in [StrategyKind::FedGs, StrategyKind::FedAvg] {
        let s = setup(kind, OptimizerConfig::adamw(1e-2));
        let global: ParamVector = init_params(&s.arch, 0);
        let report = run_client_round(&global, &one[0], &s, stream(1)).unwrap();
        let (next, stats) = run_round(&global, &one, &s, stream(1), false).unwrap();
        assert_eq!(stats.max_eta, 1.0);
        assert!(max_diff(&next, &report.final_params) < 1e-15);
    }
}

#[test]
fn zero_updates_keep_the_global_model() {
    let global = ParamVector::from_vec(vec![0.25, -1.0, 3.0]);
    let reports: Vec<ClientRoundReport> = (0..3)
        .map(|k| ClientRoundReport {
            client_id: k,
            cumulative_gradient: ParamVector::zeros(3),
            steps: k as usize + 1,
            final_params: global.clone(),
            n_samples: 10 * (k as usize + 1),
            eta_sum: 1.0,
            eta_max: 1.0,
            loss_sum: 0.0,
        })
        .collect();
    for kind in [StrategyKind::FedGs, StrategyKind::FedAvg] {
        assert_eq!(aggregate_reports(&global, &reports, kind).unwrap(), global);
    }
    let ones: Vec<ClientRoundReport> = reports
        .iter()
        .map(|r| ClientRoundReport {
            cumulative_gradient: ParamVector::from_vec(vec![1.0; 3]),
            ..r.clone()
        })
        .collect();
    let g = aggregate_fedgs(&ones).unwrap();
    assert!(g.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn parallel_round_matches_sequential() {
    let fed: Federation = build_federation(&specs(0.3, 12), 2).unwrap();
    let clients: Vec<ClientDataset> = fed.clients.clone();
    let s = setup(StrategyKind::FedGs, OptimizerConfig::adamw(1e-3));
    let global: ParamVector = init_params(&s.arch, 4);
    let (a, sa) = run_round(&global, &clients, &s, stream(1), true).unwrap();
    let (b, sb) = run_round(&global, &clients, &s, stream(1), false).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.client_steps, sb.client_steps);
    assert_eq!(sa.mean_eta, sb.mean_eta);
    assert!((1.0..3.0).contains(&sa.mean_eta));
    assert!(run_round(&global, &[], &s, stream(1), false).is_err());
}
