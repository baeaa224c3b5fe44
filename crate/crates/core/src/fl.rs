//! Client and server sides of the aggregation protocol.
//!
//! Each client starts a round from the global parameters, trains locally,
//! and keeps a cumulative gradient `G ← G + η·Δ`, where `Δ = ω_{t−1} − ω_t` is
//! the parameter *decrement* of one local step and `η >= 1` comes from the
//! difficulty of the batch's ground-truth masks. The scaling never touches
//! the local parameters themselves.
//!
//! Under FedGS the server forms `G_A = Σ_k (steps_k / steps_total)·G_k` and
//! sets `ω ← ω − G_A`. Under FedAvg it averages the clients' final
//! parameters weighted by sample count.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::difficulty::{batch_scaling_for_masks, DifficultyConfig};
use crate::error::{Error, Result};
use crate::model::{batch_loss_and_gradient, ArchDescriptor, ParamVector};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::rng::{substream, Domain};
use crate::scalar::Scalar;
use crate::synth::{ClientDataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    FedGs,
    FedAvg,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedGs => "fedgs",
            StrategyKind::FedAvg => "fedavg",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedgs" => Ok(StrategyKind::FedGs),
            "fedavg" => Ok(StrategyKind::FedAvg),
            other => Err(format!("unknown strategy {other:?} (expected fedgs or fedavg)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig<T> {
    pub kind: StrategyKind,
    /// Only consulted by FedGS.
    pub difficulty: DifficultyConfig<T>,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl<T: Scalar> StrategyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Validation("local_epochs must be at least 1".into()));
        }
        self.difficulty.validate()
    }
}

/// Everything a client needs to run a round besides data and parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSetup<T> {
    pub arch: ArchDescriptor,
    pub optimizer: OptimizerConfig<T>,
    pub strategy: StrategyConfig<T>,
}

impl<T: Scalar> TrainingSetup<T> {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.optimizer.validate()?;
        self.strategy.validate()
    }

    pub fn with_kind(mut self, kind: StrategyKind) -> Self {
        self.strategy.kind = kind;
        self
    }
}

/// Local state of one client during a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState<T> {
    pub client_id: u64,
    pub params: ParamVector<T>,
    pub cumulative_gradient: ParamVector<T>,
    pub steps_this_round: usize,
    pub optimizer: OptimizerState<T>,
}

/// Per-iteration outcome of [`ClientState::local_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats<T> {
    pub loss: T,
    pub eta: T,
}

impl<T: Scalar> ClientState<T> {
    /// Round-start state: global parameters, zero cumulative gradient, fresh optimizer.
    pub fn start_round(client_id: u64, global: &ParamVector<T>, optimizer: OptimizerConfig<T>) -> Self {
        Self {
            client_id,
            params: global.clone(),
            cumulative_gradient: ParamVector::zeros(global.len()),
            steps_this_round: 0,
            optimizer: OptimizerState::new(optimizer, global.len()),
        }
    }

    /// One local optimizer step on `batch`, folding the scaled decrement into
    /// the cumulative gradient.
    pub fn local_iteration(
        &mut self,
        arch: &ArchDescriptor,
        batch: &[&Sample<T>],
        strategy: &StrategyConfig<T>,
    ) -> Result<IterationStats<T>> {
        if batch.is_empty() || batch.len() > strategy.batch_size {
            return Err(Error::BadBatch(format!(
                "batch of {} for batch_size {}",
                batch.len(),
                strategy.batch_size
            )));
        }
        let (loss, grad) = batch_loss_and_gradient(arch, &self.params, batch.iter().map(|s| (&s.image, &s.mask)));
        let eta = match strategy.kind {
            StrategyKind::FedGs => batch_scaling_for_masks(batch.iter().map(|s| &s.mask), &strategy.difficulty)?,
            StrategyKind::FedAvg => T::one(),
        };
        let before = self.params.clone();
        self.optimizer.step(&mut self.params, &grad)?;
        let decrement = before.sub(&self.params)?;
        self.cumulative_gradient.axpy(eta, &decrement)?;
        self.steps_this_round += 1;
        Ok(IterationStats { loss, eta })
    }
}

/// What a client sends back at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundReport<T> {
    pub client_id: u64,
    pub cumulative_gradient: ParamVector<T>,
    pub steps: usize,
    /// Final local parameters, consumed by FedAvg.
    pub final_params: ParamVector<T>,
    pub n_samples: usize,
    pub eta_sum: T,
    pub eta_max: T,
    pub loss_sum: T,
}

/// Key of the per-round shuffling streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundStream {
    pub experiment_seed: u64,
    pub round: u64,
}

impl RoundStream {
    fn epoch_order(&self, client_id: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = substream(self.experiment_seed, Domain::Shuffle, &[client_id, self.round, epoch as u64]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }
}

/// Runs one client's local round.
pub fn run_client_round<T: Scalar>(
    global: &ParamVector<T>,
    dataset: &ClientDataset<T>,
    setup: &TrainingSetup<T>,
    stream: RoundStream,
) -> Result<ClientRoundReport<T>> {
    run_client_round_observed(global, dataset, setup, stream, |_| {})
}

/// [`run_client_round`] calling `observer` with the local parameters after every step.
pub fn run_client_round_observed<T: Scalar>(
    global: &ParamVector<T>,
    dataset: &ClientDataset<T>,
    setup: &TrainingSetup<T>,
    stream: RoundStream,
    mut observer: impl FnMut(&ParamVector<T>),
) -> Result<ClientRoundReport<T>> {
    if dataset.is_empty() {
        return Err(Error::Validation(format!("client {} has no samples", dataset.client_id)));
    }
    let strategy = &setup.strategy;
    let mut state = ClientState::start_round(dataset.client_id, global, setup.optimizer);
    let mut eta_sum = T::zero();
    let mut eta_max = T::one();
    let mut loss_sum = T::zero();
    for epoch in 0..strategy.local_epochs {
        let order = stream.epoch_order(dataset.client_id, epoch, dataset.len());
        for chunk in order.chunks(strategy.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let stats = state.local_iteration(&setup.arch, &batch, strategy)?;
            eta_sum += stats.eta;
            eta_max = eta_max.max(stats.eta);
            loss_sum += stats.loss;
            observer(&state.params);
        }
    }
    Ok(ClientRoundReport {
        client_id: dataset.client_id,
        cumulative_gradient: state.cumulative_gradient,
        steps: state.steps_this_round,
        final_params: state.params,
        n_samples: dataset.len(),
        eta_sum,
        eta_max,
        loss_sum,
    })
}

/// Step-weighted average of cumulative gradients.
pub fn aggregate_fedgs<T: Scalar>(reports: &[ClientRoundReport<T>]) -> Result<ParamVector<T>> {
    let first = reports.first().ok_or(Error::EmptyFederation)?;
    let total: usize = reports.iter().map(|r| r.steps).sum();
    if reports.iter().any(|r| r.steps == 0) {
        return Err(Error::Validation("every client must report at least one step".into()));
    }
    let total = T::from_usize_lossy(total);
    let mut out = ParamVector::zeros(first.cumulative_gradient.len());
    for r in reports {
        out.axpy(T::from_usize_lossy(r.steps) / total, &r.cumulative_gradient)?;
    }
    Ok(out)
}

/// `global − aggregated`.
pub fn apply_global_update<T: Scalar>(global: &ParamVector<T>, aggregated: &ParamVector<T>) -> Result<ParamVector<T>> {
    global.sub(aggregated)
}

/// Weighted mean of parameter vectors.
pub fn aggregate_fedavg<T: Scalar>(clients: &[(&ParamVector<T>, T)]) -> Result<ParamVector<T>> {
    let (first, _) = clients.first().ok_or(Error::EmptyFederation)?;
    if let Some((_, w)) = clients.iter().find(|(_, w)| !(*w >= T::zero() && w.is_finite())) {
        return Err(Error::Validation(format!("aggregation weight {w} must be finite and >= 0")));
    }
    let total: T = clients.iter().map(|&(_, w)| w).sum();
    if total.is_nan() || total <= T::zero() {
        return Err(Error::Validation("aggregation weights sum to zero".into()));
    }
    let mut out = ParamVector::zeros(first.len());
    for &(params, w) in clients {
        out.axpy(w / total, params)?;
    }
    Ok(out)
}

/// Summary of one federated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats<T> {
    pub client_steps: Vec<usize>,
    pub steps_total: usize,
    /// Mean `η` over every local iteration of every client.
    pub mean_eta: T,
    pub max_eta: T,
    pub mean_loss: T,
    pub wall: Duration,
}

/// One full round: local training on every client from the same snapshot,
/// then aggregation.
pub fn run_round<T: Scalar>(
    global: &ParamVector<T>,
    clients: &[ClientDataset<T>],
    setup: &TrainingSetup<T>,
    stream: RoundStream,
    parallel: bool,
) -> Result<(ParamVector<T>, RoundStats<T>)> {
    if clients.is_empty() {
        return Err(Error::EmptyFederation);
    }
    let start = Instant::now();
    let reports: Vec<ClientRoundReport<T>> = if parallel {
        clients
            .par_iter()
            .map(|c| run_client_round(global, c, setup, stream))
            .collect::<Result<_>>()?
    } else {
        clients
            .iter()
            .map(|c| run_client_round(global, c, setup, stream))
            .collect::<Result<_>>()?
    };
    let updated = aggregate_reports(global, &reports, setup.strategy.kind)?;
    let wall = start.elapsed();

    let steps_total: usize = reports.iter().map(|r| r.steps).sum();
    let n = T::from_usize_lossy(steps_total);
    let stats = RoundStats {
        client_steps: reports.iter().map(|r| r.steps).collect(),
        steps_total,
        mean_eta: reports.iter().map(|r| r.eta_sum).sum::<T>() / n,
        max_eta: reports.iter().map(|r| r.eta_max).fold(T::one(), T::max),
        mean_loss: reports.iter().map(|r| r.loss_sum).sum::<T>() / n,
        wall,
    };
    Ok((updated, stats))
}

/// Server-side update for `kind` from a set of client reports.
pub fn aggregate_reports<T: Scalar>(
    global: &ParamVector<T>,
    reports: &[ClientRoundReport<T>],
    kind: StrategyKind,
) -> Result<ParamVector<T>> {
    match kind {
        StrategyKind::FedGs => apply_global_update(global, &aggregate_fedgs(reports)?),
        StrategyKind::FedAvg => {
            let weighted: Vec<(&ParamVector<T>, T)> = reports
                .iter()
                .map(|r| (&r.final_params, T::from_usize_lossy(r.n_samples)))
                .collect();
            aggregate_fedavg(&weighted)
        }
    }
}
