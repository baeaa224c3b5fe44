//! Desk-scale federated learning simulator for difficulty-scaled gradient
//! aggregation (FedGS) on synthetic lesion-segmentation data, with a FedAvg
//! baseline.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32`/`f64`); the aliases at
//! the crate root pin them to `f64`, which the experiment harness uses.

pub mod config;
pub mod difficulty;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod morphology;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use difficulty::{
    batch_scaling_factor, difficulty_curve, difficulty_factor, inverse_relative_area, smallest_lesion_inverse_area,
    CurveGrid, Regime,
};
pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ResultRow};
pub use fl::{
    aggregate_fedavg, aggregate_fedgs, apply_global_update, run_client_round, run_round, RoundStream, StrategyKind,
};
pub use mask::{Grid, Mask};
pub use metrics::{dice_score, evaluate};
pub use model::{backward, dice_loss, forward, init_params, ArchDescriptor};
pub use morphology::{dilate, erode, label_components, ComponentLabeling, Connectivity, StructuringElement};
pub use optim::OptimizerKind;
pub use scalar::Scalar;
pub use synth::{build_federation, generate_client_dataset, ClientDataSpec};

pub type Image = Grid<f64>;
pub type ParamVector = model::ParamVector<f64>;
pub type DifficultyConfig = difficulty::DifficultyConfig<f64>;
pub type DifficultyResult = difficulty::DifficultyResult<f64>;
pub type OptimizerConfig = optim::OptimizerConfig<f64>;
pub type OptimizerState = optim::OptimizerState<f64>;
pub type StrategyConfig = fl::StrategyConfig<f64>;
pub type TrainingSetup = fl::TrainingSetup<f64>;
pub type ClientState = fl::ClientState<f64>;
pub type ClientRoundReport = fl::ClientRoundReport<f64>;
pub type RoundStats = fl::RoundStats<f64>;
pub type Sample = synth::Sample<f64>;
pub type ClientDataset = synth::ClientDataset<f64>;
pub type Federation = synth::Federation<f64>;
pub type EvalReport = metrics::EvalReport<f64>;
