//! Training and evaluation pipeline: parameter store and checkpoints, CSI
//! standardization, metrics, model assembly, the training loop with its
//! gradient checker, and the experiment drivers.

pub mod experiments;
pub mod fire;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use experiments::{run_ablation, run_generalization, AnyModel};
pub use fire::{fire_standardize, fire_standardize_multi};
pub use metrics::{mae_db, snr_cdf, snr_db, MaeStats, MetricsReport};
pub use model::{GaiNerf, MlpBaseline, ModelConfig, SigKind, Variant};
pub use params::{fnv1a, read_checkpoint, write_checkpoint, ModelParams, Segment};
pub use train::{grad_check, train, GradCheckReport, TrainConfig, TrainHistory};
