//! Ordinal regression under class-conditional label noise.
//!
//! - [`noise_model`]: inversely decaying transition matrices, inversion and
//!   label corruption.
//! - [`losses`]: cumulative-logit (CE) and implicit-constraint hinge (IMC)
//!   losses and their noise-corrected forms.
//! - [`netcore`]: a small dense network with backprop and AdamW.
//! - [`ordinal_model`]: the threshold model and its training loop.
//! - [`noise_estimation`]: anchor-based transition-matrix estimation.
//! - [`data`]: synthetic data, CSV loading, standardisation and splits.
//! - [`harness`]: metrics, multi-trial experiments and grid search.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod netcore;
pub mod noise_estimation;
pub mod noise_model;
pub mod ordinal_model;

pub use data::{generate_synth, load_csv, OrdinalDataset, SynthSpec};
pub use error::{Error, Result};
pub use harness::{evaluate, run_experiment, ExperimentPlan, ExperimentReport, Metrics, Variant};
pub use linalg::SquareMatrix;
pub use losses::{corrected_loss, loss_ce, loss_imc, loss_mae, BaseLoss, LossSpec, Thresholds};
pub use netcore::{Activation, DenseNet};
pub use noise_estimation::{estimate_matrix, matrix_error, train_multiclass, EstimationConfig, MulticlassHead};
pub use noise_model::{build_noise_matrix, NoiseMatrix, NoiseSpec};
pub use ordinal_model::{predict_from_score, threshold_init, thresholds_ordered, train, OrdinalModel, RankLog, TrainConfig};
