//! CPU 3D Gaussian splatting with a computation-cost poisoning toolkit.
//!
//! The crate trains Gaussian splatting models on multi-view datasets, crafts
//! poisoned datasets that inflate the number of Gaussians a victim trainer
//! produces, and measures the resulting memory, time and quality costs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attack;
pub mod cli;
pub mod cloud;
pub mod error;
pub mod gaussian;
pub mod loss;
pub mod profile;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod train;

pub use attack::{naive_tv_attack, poison_dataset, project_epsilon, tv_grad, tv_score, AttackConfig, AttackLog, Budget, PoisonedDataset};
pub use cloud::{Checkpoint, GaussianCloud};
pub use error::{Error, Result};
pub use gaussian::{activate, build_covariance, project_gaussian, CameraPose, Gaussian, GaussianGrad, Splat2D};
pub use loss::reconstruction_loss;
pub use profile::{correlate, fps_benchmark, summarize, sweep_gaussians_vs_cost, CostMetrics, SweepRow};
pub use raster::{render, render_backward, tile_bin, Image, RenderGrads, TileBins};
pub use scene::{gen_scene, load_dataset, save_dataset, Dataset, SceneSpec, View};
pub use train::{densify_and_prune, memory_model, train, TrainConfig, TrainRecord, Trainer};
