//! Unsupervised speckle denoising with two chained cycle-consistent
//! Wasserstein GAN stages joined by an image merge.

pub mod checkpoint;
pub mod config;
pub mod dual;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use config::{TrainConfig, Variant};
pub use dual::{CycleModels, DualMergedModel, StageOutputs};
pub use error::{Error, Result};
pub use evaluation::{AblationTable, Evaluation};
pub use imaging::{CropPlan, ImageTensor, RegionSpec};
pub use losses::LossBundle;
pub use metrics::{MetricsReport, SsimParams};
pub use networks::{CriticConfig, CriticModel, GeneratorModel, MultiUNetConfig, UNetConfig};
pub use synthetic::{PhantomSpec, SpeckleSpec};
pub use training::{Checkpoint, IterationRecord, LossRow, TrainObserver};
