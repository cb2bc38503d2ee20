//! Joint micro/macro differentiable architecture search for correlated time
//! series forecasting: data pipeline, spatio-temporal operator set, supernet,
//! discrete derivation, bi-level search, retraining and evaluation.
//!
//! Core math is generic over the scalar type (`f32`/`f64` via num-traits);
//! the CLI and acceptance runs use the [`Real`] alias.

pub mod batch;
pub mod check;
pub mod checkpoint;
pub mod data;
pub mod derivation;
pub mod error;
pub mod forward;
pub mod genotype;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod supernet;
pub mod tape;
pub mod task;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::{
    build_supports, generate_synthetic, load_dataset, pseudo_split, split_and_window,
    write_dataset, CtsDataset, ForecastMode, Scaler, SplitSpec, SyntheticProcess, WindowSet,
};
pub use derivation::{derive_backbone, derive_genotype, derive_st_block, edge_weight};
pub use genotype::{BackboneSource, BlockGenotype, EdgeGene, Genotype, GenotypeMeta};
pub use loss::LossKind;
pub use metrics::MetricsReport;
pub use model::{build_discrete_model, DiscreteModel, ModelConfig, ModelSpec};
pub use ops::{OperatorHyper, OperatorKind};
pub use search::{joint_search, search_no_macro, SearchConfig, SearchEngine, SearchOutcome};
pub use supernet::{anneal_temperature, count_micro_space, tau_at_epoch, SuperNet, SuperNetConfig};
pub use task::{prepare_task, TaskData};
pub use train::{evaluate, train_from_scratch, TrainConfig, TrainOutcome};

/// Default scalar type used by the CLI and acceptance runs.
pub type Real = f64;

/// Dataset with the default scalar.
pub type RealDataset = CtsDataset<Real>;

/// Single-precision dataset alias for memory-constrained experiments.
pub type Dataset32 = CtsDataset<f32>;
