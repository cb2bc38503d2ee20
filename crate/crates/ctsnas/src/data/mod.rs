//! Loading, generation, normalization, windowing and splitting of correlated
//! time series and their graphs.

pub mod dataset;
pub mod supports;
pub mod synthetic;
pub mod window;

pub use dataset::{load_dataset, write_dataset, CtsDataset, DatasetMeta};
pub use supports::{build_supports, chebyshev_polynomials, identity_supports, scaled_laplacian};
pub use synthetic::{generate_synthetic, SyntheticProcess};
pub use window::{pseudo_split, split_and_window, ForecastMode, Scaler, SplitSpec, WindowSet};
