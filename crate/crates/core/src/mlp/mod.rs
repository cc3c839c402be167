//! Feedforward yield regressor and its data handling.

mod adam;
mod checkpoint;
mod metrics;
mod network;
mod split;
mod standardize;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{from_text, read_checkpoint, to_text, write_checkpoint, MAGIC};
pub use metrics::{evaluate, r_squared, rmse, Evaluation, FieldTotals, LevelMetrics, PlotTotal};
pub use network::Network;
pub use split::{apportion, holdout_plots, quantile_strata, stratified_split, Split, SplitSpec};
pub use standardize::{standardize_fit_apply, NormStats, SIGMA_FLOOR};
pub use train::{read_log, train, write_log, Dataset, EpochLog, MlpModel, ModelConfig, TrainConfig, TrainOutcome};
