pub mod ced;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dual_view;
mod error;
pub mod explain;
pub mod isi;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{Components, LabelPreset, ModelConfig};
pub use error::{CheckpointError, ConfigError, DataError, ModelError};
pub use model::Model;
