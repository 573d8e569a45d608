//! Binary retinal fundus screening: a small CNN written from first
//! principles, its data pipeline, training loop, evaluation metrics and
//! weights file format.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
pub mod persist;
pub mod tensor;
pub mod train;

pub use error::{DataError, EvalError, FormatError, ModelError, ShapeError, TrainError};
pub use network::{
    backward, forward, infer_shapes, init_weights, predict, Diagnosis, Label, ModelConfig, ModelWeights,
};
pub use tensor::{Scalar, Tensor};

pub use data::{DatasetSplit, ImageRecord, Part};
pub use eval::{EvalReport, Metrics};
pub use persist::{load_weights, model_version, read_weights, save_weights};
pub use train::{TrainConfig, TrainHistory};
