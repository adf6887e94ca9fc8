//! Small reverse-mode autodiff engine and the mask-estimation and neural
//! beamforming networks built on it.

pub mod audio_ops;
pub mod beamformer;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod nn_ops;
pub mod params;
pub mod preseparator;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, Init, LayerParams};
pub use tensor::Tensor;
