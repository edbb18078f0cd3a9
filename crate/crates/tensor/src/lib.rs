//! `lcr-tensor`: a small f32 tensor library with tape-based reverse-mode
//! autodiff, carrying exactly the operator set needed by a scale-hyperprior
//! image codec and ResNet-style classifiers.

pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod init;
pub mod layers;
pub mod linalg;
pub mod ops;
pub mod optim;
pub mod par;
pub mod params;
pub mod tensor;

pub use checkpoint::{Checkpoint, Preamble};
pub use error::{Result, TensorError};
pub use graph::{Graph, Mode, Var};
pub use optim::{Sgd, SgdConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
