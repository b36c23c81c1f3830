//! Restricted Boltzmann machines whose units take integer values `0..=N`,
//! modelled as `N` tied binary copies with shifted biases and approximated by
//! a smooth activation family. Includes the binary special case, a
//! contrastive loss whose gradient reproduces one-step contrastive
//! divergence, dense and convolutional layers, stacking, exact enumeration
//! oracles for tiny models and simple dataset/checkpoint I/O.

pub mod activation;
pub mod conv;
pub mod error;
pub mod io;
pub mod layer;
pub mod loss;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod probe;
pub mod sampler;
pub mod stack;
pub mod verify;

pub use activation::{ActivationSpec, UnitKind};
pub use conv::{ConvRbmParams, ImageShape};
pub use error::{DataError, Error, Result};
pub use layer::RbmLayer;
pub use loss::{ContrastiveLayer, LossBatchResult, ReconMode};
pub use optim::{AdamConfig, AdamState};
pub use params::{GradientSet, RbmParams, Violation};
pub use sampler::{GibbsMode, RngStream, SampleMethod};
pub use stack::{Architecture, DbnModel, Layer, LossNorm, ModelOptimizer, TrainConfig};
