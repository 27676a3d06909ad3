//! Dense tensors, reverse-mode differentiation and the network primitives.

pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod serialize;
pub mod tape;
pub mod tensor;

pub use ops::attention::MhsaVars;
pub use ops::conv::{conv_out_extent, ConvGeom};
pub use ops::elementwise::Activation;
pub use ops::loss::LossKind;
pub use ops::norm::{BatchStats, NORM_EPS};
pub use ops::pool::PoolGeom;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};
