//! Multimodal (3-D volume + 2-D image) binary classification pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`ndcore`]: tensors, the autodiff tape and network primitives
//! * [`models`]: 3-D DenseNet/ViT hybrid, 2-D ResNet50 and the feature-fusion model
//! * [`datapipe`]: file formats, preprocessing, augmentation and splitting
//! * [`synthgen`]: paired synthetic cohorts with planted class signals
//! * [`trainer`]: optimisation loop, repeated runs and the three-way comparison
//! * [`evalstats`]: metrics, ROC/AUC and significance testing
//! * [`gradcam`]: class-activation heatmaps and overlays

pub mod datapipe;
pub mod error;
pub mod evalstats;
pub mod gradcam;
pub mod models;
pub mod ndcore;
pub mod synthgen;
pub mod trainer;
#[cfg(any(test, feature = "reference"))]
pub mod reference;

pub use error::{Error, ErrorKind, Result};
pub use ndcore::{Tape, Tensor, Var};
