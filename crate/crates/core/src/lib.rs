//! Fetal ventriculomegaly screening on ultrasound: annotation scrubbing,
//! masked-autoencoder pretraining of a vision transformer, class-weighted
//! fine-tuning with stratified cross-validation, ensemble evaluation and
//! Eigen-CAM saliency.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod classify;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod font;
pub mod image;
pub mod ingest;
pub mod mae;
pub mod nn;
pub mod scalar;
pub mod scrub;
pub mod standardize;

pub use error::{Error, Result};
pub use image::{BinaryMask, UltrasoundImage};
pub use scalar::Scalar;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type MaeModelF32 = mae::MaeModel<f32>;
pub type MaeModelF64 = mae::MaeModel<f64>;
pub type ClassifierF32 = classify::ClassifierModel<f32>;
pub type ClassifierF64 = classify::ClassifierModel<f64>;
pub type TensorF32 = standardize::ModelTensor<f32>;
pub type TensorF64 = standardize::ModelTensor<f64>;
