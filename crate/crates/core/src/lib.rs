//! Acoustic wood-pest detection: audio I/O, MFCC features, a small neural
//! network engine, the compared architectures, evaluation and synthetic data.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod mfcc;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type ParamSet64 = nn::ParamSet<f64>;
pub type ParamSet32 = nn::ParamSet<f32>;
pub type MfccMatrix64 = mfcc::MfccMatrix<f64>;
pub type MfccMatrix32 = mfcc::MfccMatrix<f32>;
pub type FeatureExtractor64 = mfcc::FeatureExtractor<f64>;
pub type FeatureExtractor32 = mfcc::FeatureExtractor<f32>;
pub type FeatureSet64 = models::FeatureSet<f64>;
pub type FeatureSet32 = models::FeatureSet<f32>;
