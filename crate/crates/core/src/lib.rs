//! Vocal register classification from mel-spectrogram images.

pub mod analyzer;
pub mod audio;
pub mod cnn;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod image;
pub mod model_io;
pub mod scalar;
pub mod svm;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used by the CLI and service.
pub type Audio = audio::AudioBuffer<f64>;
pub type Spectrogram = image::SpectrogramImage<f64>;
pub type Svm = svm::SvmModel<f64>;
pub type Cnn = cnn::CnnModel<f64>;
pub type AnyModel = model_io::Model<f64>;
pub type Report = eval::EvalReport<f64>;
pub type Analysis = analyzer::AnalysisResult<f64>;
