//! Undersampled MR image reconstruction with a deep cascade of CNNs and
//! data-consistency layers, built from scratch: tensors, 2D FFT, Cartesian
//! sampling, conv/ReLU layers with hand-written backward passes, the DC
//! layer, end-to-end Adam training and evaluation tooling.

pub mod cascade;
pub mod checkpoint;
pub mod dclayer;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use cascade::{CascadeModel, Hyper, ParamGrads};
pub use dclayer::{DcConfig, Lambda};
pub use error::{Error, Result};
pub use fourier::{fft2, ifft2, KSpace};
pub use rng::Rng;
pub use sampling::{apply_encoding, generate_mask, zero_filled, MaskParams, Measurements, SamplingMask};
pub use tensor::{complex_norm_sq, ComplexImage, Precision, Scalar, Tensor};
pub use training::TrainConfig;
