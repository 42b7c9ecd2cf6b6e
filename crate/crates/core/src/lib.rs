//! Desk-scale algorithmic core of an echo-style speech-to-speech training
//! stack: k-means unit codebooks, unit-sequence utilities, unit-language
//! segmentation, the three training-loss kernels with verified gradients,
//! the streaming read/write trigger policy, the pseudo-label training
//! harness, and WER-based data quality control.

pub mod codebook;
pub mod dataqc;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod pipeline;
pub mod segmenter;
pub mod streamer;
pub mod unitlm;
pub mod unitseq;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use unitseq::UnitSequence;
