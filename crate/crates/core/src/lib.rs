//! Sequence mixers as explicit `L × L` matrices.
//!
//! Every mixer family here has two paths that must agree: a fast (or naive
//! but structured) apply, and a dense materialization used as the oracle.
//! The quasiseparable family is applied as two shifted semiseparable scans
//! plus a diagonal and powers the bidirectional [`hydra`] block.

pub mod batch;
pub mod error;
pub mod families;
pub mod fft;
pub mod grad;
pub mod harness;
pub mod hydra;
pub mod linalg;
pub mod mixer;
pub mod report;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod toy;

pub use batch::SequenceBatch;
pub use error::{MixerError, Result};
pub use mixer::{Family, MaterializedMixer, MatrixMixer, MixerConfig, MixerSpec, Mode};
pub use report::{CheckRecord, CheckStatus, MeasureKind, VerificationReport};
pub use rng::RngState;
pub use tensor::Tensor;
