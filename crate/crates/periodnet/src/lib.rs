//! PeriodNet: a non-autoregressive GAN vocoder that models a waveform as the
//! sum of a periodic component driven by an explicit sine excitation and an
//! aperiodic component driven by Gaussian noise.
//!
//! The crate is a self-contained desk-scale implementation: a small dense
//! tensor engine with reverse-mode autodiff, excitation and acoustic-feature
//! handling, the baseline/parallel/series generator topologies with a
//! multi-scale discriminator bank, multi-resolution STFT + least-squares
//! adversarial training, and WAV/feature/checkpoint file formats.
//!
//! Start with the runnable programs in `examples/` (one per capability), or
//! the `periodnet` binary for the `train` / `synth` / `analyze` / `eval`
//! command line.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod excitation;
pub mod features;
pub mod losses;
pub mod nets;
pub mod tensor;
pub mod training;
pub(crate) mod util;
pub mod wav;

pub use error::{Error, Result};
