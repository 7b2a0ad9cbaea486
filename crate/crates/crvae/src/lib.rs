//! Complex recurrent variational autoencoder for speech enhancement.
//!
//! The crate implements a complex-valued GRU encoder/decoder VAE operating on
//! complex STFT spectrograms, with a complex-Gaussian latent space
//! (covariance and pseudo-covariance), a composite L1 reconstruction loss,
//! and hand-derived backward passes validated against central finite
//! differences on the real and imaginary axes.
//!
//! Modules map onto the pipeline stages:
//! - [`ctensor`]: dense complex matrices/vectors and unitarity utilities
//! - [`cgrad`]: Wirtinger cogradient views and the finite-difference harness
//! - [`cnn`]: complex dense / modReLU / modSigmoid / complex GRU layers
//! - [`cvae`]: complex-Gaussian density, KL, reparameterization, losses
//! - [`model`]: the full encoder/decoder assembly and enhancement entry point
//! - [`dsp`]: STFT analysis/synthesis with overlap-add
//! - [`data`]: WAV I/O, SNR mixing, toy corpus generation
//! - [`train`]: Adam, unitarity projection, early stopping, checkpoints
//! - [`eval`]: SI-SDR and ESTOI metrics plus corpus-level reports
//! - [`gradsuite`]: finite-difference verification of every backward pass
//! - [`config`]: line-based run configuration shared by the CLI subcommands

pub mod cgrad;
pub mod cnn;
pub mod config;
pub mod ctensor;
pub mod cvae;
pub mod data;
pub mod dsp;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod train;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code taxonomy
/// (config 2, io 3, numeric 4, data alignment 5).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical degeneracy: {0}")]
    Numerical(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("data alignment error: {0}")]
    DataAlignment(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI taxonomy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) => 2,
            Error::Io(_) => 3,
            Error::Shape(_) | Error::Numerical(_) | Error::Domain(_) | Error::DegenerateInput(_) => 4,
            Error::DataAlignment(_) => 5,
        }
    }
}
