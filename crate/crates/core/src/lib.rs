//! Supervised mixture-of-experts encoder-decoder for joint speech
//! recognition and speech translation over narrowband and wideband audio.
//!
//! Feedforward blocks can be replaced by expert banks whose routing is a
//! fixed function of known labels: the encoder picks an expert by input
//! bandwidth, the decoder by the task named in its guiding tokens. Only the
//! selected expert runs, so active parameters match a dense model while
//! trainable parameters grow by one FFN per routed layer.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: `f64` tensors, a reverse-mode tape, finite-difference checks.
//! - [`nn`]: linear, FFN, attention, layer norm, dropout.
//! - [`smoe`]: gates, expert banks, expert cloning.
//! - [`seqio`]: byte-level BPE and guiding-token target sequences.
//! - [`signal`]: synthesis, NB/WB resampling, log-Mel features, WAV I/O.
//! - [`model`]: the transformer, parameter accounting, checkpoints.
//! - [`train`]: batching, optimizers, synthetic tasks, benchmarks.
//! - [`metrics`]: WER, BLEU, token accuracy.
//! - [`cli`]: the `smoe` command.

pub mod cli;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod rng;
pub mod seqio;
pub mod signal;
pub mod smoe;
pub mod train;

pub use error::{Error, Result};
