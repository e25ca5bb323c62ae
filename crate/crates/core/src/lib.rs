//! Non-deterministic listener facial-motion synthesis for dyadic conversation.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tape with the tensor ops the models need.
//! * [`nn`]: layers (linear, conv, attention, transformer stacks).
//! * [`data`]: motion/audio containers, rest-pose normalization, the `DYAD`
//!   file format, log-mel features and a synthetic dyad generator.
//! * [`vqvae`]: the sequence-encoding VQ-VAE over listener motion windows.
//! * [`fusion`]: the cross-modal speaker encoder.
//! * [`predictor`]: the autoregressive token predictor and rollout.
//! * [`metrics`] and [`baselines`]: the evaluation suite.
//! * [`config`] and [`pipeline`]: experiment configuration and orchestration.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod vqvae;

pub use error::{Error, Result};
