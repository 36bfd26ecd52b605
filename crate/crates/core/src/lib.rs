//! Latent generative solver at desk scale.
//!
//! The crate is organized along the pipeline:
//!
//! - [`pde`]: reference finite-difference solvers and the trajectory corpus.
//! - [`nn`]: a small reverse-mode tape, MLP and gated cross-attention blocks,
//!   AdamW with warmup/cosine schedule, checkpoints and gradient checking.
//! - [`codec`]: the variational codec mapping physical states to latents.
//! - [`flow`]: the flow-matching transition with the uncertainty knob and
//!   flow-forced physics context.
//! - [`rollout`]: probability-flow ODE integration and autoregressive rollouts.
//! - [`bounds`]: numerical checks of the rollout error recursions.
//! - [`metrics`]: L2 relative error, horizon evaluation and context export.
//! - [`config`] and [`app`]: the run configuration and subcommand pipeline.

pub mod app;
pub mod bounds;
pub mod codec;
pub mod config;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod pde;
pub mod rng;
pub mod rollout;

pub use error::{LgsError, Result};
