//! Object-factored world models for block pick-and-place.
//!
//! This crate contains the full pipeline for learning and using a factored
//! world model on a desk-scale block-manipulation domain:
//!
//! - [`sim`] — a deterministic 30×30 cm pick-and-place simulator with a
//!   renderer that produces per-object 14-channel observations, scripted
//!   expert policies and a binary dataset format.
//! - [`tensor`] / [`autodiff`] — a minimal reverse-mode autodiff core
//!   (dense tensors, a recording tape, Adam, finite-difference checking)
//!   sufficient for the model architectures used here.
//! - [`model`] — the world model itself: a shared per-object CNN encoder,
//!   a residual stack of graph-network layers conditioned on actions, an
//!   in-hand classifier, a position probe and checkpoint I/O.
//! - [`train`] — contrastive training of the encoder + transition model,
//!   plus supervised training of the probe and classifier heads.
//! - [`eval`] — offline metrics: position RMSE over prediction horizons and
//!   action-sequence ranking (Hits@1 / MRR) against perturbed sequences.
//! - [`plan`] — one-step heuristic search over a 100×100 action grid with
//!   model ensembles, Hungarian matching and closed-loop episode execution.
//!
//! Everything is seeded and deterministic: same inputs and seeds produce
//! bit-identical datasets, checkpoints and plans. See the book under
//! `book/` for a guided tour.

pub mod autodiff;
pub mod eval;
pub mod hashing;
pub mod model;
pub mod plan;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

mod book;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch at {node}: {msg}")]
    Shape { node: String, msg: String },
    #[error("{0}")]
    Autodiff(String),
    #[error("non-finite gradient in `{name}`; optimizer step rejected")]
    NonFiniteGrad { name: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Eval(String),
    #[error(
        "perturbation resample cap ({cap}) exhausted for episode {episode}; \
         epsilon is too small to break this sequence"
    )]
    ResampleCapExhausted { episode: usize, cap: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
