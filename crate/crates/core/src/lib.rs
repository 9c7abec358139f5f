//! Hierarchical decomposition of parameter-efficient tuning for
//! rehearsal-free continual learning on a frozen transformer backbone.
//!
//! Modules, bottom up:
//! - [`numcore`]: tensors, gradient tape, finite differences, Adam.
//! - [`backbone`]: the frozen multi-head attention encoder and its checkpoint.
//! - [`pet`]: prompt, prefix, adapter and LoRA attachments.
//! - [`hide`]: the continual learner with its three hierarchical losses.
//! - [`aka`]: OOD-gated pool of shared LoRA sets.
//! - [`theory`]: Monte-Carlo verification of the decomposition bounds.
//! - [`harness`]: synthetic streams, metrics, experiments and reports.

pub mod aka;
pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod hide;
pub mod numcore;
pub mod pet;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use numcore::{Tape, Tensor, Var};
pub use rng::SplitRng;
