//! Domain generalization with per-domain style queues and a semantic jury queue.
//!
//! A trainable encoder splits each input into a semantic feature `c` and a
//! style feature `s`. A momentum-averaged copy of the encoder fills one FIFO
//! style queue per domain and one shared semantic queue. Four losses train
//! the encoder: classification on `c`, a style contrast that pulls `s`
//! toward its own domain's queue and away from the others, a jury
//! cross-entropy that matches the bank-similarity distributions of `c` and
//! of a semantically identical variant, and an orthogonality penalty between
//! `c` and `s`.
//!
//! Everything runs in `f64` on a small tape-based autodiff core, against a
//! synthetic multi-domain benchmark with explicit style factors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod banks;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod report;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
