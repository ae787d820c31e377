//! Attention-aligned CNN training on shortcut-biased MNIST variants.
//!
//! The crate synthesizes ColoredMNIST and DecoyMNIST from raw IDX files,
//! builds teacher attention maps (a morphological oracle, or maps loaded from
//! a bundle file), and trains a small GAP-headed CNN whose class activation
//! maps are pulled toward the teacher with a KL penalty under a two-phase
//! schedule.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
mod error;
pub mod nn;
pub mod optim;
pub mod teacher;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
