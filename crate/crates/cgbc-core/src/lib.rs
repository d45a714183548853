//! Core algorithms for label-noise-robust smart-contract vulnerability
//! detection.
//!
//! The crate is organized around the training pipeline it supports:
//!
//! - [`lexer`] / [`structure`]: a lossless Solidity tokenizer and the
//!   structural skeleton (functions, statement boundaries) needed to place
//!   code safely inside contracts.
//! - [`corpus`]: source normalization, content hashing, cross-set
//!   deduplication, and seeded label-noise injection.
//! - [`augment`]: generation of compilable, contract-free code snippets and
//!   their insertion into randomly selected functions.
//! - [`semantics`]: core-operation extraction, semantic digests for
//!   equivalence checking, and k-gram Jaccard diversity reports.
//! - [`ball`]: adaptive multi-granularity clustering of embedded samples
//!   into purity-qualified granular balls.
//! - [`learn`]: a minimal differentiable kernel (hashed token features,
//!   dense layers, contrastive/clustering/symmetric-cross-entropy losses
//!   with analytic gradients) plus the pretraining and fine-tuning steps.
//!
//! The crate is `no_std`-compatible (`alloc` required); enable the `libm`
//! feature when building without `std`.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("cgbc-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod augment;
pub mod ball;
pub mod corpus;
mod error;
pub mod learn;
pub mod lexer;
mod math;
pub mod rng;
pub mod semantics;
pub mod structure;

pub use error::{Error, Result};
