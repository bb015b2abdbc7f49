//! Variational autoencoders with a variational mutual-information regularizer.
//!
//! The crate is self-contained: a small reverse-mode differentiation engine
//! ([`tape`]) drives encoder, decoder and auxiliary networks ([`networks`])
//! through the objectives in [`objectives`], trained by [`training`] and
//! inspected with [`evaluation`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
