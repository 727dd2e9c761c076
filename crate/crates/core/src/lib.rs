//! Jointly trained cascade speech translation at desk scale.
//!
//! The crate covers the whole stack: a small reverse-mode autodiff engine
//! ([`tensor`]), text and acoustic preprocessing ([`text`], [`audio`]),
//! transformer ASR/MT models and their jointly trained combination
//! ([`model`]), beam search with n-best coupling and ensembling
//! ([`decode`]), scoring ([`eval`]) and the experiment driver ([`harness`]).

pub mod error;
pub mod tensor;
pub mod text;
pub mod audio;
pub mod model;
pub mod decode;
pub mod eval;
pub mod harness;

pub use error::{Error, Result};
