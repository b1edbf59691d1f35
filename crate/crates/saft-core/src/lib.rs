//! Shift-aware feature transformation for tabular data.
//!
//! The engine learns a continuous embedding space over discrete feature-cross
//! sequences, searches it with flatness-aware gradient ascent, and emits a
//! transformed feature set that stays useful when train and test marginals
//! drift apart.
//!
//! Module map:
//! - [`tabular`]: dataset ingestion, z-score normalization, KS-test splitting
//! - [`dsl`]: the postfix feature-cross language and its stack evaluator
//! - [`eval`]: self-contained downstream models and scoring metrics
//! - [`nn`]: tape-based reverse-mode autodiff kernel
//! - [`rl`]: three-agent DQN collector producing the training corpus
//! - [`repr`]: encoder-evaluator-decoder with bilevel sample reweighting
//! - [`generation`]: flatness-aware gradient ascent and decoding
//! - [`pipeline`]: end-to-end orchestration and run-directory layout

pub mod dsl;
pub mod error;
pub mod eval;
pub mod generation;
pub mod nn;
pub mod pipeline;
pub mod repr;
pub mod rl;
pub mod tabular;

pub use error::{Result, SaftError};
