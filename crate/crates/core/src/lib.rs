//! Continual learning with self-paced weight consolidation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numeric`]: dense matrices, a multi-head MLP with a flat parameter
//!   vector, SGD with momentum and a portable seeded RNG.
//! - [`stream`]: IDX loading and construction of permuted, class-split and
//!   synthetic task streams.
//! - [`importance`]: diagonal Fisher and MAS importance, online-EWC
//!   accumulation and task snapshots.
//! - [`selfpaced`]: task difficulty, closed-form priority weights, the
//!   regularizer family and age-parameter policies.
//! - [`trainer`]: sequential training with quadratic consolidation penalties.
//! - [`metrics`]: APA, ACF and PS over an accuracy matrix and storage ledger.
//! - [`harness`]: config-driven experiment runs, grid selection, reports and
//!   the numeric self-check suite.

// `!(x > 0.0)` guards reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod importance;
pub mod metrics;
pub mod numeric;
pub mod selfpaced;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
