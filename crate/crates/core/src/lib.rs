//! Preference learning with similarity-derived margin constraints.
//!
//! The crate covers the full desk-scale pipeline: synthetic preference data
//! with a hidden linear reward, pairwise/listwise ranking losses and their
//! prior-constrained variants, a linear reward model and a bigram language
//! model, trainers for reward modeling, DPO-style preference optimization,
//! SFT fitting and KL-regularized policy improvement, and evaluation.

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod lm;
pub mod losses;
pub mod numeric;
pub mod optim;
pub mod reward;
pub mod similarity;
pub mod text;
pub mod training;

pub use error::{Error, Result};
