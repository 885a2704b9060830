//! Translational knowledge-graph embeddings with bi-vector symmetric relations.
//!
//! The crate is organised as a small pipeline:
//!
//! - [`data`]: triple stores, symmetry analysis, symmetric completion, statistics
//!   and circle (reflexive probe) set generation.
//! - [`models`]: TransE / TransH / TransD parameters, scores and closed-form
//!   gradients. Symmetric relations may be stored as a pair of sub-relations whose
//!   score is the minimum of the two.
//! - [`training`]: negative sampling and minibatch SGD over the margin ranking loss.
//! - [`evaluation`]: link prediction (raw and filtered) and the circle test.

pub mod data;
pub mod evaluation;
pub mod models;
pub mod training;

pub use data::{Split, SplitSelector, Triple, TripleStore};
pub use evaluation::{CircleReport, EvalMode, EvalReport};
pub use models::{ModelKind, ModelParams, Norm};
pub use training::{TrainConfig, TrainHistory};
