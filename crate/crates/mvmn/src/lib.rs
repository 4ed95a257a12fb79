//! Multi-view matching for social link inference in location-aware social
//! networks.
//!
//! Given per-user check-in trajectories and a partially observed friendship
//! graph, the model scores user pairs by fusing three matching views:
//!
//! - a **location view**: pairwise cosine matching between the two users'
//!   location-embedding sequences, max-pooled row- and column-wise;
//! - a **temporal view**: a shared LSTM over time-bin embeddings whose final
//!   states are matched elementwise, regularized by the log-likelihood of a
//!   recurrent temporal point process over the real inter-event gaps;
//! - a **relation view**: multi-head graph attention over the training
//!   friendship graph, matching the propagated user embeddings.
//!
//! The crate ships the full pipeline: raw check-in ingestion and filtering,
//! exploratory co-occurrence/similarity analyses, a from-scratch reverse-mode
//! tape engine, training with negative sampling, ranked evaluation
//! (P@k / R@k / AUC), and a synthetic data generator for end-to-end testing.
//! See the `examples/` directory for one runnable program per capability and
//! the `mvmn` binary for the equivalent command-line workflow.

pub mod analysis;
pub mod autodiff;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod manifest;
pub mod model;
pub mod params;
pub mod synth;
pub mod train;
pub mod types;

pub use dataset::{Dataset, Edge, Vocab};
pub use error::{Error, Result};
pub use types::{CheckIn, LabeledPair, MatchViews, Real, Trajectory};
