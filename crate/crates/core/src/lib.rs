//! Four-term word analogy (A:B::C:D) evaluation in embedding spaces.
//!
//! The crate ranks the full vocabulary under three completion rules
//! (parallelogram offset, C:D similarity, nearest-neighbor heuristic),
//! summarizes how well each rule retrieves produced completions (CPR curves),
//! compares response distributions of different systems, and explains rating
//! differences with standardized regressions.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rules;
pub mod stats;
pub mod synth;

pub use dataset::{FrequencyTable, RatingTable, ResponseDistribution};
pub use embedding::{EmbeddingStore, LoadOptions, QueryVector, WordId};
pub use error::{Error, ErrorClass, Result};
pub use rules::{AnalogyStem, RankResult, RuleKind, RuleOptions};
