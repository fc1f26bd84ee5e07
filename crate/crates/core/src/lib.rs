//! Depth-pruning planner for transformer stacks.
//!
//! The pipeline reads block-input hidden states from a LADF dump
//! ([`activation_store`]), averages per-token cosine similarity between all
//! layer pairs ([`similarity`]), summarises how local that similarity is
//! ([`locality`]), groups layers with spectral clustering ([`clustering`])
//! and spends a pruning budget across the clusters ([`allocation`]).

pub mod activation_store;
pub mod allocation;
pub mod clustering;
pub mod error;
pub mod locality;
pub mod pipeline;
pub mod report;
pub mod similarity;
pub mod synth;

pub use activation_store::{DumpHeader, DumpReader, DumpWriter, SampleChunk, TokenSlice};
pub use allocation::{Method, PruneBudget, PruningPlan};
pub use clustering::{AffinityMatrix, ClusterPartition};
pub use error::{Error, ErrorKind, Result};
pub use locality::LocalityReport;
pub use pipeline::{plan_from_similarity, ClusterCount, PlanOptions};
pub use similarity::{SimilarityAccumulator, SimilarityMatrix};
pub use synth::PlantedSpec;
