//! Benchmark decontamination and contamination-aware evaluation.
//!
//! Potentially contaminated benchmark samples are rewritten (paraphrase at three
//! complexity levels, back-translation through pivot languages, and their
//! composition), filtered by an LLM equivalence judge, and one candidate per
//! sample is selected by a learned-metric score tier. The evaluation harness then
//! measures a model under contamination, clean and calibration in-context
//! settings and reports the performance gap between them.
//!
//! Module map:
//!
//! - [`corpus`]: sample schema, benchmark presets, loading and truncation
//! - [`provider`]: text generation providers and the persistent response cache
//! - [`rewrite`]: candidate generation
//! - [`filter`]: equivalence detection and candidate filtering
//! - [`score`]: ROUGE kernels, scorers and candidate selection
//! - [`evalharness`]: evaluation settings, accuracy/ROUGE, performance gap, reports
//! - [`pipeline`]: per-sample calibration over whole datasets
//! - [`cli`]: run configuration and the `calibrate`/`evaluate`/`ablate`/`export-ft` commands

pub mod cli;
pub mod corpus;
pub mod evalharness;
pub mod filter;
pub mod par;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod rewrite;
pub mod score;

pub use corpus::{BenchmarkSpec, Dataset, Sample, TaskKind};
pub use provider::{GenerationRequest, Provider, RequestTag};
pub use rewrite::{Candidate, RewriteConfig, RewriteStep};
pub use score::{Scorer, SelectionPolicy, SimilarityScores};
