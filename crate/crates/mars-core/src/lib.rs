//! Pipeline for turning multilingual customer reviews into structured,
//! taxonomy-aligned insight quadruples and aspect-level summaries.
//!
//! The crate is organised around the two-step extract-then-summarise flow:
//!
//! - [`model`] — shared data types (reviews, taxonomy, insights, summaries, config)
//! - [`segmenter`] — rule-based multilingual sentence/phrase splitting
//! - [`matcher`] — embedding interface plus syntactic/semantic aspect standardisation
//! - [`gateway`] — pluggable generation backends, prompt templates, batched dispatch
//! - [`extractor`] — four-phase decomposed prompting producing insight quadruples
//! - [`summariser`] — verbatim selection and recursive context-bounded summarisation
//! - [`evaluation`] — ROUGE, embedding score, margin-of-error and agreement metrics

pub mod extractor;
pub mod gateway;
pub mod matcher;
pub mod model;
mod parallel;
pub mod segmenter;
pub mod summariser;

pub use model::{
    Insight, LanguageCode, PipelineConfig, Review, Sentiment, SummaryBundle, Taxonomy,
};
