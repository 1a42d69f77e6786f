//! Question-driven explanations for tabular classifiers.
//!
//! A question flows through three stages: [`decompose`] turns text into a
//! structured reframed question, the delegate stage runs the explainers the
//! [`registry`] maps to its explanation type, and [`synthesis`] renders the
//! explainer outputs into two natural-language explanations. [`pipeline`]
//! ties the stages together and persists every intermediate.

pub mod ingest;
pub mod models;
pub mod decompose;
pub mod registry;
pub mod explainers;
pub mod metrics;
pub mod synthesis;
pub mod pipeline;
