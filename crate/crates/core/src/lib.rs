//! Preference-aligned retrieval toolkit.
//!
//! Mines reader knowledge preferences from retrieval outcomes, augments and
//! filters the resulting data, trains a bilinear reranker under three jointly
//! weighted alignment losses, and emits reader training files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod jsonl;
pub mod model;
pub mod prefdata;
pub mod prompts;
pub mod rerank;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod text;
