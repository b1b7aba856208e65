//! Term extraction, pattern-based relation classification and entity linking
//! for Russian scientific text.
//!
//! The modules follow the processing order: [`corpus`] holds the document
//! model, [`dictionary`] mines and loads term lists, [`tagger`] produces term
//! annotations, [`relation`] classifies term pairs, [`kb`] and [`linker`]
//! connect terms to knowledge-base entities, [`evaluation`] scores each
//! layer, and [`pipeline`] chains them over files.

pub mod corpus;
pub mod dictionary;
pub mod evaluation;
pub mod kb;
pub mod linker;
pub mod pipeline;
pub mod relation;
pub mod tagger;
