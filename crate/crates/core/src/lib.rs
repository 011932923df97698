//! Mining sound concepts and scene-sound relations from annotated text.
//!
//! The pipeline reads POS-tagged, dependency-parsed sentences, pulls out
//! "sound of ..." concept phrases, classifies bigram phrases with a linear
//! max-margin model over word vectors, and scores scene-sound relations
//! from shortest dependency paths with an LSTM encoder.

pub mod corpus;
pub mod embeddings;
pub mod format;
pub mod kb;
pub mod lstm;
pub mod paths;
pub mod patterns;
pub mod phrase;
pub mod pipeline;

#[cfg(test)]
pub(crate) mod fixtures {
    pub const PARK: &str = include_str!("../tests/fixtures/park.ann");
}
