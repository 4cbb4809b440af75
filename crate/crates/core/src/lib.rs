//! Automatic post-editing toolkit.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod ngram_lm;
pub mod nmt;
pub mod pipeline;
pub mod report;
pub mod subword;
pub mod triplet_select;
pub mod tuner;

pub use corpus::{Sentence, Triplet};
pub use error::{Error, Result};
