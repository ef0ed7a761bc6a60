//! Answer-value model for community question answering: a serialized LSTM
//! over question and answer, topic-aware attention, a time-decayed ranking
//! score and pairwise hinge training, plus the corpus pipeline and the
//! ranking metrics used to evaluate it.

pub mod corpus;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod heatmap;
pub mod linalg;
pub mod metrics;
pub mod model_file;
pub mod network;
pub mod training;

pub use error::{Error, Result};
