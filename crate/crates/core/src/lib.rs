//! Community question answering toolkit: ranks forum comments by their
//! relevance to a question using embedding, topic, cluster and metadata
//! features fed to an L2-regularized logistic regression.

pub mod clustering;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod ranking;
pub mod synth;
pub mod topics;

pub use error::{Error, Result};
