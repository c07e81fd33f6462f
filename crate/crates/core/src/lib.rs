//! Static, dynamic and hybrid utterance-level attention for multi-turn
//! dialogue generation, built on a small reverse-mode differentiator, together
//! with embedding-based and diversity metrics for evaluating generated
//! responses.
//!
//! The main entry points are [`Model`] (configure with [`ModelConfig`]),
//! [`Trainer`], [`generate`] and [`metrics::evaluate`].

pub mod attention;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use attention::{AttentionKind, HybridMode, TokenLevel};
pub use checkpoint::Checkpoint;
pub use corpus::{DialogueSession, EmbeddingTable, TextSession, Vocabulary};
pub use decoder::generate;
pub use encoder::Direction;
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::{AttentionMode, Model, ModelConfig};
pub use tensor::{Graph, ParamStore, Tensor, Var};
pub use trainer::{TrainConfig, Trainer};
