//! Dialogue corpora, vocabularies and word-embedding tables.

mod embeddings;
mod session;
mod vocab;

pub use embeddings::EmbeddingTable;
pub use session::{
    load_sessions, pad_utterance, parse_sessions, tokenize, DialogueSession, TextSession,
};
pub use vocab::{Vocabulary, EOS, PAD, RESERVED_TOKENS, SOS, UNK};
