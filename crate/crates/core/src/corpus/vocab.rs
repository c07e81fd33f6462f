use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::TextSession;

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Bidirectional token/id map. Ids 0..4 are reserved (`PAD`, `SOS`, `EOS`, `UNK`).
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Counts every context and response token and keeps those seen at least
    /// `min_count` times. Ids follow descending frequency, ties broken
    /// lexicographically.
    pub fn build(sessions: &[TextSession], min_count: u64) -> Self {
        let min_count = min_count.max(1);
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in sessions {
            for tok in s.context.iter().flatten().chain(&s.response) {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED_TOKENS.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; RESERVED_TOKENS.len()];
        for (t, c) in kept {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Self::from_parts(tokens, counts).expect("freshly built vocabulary is consistent")
    }

    /// Rebuilds a vocabulary from its id-ordered tokens (reserved first).
    pub fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if tokens.len() != counts.len() {
            return Err(Error::Validation(format!(
                "{} tokens but {} counts",
                tokens.len(),
                counts.len()
            )));
        }
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens.iter().zip(RESERVED_TOKENS).any(|(t, r)| t != r)
        {
            return Err(Error::Validation(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of a corpus token; reserved surface forms and unknown words map to `UNK`.
    pub fn encode_token(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) if id >= RESERVED_TOKENS.len() as u32 => id,
            _ => UNK,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.encode_token(t.as_ref())).collect()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(RESERVED_TOKENS[UNK as usize], String::as_str)
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// Writes one token per line in id order.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Vec<TextSession> {
        vec![TextSession {
            context: vec![text.split(' ').map(String::from).collect()],
            response: vec!["a".into()],
        }]
    }

    #[test]
    fn min_count_one_keeps_everything() {
        // "a a b" in context plus response "a"
        let v = Vocabulary::build(&corpus("a a b"), 1);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
    }

    #[test]
    fn rare_tokens_become_unk() {
        let v = Vocabulary::build(&corpus("a a b"), 2);
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode(&["b"]), vec![UNK]);
        assert_eq!(v.encode(&["a"]), vec![4]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let sessions = vec![TextSession {
            context: vec![vec!["b".into(), "a".into()]],
            response: vec!["c".into()],
        }];
        let v = Vocabulary::build(&sessions, 1);
        assert_eq!(&v.tokens()[4..], &["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let v = Vocabulary::build(&[], 1);
        assert_eq!(v.tokens(), &RESERVED_TOKENS);
    }

    #[test]
    fn reserved_surface_forms_never_get_ids() {
        let v = Vocabulary::build(&corpus("<eos> x"), 1);
        assert_eq!(v.encode(&["<eos>"]), vec![UNK]);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn dump_is_id_ordered() {
        let v = Vocabulary::build(&corpus("z y y"), 1);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "<pad>\n<sos>\n<eos>\n<unk>\ny\na\nz\n"
        );
    }
}
