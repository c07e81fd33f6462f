use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Pretrained word vectors in the plain-text `token v1 ... vd` format.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses the text format. The dimension comes from the first non-blank
    /// line; repeated tokens keep their last vector and are counted.
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut dim = None;
        let mut vectors = HashMap::new();
        let mut duplicates = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut fields = raw.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(line, format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let d = *dim.get_or_insert(values.len());
            if d == 0 {
                return Err(err(line, "token has no vector components".into()));
            }
            if values.len() != d {
                return Err(err(
                    line,
                    format!("expected {d} components, found {}", values.len()),
                ));
            }
            if vectors.insert(token.to_string(), values).is_some() {
                duplicates += 1;
            }
        }
        let Some(dim) = dim else {
            return Err(err(0, "empty embedding file; cannot infer dimension".into()));
        };
        Ok(EmbeddingTable {
            dim,
            vectors,
            duplicates,
        })
    }

    pub fn from_map(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Validation(format!(
                "vector for {t:?} has {} components, expected {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingTable {
            dim,
            vectors,
            duplicates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Number of tokens that appeared more than once in the source file.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    /// `None` for out-of-vocabulary tokens; callers decide how to treat them.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}
