//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "UTTATTN\0"
//! version  u32
//! config   u64 length + JSON {"model": .., "train": ..}
//! digest   32 bytes SHA-256 of the config JSON
//! epoch    u64
//! rng      32-byte seed, u64 stream, u128 word position
//! vocab    u64 count, then per token: u32 length + UTF-8 bytes, u64 frequency
//! params   u64 count, then per tensor: u32 name length + name, u32 rank,
//!          rank × u64 dims, values as f64
//! adam     u64 step, then first moments and second moments in parameter order
//! trailer  32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"UTTATTN\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: AdamState,
    pub epoch: u64,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    model: ModelConfig,
    train: TrainConfig,
}

impl Checkpoint {
    /// Rebuilds the model, checking every parameter name and shape.
    pub fn restore_model(&self) -> Result<Model> {
        let mut model = Model::new(self.model_config.clone(), 0)?;
        let store = model.store_mut();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, architecture expects {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, (name, value)) in ids.into_iter().zip(&self.params) {
            if store.name(id) != name {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} where {:?} was expected",
                    store.name(id)
                )));
            }
            store
                .set_value(id, value.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(model)
    }

    pub fn config_json(&self) -> String {
        serde_json::to_string(&ConfigEcho {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        })
        .expect("configs serialize")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config_json();
        put_u64(&mut w, config.len() as u64);
        w.extend_from_slice(config.as_bytes());
        w.extend_from_slice(&Sha256::digest(config.as_bytes()));
        put_u64(&mut w, self.epoch);
        w.extend_from_slice(&self.rng.seed);
        put_u64(&mut w, self.rng.stream);
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        put_u64(&mut w, self.vocab.len() as u64);
        for (tok, count) in self.vocab.tokens().iter().zip(self.vocab.counts()) {
            put_str(&mut w, tok);
            put_u64(&mut w, *count);
        }

        put_u64(&mut w, self.params.len() as u64);
        for (name, t) in &self.params {
            put_str(&mut w, name);
            put_tensor_shape(&mut w, t);
            put_values(&mut w, t);
        }

        put_u64(&mut w, self.optimizer.step);
        for t in self.optimizer.m.iter().chain(&self.optimizer.v) {
            put_values(&mut w, t);
        }

        let trailer = Sha256::digest(&w);
        w.extend_from_slice(&trailer);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if &body[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checkpoint("checksum mismatch (corrupted or truncated)".into()));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let config_len = r.u64()? as usize;
        let config_bytes = r.take(config_len)?;
        let digest = r.take(32)?;
        if Sha256::digest(config_bytes).as_slice() != digest {
            return Err(Error::Checkpoint("config digest mismatch".into()));
        }
        let echo: ConfigEcho = serde_json::from_slice(config_bytes)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let epoch = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

        let n_vocab = r.u64()? as usize;
        let mut tokens = Vec::with_capacity(n_vocab.min(1 << 20));
        let mut counts = Vec::with_capacity(n_vocab.min(1 << 20));
        for _ in 0..n_vocab {
            tokens.push(r.string()?);
            counts.push(r.u64()?);
        }
        let vocab = Vocabulary::from_parts(tokens, counts)
            .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;

        let n_params = r.u64()? as usize;
        let mut params = Vec::with_capacity(n_params.min(1 << 16));
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let values = r.values(shape.iter().product())?;
            params.push((name, Tensor::new(shape, values)?));
        }

        let step = r.u64()?;
        let mut moments = Vec::with_capacity(2 * params.len());
        for (_, t) in params.iter().chain(&params) {
            let values = r.values(t.len())?;
            moments.push(Tensor::new(t.shape().to_vec(), values)?);
        }
        let v = moments.split_off(params.len());
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after optimizer state".into()));
        }

        Ok(Checkpoint {
            model_config: echo.model,
            train_config: echo.train,
            vocab,
            params,
            optimizer: AdamState { step, m: moments, v },
            epoch,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn put_tensor_shape(w: &mut Vec<u8>, t: &Tensor) {
    w.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        put_u64(w, d as u64);
    }
}

fn put_values(w: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in string".into()))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint("tensor size overflow".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
