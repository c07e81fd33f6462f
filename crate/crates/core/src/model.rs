//! Model configuration and the encoder → attention → decoder wiring.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    hybrid_context, multi_head_context, token_level_keys, AttentionKind, AttnParams, HybridMode,
    HybridParams, MultiHeadOutput, MultiHeadParams, TokenLevel,
};
use crate::corpus::{pad_utterance, DialogueSession, EOS, PAD};
use crate::decoder::{argmax, decode_step, init_state, DecodeState, DecoderParams};
use crate::encoder::{encode_context, Direction, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::Dropout;
use crate::tensor::{Graph, ParamStore, Var};

/// Which context vector(s) the decoder consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttentionMode {
    Static,
    Dynamic,
    Hybrid(HybridMode),
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 8] = [
        AttentionMode::Static,
        AttentionMode::Dynamic,
        AttentionMode::Hybrid(HybridMode::Concat),
        AttentionMode::Hybrid(HybridMode::Sum),
        AttentionMode::Hybrid(HybridMode::Learnable),
        AttentionMode::Hybrid(HybridMode::Attention),
        AttentionMode::Hybrid(HybridMode::Max),
        AttentionMode::Hybrid(HybridMode::Mean),
    ];

    pub fn uses_static(self) -> bool {
        !matches!(self, AttentionMode::Dynamic)
    }

    pub fn uses_dynamic(self) -> bool {
        !matches!(self, AttentionMode::Static)
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionMode::Static => f.write_str("static"),
            AttentionMode::Dynamic => f.write_str("dynamic"),
            AttentionMode::Hybrid(m) => f.write_str(m.name()),
        }
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Validation(format!("unknown attention mode {s:?}")))
    }
}

impl TryFrom<String> for AttentionMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AttentionMode> for String {
    fn from(m: AttentionMode) -> String {
        m.to_string()
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    /// Encoder (utterance) hidden width `d_h`.
    pub hidden_dim: usize,
    /// Decoder hidden width `d_s`.
    pub decoder_dim: usize,
    pub attention: AttentionMode,
    pub heads: usize,
    pub direction: Direction,
    pub token_level: TokenLevel,
    pub pad_len: usize,
    pub share_embedding: bool,
}

impl ModelConfig {
    /// Full-size settings: 200-d embeddings, padding 15, 4 heads,
    /// hidden width 512 for static and 1024 for dynamic attention. Hybrid
    /// models keep a 512-wide encoder and a 1024-wide decoder.
    pub fn full_size(attention: AttentionMode, vocab_size: usize) -> Self {
        let (hidden_dim, decoder_dim) = match attention {
            AttentionMode::Static => (512, 512),
            AttentionMode::Dynamic => (1024, 1024),
            AttentionMode::Hybrid(_) => (512, 1024),
        };
        ModelConfig {
            vocab_size,
            emb_dim: 200,
            hidden_dim,
            decoder_dim,
            attention,
            heads: 4,
            direction: Direction::Uni,
            token_level: TokenLevel::Off,
            pad_len: 15,
            share_embedding: true,
        }
    }

    /// Width of each attention key (utterance vector, possibly with token summary).
    pub fn key_dim(&self) -> usize {
        match self.token_level {
            TokenLevel::Concat => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }

    /// Width of the context vector the decoder consumes.
    pub fn context_dim(&self) -> usize {
        match self.attention {
            AttentionMode::Hybrid(HybridMode::Concat) => 2 * self.key_dim(),
            _ => self.key_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.vocab_size < crate::corpus::RESERVED_TOKENS.len() {
            return bad("vocabulary smaller than the reserved tokens");
        }
        if self.emb_dim == 0 || self.hidden_dim == 0 || self.decoder_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 {
            return bad("at least one attention head is required");
        }
        if self.pad_len < 2 {
            return bad("pad_len must be at least 2");
        }
        Ok(())
    }
}

/// Parameter handles for every component of a [`Model`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub token_attn: Option<AttnParams>,
    pub static_attn: Option<MultiHeadParams>,
    pub dynamic_attn: Option<MultiHeadParams>,
    pub hybrid: HybridParams,
    pub decoder: DecoderParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    params: ModelParams,
}

/// Per-step record of a greedy decode.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub token: u32,
    /// Context vector fed to the decoder at this step.
    pub context: Vec<f64>,
    /// Static multi-head context (before hybrid combination), if any.
    pub static_context: Option<Vec<f64>>,
    /// Dynamic multi-head context at this step (before hybrid combination), if any.
    pub dynamic_context: Option<Vec<f64>>,
    /// Per-head static weights.
    pub static_weights: Vec<Vec<f64>>,
    /// Per-head dynamic weights at this step.
    pub dynamic_weights: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Encoder output plus the static context, computed once per session.
pub struct SessionEncoding {
    pub keys: Vec<Var>,
    pub h_last: Var,
    pub static_out: Option<MultiHeadOutput>,
}

/// Result of the per-step context computation.
pub struct StepContext {
    pub context: Var,
    pub dynamic_out: Option<MultiHeadOutput>,
}

impl Model {
    /// Registers and randomly initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = EncoderParams::register(
            &mut store,
            c.vocab_size,
            c.emb_dim,
            c.hidden_dim,
            c.direction,
            &mut rng,
        );
        let key_dim = c.key_dim();
        let token_attn = (c.token_level == TokenLevel::Concat).then(|| {
            AttnParams::register(
                &mut store,
                "token_attn",
                c.hidden_dim,
                c.hidden_dim,
                c.hidden_dim,
                &mut rng,
            )
        });
        let static_attn = c.attention.uses_static().then(|| {
            MultiHeadParams::register(&mut store, "static", c.heads, key_dim, key_dim, key_dim, &mut rng)
        });
        let dynamic_attn = c.attention.uses_dynamic().then(|| {
            MultiHeadParams::register(
                &mut store,
                "dynamic",
                c.heads,
                key_dim,
                key_dim,
                c.decoder_dim,
                &mut rng,
            )
        });
        let hybrid = match c.attention {
            AttentionMode::Hybrid(mode) => {
                HybridParams::register(&mut store, mode, key_dim, c.decoder_dim, &mut rng)
            }
            _ => HybridParams::default(),
        };
        let decoder = DecoderParams::register(
            &mut store,
            c.share_embedding.then_some(encoder.embedding),
            c.vocab_size,
            c.emb_dim,
            c.context_dim(),
            c.hidden_dim,
            c.decoder_dim,
            &mut rng,
        );
        Ok(Model {
            config,
            store,
            params: ModelParams {
                encoder,
                token_attn,
                static_attn,
                dynamic_attn,
                hybrid,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Encodes the context and, when used, computes the static context.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        session: &DialogueSession,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<SessionEncoding> {
        let states = encode_context(g, session, &self.params.encoder, dropout.as_deref_mut())?;
        let h_last = states.last().expect("non-empty context").h;
        let keys = token_level_keys(
            g,
            &states,
            self.config.token_level,
            self.params.token_attn.as_ref(),
        )?;
        let static_out = match &self.params.static_attn {
            Some(p) => Some(multi_head_context(g, &keys, None, p, AttentionKind::Static)?),
            None => None,
        };
        Ok(SessionEncoding {
            keys,
            h_last,
            static_out,
        })
    }

    /// Context for the step whose previous decoder state is `s_prev`.
    pub fn step_context(
        &self,
        g: &mut Graph<'_>,
        enc: &SessionEncoding,
        s_prev: Var,
    ) -> Result<StepContext> {
        let dynamic_out = match &self.params.dynamic_attn {
            Some(p) => Some(multi_head_context(
                g,
                &enc.keys,
                Some(s_prev),
                p,
                AttentionKind::Dynamic,
            )?),
            None => None,
        };
        let context = match (self.config.attention, &enc.static_out, &dynamic_out) {
            (AttentionMode::Static, Some(s), _) => s.context,
            (AttentionMode::Dynamic, _, Some(d)) => d.context,
            (AttentionMode::Hybrid(mode), Some(s), Some(d)) => {
                hybrid_context(g, s.context, d.context, s_prev, mode, &self.params.hybrid)?
            }
            _ => unreachable!("attention parameters registered per mode"),
        };
        Ok(StepContext {
            context,
            dynamic_out,
        })
    }

    /// Pads every utterance that does not already carry an `EOS`.
    pub fn prepare(&self, session: &DialogueSession) -> DialogueSession {
        let fix = |ids: &Vec<u32>| {
            if ids.contains(&EOS) {
                ids.clone()
            } else {
                pad_utterance(ids, self.config.pad_len)
            }
        };
        DialogueSession {
            context: session.context.iter().map(fix).collect(),
            response: fix(&session.response),
        }
    }

    /// Summed teacher-forced cross-entropy over the non-PAD response positions
    /// of one session, and the number of such positions.
    pub fn session_loss(
        &self,
        g: &mut Graph<'_>,
        session: &DialogueSession,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        if session.response.iter().all(|&t| t == PAD) {
            return Err(Error::Validation("response has no non-PAD targets".into()));
        }
        let session = self.prepare(session);
        let targets = response_targets(&session.response);
        if targets.is_empty() {
            return Err(Error::Validation("response has no non-PAD targets".into()));
        }
        let enc = self.encode(g, &session, dropout.as_deref_mut())?;
        let mut state = init_state(g, enc.h_last, &self.params.decoder)?;
        let mut losses = Vec::with_capacity(targets.len());
        for &target in &targets {
            let ctx = self.step_context(g, &enc, state.s)?;
            let (logits, next) =
                decode_step(g, &state, ctx.context, &self.params.decoder, dropout.as_deref_mut())?;
            losses.push(g.cross_entropy(logits, target as usize)?);
            state = DecodeState {
                prev_token: target,
                ..next
            };
        }
        let stacked = g.stack(&losses)?;
        Ok((g.sum(stacked), targets.len()))
    }

    /// Greedy decode recording the context and attention weights at each step.
    /// Stops after emitting `EOS` or after `max_len` steps.
    pub fn decode_trace(&self, session: &DialogueSession, max_len: usize) -> Result<Vec<StepTrace>> {
        let session = self.prepare(session);
        let mut g = Graph::new(&self.store);
        let enc = self.encode(&mut g, &session, None)?;
        let weights = |g: &Graph<'_>, out: &Option<MultiHeadOutput>| -> Vec<Vec<f64>> {
            out.iter()
                .flat_map(|o| o.head_weights.iter().map(|w| g.value(*w).data().to_vec()))
                .collect()
        };
        let static_context = enc
            .static_out
            .as_ref()
            .map(|o| g.value(o.context).data().to_vec());
        let static_weights = weights(&g, &enc.static_out);
        let mut state = init_state(&mut g, enc.h_last, &self.params.decoder)?;
        let mut trace = Vec::new();
        for _ in 0..max_len {
            let ctx = self.step_context(&mut g, &enc, state.s)?;
            let (logits, next) = decode_step(&mut g, &state, ctx.context, &self.params.decoder, None)?;
            let logit_values = g.value(logits).data().to_vec();
            let token = argmax(&logit_values) as u32;
            trace.push(StepTrace {
                token,
                context: g.value(ctx.context).data().to_vec(),
                static_context: static_context.clone(),
                dynamic_context: ctx.dynamic_out.as_ref().map(|o| g.value(o.context).data().to_vec()),
                static_weights: static_weights.clone(),
                dynamic_weights: weights(&g, &ctx.dynamic_out),
                logits: logit_values,
            });
            if token == EOS {
                break;
            }
            state = DecodeState {
                prev_token: token,
                ..next
            };
        }
        Ok(trace)
    }
}

/// Teacher-forcing targets: the response up to and including its first `EOS`,
/// without `PAD`.
pub fn response_targets(response: &[u32]) -> Vec<u32> {
    let end = response.iter().position(|&t| t == EOS).map_or(response.len(), |p| p + 1);
    response[..end].iter().copied().filter(|&t| t != PAD).collect()
}
