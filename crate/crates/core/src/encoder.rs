//! Token embedding and GRU recurrence producing one vector per utterance.
//!
//! Each context utterance is encoded independently. The utterance vector is
//! the recurrent state at the utterance's `EOS` position, so padding after it
//! never influences the result. Bidirectional encoding runs a second GRU from
//! `EOS` back to the first token and merges the two per-token states with a
//! learned `d_h × 2·d_h` projection.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueSession, EOS};
use crate::error::{Error, Result};
use crate::nn::{maybe_dropout, uniform, zeros, Dropout};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Uni,
    Bi,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uni" => Ok(Direction::Uni),
            "bi" => Ok(Direction::Bi),
            other => Err(Error::Validation(format!("unknown direction {other:?} (uni or bi)"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Uni => "uni",
            Direction::Bi => "bi",
        })
    }
}

/// Weights of one GRU cell.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = |s: &mut ParamStore, r: &mut ChaCha8Rng, n: &str| {
            uniform(s, format!("{prefix}.{n}"), &[hidden_dim, input_dim], r)
        };
        let w_z = w(store, rng, "w_z");
        let w_r = w(store, rng, "w_r");
        let w_h = w(store, rng, "w_h");
        let u = |s: &mut ParamStore, r: &mut ChaCha8Rng, n: &str| {
            uniform(s, format!("{prefix}.{n}"), &[hidden_dim, hidden_dim], r)
        };
        let u_z = u(store, rng, "u_z");
        let u_r = u(store, rng, "u_r");
        let u_h = u(store, rng, "u_h");
        GruParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: zeros(store, format!("{prefix}.b_z"), &[hidden_dim]),
            b_r: zeros(store, format!("{prefix}.b_r"), &[hidden_dim]),
            b_h: zeros(store, format!("{prefix}.b_h"), &[hidden_dim]),
            input_dim,
            hidden_dim,
        }
    }
}

/// One GRU update:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// ĥ  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
pub fn gru_step(g: &mut Graph<'_>, x: Var, h_prev: Var, p: &GruParams) -> Result<Var> {
    let gate = |g: &mut Graph<'_>, w: ParamId, u: ParamId, b: ParamId, h: Var| -> Result<Var> {
        let (w, u, b) = (g.param(w), g.param(u), g.param(b));
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, h)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    };
    let z_pre = gate(g, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let cand_pre = gate(g, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = g.tanh(cand_pre);
    // (1 − z)⊙h + z⊙ĥ  ==  h + z⊙(ĥ − h)
    let delta = g.sub(cand, h_prev)?;
    let step = g.mul(z, delta)?;
    g.add(h_prev, step)
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub forward: GruParams,
    pub backward: Option<GruParams>,
    /// `d_h × 2·d_h` merge of forward/backward states (bidirectional only).
    pub merge: Option<ParamId>,
    pub direction: Direction,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        vocab_size: usize,
        emb_dim: usize,
        hidden_dim: usize,
        direction: Direction,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = uniform(store, "embedding".into(), &[vocab_size, emb_dim], rng);
        let forward = GruParams::register(store, "encoder.fwd", emb_dim, hidden_dim, rng);
        let (backward, merge) = match direction {
            Direction::Uni => (None, None),
            Direction::Bi => {
                let bwd = GruParams::register(store, "encoder.bwd", emb_dim, hidden_dim, rng);
                let merge = uniform(store, "encoder.merge".into(), &[hidden_dim, 2 * hidden_dim], rng);
                (Some(bwd), Some(merge))
            }
        };
        EncoderParams {
            embedding,
            forward,
            backward,
            merge,
            direction,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }
}

/// Encoder output for one utterance.
#[derive(Clone, Debug)]
pub struct UtteranceStates {
    /// Utterance representation: the (merged) state at the `EOS` position.
    pub h: Var,
    /// Per-token states for positions `0..=eos`; `PAD` positions are absent.
    pub tokens: Vec<Var>,
}

/// Encodes one padded utterance. Positions after the first `EOS` are never read.
pub fn encode_utterance(
    g: &mut Graph<'_>,
    ids: &[u32],
    p: &EncoderParams,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<UtteranceStates> {
    let eos = ids
        .iter()
        .position(|&t| t == EOS)
        .ok_or_else(|| Error::Contract("utterance has no EOS; pad it first".into()))?;
    let emb = g.param(p.embedding);
    let mut xs = Vec::with_capacity(eos + 1);
    for &id in &ids[..=eos] {
        let x = g.row(emb, id as usize)?;
        xs.push(maybe_dropout(g, x, &mut dropout));
    }

    let d_h = p.hidden_dim();
    let h0 = g.constant(crate::tensor::Tensor::zeros(&[d_h]));
    let mut fwd = Vec::with_capacity(xs.len());
    let mut h = h0;
    for &x in &xs {
        h = gru_step(g, x, h, &p.forward)?;
        fwd.push(h);
    }

    let tokens = match (&p.backward, p.merge) {
        (Some(bp), Some(merge)) => {
            let mut bwd = vec![h0; xs.len()];
            let mut h = h0;
            for j in (0..xs.len()).rev() {
                h = gru_step(g, xs[j], h, bp)?;
                bwd[j] = h;
            }
            let m = g.param(merge);
            let mut merged = Vec::with_capacity(xs.len());
            for (f, b) in fwd.iter().zip(&bwd) {
                let both = g.concat(&[*f, *b])?;
                merged.push(g.matmul(m, both)?);
            }
            merged
        }
        _ => fwd,
    };
    Ok(UtteranceStates {
        h: *tokens.last().expect("at least the EOS position"),
        tokens,
    })
}

/// Encodes every context utterance independently; the last entry carries `h_S`.
pub fn encode_context(
    g: &mut Graph<'_>,
    session: &DialogueSession,
    p: &EncoderParams,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Vec<UtteranceStates>> {
    if session.context.is_empty() {
        return Err(Error::Validation("session has an empty context".into()));
    }
    session
        .context
        .iter()
        .map(|u| encode_utterance(g, u, p, dropout.as_deref_mut()))
        .collect()
}
