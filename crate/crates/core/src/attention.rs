//! Utterance-level context attention.
//!
//! Both attention kinds score each key vector `k_i` (an utterance vector or,
//! with token-level information, a token state) against a query:
//!
//! ```text
//! e_i = Vᵀ tanh(W k_i + U q)      α = softmax(e)      c = Σ_i α_i k_i
//! ```
//!
//! Static attention uses the last utterance vector `h_S` as the query and is
//! evaluated once per session. Dynamic attention uses the previous decoder
//! state `s_{t-1}` and is re-evaluated at every decoding step. The hybrid
//! combiners merge the two context vectors.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::UtteranceStates;
use crate::error::{Error, Result};
use crate::nn::uniform;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `V ∈ R^{d_a}`, `W ∈ R^{d_a×d_key}`, `U ∈ R^{d_a×d_query}` for one head.
///
/// Static and dynamic attention each register their own set.
#[derive(Clone, Debug)]
pub struct AttnParams {
    pub v: ParamId,
    pub w: ParamId,
    pub u: ParamId,
}

impl AttnParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        attn_dim: usize,
        key_dim: usize,
        query_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        AttnParams {
            v: uniform(store, format!("{prefix}.v"), &[attn_dim], rng),
            w: uniform(store, format!("{prefix}.w"), &[attn_dim, key_dim], rng),
            u: uniform(store, format!("{prefix}.u"), &[attn_dim, query_dim], rng),
        }
    }
}

/// A context vector together with the weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    pub weights: Var,
}

/// Additive attention of `query` over `keys`.
pub fn attend(g: &mut Graph<'_>, keys: &[Var], query: Var, p: &AttnParams) -> Result<Attended> {
    if keys.is_empty() {
        return Err(Error::Validation("attention over an empty key set".into()));
    }
    let (v, w, u) = (g.param(p.v), g.param(p.w), g.param(p.u));
    let uq = g.matmul(u, query)?;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let wk = g.matmul(w, k)?;
        let pre = g.add(wk, uq)?;
        let act = g.tanh(pre);
        scores.push(g.dot(v, act)?);
    }
    let e = g.stack(&scores)?;
    let weights = g.softmax(e)?;
    let key_matrix = g.stack(keys)?;
    let context = g.matmul(weights, key_matrix)?;
    Ok(Attended { context, weights })
}

/// Static attention: the last key (`h_S`) is the query.
pub fn static_context(g: &mut Graph<'_>, keys: &[Var], p: &AttnParams) -> Result<Attended> {
    let Some(&last) = keys.last() else {
        return Err(Error::Validation("static attention over an empty context".into()));
    };
    attend(g, keys, last, p)
}

/// Dynamic attention: the previous decoder state is the query.
pub fn dynamic_context(
    g: &mut Graph<'_>,
    keys: &[Var],
    s_prev: Var,
    p: &AttnParams,
) -> Result<Attended> {
    attend(g, keys, s_prev, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridMode {
    /// `[c; c_t]`
    Concat,
    /// `c + c_t`
    Sum,
    /// `α·c + β·c_t` with trainable scalars initialized to 1.
    Learnable,
    /// `cos(c, s_{t-1})·c + cos(c_t, s_{t-1})·c_t`
    Attention,
    /// Elementwise maximum.
    Max,
    /// Elementwise arithmetic mean.
    Mean,
}

impl HybridMode {
    pub const ALL: [HybridMode; 6] = [
        HybridMode::Concat,
        HybridMode::Sum,
        HybridMode::Learnable,
        HybridMode::Attention,
        HybridMode::Max,
        HybridMode::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HybridMode::Concat => "concat",
            HybridMode::Sum => "sum",
            HybridMode::Learnable => "learnable",
            HybridMode::Attention => "attention",
            HybridMode::Max => "max",
            HybridMode::Mean => "mean",
        }
    }
}

/// Extra parameters some hybrid modes need.
#[derive(Clone, Debug, Default)]
pub struct HybridParams {
    pub alpha: Option<ParamId>,
    pub beta: Option<ParamId>,
    /// Maps `s_{t-1}` to the context width for the cosine mode when widths differ.
    pub query_proj: Option<ParamId>,
}

impl HybridParams {
    pub fn register(
        store: &mut ParamStore,
        mode: HybridMode,
        context_dim: usize,
        state_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match mode {
            HybridMode::Learnable => HybridParams {
                alpha: Some(store.add("hybrid.alpha", Tensor::scalar(1.0))),
                beta: Some(store.add("hybrid.beta", Tensor::scalar(1.0))),
                query_proj: None,
            },
            HybridMode::Attention if context_dim != state_dim => HybridParams {
                query_proj: Some(uniform(
                    store,
                    "hybrid.query_proj".into(),
                    &[context_dim, state_dim],
                    rng,
                )),
                ..Default::default()
            },
            _ => HybridParams::default(),
        }
    }
}

/// Combines the static context `c` and the dynamic context `c_t`.
pub fn hybrid_context(
    g: &mut Graph<'_>,
    c: Var,
    c_t: Var,
    s_prev: Var,
    mode: HybridMode,
    p: &HybridParams,
) -> Result<Var> {
    if g.shape(c) != g.shape(c_t) {
        return Err(Error::dim("hybrid_context", g.shape(c), g.shape(c_t)));
    }
    match mode {
        HybridMode::Concat => g.concat(&[c, c_t]),
        HybridMode::Sum => g.add(c, c_t),
        HybridMode::Learnable => {
            let (Some(a), Some(b)) = (p.alpha, p.beta) else {
                return Err(Error::Contract("learnable mode without α/β".into()));
            };
            let (a, b) = (g.param(a), g.param(b));
            let ac = g.scalar_mul(a, c)?;
            let bc = g.scalar_mul(b, c_t)?;
            g.add(ac, bc)
        }
        HybridMode::Attention => {
            let q = match p.query_proj {
                Some(proj) => {
                    let proj = g.param(proj);
                    g.matmul(proj, s_prev)?
                }
                None => s_prev,
            };
            let a = g.cosine(c, q)?;
            let b = g.cosine(c_t, q)?;
            let ac = g.scalar_mul(a, c)?;
            let bc = g.scalar_mul(b, c_t)?;
            g.add(ac, bc)
        }
        HybridMode::Max => g.maximum(c, c_t),
        HybridMode::Mean => {
            let s = g.add(c, c_t)?;
            Ok(g.scale(s, 0.5))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Static,
    Dynamic,
}

/// `H` independent heads of one attention kind and the output projection `W^O`.
#[derive(Clone, Debug)]
pub struct MultiHeadParams {
    pub heads: Vec<AttnParams>,
    /// `d_key × (H·d_key)`
    pub w_o: ParamId,
}

impl MultiHeadParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        heads: usize,
        attn_dim: usize,
        key_dim: usize,
        query_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(heads >= 1, "at least one attention head");
        let heads = (0..heads)
            .map(|h| {
                AttnParams::register(
                    store,
                    &format!("{prefix}.head{h}"),
                    attn_dim,
                    key_dim,
                    query_dim,
                    rng,
                )
            })
            .collect::<Vec<_>>();
        let w_o = uniform(
            store,
            format!("{prefix}.w_o"),
            &[key_dim, heads.len() * key_dim],
            rng,
        );
        MultiHeadParams { heads, w_o }
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadOutput {
    pub context: Var,
    pub head_weights: Vec<Var>,
}

/// Runs every head, concatenates the head contexts and projects with `W^O`.
pub fn multi_head_context(
    g: &mut Graph<'_>,
    keys: &[Var],
    s_prev: Option<Var>,
    p: &MultiHeadParams,
    kind: AttentionKind,
) -> Result<MultiHeadOutput> {
    if p.heads.is_empty() {
        return Err(Error::Contract("multi-head attention with zero heads".into()));
    }
    let mut contexts = Vec::with_capacity(p.heads.len());
    let mut head_weights = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let out = match (kind, s_prev) {
            (AttentionKind::Static, _) => static_context(g, keys, head)?,
            (AttentionKind::Dynamic, Some(s)) => dynamic_context(g, keys, s, head)?,
            (AttentionKind::Dynamic, None) => {
                return Err(Error::Contract(
                    "dynamic attention needs the previous decoder state".into(),
                ))
            }
        };
        contexts.push(out.context);
        head_weights.push(out.weights);
    }
    let joined = g.concat(&contexts)?;
    let w_o = g.param(p.w_o);
    let context = g.matmul(w_o, joined)?;
    Ok(MultiHeadOutput {
        context,
        head_weights,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenLevel {
    /// Utterance vectors only.
    #[default]
    Off,
    /// Attend over every non-PAD token state instead of utterance vectors.
    Replace,
    /// Append a token-attention summary to each utterance vector.
    Concat,
}

impl std::str::FromStr for TokenLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(TokenLevel::Off),
            "replace" => Ok(TokenLevel::Replace),
            "concat" => Ok(TokenLevel::Concat),
            other => Err(Error::Validation(format!(
                "unknown token level {other:?} (off, replace or concat)"
            ))),
        }
    }
}

impl std::fmt::Display for TokenLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenLevel::Off => "off",
            TokenLevel::Replace => "replace",
            TokenLevel::Concat => "concat",
        })
    }
}

/// Builds the key set that utterance-level attention runs over.
///
/// `Off` yields the utterance vectors; `Replace` the flattened non-PAD token
/// states (so the final key is still `h_S`); `Concat` yields `[h_i; a_i]`
/// where `a_i` is attention over utterance `i`'s tokens queried by `h_i`.
pub fn token_level_keys(
    g: &mut Graph<'_>,
    states: &[UtteranceStates],
    mode: TokenLevel,
    token_attn: Option<&AttnParams>,
) -> Result<Vec<Var>> {
    if states.is_empty() || states.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::Validation("no unmasked positions to attend over".into()));
    }
    match mode {
        TokenLevel::Off => Ok(states.iter().map(|s| s.h).collect()),
        TokenLevel::Replace => Ok(states.iter().flat_map(|s| s.tokens.iter().copied()).collect()),
        TokenLevel::Concat => {
            let p = token_attn
                .ok_or_else(|| Error::Contract("token-level concat needs token attention".into()))?;
            states
                .iter()
                .map(|s| {
                    let summary = attend(g, &s.tokens, s.h, p)?;
                    g.concat(&[s.h, summary.context])
                })
                .collect()
        }
    }
}

/// Spreads weights over flattened token keys back onto a `[utterance][position]`
/// grid of width `pad_len`; masked positions get exactly 0.
pub fn scatter_token_weights(
    weights: &[f64],
    token_counts: &[usize],
    pad_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let total: usize = token_counts.iter().sum();
    if total != weights.len() || token_counts.iter().any(|&n| n > pad_len) {
        return Err(Error::dim("scatter_token_weights", &[weights.len()], token_counts));
    }
    let mut grid = Vec::with_capacity(token_counts.len());
    let mut offset = 0;
    for &n in token_counts {
        let mut row = vec![0.0; pad_len];
        row[..n].copy_from_slice(&weights[offset..offset + n]);
        offset += n;
        grid.push(row);
    }
    Ok(grid)
}
