//! GRU decoder and greedy generation.
//!
//! At step `t` the decoder input is `[emb(y_{t-1}); context_t]`, where the
//! context is the fixed static vector, the per-step dynamic vector, or their
//! hybrid combination.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{DialogueSession, EOS, PAD, SOS};
use crate::encoder::{gru_step, GruParams};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{maybe_dropout, uniform, zeros, Dropout};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub gru: GruParams,
    pub embedding: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    /// `d_s × d_h` projection of `h_S` into the initial state, when widths differ.
    pub init_proj: Option<ParamId>,
    pub context_dim: usize,
}

impl DecoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        shared_embedding: Option<ParamId>,
        vocab_size: usize,
        emb_dim: usize,
        context_dim: usize,
        encoder_dim: usize,
        state_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = match shared_embedding {
            Some(e) => e,
            None => uniform(store, "decoder.embedding".into(), &[vocab_size, emb_dim], rng),
        };
        let gru = GruParams::register(store, "decoder.gru", emb_dim + context_dim, state_dim, rng);
        let w_out = uniform(store, "decoder.w_out".into(), &[vocab_size, state_dim], rng);
        let b_out = zeros(store, "decoder.b_out".into(), &[vocab_size]);
        let init_proj = (state_dim != encoder_dim).then(|| {
            uniform(store, "decoder.init_proj".into(), &[state_dim, encoder_dim], rng)
        });
        DecoderParams {
            gru,
            embedding,
            w_out,
            b_out,
            init_proj,
            context_dim,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeState {
    pub s: Var,
    pub prev_token: u32,
    pub step: usize,
}

/// `s_0 = P·h_S` (or `h_S` itself when widths agree), `y_0 = SOS`, `t = 1`.
pub fn init_state(g: &mut Graph<'_>, h_s: Var, p: &DecoderParams) -> Result<DecodeState> {
    let s = match p.init_proj {
        Some(proj) => {
            let proj = g.param(proj);
            g.matmul(proj, h_s)?
        }
        None => h_s,
    };
    Ok(DecodeState {
        s,
        prev_token: SOS,
        step: 1,
    })
}

/// One decoding step. Returns the vocabulary logits and the advanced state;
/// the caller sets `prev_token` on the new state.
pub fn decode_step(
    g: &mut Graph<'_>,
    state: &DecodeState,
    context: Var,
    p: &DecoderParams,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(Var, DecodeState)> {
    if g.shape(context) != [p.context_dim] {
        return Err(Error::dim("decode_step context", g.shape(context), &[p.context_dim]));
    }
    let emb = g.param(p.embedding);
    let y = g.row(emb, state.prev_token as usize)?;
    let y = maybe_dropout(g, y, &mut dropout);
    let input = g.concat(&[y, context])?;
    let s = gru_step(g, input, state.s, &p.gru)?;
    let w = g.param(p.w_out);
    let b = g.param(p.b_out);
    let proj = g.matmul(w, s)?;
    let logits = g.add(proj, b)?;
    Ok((
        logits,
        DecodeState {
            s,
            prev_token: state.prev_token,
            step: state.step + 1,
        },
    ))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding until `EOS` or `max_len` steps. `SOS`, `EOS` and `PAD` are
/// not part of the returned sequence.
pub fn generate(model: &Model, session: &DialogueSession, max_len: usize) -> Result<Vec<u32>> {
    Ok(model
        .decode_trace(session, max_len)?
        .into_iter()
        .map(|s| s.token)
        .take_while(|&t| t != EOS)
        .filter(|&t| t != PAD && t != SOS)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn params(store: &mut ParamStore, enc: usize, dec: usize) -> DecoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        DecoderParams::register(store, None, 10, 3, 4, enc, dec, &mut rng)
    }

    #[test]
    fn zero_parameters_give_uniform_prediction() {
        let mut store = ParamStore::new();
        let p = params(&mut store, 5, 5);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let st = init_state(&mut g, h, &p).unwrap();
        assert_eq!(st.prev_token, SOS);
        assert_eq!(st.step, 1);
        let ctx = g.constant(Tensor::zeros(&[4]));
        let (logits, next) = decode_step(&mut g, &st, ctx, &p, None).unwrap();
        assert_eq!(g.value(logits).data(), &[0.0; 10]);
        assert_eq!(next.step, 2);
        let probs = g.softmax(logits).unwrap();
        for v in g.value(probs).data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_widths_copy_last_utterance_state() {
        let mut store = ParamStore::new();
        let p = params(&mut store, 5, 5);
        assert!(p.init_proj.is_none());
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::vector(vec![0.1, -0.2, 0.3, 0.0, 0.5]));
        let st = init_state(&mut g, h, &p).unwrap();
        assert_eq!(g.value(st.s), g.value(h));
        let z = g.constant(Tensor::zeros(&[5]));
        let st = init_state(&mut g, z, &p).unwrap();
        assert_eq!(g.value(st.s).data(), &[0.0; 5]);
    }

    #[test]
    fn unequal_widths_project() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DecoderParams::register(&mut store, None, 10, 3, 512, 512, 1024, &mut rng);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::filled(&[512], 0.01));
        let st = init_state(&mut g, h, &p).unwrap();
        assert_eq!(g.shape(st.s), &[1024]);
    }

    #[test]
    fn wrong_context_width_is_rejected() {
        let mut store = ParamStore::new();
        let p = params(&mut store, 5, 5);
        let mut g = Graph::new(&store);
        let h = g.constant(Tensor::zeros(&[5]));
        let st = init_state(&mut g, h, &p).unwrap();
        let ctx = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            decode_step(&mut g, &st, ctx, &p, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.2]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
