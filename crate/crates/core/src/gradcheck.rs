//! Central-difference gradient check of the full model loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::TokenLevel;
use crate::corpus::{pad_utterance, DialogueSession, RESERVED_TOKENS};
use crate::encoder::Direction;
use crate::error::Result;
use crate::model::{AttentionMode, Model, ModelConfig};
use crate::tensor::{Gradients, Graph};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub attention: AttentionMode,
    pub heads: usize,
    pub direction: Direction,
    pub token_level: TokenLevel,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub decoder_dim: usize,
    /// Context utterances in the synthetic session.
    pub utterances: usize,
    pub pad_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Swaps in a wrong tanh derivative so the check must fail.
    pub inject_fault: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            attention: AttentionMode::Static,
            heads: 4,
            direction: Direction::Uni,
            token_level: TokenLevel::Off,
            emb_dim: 8,
            hidden_dim: 12,
            decoder_dim: 12,
            utterances: 3,
            pad_len: 6,
            vocab_size: 20,
            seed: 7,
            eps: 1e-5,
            tolerance: 1e-4,
            inject_fault: false,
        }
    }
}

impl GradCheckConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            decoder_dim: self.decoder_dim,
            attention: self.attention,
            heads: self.heads,
            direction: self.direction,
            token_level: self.token_level,
            pad_len: self.pad_len,
            share_embedding: true,
        }
    }
}

/// Denominator floor of the relative error. Central differences at
/// `eps = 1e-5` on a loss of order 10 carry about 3e-10 of rounding noise, so
/// gradients below the floor are held to an absolute error of
/// `tolerance × 1e-5` instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub attention: String,
    pub heads: usize,
    pub direction: Direction,
    pub token_level: TokenLevel,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "{} attention={} heads={} direction={} token_level={} max_rel_err={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.attention,
            self.heads,
            self.direction,
            self.token_level,
            self.max_rel_err
        )
    }
}

/// A random session of `utterances` context utterances and a short response,
/// drawn from non-reserved ids and padded to `pad_len`.
pub fn synthetic_session(
    vocab_size: usize,
    utterances: usize,
    pad_len: usize,
    rng: &mut ChaCha8Rng,
) -> DialogueSession {
    let first = RESERVED_TOKENS.len() as u32;
    let utt = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(1..pad_len);
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(first..vocab_size as u32)).collect();
        pad_utterance(&ids, pad_len)
    };
    DialogueSession {
        context: (0..utterances).map(|_| utt(rng)).collect(),
        response: utt(rng),
    }
}

fn backprop(model: &Model, session: &DialogueSession, fault: bool) -> Result<Gradients> {
    let mut g = Graph::new(model.store());
    if fault {
        g.inject_tanh_gradient_fault();
    }
    let (loss, _) = model.session_loss(&mut g, session, None)?;
    g.backward(loss)
}

fn loss_value(model: &Model, session: &DialogueSession) -> Result<f64> {
    let mut g = Graph::new(model.store());
    let (loss, _) = model.session_loss(&mut g, session, None)?;
    g.value(loss).item()
}

/// Compares backpropagated gradients of one session's summed loss with
/// central differences over every scalar of every parameter.
pub fn check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let session = synthetic_session(cfg.vocab_size, cfg.utterances, cfg.pad_len, &mut rng);

    let grads = backprop(&model, &session, cfg.inject_fault)?;
    model.store_mut().zero_grads();
    model.store_mut().accumulate(&grads);
    let analytic: Vec<Vec<f64>> = model
        .store()
        .ids()
        .map(|id| model.store().grad(id).data().to_vec())
        .collect();

    let ids: Vec<_> = model.store().ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let name = model.store().name(id).to_string();
        let n = model.store().value(id).len();
        let mut worst = 0.0f64;
        let mut max_abs = 0.0f64;
        for k in 0..n {
            let orig = model.store().value(id).data()[k];
            model.store_mut().value_mut(id).data_mut()[k] = orig + cfg.eps;
            let plus = loss_value(&model, &session)?;
            model.store_mut().value_mut(id).data_mut()[k] = orig - cfg.eps;
            let minus = loss_value(&model, &session)?;
            model.store_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[id.index()][k];
            worst = worst.max(relative_error(a, numeric));
            max_abs = max_abs.max(a.abs());
        }
        params.push(ParamCheck {
            name,
            scalars: n,
            max_rel_err: worst,
            max_abs_grad: max_abs,
        });
    }
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        attention: cfg.attention.to_string(),
        heads: cfg.heads,
        direction: cfg.direction,
        token_level: cfg.token_level,
        max_rel_err,
        tolerance: cfg.tolerance,
        passed: max_rel_err <= cfg.tolerance,
        params,
    })
}

/// The verification matrix: every attention mode with 4 heads, heads 1 and 2
/// on static and dynamic attention, both token-level variants, and a
/// bidirectional encoder, plus the cosine hybrid with a decoder wider than
/// the encoder so the state projections are exercised.
pub fn suite(base: &GradCheckConfig) -> Vec<GradCheckConfig> {
    let mut out = Vec::new();
    for mode in AttentionMode::ALL {
        out.push(GradCheckConfig {
            attention: mode,
            ..base.clone()
        });
    }
    for heads in [1, 2] {
        for attention in [AttentionMode::Static, AttentionMode::Dynamic] {
            out.push(GradCheckConfig {
                attention,
                heads,
                ..base.clone()
            });
        }
    }
    for token_level in [TokenLevel::Replace, TokenLevel::Concat] {
        for attention in [AttentionMode::Static, AttentionMode::Dynamic] {
            out.push(GradCheckConfig {
                attention,
                token_level,
                ..base.clone()
            });
        }
    }
    out.push(GradCheckConfig {
        direction: Direction::Bi,
        ..base.clone()
    });
    out.push(GradCheckConfig {
        attention: AttentionMode::Hybrid(crate::attention::HybridMode::Attention),
        decoder_dim: base.hidden_dim + 4,
        ..base.clone()
    });
    out
}
