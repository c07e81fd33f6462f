//! Parameter initialization and dropout shared by the encoder and decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Half-width of the uniform initializer for weight matrices and vectors.
pub const INIT_RANGE: f64 = 0.08;

pub(crate) fn uniform(store: &mut ParamStore, name: String, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
    store.add(name, Tensor::new(shape.to_vec(), data).expect("shape/len agree"))
}

pub(crate) fn zeros(store: &mut ParamStore, name: String, shape: &[usize]) -> ParamId {
    store.add(name, Tensor::zeros(shape))
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
pub struct Dropout<'r> {
    rate: f64,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Dropout { rate, rng }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        if self.rate == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..g.value(x).len())
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let shape = g.shape(x).to_vec();
        let m = g.constant(Tensor::new(shape, mask).expect("mask matches input"));
        g.mul(x, m).expect("mask matches input")
    }
}

pub(crate) fn maybe_dropout(g: &mut Graph<'_>, x: Var, dropout: &mut Option<&mut Dropout<'_>>) -> Var {
    match dropout {
        Some(d) => d.apply(g, x),
        None => x,
    }
}
