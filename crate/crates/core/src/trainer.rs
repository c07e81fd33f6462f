//! Teacher-forced maximum-likelihood training with Adam and decoupled weight decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamState, Checkpoint, RngState};
use crate::corpus::{DialogueSession, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{response_targets, Model, ModelConfig};
use crate::nn::Dropout;
use crate::tensor::{Graph, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            dropout: 0.5,
            batch_size: 80,
            epochs: 10,
            seed: 0,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + λ·p)`.
#[derive(Clone, Debug)]
pub struct Adam {
    state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Adam {
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn from_state(state: AdamState) -> Self {
        Adam { state }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn update(&mut self, store: &mut ParamStore, cfg: &TrainConfig) {
        let st = &mut self.state;
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = store.grad(id).data().to_vec();
            let m = st.m[i].data_mut();
            let v = st.v[i].data_mut();
            let p = store.value_mut(id).data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[k]);
            }
        }
    }
}

/// Mean cross-entropy per target token over `batch`, without dropout.
pub fn loss(model: &Model, batch: &[DialogueSession]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for s in batch {
        let mut g = Graph::new(model.store());
        let (ce, n) = model.session_loss(&mut g, s, None)?;
        total += g.value(ce).item()?;
        count += n;
    }
    if count == 0 {
        return Err(Error::Validation("batch has no target tokens".into()));
    }
    Ok(total / count as f64)
}

pub struct Trainer {
    model: Model,
    config: TrainConfig,
    optimizer: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    batch_index: usize,
}

impl Trainer {
    /// The data-order/dropout stream is seeded from `config.seed` on a stream
    /// separate from parameter initialization.
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            optimizer: Adam::new(model.store()),
            model,
            config,
            rng,
            epoch: 0,
            batch_index: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Accumulates gradients of the batch-mean loss and applies one update.
    /// Returns the summed cross-entropy and target count of the batch.
    pub fn step(&mut self, batch: &[&DialogueSession]) -> Result<(f64, usize)> {
        let prepared: Vec<DialogueSession> = batch.iter().map(|s| self.model.prepare(s)).collect();
        let count: usize = prepared.iter().map(|s| response_targets(&s.response).len()).sum();
        if count == 0 {
            return Err(Error::Validation("batch has no target tokens".into()));
        }
        let scale = 1.0 / count as f64;
        self.model.store_mut().zero_grads();
        let mut total = 0.0;
        for s in &prepared {
            let grads = {
                let mut dropout = Dropout::new(self.config.dropout, &mut self.rng);
                let mut g = Graph::new(self.model.store());
                let (ce, _) = self
                    .model
                    .session_loss(&mut g, s, Some(&mut dropout))
                    .map_err(|e| match e {
                        Error::Numeric(_) => Error::Diverged {
                            epoch: self.epoch + 1,
                            batch: self.batch_index,
                            loss: f64::NAN,
                        },
                        other => other,
                    })?;
                total += g.value(ce).item()?;
                let scaled = g.scale(ce, scale);
                g.backward(scaled)?
            };
            self.model.store_mut().accumulate(&grads);
        }
        let norm = self.model.store().grad_norm();
        if !total.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch + 1,
                batch: self.batch_index,
                loss: total * scale,
            });
        }
        if norm > self.config.clip_norm {
            self.model.store_mut().scale_grads(self.config.clip_norm / norm);
        }
        let (model, optimizer, cfg) = (&mut self.model, &mut self.optimizer, &self.config);
        optimizer.update(model.store_mut(), cfg);
        Ok((total, count))
    }

    /// One shuffled pass over `sessions`; returns the per-token mean loss.
    pub fn train_epoch(&mut self, sessions: &[DialogueSession]) -> Result<f64> {
        if sessions.is_empty() {
            return Err(Error::Validation("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..sessions.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&DialogueSession> = chunk.iter().map(|&i| &sessions[i]).collect();
            self.batch_index = b;
            let (sum, n) = self.step(&batch)?;
            total += sum;
            count += n;
        }
        self.epoch += 1;
        Ok(total / count as f64)
    }

    /// Runs the remaining configured epochs, returning each epoch's mean loss.
    pub fn run(&mut self, sessions: &[DialogueSession]) -> Result<Vec<f64>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            history.push(self.train_epoch(sessions)?);
        }
        Ok(history)
    }

    pub fn checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let store = self.model.store();
        Checkpoint {
            model_config: self.model.config().clone(),
            train_config: self.config.clone(),
            vocab: vocab.clone(),
            params: store
                .ids()
                .map(|id| (store.name(id).to_string(), store.value(id).clone()))
                .collect(),
            optimizer: self.optimizer.state().clone(),
            epoch: self.epoch as u64,
            rng: RngState::capture(&self.rng),
        }
    }

    /// Restores model, optimizer moments, epoch counter and RNG position.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = ckpt.restore_model()?;
        ckpt.train_config.validate()?;
        if ckpt.optimizer.m.len() != model.store().len() || ckpt.optimizer.v.len() != model.store().len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(Trainer {
            model,
            config: ckpt.train_config.clone(),
            optimizer: Adam::from_state(ckpt.optimizer.clone()),
            rng: ckpt.rng.restore(),
            epoch: ckpt.epoch as usize,
            batch_index: 0,
        })
    }
}

/// Builds a model from `model_config`, trains it for `train_config.epochs`
/// epochs, and returns the final checkpoint with the per-epoch loss history.
pub fn train(
    sessions: &[DialogueSession],
    vocab: &Vocabulary,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> Result<(Checkpoint, Vec<f64>)> {
    let model = Model::new(model_config, train_config.seed)?;
    let mut trainer = Trainer::new(model, train_config)?;
    let history = trainer.run(sessions)?;
    Ok((trainer.checkpoint(vocab), history))
}
