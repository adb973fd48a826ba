//! Training loop: per-epoch subsampling, mini-batch Adagrad, early stopping.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::WindowSample;
use crate::model::{loss_and_gradients, mse, ModelError, ModelParams, Real};
use crate::optim::{adagrad_step, OptimizerState, DEFAULT_EPSILON, DEFAULT_LR};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training or validation set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epoch_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub w: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub epsilon: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epoch_fraction: 0.2,
            patience: 3,
            max_epochs: 100,
            seed: 0,
            w: 10,
            hidden_dim: 128,
            lr: DEFAULT_LR,
            epsilon: DEFAULT_EPSILON,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.epoch_fraction > 0.0 && self.epoch_fraction <= 1.0) {
            return bad("epoch_fraction must lie in (0, 1]");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.w == 0 || self.hidden_dim == 0 {
            return bad("w and hidden_dim must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("lr and epsilon must be positive");
        }
        Ok(())
    }

    /// Samples drawn per epoch from a training set of size `n`.
    pub fn samples_per_epoch(&self, n: usize) -> usize {
        ((self.epoch_fraction * n as f64).ceil() as usize).clamp(1, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Parameters after the last completed epoch.
    pub params: ModelParams<f64>,
    /// Parameters of the epoch with the lowest validation MSE.
    pub best_params: ModelParams<f64>,
    pub optimizer: OptimizerState<f64>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
    pub rng_state: Vec<u8>,
    pub stopped_early: bool,
}

impl Checkpoint {
    /// Index of the first epoch with minimal validation MSE.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.history.iter().enumerate() {
            if best.is_none_or(|(_, v)| r.val_mse < v) {
                best = Some((i, r.val_mse));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn best_val_mse(&self) -> Option<f64> {
        self.best_epoch().map(|i| self.history[i].val_mse)
    }

    /// Epochs since the best one.
    fn epochs_without_improvement(&self) -> usize {
        self.best_epoch().map(|b| self.history.len() - 1 - b).unwrap_or(0)
    }

    /// The model to use for inference.
    pub fn model(&self) -> &ModelParams<f64> {
        &self.best_params
    }
}

pub fn encode_rng(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(56);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn decode_rng(bytes: &[u8]) -> Option<ChaCha8Rng> {
    if bytes.len() != 56 {
        return None;
    }
    let seed: [u8; 32] = bytes[..32].try_into().ok()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().ok()?));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().ok()?));
    Some(rng)
}

/// A fresh checkpoint at epoch 0.
pub fn initial_checkpoint(input_dim: usize, config: &TrainConfig) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    let params = ModelParams::init(input_dim, config.hidden_dim, config.seed);
    let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    Ok(Checkpoint {
        optimizer: OptimizerState::new(&params, config.lr, config.epsilon),
        best_params: params.clone(),
        params,
        epoch: 0,
        history: vec![],
        config: config.clone(),
        rng_state: encode_rng(&rng),
        stopped_early: false,
    })
}

fn input_dim_of(set: &[WindowSample]) -> Result<usize, TrainError> {
    set.first()
        .and_then(|s| s.features.first())
        .map(|f| f.len())
        .ok_or(TrainError::EmptyDataset)
}

/// Trains a model from scratch and returns the final checkpoint, whose
/// [`Checkpoint::model`] holds the best-validation parameters.
pub fn train(train_set: &[WindowSample], val_set: &[WindowSample], config: &TrainConfig) -> Result<Checkpoint, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ck = initial_checkpoint(input_dim_of(train_set)?, config)?;
    resume(ck, train_set, val_set, config.max_epochs)
}

/// Continues training until `max_epochs` total epochs or early stopping.
pub fn resume(mut ck: Checkpoint, train_set: &[WindowSample], val_set: &[WindowSample], max_epochs: usize) -> Result<Checkpoint, TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    ck.config.max_epochs = max_epochs;
    ck.config.validate()?;
    match ck.config.precision {
        Precision::F64 => run_epochs::<f64>(ck, train_set, val_set),
        Precision::F32 => run_epochs::<f32>(ck, train_set, val_set),
    }
}

fn run_epochs<F: Real>(mut ck: Checkpoint, train_set: &[WindowSample], val_set: &[WindowSample]) -> Result<Checkpoint, TrainError> {
    let cfg = ck.config.clone();
    let mut params: ModelParams<F> = ck.params.cast();
    let mut best: ModelParams<F> = ck.best_params.cast();
    let mut opt: OptimizerState<F> = ck.optimizer.cast();
    let mut rng = decode_rng(&ck.rng_state).ok_or_else(|| TrainError::InvalidConfig("bad rng state".into()))?;
    let per_epoch = cfg.samples_per_epoch(train_set.len());

    while ck.epoch < cfg.max_epochs && !ck.stopped_early {
        let picked = index::sample(&mut rng, train_set.len(), per_epoch).into_vec();
        let mut sse = 0.0;
        for chunk in picked.chunks(cfg.batch_size) {
            let batch: Vec<WindowSample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(&params, &batch)?;
            let loss = loss.to_f64();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch: ck.epoch });
            }
            sse += loss * batch.len() as f64;
            adagrad_step(&mut params, &grads, &mut opt)?;
        }
        let val = mse(&params, val_set)?.to_f64();
        if !val.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch: ck.epoch });
        }
        let improved = ck.best_val_mse().is_none_or(|b| val < b);
        ck.history.push(EpochRecord { train_mse: sse / per_epoch as f64, val_mse: val });
        ck.epoch += 1;
        if improved {
            best = params.clone();
        }
        log::info!("epoch {} train_mse={:.6} val_mse={:.6}", ck.epoch, sse / per_epoch as f64, val);
        if !improved && ck.epochs_without_improvement() >= cfg.patience {
            ck.stopped_early = true;
        }
    }
    ck.params = params.cast();
    ck.best_params = best.cast();
    ck.optimizer = opt.cast();
    ck.rng_state = encode_rng(&rng);
    Ok(ck)
}
