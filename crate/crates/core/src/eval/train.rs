//! Contrastive training loop for the dual encoder: AdamW with decoupled
//! weight decay, cosine-annealed learning rate, seeded shuffling, and
//! best-snapshot early stopping on validation R-Precision@1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{
    infonce_loss_and_grad, r_precision, similarity_matrix, BatchActivations, RetrievalModel,
    ZScore,
};
use super::EvalError;
use crate::model::CoeffVector;

/// Hyperparameters for `train_encoder`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub k_eval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            max_epochs: 1000,
            patience: 10,
            batch_size: 32,
            temperature: 0.07,
            seed: 42,
            k_eval: 3,
        }
    }
}

/// One epoch of training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_r_precision_1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_r_precision_1: f64,
    pub stopped_early: bool,
}

/// Cosine-annealed learning rate for epoch `e` of `max_epochs`.
fn cosine_lr(base: f64, epoch: usize, max_epochs: usize) -> f64 {
    base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / max_epochs as f64).cos())
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    weight_decay: f64,
}

impl AdamW {
    fn new(count: usize, weight_decay: f64) -> Self {
        AdamW {
            m: vec![0.0; count],
            v: vec![0.0; count],
            step: 0,
            weight_decay,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            // Decoupled weight decay, then the Adam step.
            params[i] -= lr * self.weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Validation R-Precision@1 over full batches of min(|val|, batch_size).
fn val_r_precision_1(
    model: &RetrievalModel,
    val: &[(String, CoeffVector)],
    batch_size: usize,
) -> Result<f64, EvalError> {
    let b = val.len().min(batch_size);
    if b < 2 {
        return Err(EvalError::InsufficientData(
            "validation split needs at least 2 pairs".into(),
        ));
    }
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in val.chunks(b) {
        if chunk.len() < b {
            break;
        }
        let pairs: Vec<(&str, &CoeffVector)> =
            chunk.iter().map(|(t, m)| (t.as_str(), m)).collect();
        let acts = BatchActivations::forward(model, &pairs);
        let s = similarity_matrix(&acts.text_embeddings(), &acts.motion_embeddings())?;
        total += r_precision(&s, 1)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Trains the dual encoder with symmetric InfoNCE over seeded shuffled full
/// batches, returning the best-validation snapshot and per-epoch history.
/// Runs are bit-identical for identical inputs and configuration.
pub fn train_encoder(
    train: &[(String, CoeffVector)],
    val: &[(String, CoeffVector)],
    config: &TrainConfig,
) -> Result<(RetrievalModel, TrainHistory), EvalError> {
    if config.batch_size < 2 {
        return Err(EvalError::DegenerateBatch);
    }
    if train.len() < config.batch_size.min(train.len()).max(2) || train.len() < 2 {
        return Err(EvalError::InsufficientData(format!(
            "training split needs at least 2 pairs, got {}",
            train.len()
        )));
    }
    let batch_size = config.batch_size.min(train.len());

    let mut model = RetrievalModel::init(config.seed, config.temperature);
    let motion_refs: Vec<&CoeffVector> = train.iter().map(|(_, m)| m).collect();
    model.zscore = ZScore::fit(&motion_refs);

    let mut params = model.flat_params();
    let mut optimizer = AdamW::new(params.len(), config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_without_improvement = 0usize;
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        let lr = cosine_lr(config.learning_rate, epoch, config.max_epochs);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batch_count = 0usize;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < batch_size {
                break;
            }
            let pairs: Vec<(&str, &CoeffVector)> = chunk
                .iter()
                .map(|&i| (train[i].0.as_str(), &train[i].1))
                .collect();
            let acts = BatchActivations::forward(&model, &pairs);
            let (loss, grads) = infonce_loss_and_grad(&model, &acts, config.temperature)?;
            optimizer.update(&mut params, &grads, lr);
            model.set_flat_params(&params);
            epoch_loss += loss;
            batch_count += 1;
        }
        if batch_count == 0 {
            return Err(EvalError::InsufficientData(
                "no full training batch available".into(),
            ));
        }

        let val_rp1 = val_r_precision_1(&model, val, config.batch_size)?;
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: epoch_loss / batch_count as f64,
            val_r_precision_1: val_rp1,
        });

        if val_rp1 > best_val {
            best_val = val_rp1;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.set_flat_params(&best_params);
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_r_precision_1: best_val,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_coeffs, ValidatePolicy};

    fn tagged_pair(tag: usize, jitter: usize) -> (String, CoeffVector) {
        let mut raw = [0.0; 61];
        for (i, v) in raw.iter_mut().enumerate() {
            *v = if i % 8 == tag { 0.9 } else { -0.1 } + (jitter as f64) * 1e-3;
        }
        (
            format!("tag{tag}"),
            validate_coeffs(&raw, ValidatePolicy::Clamp).unwrap(),
        )
    }

    fn small_corpus() -> (Vec<(String, CoeffVector)>, Vec<(String, CoeffVector)>) {
        let mut train = Vec::new();
        for j in 0..6 {
            for tag in 0..4 {
                train.push(tagged_pair(tag, j));
            }
        }
        let val: Vec<_> = (0..4).map(|tag| tagged_pair(tag, 99)).collect();
        (train, val)
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(1e-4, 0, 1000) - 1e-4).abs() < 1e-18);
        // Halfway: cos(π/2) = 0 → lr/2.
        assert!((cosine_lr(1e-4, 500, 1000) - 5e-5).abs() < 1e-12);
        // Final epoch index is max_epochs − 1, still positive.
        assert!(cosine_lr(1e-4, 999, 1000) > 0.0);
    }

    #[test]
    fn training_reduces_loss_on_separable_corpus() {
        let (train, val) = small_corpus();
        let config = TrainConfig {
            max_epochs: 30,
            patience: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (_, history) = train_encoder(&train, &val, &config).unwrap();
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (train, val) = small_corpus();
        let config = TrainConfig {
            max_epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (m1, h1) = train_encoder(&train, &val, &config).unwrap();
        let (m2, h2) = train_encoder(&train, &val, &config).unwrap();
        assert_eq!(m1.flat_params(), m2.flat_params());
        assert_eq!(h1.epochs.len(), h2.epochs.len());
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_r_precision_1, b.val_r_precision_1);
        }
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (train, val) = small_corpus();
        let config = TrainConfig {
            max_epochs: 200,
            patience: 3,
            batch_size: 4,
            learning_rate: 0.0, // no learning: first epoch is the best
            ..TrainConfig::default()
        };
        let (_, history) = train_encoder(&train, &val, &config).unwrap();
        assert!(history.stopped_early);
        // First epoch sets the best; the next `patience` epochs tie, then stop.
        assert_eq!(history.epochs.len(), 1 + 3);
        assert_eq!(history.best_epoch, 0);
    }

    #[test]
    fn partial_trailing_batch_is_dropped() {
        // 10 samples, batch 4 → 2 full batches per epoch; the loop must not
        // error on the leftover 2.
        let mut train = Vec::new();
        for j in 0..10 {
            train.push(tagged_pair(j % 4, j));
        }
        let val: Vec<_> = (0..4).map(|tag| tagged_pair(tag, 50)).collect();
        let config = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (_, history) = train_encoder(&train, &val, &config).unwrap();
        assert_eq!(history.epochs.len(), 2);
    }

    #[test]
    fn rejects_tiny_training_split() {
        let (_, val) = small_corpus();
        let one = vec![tagged_pair(0, 0)];
        let config = TrainConfig::default();
        assert!(matches!(
            train_encoder(&one, &val, &config),
            Err(EvalError::InsufficientData(_))
        ));
    }

    #[test]
    fn best_snapshot_is_returned() {
        let (train, val) = small_corpus();
        let config = TrainConfig {
            max_epochs: 40,
            patience: 40,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (model, history) = train_encoder(&train, &val, &config).unwrap();
        // The returned model must score the recorded best on the same split.
        let rp = val_r_precision_1(&model, &val, config.batch_size).unwrap();
        assert!((rp - history.best_val_r_precision_1).abs() < 1e-12);
    }
}
