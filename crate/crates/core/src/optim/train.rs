//! The epoch loop: shuffle, batch, backward, clip, AdamW step, Lookahead
//! sync, per-epoch validation, best-checkpoint tracking, and patience-based
//! early stopping. A fixed-update-count mode supports retraining on full data
//! to a known number of updates.

use super::{clip_global_norm, AdamW, AdamWConfig, Lookahead, LookaheadConfig};
use crate::error::{Error, Result};
use crate::neural::{Gradients, Model};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which validation metric drives checkpoint selection and early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    ExactMatch,
    F1,
    Accuracy,
}

impl EvalMetric {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMetric::ExactMatch => "EM",
            EvalMetric::F1 => "F1",
            EvalMetric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Epoch cap.
    pub epochs: usize,
    /// Fixed-update-count mode: stop after exactly this many updates.
    pub max_updates: Option<usize>,
    pub max_grad_norm: Option<f64>,
    /// Epochs without metric improvement before stopping.
    pub patience: usize,
    pub lookahead: Option<LookaheadConfig>,
    pub metric: EvalMetric,
    pub seed: u64,
}

impl TrainConfig {
    /// Span-task defaults: batch 64, weight decay 0.02, max gradient norm
    /// 7.739, patience 5, Lookahead alpha 0.470 with k = 5, lr 1.263e-5.
    pub fn span_defaults() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            lr: 1.263e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
            epochs: 100,
            max_updates: None,
            max_grad_norm: Some(7.739),
            patience: 5,
            lookahead: Some(LookaheadConfig::default()),
            metric: EvalMetric::ExactMatch,
            seed: 0,
        }
    }

    /// Detection-task defaults: batch 96, lr 3e-5, 8 epochs, max gradient
    /// norm 1.0, Adam eps 1e-8.
    pub fn classification_defaults() -> TrainConfig {
        TrainConfig {
            batch_size: 96,
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            epochs: 8,
            max_updates: None,
            max_grad_norm: Some(1.0),
            patience: 8,
            lookahead: None,
            metric: EvalMetric::F1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::argument("patience must be >= 1"));
        }
        if self.epochs == 0 && self.max_updates.is_none() {
            return Err(Error::argument("need an epoch cap or a max update count"));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub updates: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Loop result: the best checkpoint by validation metric plus the final
/// parameters (the relevant artifact in fixed-update-count mode).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: Vec<f64>,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub best_updates: usize,
    pub final_params: Vec<f64>,
    pub total_updates: usize,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// Log serialized as line-delimited JSON records.
    pub fn log_lines(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A trainable objective over a fixed dataset split.
pub trait TrainTask {
    /// Number of training examples.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulate gradients for the given example indices (scaled by
    /// 1/len(idx)) and return the summed unscaled loss.
    fn batch_backward(&self, model: &mut Model, idx: &[usize], grads: &mut Gradients)
        -> Result<f64>;

    /// Validation metric on the percentage scale (higher is better).
    fn evaluate(&self, model: &Model) -> Result<f64>;
}

/// Run the training loop. Deterministic for a fixed config and seed.
pub fn train_loop<T: TrainTask>(
    model: &mut Model,
    task: &T,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if task.is_empty() {
        return Err(Error::argument("training data is empty"));
    }
    let n_params = model.num_params();
    let mut opt = AdamW::new(config.adamw(), n_params);
    let mut lookahead = match &config.lookahead {
        Some(cfg) => Some(Lookahead::new(model.params(), *cfg)?),
        None => None,
    };
    let mut grads = Gradients::zeros(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..task.len()).collect();

    let mut log = Vec::new();
    let mut best_params = model.params().to_vec();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_updates = 0;
    let mut updates = 0usize;
    let mut stale_epochs = 0usize;
    let epoch_cap = if config.epochs == 0 {
        usize::MAX
    } else {
        config.epochs
    };

    'epochs: for epoch in 1..=epoch_cap {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let mut hit_update_cap = false;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            epoch_loss += task.batch_backward(model, batch, &mut grads)?;
            seen += batch.len();
            if let Some(max_norm) = config.max_grad_norm {
                clip_global_norm(grads.as_mut_slice(), max_norm);
            }
            opt.step(model.params_mut(), grads.as_slice())?;
            if let Some(la) = &mut lookahead {
                la.post_step(model.params_mut());
            }
            updates += 1;
            if config.max_updates.is_some_and(|cap| updates >= cap) {
                hit_update_cap = true;
                break;
            }
        }
        let val_metric = task.evaluate(model)?;
        if val_metric.is_nan() {
            return Err(Error::Numeric(format!(
                "validation metric is NaN at epoch {epoch}"
            )));
        }
        log.push(EpochRecord {
            epoch,
            updates,
            train_loss: epoch_loss / seen.max(1) as f64,
            val_metric,
        });
        if val_metric > best_metric {
            best_metric = val_metric;
            best_params.copy_from_slice(model.params());
            best_epoch = epoch;
            best_updates = updates;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break 'epochs;
            }
        }
        if hit_update_cap {
            break;
        }
    }

    Ok(TrainOutcome {
        best_params,
        best_metric,
        best_epoch,
        best_updates,
        final_params: model.params().to_vec(),
        total_updates: updates,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ModelConfig;
    use std::cell::RefCell;

    /// Scripted task: ignores the model, returns a fixed metric sequence.
    struct Scripted {
        metrics: Vec<f64>,
        cursor: RefCell<usize>,
    }

    impl Scripted {
        fn new(metrics: Vec<f64>) -> Scripted {
            Scripted {
                metrics,
                cursor: RefCell::new(0),
            }
        }
    }

    impl TrainTask for Scripted {
        fn len(&self) -> usize {
            4
        }

        fn batch_backward(
            &self,
            _model: &mut Model,
            idx: &[usize],
            _grads: &mut Gradients,
        ) -> Result<f64> {
            Ok(idx.len() as f64 * 0.5)
        }

        fn evaluate(&self, _model: &Model) -> Result<f64> {
            let mut cursor = self.cursor.borrow_mut();
            let m = self.metrics[(*cursor).min(self.metrics.len() - 1)];
            *cursor += 1;
            Ok(m)
        }
    }

    fn tiny_model() -> Model {
        Model::new(ModelConfig {
            vocab_size: 5,
            max_len: 4,
            d_input: 4,
            d_output: 4,
            layers: 0,
            heads: 1,
            ffn_dim: 4,
            dropout: 0.0,
            seed: 0,
        })
        .unwrap()
    }

    fn base_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            epochs: 8,
            max_updates: None,
            max_grad_norm: Some(1.0),
            patience: 5,
            lookahead: None,
            metric: EvalMetric::Accuracy,
            seed: 1,
        }
    }

    #[test]
    fn strictly_improving_metric_runs_all_epochs() {
        let task = Scripted::new((1..=8).map(|i| i as f64 * 10.0).collect());
        let mut model = tiny_model();
        let out = train_loop(&mut model, &task, &base_config()).unwrap();
        assert_eq!(out.log.len(), 8);
        assert_eq!(out.best_epoch, 8);
        assert_eq!(out.best_metric, 80.0);
    }

    #[test]
    fn flat_metric_stops_after_patience_epochs() {
        let task = Scripted::new(vec![50.0; 20]);
        let mut model = tiny_model();
        let mut config = base_config();
        config.epochs = 20;
        let out = train_loop(&mut model, &task, &config).unwrap();
        // epoch 1 sets the best; 5 stale epochs follow
        assert_eq!(out.log.len(), 6);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn best_metric_equals_max_of_log() {
        let task = Scripted::new(vec![10.0, 40.0, 30.0, 35.0, 20.0, 25.0, 24.0, 23.0]);
        let mut model = tiny_model();
        let mut config = base_config();
        config.epochs = 20;
        let out = train_loop(&mut model, &task, &config).unwrap();
        let max = out.log.iter().map(|r| r.val_metric).fold(f64::MIN, f64::max);
        assert_eq!(out.best_metric, max);
        assert_eq!(out.best_epoch, 2);
        // patience 5 after epoch 2 improvement: epochs 3..7 are stale
        assert_eq!(out.log.len(), 7);
    }

    #[test]
    fn fixed_update_mode_stops_at_the_cap() {
        let task = Scripted::new((1..=50).map(|i| i as f64).collect());
        let mut model = tiny_model();
        let mut config = base_config();
        config.epochs = 100;
        config.max_updates = Some(3);
        let out = train_loop(&mut model, &task, &config).unwrap();
        assert_eq!(out.total_updates, 3);
        assert_eq!(out.log.len(), 2); // 2 updates in epoch 1, cap hits mid-epoch 2
    }

    #[test]
    fn nan_metric_aborts_with_diagnostic() {
        let task = Scripted::new(vec![f64::NAN]);
        let mut model = tiny_model();
        let err = train_loop(&mut model, &task, &base_config()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
