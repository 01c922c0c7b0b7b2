//! Training machinery: decoupled-weight-decay Adam, the Lookahead wrapper,
//! global gradient-norm clipping, and the epoch loop with patience-based
//! early stopping.

mod tasks;
mod train;

pub use tasks::{ClassifyTask, PrepReport, SpanTask};
pub use train::{train_loop, EpochRecord, EvalMetric, TrainConfig, TrainOutcome, TrainTask};

use crate::error::{Error, Result};
use crate::neural::math::l2_norm;
use serde::{Deserialize, Serialize};

/// Adam with weight decay applied directly to the parameters, outside the
/// adaptive term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moments and the step count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> AdamW {
        AdamW {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update:
    ///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    ///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::argument(format!(
                "optimizer sized for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at flat index {bad}"
            )));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps) + c.lr * c.weight_decay * params[i];
        }
        Ok(())
    }
}

/// Lookahead wrapper settings: sync every `k` inner steps, interpolating slow
/// weights with factor `alpha`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LookaheadConfig {
    pub k: usize,
    pub alpha: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        LookaheadConfig { k: 5, alpha: 0.470 }
    }
}

/// Slow-weight state for the Lookahead wrapper.
#[derive(Debug, Clone)]
pub struct Lookahead {
    pub config: LookaheadConfig,
    slow: Vec<f64>,
    inner_steps: usize,
}

impl Lookahead {
    /// Snapshot the current parameters as the initial slow weights.
    pub fn new(params: &[f64], config: LookaheadConfig) -> Result<Lookahead> {
        if config.k == 0 {
            return Err(Error::argument("lookahead k must be >= 1"));
        }
        if !(0.0 < config.alpha && config.alpha <= 1.0) {
            return Err(Error::argument(format!(
                "lookahead alpha must lie in (0, 1], got {}",
                config.alpha
            )));
        }
        Ok(Lookahead {
            config,
            slow: params.to_vec(),
            inner_steps: 0,
        })
    }

    /// slow <- slow + alpha (fast - slow); fast <- slow.
    pub fn sync(&mut self, fast: &mut [f64]) {
        debug_assert_eq!(fast.len(), self.slow.len());
        for (s, f) in self.slow.iter_mut().zip(fast.iter_mut()) {
            *s += self.config.alpha * (*f - *s);
            *f = *s;
        }
    }

    /// Call after every inner optimizer step; syncs every k-th call and
    /// reports whether a sync happened.
    pub fn post_step(&mut self, fast: &mut [f64]) -> bool {
        self.inner_steps += 1;
        if self.inner_steps.is_multiple_of(self.config.k) {
            self.sync(fast);
            true
        } else {
            false
        }
    }

    pub fn slow_weights(&self) -> &[f64] {
        &self.slow
    }
}

/// Scale gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = l2_norm(grads);
    if norm > max_norm {
        for g in grads.iter_mut() {
            *g = *g * max_norm / norm;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_scalar_first_step_matches_hand_computation() {
        let config = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.02,
        };
        let mut opt = AdamW::new(config, 1);
        let mut theta = [1.0];
        opt.step(&mut theta, &[0.5]).unwrap();
        assert!((theta[0] - 0.8980).abs() < 1e-4, "theta = {}", theta[0]);
    }

    #[test]
    fn zero_decay_matches_plain_adam() {
        let config = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(config.clone(), 1);
        let mut theta = [2.0];
        let g = -0.3;
        opt.step(&mut theta, &[g]).unwrap();
        // plain Adam, one step, by hand
        let m_hat = g; // m/(1-b1) with m = (1-b1) g
        let v_hat = g * g;
        let expect = 2.0 - config.lr * m_hat / (v_hat.sqrt() + config.eps);
        assert!((theta[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_only_the_decay_term() {
        let config = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(config, 1);
        let mut theta = [0.8];
        opt.step(&mut theta, &[0.0]).unwrap();
        assert!((theta[0] - 0.8 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        let mut theta = [0.0, 0.0];
        assert!(opt.step(&mut theta, &[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn lookahead_interpolation_definition() {
        let mut fast = [2.0];
        let mut la = Lookahead::new(&[0.0], LookaheadConfig { k: 1, alpha: 0.5 }).unwrap();
        la.sync(&mut fast);
        assert_eq!(la.slow_weights(), &[1.0]);
        assert_eq!(fast, [1.0]);
    }

    #[test]
    fn alpha_one_makes_sync_a_value_no_op() {
        let mut fast = [3.25, -1.0];
        let mut la = Lookahead::new(&[0.0, 0.0], LookaheadConfig { k: 1, alpha: 1.0 }).unwrap();
        la.sync(&mut fast);
        assert_eq!(fast, [3.25, -1.0]);
        assert_eq!(la.slow_weights(), &[3.25, -1.0]);
    }

    #[test]
    fn repeated_syncs_converge_geometrically_toward_fast() {
        // hold fast at 2 externally; slow halves its distance each sync
        let mut la = Lookahead::new(&[0.0], LookaheadConfig { k: 1, alpha: 0.5 }).unwrap();
        let mut fast = [2.0];
        la.sync(&mut fast);
        assert_eq!(la.slow_weights(), &[1.0]);
        fast = [2.0];
        la.sync(&mut fast);
        assert_eq!(la.slow_weights(), &[1.5]);
    }

    #[test]
    fn post_step_syncs_every_k() {
        let mut la = Lookahead::new(&[0.0], LookaheadConfig { k: 3, alpha: 0.5 }).unwrap();
        let mut fast = [6.0];
        assert!(!la.post_step(&mut fast));
        assert!(!la.post_step(&mut fast));
        assert!(la.post_step(&mut fast));
        assert_eq!(fast, [3.0]);
    }

    #[test]
    fn clip_rescales_to_the_exact_ratio() {
        let mut g = [3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert_eq!(g, [0.6, 0.8]);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut g = [0.3, 0.4];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g, [0.3, 0.4]);
    }

    #[test]
    fn clip_never_increases_the_norm() {
        let mut g: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let before = l2_norm(&g);
        let max_norm = 2.5;
        clip_global_norm(&mut g, max_norm);
        let after = l2_norm(&g);
        assert!(after <= before);
        assert!(after <= max_norm + 1e-12);
    }
}
