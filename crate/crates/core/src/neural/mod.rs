//! Mini transformer encoder with the two task heads.
//!
//! The encoder is a pre-norm multi-head self-attention stack over summed
//! token/segment/position embeddings. Two heads sit on the (dropout-applied)
//! encoder output H: a 2-way classifier on the CLS row, and four span score
//! rows (antecedent start/end, consequent start/end) obtained by dotting each
//! H row with a learned weight vector. The backward pass is written by hand
//! and checked against central finite differences ([`grad_check`]).

pub(crate) mod math;

mod checkpoint;
mod gradcheck;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_detailed};
pub use model::{Encoded, Gradients, Model, ModelConfig};

use crate::error::{Error, Result};
use math::log_softmax_row;

/// The four span heads, in the fixed row order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanHead {
    AntecedentStart = 0,
    AntecedentEnd = 1,
    ConsequentStart = 2,
    ConsequentEnd = 3,
}

pub const SPAN_HEADS: [SpanHead; 4] = [
    SpanHead::AntecedentStart,
    SpanHead::AntecedentEnd,
    SpanHead::ConsequentStart,
    SpanHead::ConsequentEnd,
];

impl SpanHead {
    pub fn name(&self) -> &'static str {
        match self {
            SpanHead::AntecedentStart => "a_s",
            SpanHead::AntecedentEnd => "a_e",
            SpanHead::ConsequentStart => "c_s",
            SpanHead::ConsequentEnd => "c_e",
        }
    }

    pub fn from_name(name: &str) -> Option<SpanHead> {
        SPAN_HEADS.iter().copied().find(|h| h.name() == name)
    }
}

/// Four length-L score rows. Position 0 (the CLS slot) is masked to -inf on
/// the antecedent rows and kept live on the consequent rows, where it encodes
/// the no-consequent option.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanLogits {
    len: usize,
    rows: [Vec<f64>; 4],
}

impl SpanLogits {
    /// Build from raw rows; the antecedent mask is applied here.
    pub fn new(
        a_start: Vec<f64>,
        a_end: Vec<f64>,
        c_start: Vec<f64>,
        c_end: Vec<f64>,
    ) -> Result<SpanLogits> {
        let len = a_start.len();
        if len < 2 {
            return Err(Error::argument("span logits need at least 2 positions"));
        }
        for (row, name) in [(&a_end, "a_e"), (&c_start, "c_s"), (&c_end, "c_e")] {
            if row.len() != len {
                return Err(Error::argument(format!(
                    "row {name} has length {} but a_s has {len}",
                    row.len()
                )));
            }
        }
        let mut rows = [a_start, a_end, c_start, c_end];
        rows[0][0] = f64::NEG_INFINITY;
        rows[1][0] = f64::NEG_INFINITY;
        Ok(SpanLogits { len, rows })
    }

    /// Build from per-row probability distributions (ensemble fusion output).
    /// Probabilities enter decode unchanged because log of a normalized row is
    /// its own log-softmax.
    pub fn from_probabilities(rows: [Vec<f64>; 4]) -> Result<SpanLogits> {
        let [a_s, a_e, c_s, c_e] = rows;
        let to_log = |row: Vec<f64>| row.into_iter().map(f64::ln).collect();
        SpanLogits::new(to_log(a_s), to_log(a_e), to_log(c_s), to_log(c_e))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // constructor enforces len >= 2
    }

    pub fn row(&self, head: SpanHead) -> &[f64] {
        &self.rows[head as usize]
    }

    /// Per-row log-softmax; masked entries stay -inf.
    pub fn log_probs(&self) -> [Vec<f64>; 4] {
        [
            log_softmax_row(&self.rows[0]),
            log_softmax_row(&self.rows[1]),
            log_softmax_row(&self.rows[2]),
            log_softmax_row(&self.rows[3]),
        ]
    }

    /// Per-row softmax.
    pub fn probs(&self) -> [Vec<f64>; 4] {
        self.log_probs().map(|row| row.into_iter().map(f64::exp).collect())
    }
}

/// Gold token indices for the four heads; the no-consequent case is the
/// (0, 0) pair on the consequent side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanTargets {
    pub a_start: usize,
    pub a_end: usize,
    pub c_start: usize,
    pub c_end: usize,
}

impl SpanTargets {
    pub fn new(
        antecedent: (usize, usize),
        consequent: Option<(usize, usize)>,
        len: usize,
    ) -> Result<SpanTargets> {
        let (a_s, a_e) = antecedent;
        if !(1 <= a_s && a_s <= a_e && a_e < len) {
            return Err(Error::argument(format!(
                "antecedent targets ({a_s}, {a_e}) must satisfy 1 <= start <= end < {len}"
            )));
        }
        let (c_s, c_e) = match consequent {
            None => (0, 0),
            Some((s, e)) => {
                if !(1 <= s && s <= e && e < len) {
                    return Err(Error::argument(format!(
                        "consequent targets ({s}, {e}) must satisfy 1 <= start <= end < {len}"
                    )));
                }
                (s, e)
            }
        };
        Ok(SpanTargets {
            a_start: a_s,
            a_end: a_e,
            c_start: c_s,
            c_end: c_e,
        })
    }

    pub fn no_consequent(&self) -> bool {
        self.c_start == 0 && self.c_end == 0
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.a_start, self.a_end, self.c_start, self.c_end]
    }
}

/// Span loss for one example: the sum over the four heads of the negative
/// log-probability of the target index.
pub fn span_loss(logits: &SpanLogits, targets: &SpanTargets) -> Result<f64> {
    let len = logits.len();
    for (head, &t) in SPAN_HEADS.iter().zip(targets.as_array().iter()) {
        if t >= len {
            return Err(Error::argument(format!(
                "target {t} for head {} out of range (len {len})",
                head.name()
            )));
        }
    }
    if targets.a_start == 0 || targets.a_end == 0 {
        return Err(Error::argument(
            "antecedent target 0 selects the masked CLS position",
        ));
    }
    let log_probs = logits.log_probs();
    let mut loss = 0.0;
    for (row, &t) in log_probs.iter().zip(targets.as_array().iter()) {
        loss -= row[t];
    }
    Ok(loss)
}

/// 2-way cross-entropy from class probabilities.
pub fn cross_entropy2(probs: [f64; 2], label: u8) -> f64 {
    -probs[label as usize].ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_logits(len: usize) -> SpanLogits {
        SpanLogits::new(vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]).unwrap()
    }

    #[test]
    fn uniform_rows_at_len4_hit_the_closed_form() {
        // Consequent heads are uniform over 4, antecedent heads over 3.
        let logits = uniform_logits(4);
        let targets = SpanTargets::new((1, 2), Some((2, 3)), 4).unwrap();
        let loss = span_loss(&logits, &targets).unwrap();
        let expected = 2.0 * 4.0f64.ln() + 2.0 * 3.0f64.ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn one_hot_correct_predictions_give_zero_loss() {
        let len = 6;
        let targets = SpanTargets::new((2, 4), None, len).unwrap();
        let mut rows: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
        for (row, &t) in rows.iter_mut().zip(targets.as_array().iter()) {
            row[t] = 1e4;
        }
        let [a_s, a_e, c_s, c_e] = rows;
        let logits = SpanLogits::new(a_s, a_e, c_s, c_e).unwrap();
        let loss = span_loss(&logits, &targets).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn no_consequent_target_with_mass_at_cls_has_zero_consequent_term() {
        let len = 5;
        let mut c_start = vec![0.0; len];
        let mut c_end = vec![0.0; len];
        c_start[0] = 1e4;
        c_end[0] = 1e4;
        let logits = SpanLogits::new(vec![0.0; len], vec![0.0; len], c_start, c_end).unwrap();
        let targets = SpanTargets::new((1, 1), None, len).unwrap();
        let loss = span_loss(&logits, &targets).unwrap();
        // antecedent heads are uniform over len-1; consequent contributes ~0
        let expected = 2.0 * ((len - 1) as f64).ln();
        assert!((loss - expected).abs() < 1e-9);
    }

    #[test]
    fn masked_antecedent_target_is_rejected() {
        let logits = uniform_logits(4);
        assert!(SpanTargets::new((0, 2), None, 4).is_err());
        // bypass the constructor to hit span_loss's own check
        let targets = SpanTargets {
            a_start: 0,
            a_end: 2,
            c_start: 0,
            c_end: 0,
        };
        assert!(span_loss(&logits, &targets).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_with_masking() {
        let logits = SpanLogits::new(
            vec![0.3, -1.0, 2.0, 0.5],
            vec![1.0, 0.0, 0.0, -2.0],
            vec![0.0, 1.0, -1.0, 0.2],
            vec![-0.5, 0.1, 0.4, 0.0],
        )
        .unwrap();
        let probs = logits.probs();
        for row in &probs {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // antecedent rows carry no mass at the CLS slot
        assert_eq!(probs[0][0], 0.0);
        assert_eq!(probs[1][0], 0.0);
    }

    #[test]
    fn span_loss_is_never_negative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let len = rng.random_range(2..=10usize);
            let rows: [Vec<f64>; 4] = std::array::from_fn(|_| {
                (0..len).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect()
            });
            let [a, b, c, d] = rows;
            let logits = SpanLogits::new(a, b, c, d).unwrap();
            let a_s = rng.random_range(1..len);
            let a_e = rng.random_range(a_s..len);
            let targets = SpanTargets::new((a_s, a_e), None, len).unwrap();
            let loss = span_loss(&logits, &targets).unwrap();
            assert!(loss >= 0.0, "negative span loss {loss}");
        }
    }

    #[test]
    fn targets_validate_ordering() {
        assert!(SpanTargets::new((3, 2), None, 6).is_err());
        assert!(SpanTargets::new((1, 5), Some((0, 2)), 6).is_err());
        assert!(SpanTargets::new((1, 5), Some((2, 7)), 6).is_err());
        let t = SpanTargets::new((1, 5), None, 6).unwrap();
        assert!(t.no_consequent());
    }
}
