//! Scoring: SQuAD1.1-style normalization, exact match, bag-of-tokens F1,
//! binary precision/recall/F1, and the full span report panel.
//!
//! Normalization applies, in order: lowercase; drop punctuation characters
//! (ASCII punctuation plus the Unicode P* categories); drop the articles
//! a/an/the as whole whitespace-delimited words; collapse whitespace runs to
//! single spaces and trim.
//!
//! The overall span EM/F1 aggregation is this toolkit's own definition:
//! per-example EM is the AND of the antecedent and consequent exact matches,
//! per-example F1 is the mean of the two token-F1 values. Both-absent
//! consequents score 1/1, an absence mismatch scores 0/0.

use crate::corpus::SpanAnnotated;
use crate::decode::PredictionRecord;
use crate::error::{Error, Result};
use crate::textutil::is_punctuation;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;

/// Lowercase, strip punctuation, drop articles, collapse whitespace.
pub fn normalize(text: &str) -> String {
    let lowered: String = text.chars().flat_map(char::to_lowercase).collect();
    let stripped: String = lowered.chars().filter(|c| !is_punctuation(*c)).collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 iff the two strings normalize identically.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize(pred) == normalize(gold)
}

/// Bag-of-tokens F1 over whitespace-split normalized strings. Both empty
/// after normalization scores 1; exactly one empty scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize(pred);
    let g = normalize(gold);
    let p_tokens: Vec<&str> = p.split_whitespace().collect();
    let g_tokens: Vec<&str> = g.split_whitespace().collect();
    match (p_tokens.is_empty(), g_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &g_tokens {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &p_tokens {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p_tokens.len() as f64;
    let recall = overlap as f64 / g_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Harmonic mean on the percentage scale; 0 when both inputs are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Binary classification metrics (percentages) with confusion counts;
/// positive class = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl BinaryMetrics {
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.fn_ + self.tn;
        if total == 0 {
            0.0
        } else {
            100.0 * (self.tp + self.tn) as f64 / total as f64
        }
    }

    pub fn to_table(&self) -> String {
        format!(
            "precision {:>6.2}\nrecall    {:>6.2}\nF1        {:>6.2}\naccuracy  {:>6.2}\nTP {} FP {} FN {} TN {}\n",
            self.precision,
            self.recall,
            self.f1,
            self.accuracy(),
            self.tp,
            self.fp,
            self.fn_,
            self.tn
        )
    }
}

/// Standard confusion-matrix metrics over aligned binary label vectors.
pub fn binary_prf(preds: &[u8], golds: &[u8]) -> Result<BinaryMetrics> {
    if preds.len() != golds.len() {
        return Err(Error::argument(format!(
            "{} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        if p > 1 || g > 1 {
            return Err(Error::argument("labels must lie in {0,1}"));
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            _ => unreachable!(),
        }
    }
    let precision = if tp + fp > 0 {
        100.0 * tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        100.0 * tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    Ok(BinaryMetrics {
        precision,
        recall,
        f1: f1_from_pr(precision, recall),
        tp,
        fp,
        fn_,
        tn,
    })
}

/// The span metric panel, all values on the percentage scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub a_em: f64,
    pub a_f1: f64,
    pub c_em: f64,
    pub c_f1: f64,
    pub acc_no_c: f64,
    pub n_examples: usize,
}

impl EvalReport {
    /// Human-readable table with the panel's row names.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("EM", self.em),
            ("F1", self.f1),
            ("A_EM", self.a_em),
            ("A_F1", self.a_f1),
            ("C_EM", self.c_em),
            ("C_F1", self.c_f1),
            ("ACC_no-c", self.acc_no_c),
        ];
        for (name, value) in rows {
            writeln!(out, "{name:<9} {value:>7.2}").expect("write to string");
        }
        writeln!(out, "{:<9} {:>7}", "examples", self.n_examples).expect("write to string");
        out
    }

    /// Structured key=value lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "EM={}\nF1={}\nA_EM={}\nA_F1={}\nC_EM={}\nC_F1={}\nACC_no-c={}\nn_examples={}\n",
            self.em, self.f1, self.a_em, self.a_f1, self.c_em, self.c_f1, self.acc_no_c,
            self.n_examples
        )
    }
}

/// Score span predictions against gold annotations, matching records by id.
pub fn subtask2_report(preds: &[PredictionRecord], golds: &[SpanAnnotated]) -> Result<EvalReport> {
    if preds.len() != golds.len() {
        return Err(Error::argument(format!(
            "{} predictions vs {} gold records",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::argument("cannot score an empty prediction set"));
    }
    let by_id: HashMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::argument("duplicate prediction ids"));
    }

    let n = golds.len() as f64;
    let (mut em, mut f1, mut a_em, mut a_f1, mut c_em, mut c_f1, mut acc) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for gold in golds {
        let pred = by_id.get(gold.id.as_str()).ok_or_else(|| {
            Error::argument(format!("no prediction for gold id '{}'", gold.id))
        })?;
        let gold_ant = gold.antecedent_text();
        let ex_a_em = exact_match(&pred.antecedent_text, &gold_ant) as u8 as f64;
        let ex_a_f1 = token_f1(&pred.antecedent_text, &gold_ant);
        let (ex_c_em, ex_c_f1) = match (&pred.consequent_text, gold.consequent_text()) {
            (None, None) => (1.0, 1.0),
            (Some(p), Some(g)) => (exact_match(p, &g) as u8 as f64, token_f1(p, &g)),
            _ => (0.0, 0.0),
        };
        let ex_acc = (pred.no_consequent() == gold.consequent.is_none()) as u8 as f64;
        a_em += ex_a_em;
        a_f1 += ex_a_f1;
        c_em += ex_c_em;
        c_f1 += ex_c_f1;
        acc += ex_acc;
        em += ex_a_em * ex_c_em;
        f1 += (ex_a_f1 + ex_c_f1) / 2.0;
    }
    Ok(EvalReport {
        em: 100.0 * em / n,
        f1: 100.0 * f1 / n,
        a_em: 100.0 * a_em / n,
        a_f1: 100.0 * a_f1 / n,
        c_em: 100.0 * c_em / n,
        c_f1: 100.0 * c_f1 / n,
        acc_no_c: 100.0 * acc / n,
        n_examples: golds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CharSpan;
    use proptest::prelude::*;

    #[test]
    fn normalize_applies_all_four_rules() {
        assert_eq!(normalize("An apple, the Pie!"), "apple pie");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("  many   spaces  "), "many spaces");
        assert_eq!(normalize("don't"), "dont");
        assert_eq!(normalize("A An The"), "");
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match(
            "The gunman was diabolical.",
            "gunman was diabolical"
        ));
        assert!(exact_match("same", "same"));
        assert!(!exact_match("cat", "dog"));
    }

    #[test]
    fn token_f1_multiset_overlap() {
        // "the cat sat" vs "cat sat down": P = 1, R = 2/3, F1 = 0.8
        let f1 = token_f1("the cat sat", "cat sat down");
        assert!((f1 - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("same words", "same words"), 1.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("something", ""), 0.0);
        assert_eq!(token_f1("abc", "xyz"), 0.0);
    }

    #[test]
    fn token_f1_counts_duplicates_once_per_occurrence() {
        // pred has "it" twice, gold once: overlap 1, P = 1/2, R = 1/2
        let f1 = token_f1("it it", "it was");
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binary_prf_worked_example() {
        let m = binary_prf(&[1, 0, 1, 1], &[1, 0, 0, 1]).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 0, 1));
        assert!((m.precision - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.recall, 100.0);
        assert!((m.f1 - 80.0).abs() < 1e-9);
    }

    #[test]
    fn binary_prf_perfect_predictions() {
        let m = binary_prf(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn harmonic_mean_reproduces_the_reported_baseline_f1() {
        // P = 80.55, R = 8.19 -> F1 = 14.87
        let f1 = f1_from_pr(80.55, 8.19);
        assert!((f1 - 14.87).abs() < 0.01, "f1 = {f1}");
    }

    #[test]
    fn binary_prf_rejects_misaligned_or_bad_labels() {
        assert!(binary_prf(&[1, 0], &[1]).is_err());
        assert!(binary_prf(&[2], &[1]).is_err());
    }

    fn gold(id: &str, text: &str, a: (usize, usize), c: Option<(usize, usize)>) -> SpanAnnotated {
        SpanAnnotated::new(
            id.into(),
            text.into(),
            CharSpan::new(a.0, a.1),
            c.map(|(s, e)| CharSpan::new(s, e)),
        )
        .unwrap()
    }

    fn pred(id: &str, a: &str, c: Option<&str>) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            antecedent_text: a.into(),
            antecedent_chars: CharSpan::new(0, 1),
            consequent_text: c.map(String::from),
            consequent_chars: c.map(|_| CharSpan::new(0, 1)),
        }
    }

    #[test]
    fn report_all_correct_is_all_100() {
        let golds = vec![
            gold("1", "If it had rained, we would have stayed", (0, 16), Some((18, 38))),
            gold("2", "If only it had rained", (0, 21), None),
        ];
        let preds = vec![
            pred("1", "If it had rained", Some("we would have stayed")),
            pred("2", "If only it had rained", None),
        ];
        let r = subtask2_report(&preds, &golds).unwrap();
        assert_eq!(
            (r.em, r.f1, r.a_em, r.a_f1, r.c_em, r.c_f1, r.acc_no_c),
            (100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn absence_mismatch_scores_zero_on_consequent_fields() {
        let golds = vec![gold(
            "1",
            "If it had rained, we would have stayed",
            (0, 16),
            Some((18, 38)),
        )];
        let preds = vec![pred("1", "If it had rained", None)];
        let r = subtask2_report(&preds, &golds).unwrap();
        assert_eq!(r.c_em, 0.0);
        assert_eq!(r.c_f1, 0.0);
        assert_eq!(r.acc_no_c, 0.0);
        assert_eq!(r.a_em, 100.0);
        assert_eq!(r.em, 0.0);
    }

    #[test]
    fn two_example_aggregation_matches_hand_computation() {
        // one fully correct; one with only the antecedent correct
        // (consequent present in both but wrong)
        let golds = vec![
            gold("1", "If it had rained, we would have stayed", (0, 16), Some((18, 38))),
            gold("2", "If he had left, she would have won", (0, 14), Some((16, 34))),
        ];
        let preds = vec![
            pred("1", "If it had rained", Some("we would have stayed")),
            pred("2", "If he had left", Some("completely wrong clause")),
        ];
        let r = subtask2_report(&preds, &golds).unwrap();
        assert_eq!(r.em, 50.0);
        assert_eq!(r.a_em, 100.0);
        assert_eq!(r.acc_no_c, 100.0);
        assert_eq!(r.c_em, 50.0);
    }

    #[test]
    fn report_matches_by_id_not_order() {
        let golds = vec![
            gold("a", "If x had y, z would have w", (0, 10), None),
            gold("b", "If only q had r", (0, 15), None),
        ];
        let preds = vec![
            pred("b", "If only q had r", None),
            pred("a", "If x had y", None),
        ];
        let r = subtask2_report(&preds, &golds).unwrap();
        assert_eq!(r.a_em, 100.0);

        let missing = vec![
            pred("a", "If x had y", None),
            pred("zzz", "nope", None),
        ];
        assert!(subtask2_report(&missing, &golds).is_err());
    }

    proptest! {
        /// normalize is idempotent and never lengthens a string.
        #[test]
        fn normalize_idempotent(s in "\\PC{0,60}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
            prop_assert!(once.chars().count() <= s.chars().count());
        }

        /// exact match implies token F1 = 1.
        #[test]
        fn em_implies_f1_one(a in "[a-zA-Z ,.]{0,30}", b in "[a-zA-Z ,.]{0,30}") {
            if exact_match(&a, &b) {
                prop_assert_eq!(token_f1(&a, &b), 1.0);
            }
            let f1 = token_f1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&f1));
        }

        /// F1 = 2PR/(P+R) identity on binary metrics.
        #[test]
        fn f1_identity(preds in proptest::collection::vec(0u8..2, 1..40), seed in 0u64..99) {
            let golds: Vec<u8> = preds.iter().map(|&p| p ^ ((seed % 2) as u8)).collect();
            let m = binary_prf(&preds, &golds).unwrap();
            if m.precision + m.recall > 0.0 {
                let expect = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - expect).abs() < 1e-10);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }
    }
}
