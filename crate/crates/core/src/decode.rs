//! Turn span scores into antecedent/consequent text predictions.
//!
//! The default decoder maximizes the joint pair score log P_s(s) + log P_e(e)
//! over all well-formed pairs: 1 <= s <= e with the length cap, plus — on the
//! consequent side only — the special CLS pair (0, 0), which encodes the
//! no-consequent decision. Ties break toward the smaller start, then the
//! smaller end, so (0, 0) wins exact ties against any real span.

use crate::corpus::CharSpan;
use crate::error::{Error, Result};
use crate::neural::SpanLogits;
use crate::textutil::char_slice;
use crate::tokenizer::TokenSequence;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

/// Length caps in tokens for decoded spans.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeConstraints {
    pub max_antecedent_len: usize,
    pub max_consequent_len: usize,
}

impl Default for DecodeConstraints {
    fn default() -> Self {
        DecodeConstraints {
            max_antecedent_len: 116,
            max_consequent_len: 56,
        }
    }
}

impl DecodeConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.max_antecedent_len == 0 || self.max_consequent_len == 0 {
            return Err(Error::argument("span length caps must be >= 1"));
        }
        Ok(())
    }
}

/// Pair selection rule. Joint maximization guarantees well-formed spans;
/// independent per-row argmax is available for comparison and snaps an
/// inverted end to its start, treating a CLS pick on either consequent row
/// as the no-consequent decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    #[default]
    Joint,
    Independent,
}

/// A decoded consequent span.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsequentPrediction {
    /// Token positions, inclusive.
    pub span: (usize, usize),
    pub text: String,
    pub chars: CharSpan,
}

/// Decoded spans for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    /// Antecedent token positions, inclusive; start >= 1.
    pub antecedent: (usize, usize),
    pub antecedent_text: String,
    pub antecedent_chars: CharSpan,
    /// `None` encodes the (0, 0) no-consequent decision.
    pub consequent: Option<ConsequentPrediction>,
    /// Selected log-probabilities, one per head in row order.
    pub scores: [f64; 4],
}

impl SpanPrediction {
    pub fn no_consequent(&self) -> bool {
        self.consequent.is_none()
    }
}

/// Best (score, start, end) with ties broken by smaller start then smaller
/// end.
#[derive(Debug, Clone, Copy)]
struct Best {
    score: f64,
    start: usize,
    end: usize,
}

impl Best {
    fn better_than(&self, other: &Best) -> bool {
        self.score > other.score
            || (self.score == other.score
                && (self.start < other.start
                    || (self.start == other.start && self.end < other.end)))
    }
}

/// Sliding-window joint maximization over valid (s, e) pairs with
/// s in [max(1, e - max_len + 1), e]. A monotonic deque keeps, for each e,
/// the smallest maximizing start at the front.
fn best_pair(starts: &[f64], ends: &[f64], max_len: usize, init: Option<Best>) -> Option<Best> {
    let n = starts.len();
    let mut best = init;
    let mut window: VecDeque<usize> = VecDeque::new();
    for e in 1..n {
        // strict comparison keeps the earliest index among equal values
        while let Some(&back) = window.back() {
            if starts[back] < starts[e] {
                window.pop_back();
            } else {
                break;
            }
        }
        window.push_back(e);
        let lo = e.saturating_sub(max_len - 1).max(1);
        while let Some(&front) = window.front() {
            if front < lo {
                window.pop_front();
            } else {
                break;
            }
        }
        let s = *window.front().expect("window holds e itself");
        let cand = Best {
            score: starts[s] + ends[e],
            start: s,
            end: e,
        };
        if best.is_none_or(|b| cand.better_than(&b)) {
            best = Some(cand);
        }
    }
    best
}

/// Decode with the default joint strategy.
pub fn decode_spans(
    logits: &SpanLogits,
    seq: &TokenSequence,
    constraints: &DecodeConstraints,
) -> Result<SpanPrediction> {
    decode_spans_with(logits, seq, constraints, DecodeStrategy::Joint)
}

pub fn decode_spans_with(
    logits: &SpanLogits,
    seq: &TokenSequence,
    constraints: &DecodeConstraints,
    strategy: DecodeStrategy,
) -> Result<SpanPrediction> {
    constraints.validate()?;
    let n = logits.len();
    if n != seq.len() {
        return Err(Error::argument(format!(
            "logits cover {n} positions but the sequence has {}",
            seq.len()
        )));
    }
    if n < 2 {
        return Err(Error::Decode(
            "sequence holds only the CLS slot; no valid antecedent position".into(),
        ));
    }
    let [la_s, la_e, lc_s, lc_e] = logits.log_probs();

    let (antecedent, consequent) = match strategy {
        DecodeStrategy::Joint => {
            let ant = best_pair(&la_s, &la_e, constraints.max_antecedent_len, None)
                .expect("n >= 2 guarantees at least the (1, 1) pair");
            let cls = Best {
                score: lc_s[0] + lc_e[0],
                start: 0,
                end: 0,
            };
            let cons = best_pair(&lc_s, &lc_e, constraints.max_consequent_len, Some(cls))
                .expect("initialized with the CLS pair");
            let cons = if cons.start == 0 {
                None
            } else {
                Some((cons.start, cons.end))
            };
            ((ant.start, ant.end), cons)
        }
        DecodeStrategy::Independent => {
            let argmax_from = |row: &[f64], from: usize| -> usize {
                let mut best = from;
                for (i, &v) in row.iter().enumerate().skip(from) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            };
            let a_s = argmax_from(&la_s, 1);
            let mut a_e = argmax_from(&la_e, 1);
            if a_e < a_s {
                a_e = a_s;
            }
            a_e = a_e.min(a_s + constraints.max_antecedent_len - 1);
            let c_s = argmax_from(&lc_s, 0);
            let c_e = argmax_from(&lc_e, 0);
            let cons = if c_s == 0 || c_e == 0 {
                None
            } else {
                let e = c_e.max(c_s).min(c_s + constraints.max_consequent_len - 1);
                Some((c_s, e))
            };
            ((a_s, a_e), cons)
        }
    };

    let (a_s, a_e) = antecedent;
    let antecedent_text = span_to_text(seq, antecedent)?;
    let antecedent_chars = CharSpan::new(seq.offsets[a_s].0, seq.offsets[a_e].1);
    let consequent = match consequent {
        None => None,
        Some((c_s, c_e)) => Some(ConsequentPrediction {
            span: (c_s, c_e),
            text: span_to_text(seq, (c_s, c_e))?,
            chars: CharSpan::new(seq.offsets[c_s].0, seq.offsets[c_e].1),
        }),
    };
    let scores = [
        la_s[a_s],
        la_e[a_e],
        consequent.as_ref().map_or(lc_s[0], |c| lc_s[c.span.0]),
        consequent.as_ref().map_or(lc_e[0], |c| lc_e[c.span.1]),
    ];
    Ok(SpanPrediction {
        antecedent,
        antecedent_text,
        antecedent_chars,
        consequent,
        scores,
    })
}

/// Source substring from the offset start of the first token to the offset
/// end of the last, preserving the original inter-token characters.
pub fn span_to_text(seq: &TokenSequence, span: (usize, usize)) -> Result<String> {
    let (s, e) = span;
    if seq.has_cls && s == 0 {
        return Err(Error::argument("span may not touch the CLS slot"));
    }
    if s > e || e >= seq.len() {
        return Err(Error::argument(format!(
            "token span ({s}, {e}) invalid for sequence of {} tokens",
            seq.len()
        )));
    }
    Ok(char_slice(&seq.source, seq.offsets[s].0, seq.offsets[e].1))
}

/// Prediction file record: strings plus char spans, with the no-consequent
/// case carried as an absent text and the (-1, -1) sentinel on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub antecedent_text: String,
    pub antecedent_chars: CharSpan,
    pub consequent_text: Option<String>,
    pub consequent_chars: Option<CharSpan>,
}

impl PredictionRecord {
    pub fn from_prediction(id: impl Into<String>, pred: &SpanPrediction) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            antecedent_text: pred.antecedent_text.clone(),
            antecedent_chars: pred.antecedent_chars,
            consequent_text: pred.consequent.as_ref().map(|c| c.text.clone()),
            consequent_chars: pred.consequent.as_ref().map(|c| c.chars),
        }
    }

    pub fn no_consequent(&self) -> bool {
        self.consequent_text.is_none()
    }
}

const PREDICTION_HEADER: [&str; 7] = [
    "sentenceID",
    "antecedent",
    "antecedent_startid",
    "antecedent_endid",
    "consequent",
    "consequent_startid",
    "consequent_endid",
];

/// Write predictions as delimited text matching the corpus format.
pub fn save_predictions(path: &Path, records: &[PredictionRecord], delimiter: u8) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    writer
        .write_record(PREDICTION_HEADER)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for r in records {
        let (cs, ce) = match r.consequent_chars {
            Some(c) => (c.start as i64, c.end as i64),
            None => (-1, -1),
        };
        writer
            .write_record([
                r.id.as_str(),
                r.antecedent_text.as_str(),
                &r.antecedent_chars.start.to_string(),
                &r.antecedent_chars.end.to_string(),
                r.consequent_text.as_deref().unwrap_or(""),
                &cs.to_string(),
                &ce.to_string(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

pub fn load_predictions(path: &Path, delimiter: u8) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: None,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<usize> = PREDICTION_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Schema {
                    path: path.display().to_string(),
                    column: name.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: Some(row),
            message: e.to_string(),
        })?;
        let get = |c: usize| -> Result<&str> {
            record
                .get(cols[c])
                .ok_or_else(|| Error::record(row, format!("missing field {c}")))
        };
        let parse_i64 = |s: &str| -> Result<i64> {
            s.trim()
                .parse()
                .map_err(|_| Error::record(row, format!("'{s}' is not an integer")))
        };
        let a_start = parse_i64(get(2)?)?;
        let a_end = parse_i64(get(3)?)?;
        if a_start < 0 || a_end < a_start {
            return Err(Error::record(row, "bad antecedent char span"));
        }
        let c_start = parse_i64(get(5)?)?;
        let c_end = parse_i64(get(6)?)?;
        let (consequent_text, consequent_chars) = match (c_start, c_end) {
            (-1, -1) => (None, None),
            (s, e) if s >= 0 && e >= s => (
                Some(get(4)?.to_string()),
                Some(CharSpan::new(s as usize, e as usize)),
            ),
            _ => return Err(Error::record(row, "bad consequent char span")),
        };
        out.push(PredictionRecord {
            id: get(0)?.to_string(),
            antecedent_text: get(1)?.to_string(),
            antecedent_chars: CharSpan::new(a_start as usize, a_end as usize),
            consequent_text,
            consequent_chars,
        });
    }
    Ok(out)
}
