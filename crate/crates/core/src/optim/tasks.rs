//! Task adapters: turn labeled/span-annotated data into trainable objectives
//! over the encoder model.

use super::train::{EvalMetric, TrainTask};
use crate::corpus::{LabeledSentence, SpanAnnotated};
use crate::decode::{decode_spans, DecodeConstraints, PredictionRecord};
use crate::error::Result;
use crate::eval::{binary_prf, subtask2_report};
use crate::neural::{Gradients, Model, SpanTargets};
use crate::tokenizer::{align_char_span, Tokenizer, TokenSequence, Vocab};

/// What data preparation had to drop: examples whose gold spans could not be
/// aligned, and examples whose aligned targets fall beyond the truncation
/// limit.
#[derive(Debug, Clone, Default)]
pub struct PrepReport {
    pub used: usize,
    pub truncation_lost: Vec<String>,
    pub alignment_failed: Vec<String>,
}

impl PrepReport {
    pub fn summary(&self) -> String {
        format!(
            "{} examples used, {} lost to truncation, {} failed alignment",
            self.used,
            self.truncation_lost.len(),
            self.alignment_failed.len()
        )
    }
}

struct SpanExample {
    ids: Vec<usize>,
    targets: SpanTargets,
}

struct SpanValExample {
    id: String,
    seq: TokenSequence,
}

/// Span-extraction objective: cross-entropy over the four target indices,
/// evaluated by decoding and scoring the full report panel.
pub struct SpanTask {
    train: Vec<SpanExample>,
    val: Vec<SpanValExample>,
    golds: Vec<SpanAnnotated>,
    constraints: DecodeConstraints,
    metric: EvalMetric,
}

impl SpanTask {
    pub fn new(
        train: &[SpanAnnotated],
        val: &[SpanAnnotated],
        tokenizer: &Tokenizer,
        vocab: &Vocab,
        max_len: usize,
        constraints: DecodeConstraints,
        metric: EvalMetric,
    ) -> Result<(SpanTask, PrepReport)> {
        let mut report = PrepReport::default();
        let mut train_examples = Vec::with_capacity(train.len());
        for ex in train {
            match prepare_span_example(ex, tokenizer, vocab, max_len, &mut report) {
                Some(prepared) => train_examples.push(prepared),
                None => continue,
            }
        }
        report.used = train_examples.len();
        let val_examples = val
            .iter()
            .map(|ex| {
                let seq = tokenizer.encode(&ex.text, vocab, true).truncate(max_len)?;
                Ok(SpanValExample {
                    id: ex.id.clone(),
                    seq,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            SpanTask {
                train: train_examples,
                val: val_examples,
                golds: val.to_vec(),
                constraints,
                metric,
            },
            report,
        ))
    }

    /// Decode predictions for the validation set with the current parameters.
    pub fn predict_val(&self, model: &Model) -> Result<Vec<PredictionRecord>> {
        self.val
            .iter()
            .map(|ex| {
                let enc = model.encode_eval(&ex.seq.ids, &vec![0; ex.seq.len()])?;
                let logits = model.span_scores(&enc);
                let pred = decode_spans(&logits, &ex.seq, &self.constraints)?;
                Ok(PredictionRecord::from_prediction(ex.id.clone(), &pred))
            })
            .collect()
    }
}

fn prepare_span_example(
    ex: &SpanAnnotated,
    tokenizer: &Tokenizer,
    vocab: &Vocab,
    max_len: usize,
    report: &mut PrepReport,
) -> Option<SpanExample> {
    let full = tokenizer.encode(&ex.text, vocab, true);
    let antecedent = match align_char_span(&full, (ex.antecedent.start, ex.antecedent.end)) {
        Ok(span) => span,
        Err(_) => {
            report.alignment_failed.push(ex.id.clone());
            return None;
        }
    };
    let consequent = match ex.consequent {
        None => None,
        Some(c) => match align_char_span(&full, (c.start, c.end)) {
            Ok(span) => Some(span),
            Err(_) => {
                report.alignment_failed.push(ex.id.clone());
                return None;
            }
        },
    };
    let seq = full.truncate(max_len).ok()?;
    let kept = seq.len();
    let beyond = antecedent.1 >= kept || consequent.is_some_and(|c| c.1 >= kept);
    if beyond {
        report.truncation_lost.push(ex.id.clone());
        return None;
    }
    let targets = match SpanTargets::new(antecedent, consequent, kept) {
        Ok(t) => t,
        Err(_) => {
            report.alignment_failed.push(ex.id.clone());
            return None;
        }
    };
    Some(SpanExample {
        ids: seq.ids,
        targets,
    })
}

impl TrainTask for SpanTask {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn batch_backward(
        &self,
        model: &mut Model,
        idx: &[usize],
        grads: &mut Gradients,
    ) -> Result<f64> {
        let scale = 1.0 / idx.len() as f64;
        let mut total = 0.0;
        for &i in idx {
            let ex = &self.train[i];
            let segments = vec![0usize; ex.ids.len()];
            let enc = model.encode_train(&ex.ids, &segments)?;
            total += model.backward_span(&enc, &ex.targets, scale, grads)?;
        }
        Ok(total)
    }

    fn evaluate(&self, model: &Model) -> Result<f64> {
        if self.val.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_val(model)?;
        let report = subtask2_report(&preds, &self.golds)?;
        Ok(match self.metric {
            EvalMetric::ExactMatch => report.em,
            EvalMetric::F1 => report.f1,
            EvalMetric::Accuracy => report.acc_no_c,
        })
    }
}

struct ClassifyExample {
    ids: Vec<usize>,
    label: u8,
}

/// Binary detection objective: cross-entropy on the CLS head, evaluated with
/// precision/recall/F1 (or accuracy) at the 0.5 threshold.
pub struct ClassifyTask {
    train: Vec<ClassifyExample>,
    val: Vec<ClassifyExample>,
    metric: EvalMetric,
}

impl ClassifyTask {
    pub fn new(
        train: &[LabeledSentence],
        val: &[LabeledSentence],
        tokenizer: &Tokenizer,
        vocab: &Vocab,
        max_len: usize,
        metric: EvalMetric,
    ) -> Result<ClassifyTask> {
        let prep = |data: &[LabeledSentence]| -> Result<Vec<ClassifyExample>> {
            data.iter()
                .map(|ex| {
                    let seq = tokenizer.encode(&ex.text, vocab, true).truncate(max_len)?;
                    Ok(ClassifyExample {
                        ids: seq.ids,
                        label: ex.label,
                    })
                })
                .collect()
        };
        Ok(ClassifyTask {
            train: prep(train)?,
            val: prep(val)?,
            metric,
        })
    }

    /// Class-1 probabilities for the validation set.
    pub fn predict_val(&self, model: &Model) -> Result<Vec<f64>> {
        self.val
            .iter()
            .map(|ex| {
                let enc = model.encode_eval(&ex.ids, &vec![0; ex.ids.len()])?;
                Ok(model.classify(&enc)[1])
            })
            .collect()
    }
}

impl TrainTask for ClassifyTask {
    fn len(&self) -> usize {
        self.train.len()
    }

    fn batch_backward(
        &self,
        model: &mut Model,
        idx: &[usize],
        grads: &mut Gradients,
    ) -> Result<f64> {
        let scale = 1.0 / idx.len() as f64;
        let mut total = 0.0;
        for &i in idx {
            let ex = &self.train[i];
            let segments = vec![0usize; ex.ids.len()];
            let enc = model.encode_train(&ex.ids, &segments)?;
            total += model.backward_class(&enc, ex.label, scale, grads)?;
        }
        Ok(total)
    }

    fn evaluate(&self, model: &Model) -> Result<f64> {
        if self.val.is_empty() {
            return Ok(0.0);
        }
        let probs = self.predict_val(model)?;
        let preds: Vec<u8> = probs.iter().map(|&p| (p >= 0.5) as u8).collect();
        let golds: Vec<u8> = self.val.iter().map(|ex| ex.label).collect();
        let metrics = binary_prf(&preds, &golds)?;
        Ok(match self.metric {
            EvalMetric::F1 => metrics.f1,
            EvalMetric::Accuracy => metrics.accuracy(),
            EvalMetric::ExactMatch => metrics.accuracy(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::neural::ModelConfig;
    use crate::optim::train::{train_loop, TrainConfig};

    fn small_corpus() -> crate::corpus::SynthCorpus {
        generate_synthetic(&SynthConfig {
            n_examples: 60,
            counterfactual_ratio: 0.5,
            no_consequent_ratio: 0.2,
            seed: 42,
            vocab_size: 40,
        })
        .unwrap()
    }

    #[test]
    fn span_task_prepares_exact_targets_from_synthetic_gold() {
        let corpus = small_corpus();
        let tok = Tokenizer::whitespace();
        let texts: Vec<String> = corpus.spans.iter().map(|s| s.text.clone()).collect();
        let vocab = Vocab::from_corpus(&texts, &tok);
        let (task, report) = SpanTask::new(
            &corpus.spans,
            &corpus.spans,
            &tok,
            &vocab,
            64,
            DecodeConstraints::default(),
            EvalMetric::ExactMatch,
        )
        .unwrap();
        assert_eq!(report.used, corpus.spans.len());
        assert!(report.truncation_lost.is_empty());
        assert!(report.alignment_failed.is_empty());
        assert_eq!(task.len(), corpus.spans.len());
    }

    #[test]
    fn truncation_loss_is_flagged() {
        let long_text = format!("If he had {} , it would have ended well", "x ".repeat(30));
        let ex = SpanAnnotated::new(
            "1".into(),
            long_text.clone(),
            crate::corpus::CharSpan::new(0, 12),
            Some(crate::corpus::CharSpan::new(
                long_text.chars().count() - 25,
                long_text.chars().count(),
            )),
        )
        .unwrap();
        let tok = Tokenizer::whitespace();
        let vocab = Vocab::from_corpus(&[long_text], &tok);
        let (task, report) = SpanTask::new(
            &[ex],
            &[],
            &tok,
            &vocab,
            8,
            DecodeConstraints::default(),
            EvalMetric::ExactMatch,
        )
        .unwrap();
        assert_eq!(task.len(), 0);
        assert_eq!(report.truncation_lost, vec!["1".to_string()]);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let corpus = small_corpus();
        let tok = Tokenizer::whitespace();
        let texts: Vec<String> = corpus.labeled.iter().map(|s| s.text.clone()).collect();
        let vocab = Vocab::from_corpus(&texts, &tok);
        let task = ClassifyTask::new(
            &corpus.labeled[..40],
            &corpus.labeled[40..],
            &tok,
            &vocab,
            32,
            EvalMetric::F1,
        )
        .unwrap();
        let run = |seed: u64| {
            let config = ModelConfig {
                vocab_size: vocab.len(),
                max_len: 32,
                d_input: 16,
                d_output: 16,
                layers: 1,
                heads: 2,
                ffn_dim: 32,
                dropout: 0.1,
                seed,
            };
            let mut model = Model::new(config).unwrap();
            let train_config = TrainConfig {
                batch_size: 8,
                lr: 1e-3,
                epochs: 2,
                seed,
                ..TrainConfig::classification_defaults()
            };
            train_loop(&mut model, &task, &train_config).unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_params, b.final_params);
    }
}
