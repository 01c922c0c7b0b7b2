//! Classical detection baselines: TF-IDF features with a linear SVM trained
//! by hinge-loss subgradient descent, Gaussian Naive Bayes, and a 6-layer
//! MLP (64 units per layer).
//!
//! Feature defaults: unigrams, lowercased whitespace/punctuation tokens, raw
//! term counts, idf(t) = ln((1+N)/(1+df(t))) + 1, L2-normalized document
//! vectors.

use crate::error::{Error, Result};
use crate::neural::math::{add_bias, bias_grad, mm_nn, mm_nt, mm_tn, softmax_row};
use crate::tokenizer::Tokenizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

/// Document-vector normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    None,
}

/// Fitted TF-IDF vocabulary and weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfModel {
    /// term -> dense column index (sorted term order)
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub norm: Norm,
}

fn feature_tokens(text: &str) -> Vec<String> {
    let tok = Tokenizer::whitespace();
    tok.tokenize(&text.to_lowercase()).tokens
}

/// Fit idf weights over a corpus; terms occurring in fewer than `min_df`
/// documents are dropped.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], min_df: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Fit("empty corpus".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen: Vec<String> = feature_tokens(doc.as_ref());
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    df.retain(|_, &mut count| count >= min_df.max(1));
    if df.is_empty() {
        return Err(Error::Fit(
            "vocabulary is empty after min_df filtering".into(),
        ));
    }
    let n = corpus.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (col, (term, count)) in df.into_iter().enumerate() {
        vocabulary.insert(term, col);
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        norm: Norm::L2,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Dense tf-idf vector; out-of-vocabulary terms are ignored.
    pub fn transform(&self, text: &str) -> Vec<f64> {
        let mut vec = vec![0.0; self.dim()];
        for token in feature_tokens(text) {
            if let Some(&col) = self.vocabulary.get(&token) {
                vec[col] += 1.0;
            }
        }
        for (col, v) in vec.iter_mut().enumerate() {
            *v *= self.idf[col];
        }
        if self.norm == Norm::L2 {
            let norm: f64 = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut vec {
                    *v /= norm;
                }
            }
        }
        vec
    }

    pub fn transform_all<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<f64>> {
        texts.iter().map(|t| self.transform(t.as_ref())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::config(format!("cannot serialize tf-idf model: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TfidfModel> {
        let content = std::fs::read_to_string(path)?;
        serde_json::from_str(&content).map_err(|e| Error::Parse {
            row: None,
            message: format!("bad tf-idf model: {e}"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Svm,
    Nb,
    Mlp,
}

impl ClassifierKind {
    pub fn parse(s: &str) -> Result<ClassifierKind> {
        match s {
            "svm" => Ok(ClassifierKind::Svm),
            "nb" => Ok(ClassifierKind::Nb),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(Error::argument(format!("unknown classifier kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Nb => "nb",
            ClassifierKind::Mlp => "mlp",
        }
    }
}

/// Training hyperparameters shared by the iterative baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineHyper {
    pub epochs: usize,
    pub lr: f64,
    /// L2 regularization strength (SVM only).
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineHyper {
    fn default() -> Self {
        BaselineHyper {
            epochs: 50,
            lr: 0.5,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Linear model trained by hinge-loss subgradient descent with L2 decay.
/// Scores map to probabilities through a logistic link.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective value per epoch; non-increasing by step-halving.
    pub objective_log: Vec<f64>,
    l2: f64,
}

impl LinearSvm {
    fn objective(&self, features: &[Vec<f64>], y: &[f64]) -> f64 {
        let hinge: f64 = features
            .iter()
            .zip(y)
            .map(|(x, &yi)| (1.0 - yi * self.score(x)).max(0.0))
            .sum::<f64>()
            / y.len() as f64;
        hinge + 0.5 * self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    fn fit(features: &[Vec<f64>], labels: &[u8], hp: &BaselineHyper) -> LinearSvm {
        let dim = features[0].len();
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let mut model = LinearSvm {
            weights: vec![0.0; dim],
            bias: 0.0,
            objective_log: Vec::with_capacity(hp.epochs),
            l2: hp.l2,
        };
        let n = features.len() as f64;
        let mut lr = hp.lr;
        let mut current = model.objective(features, &y);
        for _ in 0..hp.epochs {
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for (w, g) in model.weights.iter().zip(grad_w.iter_mut()) {
                *g = hp.l2 * w;
            }
            for (x, &yi) in features.iter().zip(&y) {
                if yi * model.score(x) < 1.0 {
                    for (g, v) in grad_w.iter_mut().zip(x) {
                        *g -= yi * v / n;
                    }
                    grad_b -= yi / n;
                }
            }
            // step halving keeps the objective monotone
            let mut accepted = false;
            for _ in 0..40 {
                let trial_w: Vec<f64> = model
                    .weights
                    .iter()
                    .zip(&grad_w)
                    .map(|(w, g)| w - lr * g)
                    .collect();
                let trial_b = model.bias - lr * grad_b;
                let trial = LinearSvm {
                    weights: trial_w,
                    bias: trial_b,
                    objective_log: Vec::new(),
                    l2: hp.l2,
                };
                let obj = trial.objective(features, &y);
                if obj <= current + 1e-12 {
                    model.weights = trial.weights;
                    model.bias = trial.bias;
                    current = obj;
                    accepted = true;
                    break;
                }
                lr /= 2.0;
            }
            if !accepted {
                // no descent step at any tried scale; we are at a minimizer
                model.objective_log.push(current);
                break;
            }
            model.objective_log.push(current);
        }
        model
    }
}

/// Gaussian Naive Bayes with a variance floor.
#[derive(Debug, Clone)]
pub struct GaussianNb {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
}

impl GaussianNb {
    #[allow(clippy::needless_range_loop)]
    fn fit(features: &[Vec<f64>], labels: &[u8]) -> GaussianNb {
        let dim = features[0].len();
        let mut counts = [0usize; 2];
        let mut means = [vec![0.0; dim], vec![0.0; dim]];
        for (x, &l) in features.iter().zip(labels) {
            counts[l as usize] += 1;
            for (m, v) in means[l as usize].iter_mut().zip(x) {
                *m += v;
            }
        }
        for c in 0..2 {
            for m in &mut means[c] {
                *m /= counts[c] as f64;
            }
        }
        let mut vars = [vec![0.0; dim], vec![0.0; dim]];
        for (x, &l) in features.iter().zip(labels) {
            let c = l as usize;
            for j in 0..dim {
                let d = x[j] - means[c][j];
                vars[c][j] += d * d;
            }
        }
        for c in 0..2 {
            for v in &mut vars[c] {
                *v /= counts[c] as f64;
            }
        }
        // variance floor relative to the largest total-data feature variance
        let mut grand_mean = vec![0.0; dim];
        for x in features {
            for (g, v) in grand_mean.iter_mut().zip(x) {
                *g += v;
            }
        }
        for g in &mut grand_mean {
            *g /= features.len() as f64;
        }
        let mut max_var: f64 = 0.0;
        for j in 0..dim {
            let v = features
                .iter()
                .map(|x| (x[j] - grand_mean[j]).powi(2))
                .sum::<f64>()
                / features.len() as f64;
            max_var = max_var.max(v);
        }
        let floor = (1e-9 * max_var).max(1e-12);
        for c in 0..2 {
            for v in &mut vars[c] {
                *v += floor;
            }
        }
        GaussianNb {
            priors: [
                counts[0] as f64 / features.len() as f64,
                counts[1] as f64 / features.len() as f64,
            ],
            means,
            vars,
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn log_likelihood(&self, x: &[f64], class: usize) -> f64 {
        let mut ll = self.priors[class].ln();
        for j in 0..x.len() {
            let var = self.vars[class][j];
            let d = x[j] - self.means[class][j];
            ll += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
        }
        ll
    }

    fn proba(&self, x: &[f64]) -> [f64; 2] {
        let mut row = vec![self.log_likelihood(x, 0), self.log_likelihood(x, 1)];
        softmax_row(&mut row);
        [row[0], row[1]]
    }
}

/// Six hidden layers of 64 rectified units and a 2-way softmax output,
/// trained by mini-batch gradient descent on cross-entropy.
#[derive(Debug, Clone)]
pub struct MlpClassifier {
    /// (weights in×out, bias out) per layer, hidden layers first.
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub(crate) dims: Vec<usize>,
}

pub const MLP_HIDDEN_LAYERS: usize = 6;
pub const MLP_HIDDEN_UNITS: usize = 64;

impl MlpClassifier {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.dims[1..self.dims.len() - 1].to_vec()
    }

    fn new(input_dim: usize, seed: u64) -> MlpClassifier {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(MLP_HIDDEN_UNITS, MLP_HIDDEN_LAYERS));
        dims.push(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (weights, vec![0.0; fan_out])
            })
            .collect();
        MlpClassifier { layers, dims }
    }

    /// Forward pass; returns per-layer post-activation values (index 0 is the
    /// input batch).
    fn forward(&self, batch: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![batch.to_vec()];
        for (li, (w, b)) in self.layers.iter().enumerate() {
            let (d_in, d_out) = (self.dims[li], self.dims[li + 1]);
            let mut z = vec![0.0; rows * d_out];
            mm_nn(&mut z, acts.last().expect("input pushed"), w, rows, d_in, d_out, false);
            add_bias(&mut z, b, rows, d_out);
            if li + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    fn proba(&self, x: &[f64]) -> [f64; 2] {
        let acts = self.forward(x, 1);
        let mut logits = acts.last().expect("output layer").clone();
        softmax_row(&mut logits);
        [logits[0], logits[1]]
    }

    fn fit(features: &[Vec<f64>], labels: &[u8], hp: &BaselineHyper) -> MlpClassifier {
        let dim = features[0].len();
        let mut model = MlpClassifier::new(dim, hp.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5DEECE66D);
        let mut order: Vec<usize> = (0..features.len()).collect();
        for _ in 0..hp.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(hp.batch_size) {
                model.sgd_batch(features, labels, chunk, hp.lr);
            }
        }
        model
    }

    fn sgd_batch(&mut self, features: &[Vec<f64>], labels: &[u8], idx: &[usize], lr: f64) {
        let rows = idx.len();
        let dim = self.dims[0];
        let mut batch = vec![0.0; rows * dim];
        for (r, &i) in idx.iter().enumerate() {
            batch[r * dim..(r + 1) * dim].copy_from_slice(&features[i]);
        }
        let acts = self.forward(&batch, rows);

        // softmax cross-entropy gradient at the output
        let mut delta = acts.last().expect("output layer").clone();
        for r in 0..rows {
            let row = &mut delta[r * 2..(r + 1) * 2];
            softmax_row(row);
            row[labels[idx[r]] as usize] -= 1.0;
            row[0] /= rows as f64;
            row[1] /= rows as f64;
        }

        for li in (0..self.layers.len()).rev() {
            let (d_in, d_out) = (self.dims[li], self.dims[li + 1]);
            let input = &acts[li];
            let mut dw = vec![0.0; d_in * d_out];
            mm_tn(&mut dw, input, &delta, d_in, rows, d_out, false);
            let mut db = vec![0.0; d_out];
            bias_grad(&mut db, &delta, rows, d_out);
            let mut d_input = vec![0.0; rows * d_in];
            if li > 0 {
                mm_nt(&mut d_input, &delta, &self.layers[li].0, rows, d_out, d_in, false);
                for (g, &a) in d_input.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let (w, b) = &mut self.layers[li];
            for (wv, g) in w.iter_mut().zip(&dw) {
                *wv -= lr * g;
            }
            for (bv, g) in b.iter_mut().zip(&db) {
                *bv -= lr * g;
            }
            delta = d_input;
        }
    }
}

/// A fitted baseline classifier.
#[derive(Debug, Clone)]
pub enum Classifier {
    Svm(LinearSvm),
    Nb(GaussianNb),
    Mlp(MlpClassifier),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Svm(_) => ClassifierKind::Svm,
            Classifier::Nb(_) => ClassifierKind::Nb,
            Classifier::Mlp(_) => ClassifierKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Svm(m) => m.weights.len(),
            Classifier::Nb(m) => m.means[0].len(),
            Classifier::Mlp(m) => m.dims[0],
        }
    }
}

/// Train the requested classifier on aligned features/labels.
pub fn train_classifier(
    kind: ClassifierKind,
    features: &[Vec<f64>],
    labels: &[u8],
    hp: &BaselineHyper,
) -> Result<Classifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::argument(
            "features and labels must align and be non-empty",
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::argument("labels must lie in {0,1}"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::argument("feature rows have inconsistent dimensions"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Fit(
            "training set contains a single class; cannot fit a classifier".into(),
        ));
    }
    Ok(match kind {
        ClassifierKind::Svm => Classifier::Svm(LinearSvm::fit(features, labels, hp)),
        ClassifierKind::Nb => Classifier::Nb(GaussianNb::fit(features, labels)),
        ClassifierKind::Mlp => Classifier::Mlp(MlpClassifier::fit(features, labels, hp)),
    })
}

/// P(label = 1 | x); the decision threshold for hard labels is 0.5.
pub fn predict_proba(classifier: &Classifier, x: &[f64]) -> Result<f64> {
    if x.len() != classifier.input_dim() {
        return Err(Error::argument(format!(
            "feature dimension {} does not match training dimension {}",
            x.len(),
            classifier.input_dim()
        )));
    }
    Ok(match classifier {
        Classifier::Svm(m) => 1.0 / (1.0 + (-m.score(x)).exp()),
        Classifier::Nb(m) => m.proba(x)[1],
        Classifier::Mlp(m) => m.proba(x)[1],
    })
}

pub fn predict_label(classifier: &Classifier, x: &[f64]) -> Result<u8> {
    Ok((predict_proba(classifier, x)? >= 0.5) as u8)
}

#[derive(Serialize, Deserialize)]
struct BaselineHeader {
    kind: ClassifierKind,
    shapes: Vec<(usize, usize)>,
    seed: u64,
}

/// Checkpoint: JSON header (kind, shapes, seed) then the flat arrays as
/// little-endian f64 bytes in declared order.
pub fn save_classifier(classifier: &Classifier, seed: u64, path: &Path) -> Result<()> {
    let (shapes, arrays): (Vec<(usize, usize)>, Vec<&[f64]>) = match classifier {
        Classifier::Svm(m) => (
            vec![(1, m.weights.len()), (1, 1)],
            vec![m.weights.as_slice(), std::slice::from_ref(&m.bias)],
        ),
        Classifier::Nb(m) => (
            vec![
                (1, 2),
                (1, m.means[0].len()),
                (1, m.means[1].len()),
                (1, m.vars[0].len()),
                (1, m.vars[1].len()),
            ],
            vec![
                m.priors.as_slice(),
                m.means[0].as_slice(),
                m.means[1].as_slice(),
                m.vars[0].as_slice(),
                m.vars[1].as_slice(),
            ],
        ),
        Classifier::Mlp(m) => {
            let mut shapes = Vec::new();
            let mut arrays: Vec<&[f64]> = Vec::new();
            for (li, (w, b)) in m.layers.iter().enumerate() {
                shapes.push((m.dims[li], m.dims[li + 1]));
                arrays.push(w.as_slice());
                shapes.push((1, b.len()));
                arrays.push(b.as_slice());
            }
            (shapes, arrays)
        }
    };
    let header = BaselineHeader {
        kind: classifier.kind(),
        shapes,
        seed,
    };
    let mut buf = Vec::new();
    writeln!(
        buf,
        "{}",
        serde_json::to_string(&header)
            .map_err(|e| Error::config(format!("cannot serialize baseline header: {e}")))?
    )?;
    for arr in arrays {
        for v in arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            row: Some(1),
            message: "missing baseline header".into(),
        })?;
    let header: BaselineHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Parse {
            row: Some(1),
            message: format!("bad baseline header: {e}"),
        })?;
    let mut values = bytes[newline + 1..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let expected: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
    if bytes[newline + 1..].len() != expected * 8 {
        return Err(Error::Parse {
            row: None,
            message: "baseline payload size mismatch".into(),
        });
    }
    let mut take = |len: usize| -> Vec<f64> { values.by_ref().take(len).collect() };
    Ok(match header.kind {
        ClassifierKind::Svm => {
            let w_len = header.shapes[0].1;
            let weights = take(w_len);
            let bias = take(1)[0];
            Classifier::Svm(LinearSvm {
                weights,
                bias,
                objective_log: Vec::new(),
                l2: 0.0,
            })
        }
        ClassifierKind::Nb => {
            let priors_v = take(2);
            let dim = header.shapes[1].1;
            Classifier::Nb(GaussianNb {
                priors: [priors_v[0], priors_v[1]],
                means: [take(dim), take(dim)],
                vars: [take(dim), take(dim)],
            })
        }
        ClassifierKind::Mlp => {
            let mut layers = Vec::new();
            let mut dims = Vec::new();
            for pair in header.shapes.chunks(2) {
                let (d_in, d_out) = pair[0];
                if dims.is_empty() {
                    dims.push(d_in);
                }
                dims.push(d_out);
                let w = take(d_in * d_out);
                let b = take(pair[1].1);
                layers.push((w, b));
            }
            Classifier::Mlp(MlpClassifier { layers, dims })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idf_values_match_the_formula() {
        let model = fit_tfidf(&["a b", "a"], 1).unwrap();
        let a_col = model.vocabulary["a"];
        let b_col = model.vocabulary["b"];
        assert!((model.idf[a_col] - 1.0).abs() < 1e-12);
        assert!((model.idf[b_col] - (1.5f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn oov_terms_are_ignored_at_transform_time() {
        let model = fit_tfidf(&["known words here"], 1).unwrap();
        let v = model.transform("unknown unknown stuff");
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_document_corpus_has_uniform_idf() {
        let model = fit_tfidf(&["x y z"], 1).unwrap();
        let first = model.idf[0];
        assert!(model.idf.iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn min_df_can_empty_the_vocabulary() {
        assert!(matches!(
            fit_tfidf(&["a b", "c d"], 5),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn transform_is_l2_normalized() {
        let model = fit_tfidf(&["one two two", "three"], 1).unwrap();
        let v = model.transform("one two two");
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    fn separable_toy() -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let off = (i % 5) as f64 * 0.1;
            features.push(vec![1.0 + off, 1.0 - off]);
            labels.push(1);
            features.push(vec![-1.0 - off, -1.0 + off]);
            labels.push(0);
        }
        (features, labels)
    }

    #[test]
    fn svm_separates_a_separable_toy_set() {
        let (features, labels) = separable_toy();
        let clf = train_classifier(
            ClassifierKind::Svm,
            &features,
            &labels,
            &BaselineHyper::default(),
        )
        .unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| predict_label(&clf, x).unwrap() == y)
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn svm_objective_is_non_increasing() {
        let (features, labels) = separable_toy();
        let hp = BaselineHyper {
            epochs: 30,
            ..BaselineHyper::default()
        };
        let clf = train_classifier(ClassifierKind::Svm, &features, &labels, &hp).unwrap();
        let Classifier::Svm(svm) = clf else {
            unreachable!()
        };
        for pair in svm.objective_log.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "objective rose: {pair:?}");
        }
    }

    #[test]
    fn nb_with_identical_class_distributions_follows_priors() {
        // same feature values in both classes, 3:1 prior
        let features = vec![vec![0.5, 0.5]; 8];
        let labels = vec![1, 1, 1, 0, 1, 1, 1, 0];
        let clf = train_classifier(
            ClassifierKind::Nb,
            &features,
            &labels,
            &BaselineHyper::default(),
        )
        .unwrap();
        let p = predict_proba(&clf, &[0.5, 0.5]).unwrap();
        assert!((p - 0.75).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn nb_probabilities_sum_to_one() {
        let (features, labels) = separable_toy();
        let clf = train_classifier(
            ClassifierKind::Nb,
            &features,
            &labels,
            &BaselineHyper::default(),
        )
        .unwrap();
        let Classifier::Nb(nb) = &clf else { unreachable!() };
        let p = nb.proba(&[0.3, -0.2]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_reports_six_hidden_layers_of_64() {
        let mlp = MlpClassifier::new(10, 0);
        assert_eq!(mlp.hidden_sizes(), vec![64; 6]);
    }

    #[test]
    fn mlp_with_zero_output_layer_predicts_half() {
        let mut mlp = MlpClassifier::new(4, 0);
        let last = mlp.layers.len() - 1;
        mlp.layers[last].0.fill(0.0);
        mlp.layers[last].1.fill(0.0);
        let p = mlp.proba(&[0.1, -0.4, 0.2, 0.9]);
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn mlp_learns_the_separable_toy_set() {
        let (features, labels) = separable_toy();
        let hp = BaselineHyper {
            epochs: 60,
            lr: 0.05,
            batch_size: 8,
            ..BaselineHyper::default()
        };
        let clf = train_classifier(ClassifierKind::Mlp, &features, &labels, &hp).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| predict_label(&clf, x).unwrap() == y)
            .count();
        assert!(correct >= 38, "only {correct}/40 correct");
    }

    #[test]
    fn single_class_training_set_is_a_fit_error() {
        let features = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_classifier(ClassifierKind::Svm, &features, &[1, 1], &BaselineHyper::default()),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let (features, labels) = separable_toy();
        let clf = train_classifier(
            ClassifierKind::Nb,
            &features,
            &labels,
            &BaselineHyper::default(),
        )
        .unwrap();
        assert!(predict_proba(&clf, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn threshold_half_matches_posterior_argmax() {
        let (features, labels) = separable_toy();
        let clf = train_classifier(
            ClassifierKind::Nb,
            &features,
            &labels,
            &BaselineHyper::default(),
        )
        .unwrap();
        let Classifier::Nb(nb) = &clf else { unreachable!() };
        for x in &features {
            let p = nb.proba(x);
            let argmax = (p[1] > p[0]) as u8;
            assert_eq!(predict_label(&clf, x).unwrap(), argmax);
        }
    }

    #[test]
    fn probabilities_stay_in_the_unit_interval() {
        use rand::{Rng, SeedableRng};
        let (features, labels) = separable_toy();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for kind in [ClassifierKind::Svm, ClassifierKind::Nb, ClassifierKind::Mlp] {
            let clf = train_classifier(kind, &features, &labels, &BaselineHyper::default())
                .unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect();
                let p = predict_proba(&clf, &x).unwrap();
                assert!((0.0..=1.0).contains(&p), "{}: p = {p}", kind.name());
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_for_every_kind() {
        let (features, labels) = separable_toy();
        let dir = tempfile::tempdir().unwrap();
        for kind in [ClassifierKind::Svm, ClassifierKind::Nb, ClassifierKind::Mlp] {
            let hp = BaselineHyper {
                epochs: 5,
                ..BaselineHyper::default()
            };
            let clf = train_classifier(kind, &features, &labels, &hp).unwrap();
            let path = dir.path().join(format!("{}.ckpt", kind.name()));
            save_classifier(&clf, hp.seed, &path).unwrap();
            let loaded = load_classifier(&path).unwrap();
            for x in features.iter().take(5) {
                let a = predict_proba(&clf, x).unwrap();
                let b = predict_proba(&loaded, x).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "{}", kind.name());
            }
        }
    }

    #[test]
    fn tfidf_model_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let model = fit_tfidf(&["the cat sat", "the dog ran", "a cat ran"], 1).unwrap();
        let path = dir.path().join("tfidf.json");
        model.save(&path).unwrap();
        let loaded = TfidfModel::load(&path).unwrap();
        let a = model.transform("the cat ran");
        let b = loaded.transform("the cat ran");
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
