//! Encoder model: parameters, forward pass, and exact backward pass.
//!
//! All parameters live in one flat `Vec<f64>` addressed through a [`Layout`]
//! of named ranges. That keeps the optimizer, checkpointing, and the
//! finite-difference checker trivial: they all see a single flat array in a
//! fixed declared order.

use super::math::{
    add_bias, bias_grad, gelu, gelu_prime, layernorm, layernorm_backward, mm_nn, mm_nt, mm_tn,
    softmax_row, LnCache,
};
use super::{SpanLogits, SpanTargets, SPAN_HEADS};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Hyperparameters of the encoder and its heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum sequence length L (position table size).
    pub max_len: usize,
    /// Input embedding dimensionality d_i.
    pub d_input: usize,
    /// Encoder output dimensionality d_o.
    pub d_output: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Dropout rate applied to the encoder output H in train mode.
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 4 heads, d_i = d_o = 64, ffn 128, L 64.
    pub fn desk_scale(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: 64,
            d_input: 64,
            d_output: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::config("vocab_size must cover the reserved ids (>= 3)"));
        }
        if self.max_len < 2 {
            return Err(Error::config("max_len must be >= 2"));
        }
        if self.heads == 0 || !self.d_input.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "d_input {} must be divisible by heads {}",
                self.d_input, self.heads
            )));
        }
        if self.d_input == 0 || self.d_output == 0 || self.ffn_dim == 0 {
            return Err(Error::config("dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerRanges {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub w_q: Range<usize>,
    pub b_q: Range<usize>,
    pub w_k: Range<usize>,
    pub b_k: Range<usize>,
    pub w_v: Range<usize>,
    pub b_v: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub w_f1: Range<usize>,
    pub b_f1: Range<usize>,
    pub w_f2: Range<usize>,
    pub b_f2: Range<usize>,
}

/// Named ranges into the flat parameter vector, in declared order.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Range<usize>,
    pub seg_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerRanges>,
    pub lnf_gain: Range<usize>,
    pub lnf_bias: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub cls_w: Range<usize>,
    pub cls_b: Range<usize>,
    pub span_w: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn build(config: &ModelConfig) -> Layout {
        let d = config.d_input;
        let d_o = config.d_output;
        let ffn = config.ffn_dim;
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let range = cursor..cursor + len;
            cursor += len;
            range
        };
        let tok_emb = take(config.vocab_size * d);
        let seg_emb = take(2 * d);
        let pos_emb = take(config.max_len * d);
        let layers = (0..config.layers)
            .map(|_| LayerRanges {
                ln1_gain: take(d),
                ln1_bias: take(d),
                w_q: take(d * d),
                b_q: take(d),
                w_k: take(d * d),
                b_k: take(d),
                w_v: take(d * d),
                b_v: take(d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_gain: take(d),
                ln2_bias: take(d),
                w_f1: take(d * ffn),
                b_f1: take(ffn),
                w_f2: take(ffn * d),
                b_f2: take(d),
            })
            .collect();
        let lnf_gain = take(d);
        let lnf_bias = take(d);
        let w_out = take(d * d_o);
        let b_out = take(d_o);
        let cls_w = take(d_o * 2);
        let cls_b = take(2);
        let span_w = take(4 * d_o);
        Layout {
            tok_emb,
            seg_emb,
            pos_emb,
            layers,
            lnf_gain,
            lnf_bias,
            w_out,
            b_out,
            cls_w,
            cls_b,
            span_w,
            total: cursor,
        }
    }
}

/// Gradient buffer with the same flat layout as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Gradients {
        Gradients {
            data: vec![0.0; len],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zero(&mut self) {
        self.data.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    fn at(&mut self, range: &Range<usize>) -> &mut [f64] {
        &mut self.data[range.clone()]
    }
}

/// Per-layer forward cache.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    ln1: LnCache,
    a_norm: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<Vec<f64>>, // per head, n×n
    ctx: Vec<f64>,
    ln2: LnCache,
    f_norm: Vec<f64>,
    f1_pre: Vec<f64>,
    f1: Vec<f64>,
}

/// Forward record: the encoder output H plus everything the backward pass
/// needs. Row 0 of H is the CLS-level output.
#[derive(Debug, Clone)]
pub struct Encoded {
    ids: Vec<usize>,
    segments: Vec<usize>,
    n: usize,
    layer_caches: Vec<LayerCache>,
    lnf: LnCache,
    y_norm: Vec<f64>,
    dropout_mask: Option<Vec<f64>>,
    h: Vec<f64>,
}

impl Encoded {
    /// Encoder output H, n×d_o row-major.
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
    dropout_rng: ChaCha8Rng,
}

impl Model {
    /// Initialize with normal(0, 0.02) weights and tables, zero biases, unit
    /// layer-norm gains; fully determined by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init_normal = |range: &Range<usize>, params: &mut Vec<f64>| {
            for v in &mut params[range.clone()] {
                let z: f64 = rng.sample(StandardNormal);
                *v = 0.02 * z;
            }
        };
        init_normal(&layout.tok_emb, &mut params);
        init_normal(&layout.seg_emb, &mut params);
        init_normal(&layout.pos_emb, &mut params);
        for layer in &layout.layers {
            params[layer.ln1_gain.clone()].fill(1.0);
            init_normal(&layer.w_q, &mut params);
            init_normal(&layer.w_k, &mut params);
            init_normal(&layer.w_v, &mut params);
            init_normal(&layer.w_o, &mut params);
            params[layer.ln2_gain.clone()].fill(1.0);
            init_normal(&layer.w_f1, &mut params);
            init_normal(&layer.w_f2, &mut params);
        }
        params[layout.lnf_gain.clone()].fill(1.0);
        init_normal(&layout.w_out, &mut params);
        init_normal(&layout.cls_w, &mut params);
        init_normal(&layout.span_w, &mut params);
        let dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
        Ok(Model {
            config,
            layout,
            params,
            dropout_rng,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::argument(format!(
                "parameter snapshot has {} values, model expects {}",
                params.len(),
                self.layout.total
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn new_gradients(&self) -> Gradients {
        Gradients::zeros(self.layout.total)
    }

    /// Named parameter ranges in the declared (checkpoint) order.
    pub fn named_param_ranges(&self) -> Vec<(String, Range<usize>)> {
        let l = &self.layout;
        let mut out = vec![
            ("tok_emb".to_string(), l.tok_emb.clone()),
            ("seg_emb".to_string(), l.seg_emb.clone()),
            ("pos_emb".to_string(), l.pos_emb.clone()),
        ];
        for (i, layer) in l.layers.iter().enumerate() {
            let named: [(&str, &Range<usize>); 16] = [
                ("ln1_gain", &layer.ln1_gain),
                ("ln1_bias", &layer.ln1_bias),
                ("w_q", &layer.w_q),
                ("b_q", &layer.b_q),
                ("w_k", &layer.w_k),
                ("b_k", &layer.b_k),
                ("w_v", &layer.w_v),
                ("b_v", &layer.b_v),
                ("w_o", &layer.w_o),
                ("b_o", &layer.b_o),
                ("ln2_gain", &layer.ln2_gain),
                ("ln2_bias", &layer.ln2_bias),
                ("w_f1", &layer.w_f1),
                ("b_f1", &layer.b_f1),
                ("w_f2", &layer.w_f2),
                ("b_f2", &layer.b_f2),
            ];
            for (name, range) in named {
                out.push((format!("layer{i}.{name}"), range.clone()));
            }
        }
        out.push(("lnf_gain".to_string(), l.lnf_gain.clone()));
        out.push(("lnf_bias".to_string(), l.lnf_bias.clone()));
        out.push(("w_out".to_string(), l.w_out.clone()));
        out.push(("b_out".to_string(), l.b_out.clone()));
        out.push(("cls_w".to_string(), l.cls_w.clone()));
        out.push(("cls_b".to_string(), l.cls_b.clone()));
        out.push(("span_w".to_string(), l.span_w.clone()));
        out
    }

    fn p(&self, range: &Range<usize>) -> &[f64] {
        &self.params[range.clone()]
    }

    /// E = E_t[ids] + E_s[segments] + E_p[0..n], n×d_i row-major. The second
    /// segment is unused by both tasks (all-zero segment ids).
    pub fn embed(&self, ids: &[usize], segments: &[usize]) -> Result<Vec<f64>> {
        let d = self.config.d_input;
        let n = ids.len();
        if n == 0 {
            return Err(Error::argument("cannot embed an empty sequence"));
        }
        if n > self.config.max_len {
            return Err(Error::argument(format!(
                "sequence length {n} exceeds max_len {}",
                self.config.max_len
            )));
        }
        if segments.len() != n {
            return Err(Error::argument("ids and segments must have equal length"));
        }
        let tok = self.p(&self.layout.tok_emb);
        let seg = self.p(&self.layout.seg_emb);
        let pos = self.p(&self.layout.pos_emb);
        let mut e = vec![0.0; n * d];
        for (i, (&id, &s)) in ids.iter().zip(segments).enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::argument(format!(
                    "token id {id} out of vocabulary range {}",
                    self.config.vocab_size
                )));
            }
            if s >= 2 {
                return Err(Error::argument(format!("segment id {s} out of range")));
            }
            let row = &mut e[i * d..(i + 1) * d];
            for c in 0..d {
                row[c] = tok[id * d + c] + seg[s * d + c] + pos[i * d + c];
            }
        }
        Ok(e)
    }

    /// Encode token ids in train mode (seeded dropout masks drawn from the
    /// model's own RNG stream).
    pub fn encode_train(&mut self, ids: &[usize], segments: &[usize]) -> Result<Encoded> {
        let e = self.embed(ids, segments)?;
        let n = ids.len();
        let mask = self.draw_dropout_mask(n);
        self.encode_inner(ids.to_vec(), segments.to_vec(), e, mask)
    }

    /// Encode token ids in eval mode: deterministic, no dropout.
    pub fn encode_eval(&self, ids: &[usize], segments: &[usize]) -> Result<Encoded> {
        let e = self.embed(ids, segments)?;
        self.encode_inner(ids.to_vec(), segments.to_vec(), e, None)
    }

    /// Encode a raw embedding matrix (n×d_i) in eval mode. The result carries
    /// no token ids, so it supports the forward-only contracts (classify,
    /// span_scores) but not backpropagation.
    pub fn encode_embedded(&self, e: &[f64], n: usize) -> Result<Encoded> {
        if n == 0 || e.len() != n * self.config.d_input {
            return Err(Error::argument(format!(
                "embedding matrix must be n×d_input ({} values for n={n}), got {}",
                n * self.config.d_input,
                e.len()
            )));
        }
        if n > self.config.max_len {
            return Err(Error::argument(format!(
                "sequence length {n} exceeds max_len {}",
                self.config.max_len
            )));
        }
        self.encode_inner(Vec::new(), Vec::new(), e.to_vec(), None)
    }

    fn draw_dropout_mask(&mut self, n: usize) -> Option<Vec<f64>> {
        let rate = self.config.dropout;
        if rate == 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let d_o = self.config.d_output;
        Some(
            (0..n * d_o)
                .map(|_| {
                    if self.dropout_rng.random::<f64>() < keep {
                        inv
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    fn encode_inner(
        &self,
        ids: Vec<usize>,
        segments: Vec<usize>,
        e: Vec<f64>,
        dropout_mask: Option<Vec<f64>>,
    ) -> Result<Encoded> {
        let d = self.config.d_input;
        let d_o = self.config.d_output;
        let heads = self.config.heads;
        let dh = d / heads;
        let ffn = self.config.ffn_dim;
        let n = e.len() / d;
        let scale = 1.0 / (dh as f64).sqrt();

        let check_finite = |x: &[f64], stage: &str| -> Result<()> {
            if x.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::Numeric(format!("non-finite value after {stage}")))
            }
        };
        check_finite(&e, "embedding")?;

        let mut x = e;
        let mut layer_caches = Vec::with_capacity(self.config.layers);
        for (li, lr) in self.layout.layers.iter().enumerate() {
            let x_in = x;
            // pre-norm attention block
            let mut a_norm = vec![0.0; n * d];
            let ln1 = layernorm(
                &mut a_norm,
                &x_in,
                self.p(&lr.ln1_gain),
                self.p(&lr.ln1_bias),
                n,
                d,
            );
            let mut q = vec![0.0; n * d];
            let mut k = vec![0.0; n * d];
            let mut v = vec![0.0; n * d];
            mm_nn(&mut q, &a_norm, self.p(&lr.w_q), n, d, d, false);
            add_bias(&mut q, self.p(&lr.b_q), n, d);
            mm_nn(&mut k, &a_norm, self.p(&lr.w_k), n, d, d, false);
            add_bias(&mut k, self.p(&lr.b_k), n, d);
            mm_nn(&mut v, &a_norm, self.p(&lr.w_v), n, d, d, false);
            add_bias(&mut v, self.p(&lr.b_v), n, d);

            let mut ctx = vec![0.0; n * d];
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let (qh, kh, vh) = (
                    head_slice(&q, n, d, h, dh),
                    head_slice(&k, n, d, h, dh),
                    head_slice(&v, n, d, h, dh),
                );
                let mut s = vec![0.0; n * n];
                mm_nt(&mut s, &qh, &kh, n, dh, n, false);
                for val in &mut s {
                    *val *= scale;
                }
                for row in s.chunks_mut(n) {
                    softmax_row(row);
                }
                let mut ctx_h = vec![0.0; n * dh];
                mm_nn(&mut ctx_h, &s, &vh, n, n, dh, false);
                scatter_head(&mut ctx, &ctx_h, n, d, h, dh);
                probs.push(s);
            }
            let mut attn = vec![0.0; n * d];
            mm_nn(&mut attn, &ctx, self.p(&lr.w_o), n, d, d, false);
            add_bias(&mut attn, self.p(&lr.b_o), n, d);
            let mut x_mid = x_in.clone();
            for (xm, a) in x_mid.iter_mut().zip(&attn) {
                *xm += a;
            }

            // pre-norm feed-forward block
            let mut f_norm = vec![0.0; n * d];
            let ln2 = layernorm(
                &mut f_norm,
                &x_mid,
                self.p(&lr.ln2_gain),
                self.p(&lr.ln2_bias),
                n,
                d,
            );
            let mut f1_pre = vec![0.0; n * ffn];
            mm_nn(&mut f1_pre, &f_norm, self.p(&lr.w_f1), n, d, ffn, false);
            add_bias(&mut f1_pre, self.p(&lr.b_f1), n, ffn);
            let f1: Vec<f64> = f1_pre.iter().map(|&u| gelu(u)).collect();
            let mut f2 = vec![0.0; n * d];
            mm_nn(&mut f2, &f1, self.p(&lr.w_f2), n, ffn, d, false);
            add_bias(&mut f2, self.p(&lr.b_f2), n, d);
            let mut x_out = x_mid.clone();
            for (xo, f) in x_out.iter_mut().zip(&f2) {
                *xo += f;
            }
            check_finite(&x_out, &format!("encoder layer {li}"))?;

            layer_caches.push(LayerCache {
                ln1,
                a_norm,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                f_norm,
                f1_pre,
                f1,
            });
            x = x_out;
        }

        let mut y_norm = vec![0.0; n * d];
        let lnf = layernorm(
            &mut y_norm,
            &x,
            self.p(&self.layout.lnf_gain),
            self.p(&self.layout.lnf_bias),
            n,
            d,
        );
        let mut h = vec![0.0; n * d_o];
        mm_nn(&mut h, &y_norm, self.p(&self.layout.w_out), n, d, d_o, false);
        add_bias(&mut h, self.p(&self.layout.b_out), n, d_o);
        if let Some(mask) = &dropout_mask {
            for (hv, m) in h.iter_mut().zip(mask) {
                *hv *= m;
            }
        }
        check_finite(&h, "output projection")?;

        Ok(Encoded {
            ids,
            segments,
            n,
            layer_caches,
            lnf,
            y_norm,
            dropout_mask,
            h,
        })
    }

    /// 2-way class probabilities from the CLS-level output (softmax over a
    /// linear map of H row 0).
    pub fn classify(&self, enc: &Encoded) -> [f64; 2] {
        let d_o = self.config.d_output;
        let h0 = &enc.h[..d_o];
        let w = self.p(&self.layout.cls_w);
        let b = self.p(&self.layout.cls_b);
        let mut logits = [b[0], b[1]];
        for (c, &hv) in h0.iter().enumerate() {
            logits[0] += hv * w[c * 2];
            logits[1] += hv * w[c * 2 + 1];
        }
        let mut row = logits.to_vec();
        softmax_row(&mut row);
        [row[0], row[1]]
    }

    /// Four span score rows: logits_j[i] = w_j · H[i]. Antecedent rows are
    /// masked at position 0; consequent rows keep the CLS slot as the
    /// no-consequent option.
    #[allow(clippy::needless_range_loop)]
    pub fn span_scores(&self, enc: &Encoded) -> SpanLogits {
        let d_o = self.config.d_output;
        let n = enc.n;
        let w = self.p(&self.layout.span_w);
        let mut rows: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        for (j, row) in rows.iter_mut().enumerate() {
            let wj = &w[j * d_o..(j + 1) * d_o];
            for i in 0..n {
                let hrow = &enc.h[i * d_o..(i + 1) * d_o];
                row[i] = hrow.iter().zip(wj).map(|(a, b)| a * b).sum();
            }
        }
        let [a_s, a_e, c_s, c_e] = rows;
        SpanLogits::new(a_s, a_e, c_s, c_e).expect("encoder guarantees n >= 1; heads need n >= 2")
    }

    /// Classification loss for one example; gradients (scaled by `scale`) are
    /// accumulated into `grads`. Returns the unscaled loss.
    pub fn backward_class(
        &self,
        enc: &Encoded,
        label: u8,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if label > 1 {
            return Err(Error::argument(format!("label {label} outside {{0,1}}")));
        }
        let d_o = self.config.d_output;
        let probs = self.classify(enc);
        let loss = -probs[label as usize].ln();
        let mut dlogits = [probs[0], probs[1]];
        dlogits[label as usize] -= 1.0;
        dlogits[0] *= scale;
        dlogits[1] *= scale;

        let h0 = &enc.h[..d_o];
        let w = self.p(&self.layout.cls_w).to_vec();
        let mut dh = vec![0.0; enc.n * d_o];
        {
            let dw = grads.at(&self.layout.cls_w);
            for c in 0..d_o {
                dw[c * 2] += h0[c] * dlogits[0];
                dw[c * 2 + 1] += h0[c] * dlogits[1];
                dh[c] = dlogits[0] * w[c * 2] + dlogits[1] * w[c * 2 + 1];
            }
        }
        {
            let db = grads.at(&self.layout.cls_b);
            db[0] += dlogits[0];
            db[1] += dlogits[1];
        }
        self.encoder_backward(enc, dh, grads)?;
        Ok(loss)
    }

    /// Span loss for one example; gradients (scaled by `scale`) are
    /// accumulated into `grads`. Returns the unscaled loss.
    pub fn backward_span(
        &self,
        enc: &Encoded,
        targets: &SpanTargets,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let d_o = self.config.d_output;
        let n = enc.n;
        let logits = self.span_scores(enc);
        let loss = super::span_loss(&logits, targets)?;

        let w = self.p(&self.layout.span_w).to_vec();
        let mut dh = vec![0.0; n * d_o];
        let target_arr = targets.as_array();
        for (j, head) in SPAN_HEADS.iter().enumerate() {
            let mut drow: Vec<f64> = logits.row(*head).to_vec();
            softmax_row(&mut drow);
            drow[target_arr[j]] -= 1.0;
            let wj = &w[j * d_o..(j + 1) * d_o];
            let dwj = &mut grads.at(&self.layout.span_w)[j * d_o..(j + 1) * d_o];
            for i in 0..n {
                let g = drow[i] * scale;
                if g == 0.0 {
                    continue;
                }
                let hrow = &enc.h[i * d_o..(i + 1) * d_o];
                for c in 0..d_o {
                    dwj[c] += g * hrow[c];
                    dh[i * d_o + c] += g * wj[c];
                }
            }
        }
        self.encoder_backward(enc, dh, grads)?;
        Ok(loss)
    }

    /// Reverse pass from dL/dH through the stack and into the embedding
    /// tables.
    fn encoder_backward(&self, enc: &Encoded, mut dh: Vec<f64>, grads: &mut Gradients) -> Result<()> {
        if enc.ids.is_empty() {
            return Err(Error::argument(
                "cannot backpropagate: sequence was encoded from a raw embedding matrix without token ids",
            ));
        }
        let d = self.config.d_input;
        let d_o = self.config.d_output;
        let heads = self.config.heads;
        let dh_dim = d / heads;
        let ffn = self.config.ffn_dim;
        let n = enc.n;
        let attn_scale = 1.0 / (dh_dim as f64).sqrt();

        if let Some(mask) = &enc.dropout_mask {
            for (g, m) in dh.iter_mut().zip(mask) {
                *g *= m;
            }
        }

        // output projection
        mm_tn(grads.at(&self.layout.w_out), &enc.y_norm, &dh, d, n, d_o, true);
        bias_grad(grads.at(&self.layout.b_out), &dh, n, d_o);
        let mut dy = vec![0.0; n * d];
        mm_nt(&mut dy, &dh, self.p(&self.layout.w_out), n, d_o, d, false);

        // final layer norm
        let mut dx = vec![0.0; n * d];
        {
            let gain = self.p(&self.layout.lnf_gain).to_vec();
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            layernorm_backward(&mut dx, &dy, &enc.lnf, &gain, &mut dgain, &mut dbias, n, d);
            for (g, v) in grads.at(&self.layout.lnf_gain).iter_mut().zip(&dgain) {
                *g += v;
            }
            for (g, v) in grads.at(&self.layout.lnf_bias).iter_mut().zip(&dbias) {
                *g += v;
            }
        }

        // encoder layers, reversed
        for (lr, cache) in self.layout.layers.iter().zip(&enc.layer_caches).rev() {
            dx = self.layer_backward(lr, cache, dx, n, d, dh_dim, heads, ffn, attn_scale, grads);
        }

        // embedding scatter
        let tok = grads.at(&self.layout.tok_emb);
        for (i, &id) in enc.ids.iter().enumerate() {
            for c in 0..d {
                tok[id * d + c] += dx[i * d + c];
            }
        }
        let seg = grads.at(&self.layout.seg_emb);
        for (i, &s) in enc.segments.iter().enumerate() {
            for c in 0..d {
                seg[s * d + c] += dx[i * d + c];
            }
        }
        let pos = grads.at(&self.layout.pos_emb);
        for i in 0..n {
            for c in 0..d {
                pos[i * d + c] += dx[i * d + c];
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        lr: &LayerRanges,
        cache: &LayerCache,
        d_out: Vec<f64>,
        n: usize,
        d: usize,
        dh_dim: usize,
        heads: usize,
        ffn: usize,
        attn_scale: f64,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        // feed-forward branch: x_out = x_mid + W2·gelu(W1·LN2(x_mid))
        let d_f2 = &d_out;
        mm_tn(grads.at(&lr.w_f2), &cache.f1, d_f2, ffn, n, d, true);
        bias_grad(grads.at(&lr.b_f2), d_f2, n, d);
        let mut d_f1 = vec![0.0; n * ffn];
        mm_nt(&mut d_f1, d_f2, self.p(&lr.w_f2), n, d, ffn, false);
        for (g, &u) in d_f1.iter_mut().zip(&cache.f1_pre) {
            *g *= gelu_prime(u);
        }
        mm_tn(grads.at(&lr.w_f1), &cache.f_norm, &d_f1, d, n, ffn, true);
        bias_grad(grads.at(&lr.b_f1), &d_f1, n, ffn);
        let mut d_f_norm = vec![0.0; n * d];
        mm_nt(&mut d_f_norm, &d_f1, self.p(&lr.w_f1), n, ffn, d, false);

        let mut d_x_mid = d_out;
        {
            let gain = self.p(&lr.ln2_gain).to_vec();
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            layernorm_backward(
                &mut d_x_mid,
                &d_f_norm,
                &cache.ln2,
                &gain,
                &mut dgain,
                &mut dbias,
                n,
                d,
            );
            for (g, v) in grads.at(&lr.ln2_gain).iter_mut().zip(&dgain) {
                *g += v;
            }
            for (g, v) in grads.at(&lr.ln2_bias).iter_mut().zip(&dbias) {
                *g += v;
            }
        }

        // attention branch: x_mid = x_in + Wo·concat_h(P_h·V_h)
        let d_attn = &d_x_mid;
        mm_tn(grads.at(&lr.w_o), &cache.ctx, d_attn, d, n, d, true);
        bias_grad(grads.at(&lr.b_o), d_attn, n, d);
        let mut d_ctx = vec![0.0; n * d];
        mm_nt(&mut d_ctx, d_attn, self.p(&lr.w_o), n, d, d, false);

        let mut d_q = vec![0.0; n * d];
        let mut d_k = vec![0.0; n * d];
        let mut d_v = vec![0.0; n * d];
        for h in 0..heads {
            let qh = head_slice(&cache.q, n, d, h, dh_dim);
            let kh = head_slice(&cache.k, n, d, h, dh_dim);
            let vh = head_slice(&cache.v, n, d, h, dh_dim);
            let d_ctx_h = head_slice(&d_ctx, n, d, h, dh_dim);
            let p = &cache.probs[h];

            let mut d_p = vec![0.0; n * n];
            mm_nt(&mut d_p, &d_ctx_h, &vh, n, dh_dim, n, false);
            let mut d_vh = vec![0.0; n * dh_dim];
            mm_tn(&mut d_vh, p, &d_ctx_h, n, n, dh_dim, false);
            // softmax backward per row, then fold in the 1/sqrt(dh) scale
            let mut d_s = vec![0.0; n * n];
            for i in 0..n {
                let p_row = &p[i * n..(i + 1) * n];
                let dp_row = &d_p[i * n..(i + 1) * n];
                let dot: f64 = p_row.iter().zip(dp_row).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d_s[i * n + j] = attn_scale * p_row[j] * (dp_row[j] - dot);
                }
            }
            let mut d_qh = vec![0.0; n * dh_dim];
            mm_nn(&mut d_qh, &d_s, &kh, n, n, dh_dim, false);
            let mut d_kh = vec![0.0; n * dh_dim];
            mm_tn(&mut d_kh, &d_s, &qh, n, n, dh_dim, false);

            scatter_head_add(&mut d_q, &d_qh, n, d, h, dh_dim);
            scatter_head_add(&mut d_k, &d_kh, n, d, h, dh_dim);
            scatter_head_add(&mut d_v, &d_vh, n, d, h, dh_dim);
        }

        mm_tn(grads.at(&lr.w_q), &cache.a_norm, &d_q, d, n, d, true);
        bias_grad(grads.at(&lr.b_q), &d_q, n, d);
        mm_tn(grads.at(&lr.w_k), &cache.a_norm, &d_k, d, n, d, true);
        bias_grad(grads.at(&lr.b_k), &d_k, n, d);
        mm_tn(grads.at(&lr.w_v), &cache.a_norm, &d_v, d, n, d, true);
        bias_grad(grads.at(&lr.b_v), &d_v, n, d);

        let mut d_a_norm = vec![0.0; n * d];
        mm_nt(&mut d_a_norm, &d_q, self.p(&lr.w_q), n, d, d, false);
        mm_nt(&mut d_a_norm, &d_k, self.p(&lr.w_k), n, d, d, true);
        mm_nt(&mut d_a_norm, &d_v, self.p(&lr.w_v), n, d, d, true);

        let mut d_x_in = d_x_mid;
        {
            let gain = self.p(&lr.ln1_gain).to_vec();
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            layernorm_backward(
                &mut d_x_in,
                &d_a_norm,
                &cache.ln1,
                &gain,
                &mut dgain,
                &mut dbias,
                n,
                d,
            );
            for (g, v) in grads.at(&lr.ln1_gain).iter_mut().zip(&dgain) {
                *g += v;
            }
            for (g, v) in grads.at(&lr.ln1_bias).iter_mut().zip(&dbias) {
                *g += v;
            }
        }
        d_x_in
    }
}

/// Copy head columns [h·dh, (h+1)·dh) of an n×d matrix into a contiguous n×dh
/// buffer.
fn head_slice(x: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dh];
    for i in 0..n {
        let src = &x[i * d + h * dh..i * d + (h + 1) * dh];
        out[i * dh..(i + 1) * dh].copy_from_slice(src);
    }
    out
}

fn scatter_head(x: &mut [f64], head: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for i in 0..n {
        let dst = &mut x[i * d + h * dh..i * d + (h + 1) * dh];
        dst.copy_from_slice(&head[i * dh..(i + 1) * dh]);
    }
}

fn scatter_head_add(x: &mut [f64], head: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for i in 0..n {
        for c in 0..dh {
            x[i * d + h * dh + c] += head[i * dh + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::span_loss;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            max_len: 10,
            d_input: 8,
            d_output: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            dropout: 0.0,
            seed: 11,
        }
    }

    fn range_of(model: &Model, name: &str) -> std::ops::Range<usize> {
        model
            .named_param_ranges()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r)
            .unwrap()
    }

    #[test]
    fn zero_tables_embed_to_zero_matrix() {
        let mut model = Model::new(tiny_config()).unwrap();
        for name in ["tok_emb", "seg_emb", "pos_emb"] {
            let r = range_of(&model, name);
            model.params_mut()[r].fill(0.0);
        }
        let e = model.embed(&[0, 3, 5], &[0, 0, 0]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_embedding_is_the_table_sum() {
        let model = Model::new(tiny_config()).unwrap();
        let e = model.embed(&[4], &[0]).unwrap();
        let d = model.config().d_input;
        let p = model.params();
        let l = model.named_param_ranges();
        let find = |name: &str| l.iter().find(|(n, _)| n == name).unwrap().1.clone();
        let tok = &p[find("tok_emb")];
        let seg = &p[find("seg_emb")];
        let pos = &p[find("pos_emb")];
        for c in 0..d {
            let expect = tok[4 * d + c] + seg[c] + pos[c];
            assert!((e[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn embedding_permutes_rows_when_positions_are_zeroed() {
        let mut model = Model::new(tiny_config()).unwrap();
        let r = range_of(&model, "pos_emb");
        model.params_mut()[r].fill(0.0);
        let d = model.config().d_input;
        let a = model.embed(&[0, 3, 7], &[0, 0, 0]).unwrap();
        let b = model.embed(&[0, 7, 3], &[0, 0, 0]).unwrap();
        assert_eq!(a[d..2 * d], b[2 * d..3 * d]);
        assert_eq!(a[2 * d..3 * d], b[d..2 * d]);
    }

    #[test]
    fn out_of_vocab_id_is_argument_error() {
        let model = Model::new(tiny_config()).unwrap();
        assert!(model.embed(&[99], &[0]).is_err());
    }

    #[test]
    fn eval_encoding_is_deterministic() {
        let model = Model::new(tiny_config()).unwrap();
        let ids = [0, 4, 5, 6];
        let segs = [0; 4];
        let a = model.encode_eval(&ids, &segs).unwrap();
        let b = model.encode_eval(&ids, &segs).unwrap();
        assert_eq!(a.h(), b.h());
    }

    #[test]
    fn zeroed_blocks_reduce_to_projected_layernormed_input() {
        // Zero attention and FFN weights: residuals pass E through unchanged,
        // so H must equal W_out·LN_f(E) + b_out.
        let mut model = Model::new(tiny_config()).unwrap();
        for name in [
            "layer0.w_q", "layer0.b_q", "layer0.w_k", "layer0.b_k", "layer0.w_v", "layer0.b_v",
            "layer0.w_o", "layer0.b_o", "layer0.w_f1", "layer0.b_f1", "layer0.w_f2", "layer0.b_f2",
        ] {
            let r = range_of(&model, name);
            model.params_mut()[r].fill(0.0);
        }
        let ids = [0, 2, 9];
        let segs = [0; 3];
        let e = model.embed(&ids, &segs).unwrap();
        let enc = model.encode_eval(&ids, &segs).unwrap();

        let d = model.config().d_input;
        let d_o = model.config().d_output;
        let n = ids.len();
        let mut ln = vec![0.0; n * d];
        layernorm(
            &mut ln,
            &e,
            &model.params()[range_of(&model, "lnf_gain")],
            &model.params()[range_of(&model, "lnf_bias")],
            n,
            d,
        );
        let mut expect = vec![0.0; n * d_o];
        mm_nn(&mut expect, &ln, &model.params()[range_of(&model, "w_out")], n, d, d_o, false);
        add_bias(&mut expect, &model.params()[range_of(&model, "b_out")], n, d_o);
        for (a, b) in enc.h().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_with_zero_head_is_uniform() {
        let mut model = Model::new(tiny_config()).unwrap();
        for name in ["cls_w", "cls_b"] {
            let r = range_of(&model, name);
            model.params_mut()[r].fill(0.0);
        }
        let enc = model.encode_eval(&[0, 1, 2], &[0; 3]).unwrap();
        let p = model.classify(&enc);
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn classify_probabilities_sum_to_one_and_shift_invariant() {
        let mut model = Model::new(tiny_config()).unwrap();
        let enc = model.encode_eval(&[0, 3, 4], &[0; 3]).unwrap();
        let p = model.classify(&enc);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        // shifting both logits by a constant (via the bias) leaves probs alone
        let r = range_of(&model, "cls_b");
        for v in &mut model.params_mut()[r] {
            *v += 3.7;
        }
        let enc2 = model.encode_eval(&[0, 3, 4], &[0; 3]).unwrap();
        let p2 = model.classify(&enc2);
        assert!((p[0] - p2[0]).abs() < 1e-12);
        assert!((p[1] - p2[1]).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn zero_span_weights_give_uniform_rows_under_masking() {
        let mut model = Model::new(tiny_config()).unwrap();
        let r = range_of(&model, "span_w");
        model.params_mut()[r].fill(0.0);
        let n = 5;
        let enc = model.encode_eval(&[0, 1, 2, 3, 4], &[0; 5]).unwrap();
        let probs = model.span_scores(&enc).probs();
        for i in 0..n {
            assert!((probs[2][i] - 1.0 / n as f64).abs() < 1e-12);
            assert!((probs[3][i] - 1.0 / n as f64).abs() < 1e-12);
        }
        assert_eq!(probs[0][0], 0.0);
        for i in 1..n {
            assert!((probs[0][i] - 1.0 / (n - 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_h_rows_score_identically() {
        // 0-layer model: H row depends only on the embedding row, so feeding a
        // matrix with two equal rows must give equal scores at both positions.
        let config = ModelConfig {
            layers: 0,
            ..tiny_config()
        };
        let model = Model::new(config).unwrap();
        let d = model.config().d_input;
        let row: Vec<f64> = (0..d).map(|c| 0.1 * c as f64).collect();
        let mut e = Vec::new();
        e.extend_from_slice(&row);
        e.extend_from_slice(&row);
        e.extend(std::iter::repeat_n(0.5, d));
        let enc = model.encode_embedded(&e, 3).unwrap();
        let logits = model.span_scores(&enc);
        for head in SPAN_HEADS {
            let r = logits.row(head);
            if head as usize >= 2 {
                assert!((r[0] - r[1]).abs() < 1e-12);
            } else {
                // antecedent rows mask position 0, compare the raw dot at 1 vs 1
                assert!(r[0] == f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn backward_without_ids_is_a_state_error() {
        let model = Model::new(tiny_config()).unwrap();
        let d = model.config().d_input;
        let enc = model.encode_embedded(&vec![0.1; 3 * d], 3).unwrap();
        let targets = SpanTargets::new((1, 2), None, 3).unwrap();
        let mut grads = model.new_gradients();
        assert!(model.backward_span(&enc, &targets, 1.0, &mut grads).is_err());
    }

    #[test]
    fn unused_vocab_row_gets_zero_gradient() {
        let model = Model::new(tiny_config()).unwrap();
        let ids = [0, 3, 4, 5];
        let enc = model.encode_eval(&ids, &[0; 4]).unwrap();
        let targets = SpanTargets::new((1, 3), Some((2, 3)), 4).unwrap();
        let mut grads = model.new_gradients();
        model.backward_span(&enc, &targets, 1.0, &mut grads).unwrap();
        let d = model.config().d_input;
        let tok = range_of(&model, "tok_emb");
        let g = &grads.as_slice()[tok];
        // id 7 never appears in the input
        assert!(g[7 * d..8 * d].iter().all(|&v| v == 0.0));
        // id 3 does
        assert!(g[3 * d..4 * d].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn doubling_the_scale_doubles_every_gradient() {
        let model = Model::new(tiny_config()).unwrap();
        let ids = [0, 3, 4, 5, 6];
        let enc = model.encode_eval(&ids, &[0; 5]).unwrap();
        let targets = SpanTargets::new((1, 2), Some((3, 4)), 5).unwrap();
        let mut g1 = model.new_gradients();
        let mut g2 = model.new_gradients();
        model.backward_span(&enc, &targets, 1.0, &mut g1).unwrap();
        model.backward_span(&enc, &targets, 2.0, &mut g2).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((2.0 * a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn span_loss_matches_backward_reported_loss() {
        let model = Model::new(tiny_config()).unwrap();
        let ids = [0, 1, 2, 3];
        let enc = model.encode_eval(&ids, &[0; 4]).unwrap();
        let targets = SpanTargets::new((1, 2), None, 4).unwrap();
        let direct = span_loss(&model.span_scores(&enc), &targets).unwrap();
        let mut grads = model.new_gradients();
        let reported = model.backward_span(&enc, &targets, 1.0, &mut grads).unwrap();
        assert!((direct - reported).abs() < 1e-12);
    }

    #[test]
    fn train_mode_dropout_is_seeded_and_masks_h() {
        let config = ModelConfig {
            dropout: 0.5,
            ..tiny_config()
        };
        let mut a = Model::new(config.clone()).unwrap();
        let mut b = Model::new(config).unwrap();
        let ids = [0, 1, 2, 3, 4, 5];
        let ea = a.encode_train(&ids, &[0; 6]).unwrap();
        let eb = b.encode_train(&ids, &[0; 6]).unwrap();
        assert_eq!(ea.h(), eb.h());
        let zeros = ea.h().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0, "expected some dropped activations");
    }
}
