//! Counterfactual statement toolkit.
//!
//! End-to-end pipeline for two tasks over counterfactual statements:
//! binary detection (is the sentence counterfactual?) and extraction of
//! antecedent/consequent spans with a first-class no-consequent option.
//!
//! The crate ships:
//! - data loading, splitting, and a deterministic synthetic corpus generator
//!   ([`corpus`]);
//! - whitespace and trainable BPE tokenizers with char-offset bookkeeping
//!   ([`tokenizer`]);
//! - classical baselines (TF-IDF + SVM / Gaussian NB / MLP) ([`baseline`]);
//! - a mini transformer encoder with classification and four-way span heads,
//!   hand-written backward pass, and a finite-difference gradient checker
//!   ([`neural`]);
//! - AdamW + Lookahead training machinery with patience-based early stopping
//!   ([`optim`]);
//! - constrained span decoding with the CLS no-consequent rule ([`decode`]);
//! - ensemble selection by exhaustive combination search and greedy
//!   smallest-subset search ([`ensemble`]);
//! - SQuAD1.1-style normalization, EM/F1, and the full span report panel
//!   ([`eval`]);
//! - a CLI wiring it all into reproducible runs ([`cli`]).

pub mod baseline;
pub mod cli;
pub mod corpus;
pub mod decode;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod neural;
pub mod optim;
pub(crate) mod textutil;
pub mod tokenizer;

pub use error::{Error, Result};
