//! Deterministic synthetic corpus for desk-scale runs.
//!
//! Counterfactual sentences are assembled from templates so the gold char
//! spans are exact by construction. Distractors include indicative
//! conditionals, wish-statements, and plain statements; the no-consequent
//! templates include a trailing clause that resembles a consequent without
//! being one.

use super::{CharSpan, LabeledSentence, SpanAnnotated};
use crate::error::{Error, Result};
use crate::textutil::char_len;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Synthetic generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_examples: usize,
    /// Fraction of examples labeled counterfactual.
    pub counterfactual_ratio: f64,
    /// Fraction of counterfactual examples without a consequent.
    pub no_consequent_ratio: f64,
    pub seed: u64,
    /// Upper bound on distinct word forms used by the generator.
    pub vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_examples: 2000,
            counterfactual_ratio: 0.5,
            no_consequent_ratio: 0.2,
            seed: 0,
            vocab_size: 80,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::argument("n_examples must be >= 1"));
        }
        for (name, v) in [
            ("counterfactual_ratio", self.counterfactual_ratio),
            ("no_consequent_ratio", self.no_consequent_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::argument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::argument(format!(
                "vocab_size must be >= {MIN_VOCAB}, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Generator output: every example labeled, plus span annotations for the
/// counterfactual subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub labeled: Vec<LabeledSentence>,
    pub spans: Vec<SpanAnnotated>,
}

const MIN_VOCAB: usize = 30;

const SUBJ_NOUNS: &[&str] = &[
    "farmer", "teacher", "pilot", "nurse", "mayor", "captain", "driver", "singer", "tailor",
    "guard", "clerk", "baker", "doctor", "miner", "judge", "poet",
];
const OBJ_NOUNS: &[&str] = &[
    "horse", "fence", "letter", "garden", "engine", "contract", "boat", "bridge", "piano",
    "ladder", "market", "recipe", "violin", "harvest", "mural", "archive",
];
const VERBS_PP: &[&str] = &[
    "sold", "painted", "opened", "closed", "finished", "watered", "repaired", "borrowed",
    "signed", "moved", "cleaned", "checked", "counted", "packed", "planted", "traded",
];
const VERBS_PRES: &[&str] = &[
    "sells", "paints", "opens", "closes", "finishes", "waters", "repairs", "borrows", "signs",
    "moves", "cleans", "checks", "counts", "packs", "plants", "trades",
];

struct WordPools {
    subjects: Vec<String>,
    objects: Vec<String>,
    past: Vec<&'static str>,
    present: Vec<&'static str>,
}

impl WordPools {
    /// Function words used by the templates cost ~22 distinct forms; the rest
    /// of the budget is split evenly across the four content pools.
    fn new(vocab_size: usize) -> WordPools {
        let budget = vocab_size.saturating_sub(22).max(4);
        let per_pool = (budget / 4).clamp(1, SUBJ_NOUNS.len());
        WordPools {
            subjects: SUBJ_NOUNS[..per_pool].iter().map(|n| format!("the {n}")).collect(),
            objects: OBJ_NOUNS[..per_pool].iter().map(|n| format!("the {n}")).collect(),
            past: VERBS_PP[..per_pool].to_vec(),
            present: VERBS_PRES[..per_pool].to_vec(),
        }
    }
}

fn pick<'a, T: AsRef<str>>(rng: &mut ChaCha8Rng, pool: &'a [T]) -> &'a str {
    pool[rng.random_range(0..pool.len())].as_ref()
}

/// Tracks char positions while a sentence is assembled.
struct SentenceBuilder {
    text: String,
    chars: usize,
}

impl SentenceBuilder {
    fn new() -> SentenceBuilder {
        SentenceBuilder {
            text: String::new(),
            chars: 0,
        }
    }

    /// Append `piece` and return its char span.
    fn push(&mut self, piece: &str) -> CharSpan {
        let start = self.chars;
        self.text.push_str(piece);
        self.chars += char_len(piece);
        CharSpan::new(start, self.chars)
    }
}

/// "If {a}, {c}." — antecedent includes the leading marker word.
fn assemble_if_then(a: &str, c: &str) -> (String, CharSpan, Option<CharSpan>) {
    let mut b = SentenceBuilder::new();
    let a_span = {
        let start = b.push("If ").start;
        let end = b.push(a).end;
        CharSpan::new(start, end)
    };
    b.push(", ");
    let c_span = b.push(c);
    b.push(".");
    (b.text, a_span, Some(c_span))
}

/// "Had {a}, {c}."
fn assemble_had_then(a: &str, c: &str) -> (String, CharSpan, Option<CharSpan>) {
    let mut b = SentenceBuilder::new();
    let a_span = {
        let start = b.push("Had ").start;
        let end = b.push(a).end;
        CharSpan::new(start, end)
    };
    b.push(", ");
    let c_span = b.push(c);
    b.push(".");
    (b.text, a_span, Some(c_span))
}

/// "{c} if {a}." — consequent first.
fn assemble_then_if(a: &str, c: &str) -> (String, CharSpan, Option<CharSpan>) {
    let mut b = SentenceBuilder::new();
    let c_span = b.push(c);
    b.push(" ");
    let a_span = {
        let start = b.push("if ").start;
        let end = b.push(a).end;
        CharSpan::new(start, end)
    };
    b.push(".");
    (b.text, a_span, Some(c_span))
}

/// "If only {a}." — no consequent.
fn assemble_if_only(a: &str) -> (String, CharSpan, Option<CharSpan>) {
    let mut b = SentenceBuilder::new();
    let a_span = {
        let start = b.push("If only ").start;
        let end = b.push(a).end;
        CharSpan::new(start, end)
    };
    b.push(".");
    (b.text, a_span, None)
}

/// "Had {a}, or so {subj} claimed." — no consequent; the trailing clause
/// resembles one but carries no consequential statement.
fn assemble_had_claimed(a: &str, subj: &str) -> (String, CharSpan, Option<CharSpan>) {
    let mut b = SentenceBuilder::new();
    let a_span = {
        let start = b.push("Had ").start;
        let end = b.push(a).end;
        CharSpan::new(start, end)
    };
    b.push(", or so ");
    b.push(subj);
    b.push(" claimed.");
    (b.text, a_span, None)
}

/// Generate `config.n_examples` sentences. Exactly
/// `round(n * counterfactual_ratio)` are counterfactual, and of those exactly
/// `round(n_cf * no_consequent_ratio)` lack a consequent. Fully deterministic
/// under the seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let pools = WordPools::new(config.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n = config.n_examples;
    let n_cf = ((n as f64) * config.counterfactual_ratio).round() as usize;
    let n_noc = ((n_cf as f64) * config.no_consequent_ratio).round() as usize;

    // kind: 0 = cf with consequent, 1 = cf without, 2 = distractor
    let mut kinds: Vec<u8> = Vec::with_capacity(n);
    kinds.extend(std::iter::repeat_n(0u8, n_cf - n_noc));
    kinds.extend(std::iter::repeat_n(1u8, n_noc));
    kinds.extend(std::iter::repeat_n(2u8, n - n_cf));
    kinds.shuffle(&mut rng);

    let mut labeled = Vec::with_capacity(n);
    let mut spans = Vec::new();
    for (i, kind) in kinds.into_iter().enumerate() {
        let id = format!("synth-{:06}", i + 1);
        let subj = pick(&mut rng, &pools.subjects).to_string();
        let subj2 = pick(&mut rng, &pools.subjects).to_string();
        let obj = pick(&mut rng, &pools.objects).to_string();
        let obj2 = pick(&mut rng, &pools.objects).to_string();
        let vpp = pick(&mut rng, &pools.past).to_string();
        let vpp2 = pick(&mut rng, &pools.past).to_string();
        // "if"-fronted clauses keep the auxiliary; "had"-fronted ones invert it
        let a_core = format!("{subj} had {vpp} {obj}");
        let a_inverted = format!("{subj} {vpp} {obj}");
        match kind {
            0 => {
                let c_clause = format!("{subj2} would have {vpp2} {obj2}");
                let (text, a, c) = match rng.random_range(0..3u8) {
                    0 => assemble_if_then(&a_core, &c_clause),
                    1 => assemble_had_then(&a_inverted, &c_clause),
                    _ => assemble_then_if(&a_core, &c_clause),
                };
                labeled.push(LabeledSentence { id: id.clone(), text: text.clone(), label: 1 });
                spans.push(SpanAnnotated::new(id, text, a, c).expect("template spans in bounds"));
            }
            1 => {
                let (text, a, c) = if rng.random_range(0..2u8) == 0 {
                    assemble_if_only(&a_core)
                } else {
                    assemble_had_claimed(&a_inverted, &subj2)
                };
                labeled.push(LabeledSentence { id: id.clone(), text: text.clone(), label: 1 });
                spans.push(SpanAnnotated::new(id, text, a, c).expect("template spans in bounds"));
            }
            _ => {
                let vpres = pick(&mut rng, &pools.present).to_string();
                let vpres2 = pick(&mut rng, &pools.present).to_string();
                let text = match rng.random_range(0..4u8) {
                    0 => format!("If {subj} {vpres} {obj}, {subj2} {vpres2} {obj2}."),
                    1 => format!("I wish {subj} had {vpp} {obj}."),
                    2 => format!("{subj} {vpp} {obj} yesterday."),
                    _ => format!("When {subj} {vpres} {obj}, {subj2} {vpres2} {obj2}."),
                };
                labeled.push(LabeledSentence { id, text, label: 0 });
            }
        }
    }
    Ok(SynthCorpus { labeled, spans })
}
