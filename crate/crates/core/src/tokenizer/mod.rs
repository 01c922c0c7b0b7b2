//! Tokenization with character offsets, char-span alignment, and truncation.
//!
//! Two modes are supported: a deterministic whitespace tokenizer that detaches
//! leading/trailing punctuation, and a trainable byte-pair encoding ([`bpe`]).
//! Every token carries its `(start, end)` char span into the source text
//! (end-exclusive, Unicode scalar indices), which is what lets data-side
//! character annotations be converted into token-level model targets and back.

mod bpe;

pub use bpe::{train_bpe, BpeModel};

use crate::error::{Error, Result};
use crate::textutil::is_punctuation;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

/// Reserved sequence-level token at position 0.
pub const CLS_TOKEN: &str = "[CLS]";
/// Reserved unknown token.
pub const UNK_TOKEN: &str = "[UNK]";
/// Reserved padding token.
pub const PAD_TOKEN: &str = "[PAD]";

pub const CLS_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_ID: usize = 2;

/// Tokens plus their char spans into the source text.
///
/// When `has_cls` is set, position 0 is the reserved sequence-level slot and
/// carries the empty span `(0, 0)`. `ids` is populated by [`Tokenizer::encode`]
/// and left empty by [`Tokenizer::tokenize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    /// The text the offsets index into.
    pub source: String,
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
    pub ids: Vec<usize>,
    pub has_cls: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keep the first `max_len` positions (including the CLS slot when present).
    /// Offsets are preserved; idempotent.
    pub fn truncate(&self, max_len: usize) -> Result<TokenSequence> {
        let min = if self.has_cls { 2 } else { 1 };
        if max_len < min {
            return Err(Error::argument(format!(
                "max_len must be >= {min} (got {max_len})"
            )));
        }
        let keep = max_len.min(self.len());
        Ok(TokenSequence {
            source: self.source.clone(),
            tokens: self.tokens[..keep].to_vec(),
            offsets: self.offsets[..keep].to_vec(),
            ids: self.ids.get(..keep.min(self.ids.len())).unwrap_or(&[]).to_vec(),
            has_cls: self.has_cls,
        })
    }
}

/// Token-string <-> integer id mapping with reserved ids 0=CLS, 1=UNK, 2=PAD.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build a vocabulary from an iterator of token strings. Unique tokens are
    /// sorted before id assignment so construction is order-independent.
    pub fn build<'a, I>(tokens: I) -> Vocab
    where
        I: IntoIterator<Item = &'a str>,
    {
        let reserved = [CLS_TOKEN, UNK_TOKEN, PAD_TOKEN];
        let uniq: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !reserved.contains(t))
            .collect();
        let mut id_to_token: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(uniq.into_iter().map(String::from));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    /// Vocabulary covering every token the tokenizer produces on `corpus`.
    pub fn from_corpus<S: AsRef<str>>(corpus: &[S], tokenizer: &Tokenizer) -> Vocab {
        let mut all = Vec::new();
        for text in corpus {
            all.extend(tokenizer.tokenize(text.as_ref()).tokens);
        }
        Vocab::build(all.iter().map(String::as_str))
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    /// Two-column `token<TAB>id` file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{token}\t{id}").expect("write to string");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let content = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                row: Some(lineno + 1),
                message: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.parse().map_err(|_| Error::Parse {
                row: Some(lineno + 1),
                message: format!("bad id '{id}'"),
            })?;
            entries.push((id, token.to_string()));
        }
        entries.sort_by_key(|(id, _)| *id);
        let mut id_to_token = Vec::with_capacity(entries.len());
        for (expect, (id, token)) in entries.into_iter().enumerate() {
            if id != expect {
                return Err(Error::Parse {
                    row: None,
                    message: format!("vocab ids not dense: missing id {expect}"),
                });
            }
            id_to_token.push(token);
        }
        let token_to_id: HashMap<String, usize> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Parse {
                row: None,
                message: "duplicate token in vocab file".into(),
            });
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
        })
    }
}

/// Tokenization mode.
#[derive(Debug, Clone)]
pub enum TokenizerMode {
    /// Split on Unicode whitespace, then detach leading/trailing punctuation.
    Whitespace,
    /// Byte-pair encoding over whitespace-pretokenized words.
    Bpe(BpeModel),
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
}

impl Tokenizer {
    pub fn whitespace() -> Tokenizer {
        Tokenizer {
            mode: TokenizerMode::Whitespace,
        }
    }

    pub fn bpe(model: BpeModel) -> Tokenizer {
        Tokenizer {
            mode: TokenizerMode::Bpe(model),
        }
    }

    pub fn mode(&self) -> &TokenizerMode {
        &self.mode
    }

    /// Tokenize without a vocabulary: tokens + offsets only, no CLS slot.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let chars: Vec<char> = text.chars().collect();
        let (tokens, offsets) = match &self.mode {
            TokenizerMode::Whitespace => whitespace_tokens(&chars),
            TokenizerMode::Bpe(model) => model.tokenize_chars(&chars),
        };
        TokenSequence {
            source: text.to_string(),
            tokens,
            offsets,
            ids: Vec::new(),
            has_cls: false,
        }
    }

    /// Tokenize and map to vocabulary ids; unknown tokens become UNK but keep
    /// their offsets. Empty text yields an empty sequence (plus the CLS slot
    /// when requested) rather than an error.
    pub fn encode(&self, text: &str, vocab: &Vocab, prepend_cls: bool) -> TokenSequence {
        let mut seq = self.tokenize(text);
        if prepend_cls {
            seq.tokens.insert(0, CLS_TOKEN.to_string());
            seq.offsets.insert(0, (0, 0));
            seq.has_cls = true;
        }
        seq.ids = seq
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if prepend_cls && i == 0 {
                    CLS_ID
                } else {
                    vocab.id_of(t).unwrap_or(UNK_ID)
                }
            })
            .collect();
        seq
    }
}

/// Whitespace split with leading/trailing punctuation detached as separate
/// tokens. Interior punctuation (don't, 4.2) stays inside its token.
fn whitespace_tokens(chars: &[char]) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut emit = |start: usize, end: usize| {
        tokens.push(chars[start..end].iter().collect::<String>());
        offsets.push((start, end));
    };
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let piece_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let piece_end = i;
        let mut start = piece_start;
        let mut end = piece_end;
        while start < end && is_punctuation(chars[start]) {
            emit(start, start + 1);
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && is_punctuation(chars[end - 1]) {
            trailing.push((end - 1, end));
            end -= 1;
        }
        if start < end {
            emit(start, end);
        }
        for (s, e) in trailing.into_iter().rev() {
            emit(s, e);
        }
    }
    (tokens, offsets)
}

/// Smallest contiguous token range (inclusive positions into `seq`) whose
/// offset union covers the char span. Boundaries falling inside a token expand
/// to cover that whole token; a span touching no token characters is an error.
pub fn align_char_span(seq: &TokenSequence, span: (usize, usize)) -> Result<(usize, usize)> {
    let (s, e) = span;
    if s >= e {
        return Err(Error::argument(format!("empty char span ({s}, {e})")));
    }
    let mut first = None;
    let mut last = None;
    for (idx, &(ts, te)) in seq.offsets.iter().enumerate() {
        if ts < te && ts < e && s < te {
            if first.is_none() {
                first = Some(idx);
            }
            last = Some(idx);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => Ok((f, l)),
        _ => Err(Error::Alignment(format!(
            "char span ({s}, {e}) covers no token characters"
        ))),
    }
}
