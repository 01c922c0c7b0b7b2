//! Ensemble fusion and subset selection.
//!
//! Fusion is the arithmetic mean in probability space. Two selectors are
//! provided: exhaustive combination search over the top-k single models
//! (detection, maximizing F1) and greedy smallest-subset search (spans,
//! maximizing exact match under fuse -> decode -> score).

use crate::corpus::SpanAnnotated;
use crate::decode::{decode_spans, DecodeConstraints, PredictionRecord};
use crate::error::{Error, Result};
use crate::eval::{binary_prf, subtask2_report};
use crate::neural::{SpanHead, SpanLogits, SPAN_HEADS};
use crate::tokenizer::TokenSequence;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

const PROB_TOLERANCE: f64 = 1e-6;

/// A selected ensemble: ordered member ids, the fusion rule, and the
/// validation metric it achieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<String>,
    pub fusion: String,
    pub metric: f64,
}

impl EnsembleSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("cannot serialize ensemble spec: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EnsembleSpec> {
        let content = std::fs::read_to_string(path)?;
        serde_json::from_str(&content).map_err(|e| Error::Parse {
            row: None,
            message: format!("bad ensemble spec: {e}"),
        })
    }
}

/// Search output: the winning spec plus how many fused subsets were scored.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub spec: EnsembleSpec,
    pub subsets_evaluated: usize,
}

/// Arithmetic mean of aligned 2-way probability rows.
pub fn fuse_class(members: &[&[[f64; 2]]]) -> Result<Vec<[f64; 2]>> {
    let first = members
        .first()
        .ok_or_else(|| Error::argument("fusion needs at least one member"))?;
    let n = first.len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::argument("members cover different example counts"));
    }
    let k = members.len() as f64;
    let mut out = vec![[0.0; 2]; n];
    for m in members {
        for (o, row) in out.iter_mut().zip(m.iter()) {
            o[0] += row[0];
            o[1] += row[1];
        }
    }
    for o in &mut out {
        o[0] /= k;
        o[1] /= k;
    }
    Ok(out)
}

/// Arithmetic mean of the four per-row distributions of one example.
pub fn fuse_span_rows(members: &[&[Vec<f64>; 4]]) -> Result<[Vec<f64>; 4]> {
    let first = members
        .first()
        .ok_or_else(|| Error::argument("fusion needs at least one member"))?;
    let len = first[0].len();
    let k = members.len() as f64;
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    for m in members {
        for (row_out, row_in) in out.iter_mut().zip(m.iter()) {
            if row_in.len() != len {
                return Err(Error::argument("members disagree on sequence length"));
            }
            for (o, v) in row_out.iter_mut().zip(row_in) {
                *o += v;
            }
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= k;
        }
    }
    Ok(out)
}

fn check_normalized(row_sum: f64, what: &str) -> Result<()> {
    if (row_sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::argument(format!(
            "{what} probabilities sum to {row_sum}, expected 1 within {PROB_TOLERANCE}"
        )));
    }
    Ok(())
}

/// Pool of per-member 2-way probabilities over a fixed validation set.
pub struct ClassificationPool {
    ids: Vec<String>,
    golds: Vec<u8>,
    members: Vec<(String, Vec<[f64; 2]>)>,
}

impl ClassificationPool {
    pub fn new(ids: Vec<String>, golds: Vec<u8>) -> Result<ClassificationPool> {
        if ids.len() != golds.len() || ids.is_empty() {
            return Err(Error::argument("ids and gold labels must align and be non-empty"));
        }
        Ok(ClassificationPool {
            ids,
            golds,
            members: Vec::new(),
        })
    }

    /// Add a member keyed by example id; every pool id must be covered and
    /// every probability row normalized.
    pub fn add_member(&mut self, name: &str, probs: &HashMap<String, [f64; 2]>) -> Result<()> {
        if self.members.iter().any(|(n, _)| n == name) {
            return Err(Error::argument(format!("duplicate member '{name}'")));
        }
        let rows = self
            .ids
            .iter()
            .map(|id| {
                let row = probs.get(id).ok_or_else(|| {
                    Error::argument(format!("member '{name}' misses example id '{id}'"))
                })?;
                check_normalized(row[0] + row[1], "class")?;
                Ok(*row)
            })
            .collect::<Result<Vec<_>>>()?;
        self.members.push((name.to_string(), rows));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_names(&self) -> Vec<&str> {
        self.members.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn metric_of(&self, fused: &[[f64; 2]]) -> Result<f64> {
        let preds: Vec<u8> = fused.iter().map(|p| (p[1] >= 0.5) as u8).collect();
        Ok(binary_prf(&preds, &self.golds)?.f1)
    }

    /// F1 of the probability-mean fusion of the given member indices.
    pub fn subset_metric(&self, subset: &[usize]) -> Result<f64> {
        let rows: Vec<&[[f64; 2]]> = subset
            .iter()
            .map(|&i| self.members[i].1.as_slice())
            .collect();
        self.metric_of(&fuse_class(&rows)?)
    }

    /// Restrict to the `top_k` members by single-model F1, then score the
    /// probability-mean fusion of every non-empty subset. Ties prefer the
    /// smaller subset, then the lexicographically first member-id list.
    pub fn best_combination(&self, top_k: usize) -> Result<SearchResult> {
        if self.members.is_empty() {
            return Err(Error::argument("pool is empty"));
        }
        if top_k == 0 || top_k > self.members.len() {
            return Err(Error::argument(format!(
                "top_k {top_k} out of range for a pool of {}",
                self.members.len()
            )));
        }
        if top_k > 20 {
            return Err(Error::argument(format!(
                "top_k {top_k} refused: exhaustive search scores 2^{top_k} - 1 = {} fused subsets",
                2usize.pow(top_k as u32) - 1
            )));
        }
        // rank singles (metric desc, name asc)
        let mut singles: Vec<(usize, f64)> = (0..self.members.len())
            .map(|i| Ok((i, self.subset_metric(&[i])?)))
            .collect::<Result<_>>()?;
        singles.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("metric is finite")
                .then_with(|| self.members[a.0].0.cmp(&self.members[b.0].0))
        });
        let top: Vec<usize> = singles.iter().take(top_k).map(|(i, _)| *i).collect();

        let mut best: Option<(f64, Vec<String>, Vec<usize>)> = None;
        let mut evaluated = 0usize;
        for mask in 1u32..(1 << top_k) {
            let subset: Vec<usize> = (0..top_k)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| top[b])
                .collect();
            let metric = self.subset_metric(&subset)?;
            evaluated += 1;
            let mut names: Vec<String> = subset
                .iter()
                .map(|&i| self.members[i].0.clone())
                .collect();
            names.sort();
            let replace = match &best {
                None => true,
                Some((m, n, _)) => {
                    metric > *m
                        || (metric == *m
                            && (names.len() < n.len() || (names.len() == n.len() && names < *n)))
                }
            };
            if replace {
                best = Some((metric, names, subset));
            }
        }
        let (metric, names, _) = best.expect("at least one subset scored");
        Ok(SearchResult {
            spec: EnsembleSpec {
                members: names,
                fusion: "probability-mean".into(),
                metric,
            },
            subsets_evaluated: evaluated,
        })
    }
}

/// Pool of per-member span-head distributions over a fixed validation set.
/// Each example carries its token sequence so fused distributions can be
/// decoded back to text.
pub struct SpanPool {
    ids: Vec<String>,
    seqs: Vec<TokenSequence>,
    golds: Vec<SpanAnnotated>,
    constraints: DecodeConstraints,
    members: Vec<(String, Vec<[Vec<f64>; 4]>)>,
}

impl SpanPool {
    pub fn new(
        golds: Vec<SpanAnnotated>,
        seqs: Vec<TokenSequence>,
        constraints: DecodeConstraints,
    ) -> Result<SpanPool> {
        if golds.is_empty() || golds.len() != seqs.len() {
            return Err(Error::argument(
                "gold annotations and token sequences must align and be non-empty",
            ));
        }
        Ok(SpanPool {
            ids: golds.iter().map(|g| g.id.clone()).collect(),
            seqs,
            golds,
            constraints,
            members: Vec::new(),
        })
    }

    pub fn add_member(
        &mut self,
        name: &str,
        rows: &HashMap<String, [Vec<f64>; 4]>,
    ) -> Result<()> {
        if self.members.iter().any(|(n, _)| n == name) {
            return Err(Error::argument(format!("duplicate member '{name}'")));
        }
        let per_example = self
            .ids
            .iter()
            .zip(&self.seqs)
            .map(|(id, seq)| {
                let ex = rows.get(id).ok_or_else(|| {
                    Error::argument(format!("member '{name}' misses example id '{id}'"))
                })?;
                for (head, row) in SPAN_HEADS.iter().zip(ex.iter()) {
                    if row.len() != seq.len() {
                        return Err(Error::argument(format!(
                            "member '{name}', id '{id}': head {} has {} entries for {} tokens",
                            head.name(),
                            row.len(),
                            seq.len()
                        )));
                    }
                    check_normalized(row.iter().sum(), head.name())?;
                }
                Ok(ex.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        self.members.push((name.to_string(), per_example));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_names(&self) -> Vec<&str> {
        self.members.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Fuse a subset, decode every example, and return the overall exact
    /// match on the pool's validation set.
    pub fn subset_metric(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::argument("cannot score an empty subset"));
        }
        let mut records = Vec::with_capacity(self.ids.len());
        for (ex_idx, (id, seq)) in self.ids.iter().zip(&self.seqs).enumerate() {
            let member_rows: Vec<&[Vec<f64>; 4]> = subset
                .iter()
                .map(|&m| &self.members[m].1[ex_idx])
                .collect();
            let fused = fuse_span_rows(&member_rows)?;
            let logits = SpanLogits::from_probabilities(fused)?;
            let pred = decode_spans(&logits, seq, &self.constraints)?;
            records.push(PredictionRecord::from_prediction(id.clone(), &pred));
        }
        Ok(subtask2_report(&records, &self.golds)?.em)
    }

    fn ranked_singles(&self) -> Result<Vec<(usize, f64)>> {
        let mut singles: Vec<(usize, f64)> = (0..self.members.len())
            .map(|i| Ok((i, self.subset_metric(&[i])?)))
            .collect::<Result<_>>()?;
        singles.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("metric is finite")
                .then_with(|| self.members[a.0].0.cmp(&self.members[b.0].0))
        });
        Ok(singles)
    }

    /// Forward greedy search: start from the best single member, repeatedly
    /// add the member with the largest strict improvement (ties to the
    /// smaller member id), stop when nothing improves.
    pub fn greedy_smallest_subset(&self) -> Result<SearchResult> {
        if self.members.is_empty() {
            return Err(Error::argument("pool is empty"));
        }
        let singles = self.ranked_singles()?;
        let mut current = vec![singles[0].0];
        let mut current_metric = singles[0].1;
        let mut evaluated = self.members.len();

        loop {
            // candidates in member-id order so equal improvements pick the
            // smallest id
            let mut candidate_order: Vec<usize> = (0..self.members.len())
                .filter(|i| !current.contains(i))
                .collect();
            candidate_order.sort_by(|&a, &b| self.members[a].0.cmp(&self.members[b].0));
            let mut best_add: Option<(usize, f64)> = None;
            for m in candidate_order {
                let mut trial = current.clone();
                trial.push(m);
                let metric = self.subset_metric(&trial)?;
                evaluated += 1;
                if metric > current_metric && best_add.is_none_or(|(_, b)| metric > b) {
                    best_add = Some((m, metric));
                }
            }
            match best_add {
                Some((m, metric)) => {
                    current.push(m);
                    current_metric = metric;
                }
                None => break,
            }
        }
        let mut names: Vec<String> = current
            .iter()
            .map(|&i| self.members[i].0.clone())
            .collect();
        names.sort();
        Ok(SearchResult {
            spec: EnsembleSpec {
                members: names,
                fusion: "probability-mean".into(),
                metric: current_metric,
            },
            subsets_evaluated: evaluated,
        })
    }

    /// Exhaustive reference search over every non-empty subset, with the same
    /// tie-break order as `best_combination`. Usable only on small pools.
    pub fn exhaustive_best(&self) -> Result<SearchResult> {
        let k = self.members.len();
        if k == 0 {
            return Err(Error::argument("pool is empty"));
        }
        if k > 20 {
            return Err(Error::argument(format!(
                "exhaustive search over 2^{k} - 1 subsets refused"
            )));
        }
        let mut best: Option<(f64, Vec<String>)> = None;
        let mut evaluated = 0usize;
        for mask in 1u32..(1 << k) {
            let subset: Vec<usize> = (0..k).filter(|b| mask & (1 << b) != 0).collect();
            let metric = self.subset_metric(&subset)?;
            evaluated += 1;
            let mut names: Vec<String> = subset
                .iter()
                .map(|&i| self.members[i].0.clone())
                .collect();
            names.sort();
            let replace = match &best {
                None => true,
                Some((m, n)) => {
                    metric > *m
                        || (metric == *m
                            && (names.len() < n.len() || (names.len() == n.len() && names < *n)))
                }
            };
            if replace {
                best = Some((metric, names));
            }
        }
        let (metric, names) = best.expect("at least one subset scored");
        Ok(SearchResult {
            spec: EnsembleSpec {
                members: names,
                fusion: "probability-mean".into(),
                metric,
            },
            subsets_evaluated: evaluated,
        })
    }
}

/// Per-member classification probability file: `id<TAB>p0<TAB>p1` lines.
pub fn save_class_probs(path: &Path, rows: &[(String, [f64; 2])]) -> Result<()> {
    let mut out = String::new();
    for (id, p) in rows {
        writeln!(out, "{id}\t{}\t{}", p[0], p[1]).expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_class_probs(path: &Path) -> Result<HashMap<String, [f64; 2]>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                row: Some(lineno + 1),
                message: "expected id<TAB>p0<TAB>p1".into(),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                row: Some(lineno + 1),
                message: format!("bad probability '{s}'"),
            })
        };
        out.insert(parts[0].to_string(), [parse(parts[1])?, parse(parts[2])?]);
    }
    Ok(out)
}

/// Per-member span probability file: `id<TAB>head<TAB>p p p ...` lines, four
/// lines per example in head order.
pub fn save_span_probs(path: &Path, rows: &[(String, [Vec<f64>; 4])]) -> Result<()> {
    let mut out = String::new();
    for (id, heads) in rows {
        for (head, row) in SPAN_HEADS.iter().zip(heads.iter()) {
            let joined = row
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(out, "{id}\t{}\t{joined}", head.name()).expect("write to string");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_span_probs(path: &Path) -> Result<HashMap<String, [Vec<f64>; 4]>> {
    let content = std::fs::read_to_string(path)?;
    let mut out: HashMap<String, [Vec<f64>; 4]> = HashMap::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            row: Some(lineno + 1),
            message,
        };
        let parts: Vec<&str> = line.splitn(3, '\t').collect();
        if parts.len() != 3 {
            return Err(parse_err("expected id<TAB>head<TAB>probs".into()));
        }
        let head = SpanHead::from_name(parts[1])
            .ok_or_else(|| parse_err(format!("unknown head '{}'", parts[1])))?;
        let row: Vec<f64> = parts[2]
            .split_whitespace()
            .map(|s| {
                s.parse()
                    .map_err(|_| parse_err(format!("bad probability '{s}'")))
            })
            .collect::<Result<_>>()?;
        let entry = out
            .entry(parts[0].to_string())
            .or_insert_with(|| std::array::from_fn(|_| Vec::new()));
        entry[head as usize] = row;
    }
    Ok(out)
}
