//! Task data: loading, splitting, synthetic generation, and length statistics.
//!
//! Data files are RFC-4180-style delimited text with a header row; column
//! names are supplied through a column map so any export of the task data can
//! be adapted without code changes. All char spans are Unicode scalar-value
//! indices, end-exclusive.

mod synth;

pub use synth::{generate_synthetic, SynthConfig, SynthCorpus};

use crate::error::{Error, Result};
use crate::textutil::{char_len, char_slice};
use crate::tokenizer::Tokenizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// A binary-detection example: sentence plus counterfactual label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    /// 1 = counterfactual, 0 = not.
    pub label: u8,
}

/// Char span, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> CharSpan {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// The covered substring of `text`.
    pub fn slice(&self, text: &str) -> String {
        char_slice(text, self.start, self.end)
    }
}

/// A span-extraction example: sentence, gold antecedent span, and an optional
/// gold consequent span. The antecedent is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotated {
    pub id: String,
    pub text: String,
    pub antecedent: CharSpan,
    pub consequent: Option<CharSpan>,
}

impl SpanAnnotated {
    /// Validates that every present span lies within the text.
    pub fn new(
        id: String,
        text: String,
        antecedent: CharSpan,
        consequent: Option<CharSpan>,
    ) -> Result<SpanAnnotated> {
        let n = char_len(&text);
        let check = |span: &CharSpan, name: &str| -> Result<()> {
            if span.start < span.end && span.end <= n {
                Ok(())
            } else {
                Err(Error::argument(format!(
                    "{name} span ({}, {}) out of bounds for text of {n} chars",
                    span.start, span.end
                )))
            }
        };
        check(&antecedent, "antecedent")?;
        if let Some(c) = &consequent {
            check(c, "consequent")?;
        }
        Ok(SpanAnnotated {
            id,
            text,
            antecedent,
            consequent,
        })
    }

    pub fn antecedent_text(&self) -> String {
        self.antecedent.slice(&self.text)
    }

    pub fn consequent_text(&self) -> Option<String> {
        self.consequent.map(|c| c.slice(&self.text))
    }
}

/// Column names for detection data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap1 {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl Default for ColumnMap1 {
    fn default() -> Self {
        ColumnMap1 {
            id: "sentenceID".into(),
            text: "sentence".into(),
            label: "gold_label".into(),
        }
    }
}

/// Column names for span data files. The consequent columns use the sentinel
/// pair (-1, -1) for examples without a consequent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap2 {
    pub id: String,
    pub text: String,
    pub antecedent_start: String,
    pub antecedent_end: String,
    pub consequent_start: String,
    pub consequent_end: String,
}

impl Default for ColumnMap2 {
    fn default() -> Self {
        ColumnMap2 {
            id: "sentenceID".into(),
            text: "sentence".into(),
            antecedent_start: "antecedent_startid".into(),
            antecedent_end: "antecedent_endid".into(),
            consequent_start: "consequent_startid".into(),
            consequent_end: "consequent_endid".into(),
        }
    }
}

fn header_index(headers: &csv::StringRecord, column: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Schema {
            path: path.display().to_string(),
            column: column.to_string(),
        })
}

fn open_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
            _ => Error::Parse {
                row: None,
                message: e.to_string(),
            },
        })
}

fn field(record: &csv::StringRecord, idx: usize, row: usize) -> Result<&str> {
    record
        .get(idx)
        .ok_or_else(|| Error::record(row, format!("missing field {idx}")))
}

/// Load detection data. Row numbers in errors are 1-based data rows.
pub fn load_subtask1(
    path: &Path,
    colmap: &ColumnMap1,
    delimiter: u8,
) -> Result<Vec<LabeledSentence>> {
    let mut reader = open_reader(path, delimiter)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: None,
            message: e.to_string(),
        })?
        .clone();
    let id_idx = header_index(&headers, &colmap.id, path)?;
    let text_idx = header_index(&headers, &colmap.text, path)?;
    let label_idx = header_index(&headers, &colmap.label, path)?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: Some(row),
            message: e.to_string(),
        })?;
        let id = field(&record, id_idx, row)?.to_string();
        let text = field(&record, text_idx, row)?.to_string();
        let label_str = field(&record, label_idx, row)?;
        let label: i64 = label_str
            .trim()
            .parse()
            .map_err(|_| Error::record(row, format!("label '{label_str}' is not an integer")))?;
        if label != 0 && label != 1 {
            return Err(Error::record(row, format!("label {label} outside {{0,1}}")));
        }
        if text.is_empty() {
            return Err(Error::record(row, "empty text"));
        }
        out.push(LabeledSentence {
            id,
            text,
            label: label as u8,
        });
    }
    Ok(out)
}

/// Load span data. Consequent is `None` iff both sentinel indices are -1.
pub fn load_subtask2(
    path: &Path,
    colmap: &ColumnMap2,
    delimiter: u8,
) -> Result<Vec<SpanAnnotated>> {
    let mut reader = open_reader(path, delimiter)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: None,
            message: e.to_string(),
        })?
        .clone();
    let id_idx = header_index(&headers, &colmap.id, path)?;
    let text_idx = header_index(&headers, &colmap.text, path)?;
    let a_start_idx = header_index(&headers, &colmap.antecedent_start, path)?;
    let a_end_idx = header_index(&headers, &colmap.antecedent_end, path)?;
    let c_start_idx = header_index(&headers, &colmap.consequent_start, path)?;
    let c_end_idx = header_index(&headers, &colmap.consequent_end, path)?;

    let parse_int = |s: &str, row: usize, what: &str| -> Result<i64> {
        s.trim()
            .parse()
            .map_err(|_| Error::record(row, format!("{what} '{s}' is not an integer")))
    };

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: Some(row),
            message: e.to_string(),
        })?;
        let id = field(&record, id_idx, row)?.to_string();
        let text = field(&record, text_idx, row)?.to_string();
        let a_start = parse_int(field(&record, a_start_idx, row)?, row, "antecedent start")?;
        let a_end = parse_int(field(&record, a_end_idx, row)?, row, "antecedent end")?;
        let c_start = parse_int(field(&record, c_start_idx, row)?, row, "consequent start")?;
        let c_end = parse_int(field(&record, c_end_idx, row)?, row, "consequent end")?;

        if a_start < 0 || a_end < 0 {
            return Err(Error::record(row, "antecedent indices must be non-negative"));
        }
        let consequent = match (c_start, c_end) {
            (-1, -1) => None,
            (s, e) if s >= 0 && e >= 0 => Some(CharSpan::new(s as usize, e as usize)),
            _ => {
                return Err(Error::record(
                    row,
                    format!("consequent indices ({c_start}, {c_end}): exactly one is the -1 sentinel"),
                ))
            }
        };
        let ann = SpanAnnotated::new(
            id,
            text,
            CharSpan::new(a_start as usize, a_end as usize),
            consequent,
        )
        .map_err(|e| Error::record(row, e.to_string()))?;
        out.push(ann);
    }
    Ok(out)
}

fn write_delimited(path: &Path, delimiter: u8, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    writer
        .write_record(header)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

/// Write detection data in the same delimited format the loader reads.
pub fn save_subtask1(
    path: &Path,
    data: &[LabeledSentence],
    colmap: &ColumnMap1,
    delimiter: u8,
) -> Result<()> {
    let header = [colmap.id.as_str(), colmap.text.as_str(), colmap.label.as_str()];
    let rows: Vec<Vec<String>> = data
        .iter()
        .map(|r| vec![r.id.clone(), r.text.clone(), r.label.to_string()])
        .collect();
    write_delimited(path, delimiter, &header, &rows)
}

/// Write span data; absent consequents serialize as the (-1, -1) sentinel.
pub fn save_subtask2(
    path: &Path,
    data: &[SpanAnnotated],
    colmap: &ColumnMap2,
    delimiter: u8,
) -> Result<()> {
    let header = [
        colmap.id.as_str(),
        colmap.text.as_str(),
        colmap.antecedent_start.as_str(),
        colmap.antecedent_end.as_str(),
        colmap.consequent_start.as_str(),
        colmap.consequent_end.as_str(),
    ];
    let rows: Vec<Vec<String>> = data
        .iter()
        .map(|r| {
            let (cs, ce) = match r.consequent {
                Some(c) => (c.start as i64, c.end as i64),
                None => (-1, -1),
            };
            vec![
                r.id.clone(),
                r.text.clone(),
                r.antecedent.start.to_string(),
                r.antecedent.end.to_string(),
                cs.to_string(),
                ce.to_string(),
            ]
        })
        .collect();
    write_delimited(path, delimiter, &header, &rows)
}

/// Load only the id and text columns; prediction inputs need no labels.
pub fn load_texts(
    path: &Path,
    id_column: &str,
    text_column: &str,
    delimiter: u8,
) -> Result<Vec<(String, String)>> {
    let mut reader = open_reader(path, delimiter)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: None,
            message: e.to_string(),
        })?
        .clone();
    let id_idx = header_index(&headers, id_column, path)?;
    let text_idx = header_index(&headers, text_column, path)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: Some(row),
            message: e.to_string(),
        })?;
        out.push((
            field(&record, id_idx, row)?.to_string(),
            field(&record, text_idx, row)?.to_string(),
        ));
    }
    Ok(out)
}

/// How to carve the validation set out of an unsplit data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// First `n` records in file order.
    HeadN { n: usize },
    /// `n` records sampled without replacement under `seed`.
    RandomN { n: usize, seed: u64 },
}

impl SplitSpec {
    pub fn n(&self) -> usize {
        match self {
            SplitSpec::HeadN { n } | SplitSpec::RandomN { n, .. } => *n,
        }
    }
}

/// Partition `data` into (validation, train). The train remainder keeps its
/// original order; for `RandomN` the validation subset does too.
pub fn make_split<T: Clone>(data: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    let n = spec.n();
    if n >= data.len() {
        return Err(Error::argument(format!(
            "split size {n} must be smaller than the dataset ({} records)",
            data.len()
        )));
    }
    match spec {
        SplitSpec::HeadN { .. } => Ok((data[..n].to_vec(), data[n..].to_vec())),
        SplitSpec::RandomN { seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, data.len(), n).into_vec();
            picked.sort_unstable();
            let mut in_val = vec![false; data.len()];
            for &i in &picked {
                in_val[i] = true;
            }
            let validation = picked.iter().map(|&i| data[i].clone()).collect();
            let train = data
                .iter()
                .enumerate()
                .filter(|(i, _)| !in_val[*i])
                .map(|(_, r)| r.clone())
                .collect();
            Ok((validation, train))
        }
    }
}

/// Token-length histogram with an optional over-limit tally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bucket_width: usize,
    /// bucket start (inclusive) -> count; bucket covers [start, start+width).
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
    pub limit: Option<usize>,
    pub over_limit: u64,
}

impl Histogram {
    /// Fraction of examples strictly longer than the configured limit.
    pub fn over_limit_fraction(&self) -> Option<f64> {
        self.limit?;
        if self.total == 0 {
            return Some(0.0);
        }
        Some(self.over_limit as f64 / self.total as f64)
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:>10}  {:>10}", "bucket", "count").expect("write to string");
        for (&start, &count) in &self.counts {
            writeln!(
                out,
                "{:>10}  {:>10}",
                format!("[{},{})", start, start + self.bucket_width),
                count
            )
            .expect("write to string");
        }
        writeln!(out, "{:>10}  {:>10}", "total", self.total).expect("write to string");
        if let (Some(limit), Some(frac)) = (self.limit, self.over_limit_fraction()) {
            writeln!(out, "over {limit} tokens: {} ({:.4}%)", self.over_limit, frac * 100.0)
                .expect("write to string");
        }
        out
    }

    /// Two-column file: bucket_start<TAB>count.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (&start, &count) in &self.counts {
            writeln!(out, "{start}\t{count}").expect("write to string");
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Histogram of tokenized lengths over a set of texts.
pub fn length_stats<'a, I>(
    texts: I,
    tokenizer: &Tokenizer,
    bucket_width: usize,
    limit: Option<usize>,
) -> Result<Histogram>
where
    I: IntoIterator<Item = &'a str>,
{
    if bucket_width == 0 {
        return Err(Error::argument("bucket_width must be >= 1"));
    }
    let mut counts = BTreeMap::new();
    let mut total = 0u64;
    let mut over = 0u64;
    for text in texts {
        let len = tokenizer.tokenize(text).len();
        *counts.entry((len / bucket_width) * bucket_width).or_insert(0) += 1;
        total += 1;
        if let Some(l) = limit {
            if len > l {
                over += 1;
            }
        }
    }
    Ok(Histogram {
        bucket_width,
        counts,
        total,
        limit,
        over_limit: over,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn temp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_subtask1_maps_fields() {
        let f = temp_file("sentenceID,sentence,gold_label\n101,\"If I had known, I would have left.\",1\n");
        let data = load_subtask1(f.path(), &ColumnMap1::default(), b',').unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].id, "101");
        assert_eq!(data[0].label, 1);
        assert_eq!(data[0].text, "If I had known, I would have left.");
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let f = temp_file("sentenceID,sentence\n1,hello\n");
        let err = load_subtask1(f.path(), &ColumnMap1::default(), b',').unwrap_err();
        match err {
            Error::Schema { column, .. } => assert_eq!(column, "gold_label"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn label_outside_binary_is_record_error_with_row() {
        let f = temp_file("sentenceID,sentence,gold_label\n1,ok,0\n2,bad,7\n");
        let err = load_subtask1(f.path(), &ColumnMap1::default(), b',').unwrap_err();
        match err {
            Error::Record { row, .. } => assert_eq!(row, 2),
            other => panic!("expected record error, got {other}"),
        }
    }

    #[test]
    fn malformed_quoting_is_parse_error_with_row() {
        let f = temp_file("sentenceID,sentence,gold_label\n1,\"unterminated,0\n");
        let err = load_subtask1(f.path(), &ColumnMap1::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {err}");
    }

    #[test]
    fn load_subtask2_sentinel_and_bounds() {
        let f = temp_file(
            "sentenceID,sentence,antecedent_startid,antecedent_endid,consequent_startid,consequent_endid\n\
             1,Hello world,0,5,-1,-1\n",
        );
        let data = load_subtask2(f.path(), &ColumnMap2::default(), b',').unwrap();
        assert_eq!(data[0].consequent, None);
        assert_eq!(data[0].antecedent_text(), "Hello");
    }

    #[test]
    fn load_subtask2_rejects_out_of_bounds_span() {
        let f = temp_file(
            "sentenceID,sentence,antecedent_startid,antecedent_endid,consequent_startid,consequent_endid\n\
             1,short text here abc,0,99,-1,-1\n",
        );
        let err = load_subtask2(f.path(), &ColumnMap2::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Record { row: 1, .. }), "got {err}");
    }

    #[test]
    fn load_subtask2_rejects_half_sentinel() {
        let f = temp_file(
            "sentenceID,sentence,antecedent_startid,antecedent_endid,consequent_startid,consequent_endid\n\
             1,Hello world,0,5,-1,8\n",
        );
        let err = load_subtask2(f.path(), &ColumnMap2::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Record { row: 1, .. }), "got {err}");
    }

    #[test]
    fn head_split_sizes() {
        let data: Vec<u32> = (0..13000).collect();
        let (val, train) = make_split(&data, &SplitSpec::HeadN { n: 3000 }).unwrap();
        assert_eq!(val.len(), 3000);
        assert_eq!(train.len(), 10000);
        assert_eq!(val[0], 0);
        assert_eq!(train[0], 3000);
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let data: Vec<u32> = (0..3551).collect();
        let spec = SplitSpec::RandomN { n: 355, seed: 42 };
        let (val_a, train_a) = make_split(&data, &spec).unwrap();
        let (val_b, train_b) = make_split(&data, &spec).unwrap();
        assert_eq!(val_a.len(), 355);
        assert_eq!(train_a.len(), 3196);
        assert_eq!(val_a, val_b);
        assert_eq!(train_a, train_b);
    }

    #[test]
    fn split_too_large_is_argument_error() {
        let data: Vec<u32> = (0..5).collect();
        assert!(make_split(&data, &SplitSpec::HeadN { n: 5 }).is_err());
    }

    #[test]
    fn save_load_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![
            LabeledSentence { id: "1".into(), text: "plain text".into(), label: 0 },
            LabeledSentence { id: "2".into(), text: "with, comma and \"quotes\"".into(), label: 1 },
        ];
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        save_subtask1(&p1, &data, &ColumnMap1::default(), b',').unwrap();
        let loaded = load_subtask1(&p1, &ColumnMap1::default(), b',').unwrap();
        assert_eq!(loaded, data);
        save_subtask1(&p2, &loaded, &ColumnMap1::default(), b',').unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn span_save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![
            SpanAnnotated::new(
                "1".into(),
                "If it had rained, we would have stayed".into(),
                CharSpan::new(0, 16),
                Some(CharSpan::new(18, 38)),
            )
            .unwrap(),
            SpanAnnotated::new("2".into(), "If only it had rained".into(), CharSpan::new(0, 21), None)
                .unwrap(),
        ];
        let p = dir.path().join("spans.tsv");
        save_subtask2(&p, &data, &ColumnMap2::default(), b'\t').unwrap();
        let loaded = load_subtask2(&p, &ColumnMap2::default(), b'\t').unwrap();
        assert_eq!(loaded, data);
    }

    #[test]
    fn histogram_single_sentence() {
        let tok = Tokenizer::whitespace();
        let h = length_stats(["one two three four five six seven"], &tok, 10, None).unwrap();
        assert_eq!(h.total, 1);
        assert_eq!(h.counts.get(&0), Some(&1));
    }

    #[test]
    fn histogram_empty_dataset() {
        let tok = Tokenizer::whitespace();
        let h = length_stats([], &tok, 10, Some(100)).unwrap();
        assert_eq!(h.total, 0);
        assert_eq!(h.over_limit_fraction(), Some(0.0));
    }

    #[test]
    fn over_limit_fraction_matches_counts() {
        let tok = Tokenizer::whitespace();
        let long = "w ".repeat(101);
        let mut texts: Vec<String> = vec![long; 41];
        texts.extend(std::iter::repeat_n("short sentence".to_string(), 9959));
        let h = length_stats(texts.iter().map(String::as_str), &tok, 10, Some(100)).unwrap();
        assert_eq!(h.total, 10000);
        assert!((h.over_limit_fraction().unwrap() - 0.0041).abs() < 1e-12);
    }

    proptest! {
        /// make_split partitions: sizes n and len-n, disjoint, union = dataset.
        #[test]
        fn split_partitions(len in 2usize..200, n_frac in 0.01f64..0.99, seed in 0u64..1000) {
            let data: Vec<usize> = (0..len).collect();
            let n = ((len as f64 * n_frac) as usize).clamp(1, len - 1);
            let (val, train) = make_split(&data, &SplitSpec::RandomN { n, seed }).unwrap();
            prop_assert_eq!(val.len(), n);
            prop_assert_eq!(train.len(), len - n);
            let mut merged: Vec<usize> = val.iter().chain(train.iter()).copied().collect();
            merged.sort_unstable();
            prop_assert_eq!(merged, data);
        }

        /// Histogram total equals dataset size.
        #[test]
        fn histogram_total_matches(texts in proptest::collection::vec("[a-z ]{0,30}", 0..30)) {
            let tok = Tokenizer::whitespace();
            let h = length_stats(texts.iter().map(String::as_str), &tok, 5, None).unwrap();
            prop_assert_eq!(h.total as usize, texts.len());
            let sum: u64 = h.counts.values().sum();
            prop_assert_eq!(sum, h.total);
        }
    }
}
