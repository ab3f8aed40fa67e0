//! BLEU-4 and ROUGE-1/2/L on a 0–100 scale.
//!
//! Tokens are lowercase runs of alphanumerics and `_`; every other
//! non-whitespace character is a token of its own. Corpus BLEU is
//! unsmoothed; the per-item sentence BLEU adds one to the numerator and
//! denominator of orders 2 to 4. Orders longer than the candidate are left
//! out of the geometric mean in both cases, so short identical texts still
//! score 100. Corpus ROUGE is the mean of per-item F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("n must be 1 or 2, got {0}")]
    UnsupportedOrder(usize),
    #[error("no prediction for ids {0:?}")]
    MissingIds(Vec<String>),
    #[error("predictions for unknown ids {0:?}")]
    UnknownIds(Vec<String>),
    #[error("{path}:{line}: {msg}")]
    ParseFailure { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches of order `n` and the candidate's n-gram total.
fn clipped(cand: &[String], refr: &[String], n: usize) -> (usize, usize) {
    let c = ngrams(cand, n);
    let r = ngrams(refr, n);
    let hits = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    (hits, cand.len().saturating_sub(n - 1))
}

/// Sufficient statistics of one pair; they add up across a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    cand_len: usize,
    ref_len: usize,
    hits: [usize; 4],
    totals: [usize; 4],
}

impl BleuStats {
    fn of(cand: &[String], refr: &[String]) -> Self {
        let mut s = BleuStats {
            cand_len: cand.len(),
            ref_len: refr.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            (s.hits[n - 1], s.totals[n - 1]) = clipped(cand, refr, n);
        }
        s
    }

    fn add(mut self, o: Self) -> Self {
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
        for i in 0..4 {
            self.hits[i] += o.hits[i];
            self.totals[i] += o.totals[i];
        }
        self
    }

    fn score(&self, smooth: bool) -> f64 {
        if self.cand_len == 0 || self.ref_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for i in 0..4 {
            if self.totals[i] == 0 {
                continue;
            }
            let (h, t) = if smooth && i > 0 {
                (self.hits[i] + 1, self.totals[i] + 1)
            } else {
                (self.hits[i], self.totals[i])
            };
            if h == 0 {
                return 0.0;
            }
            log_sum += (h as f64 / t as f64).ln();
            orders += 1;
        }
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

fn check_lengths(c: usize, r: usize) -> Result<(), MetricsError> {
    if c != r {
        return Err(MetricsError::LengthMismatch {
            candidates: c,
            references: r,
        });
    }
    if c == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

pub fn bleu4<S: AsRef<str> + Sync>(candidates: &[S], references: &[S]) -> Result<f64, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    let stats = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| BleuStats::of(&tokenize(c.as_ref()), &tokenize(r.as_ref())))
        .reduce(BleuStats::default, BleuStats::add);
    Ok(stats.score(false))
}

/// Smoothed single-pair BLEU-4, used for per-item rows.
pub fn sentence_bleu4(candidate: &str, reference: &str) -> f64 {
    BleuStats::of(&tokenize(candidate), &tokenize(reference)).score(true)
}

/// Precision, recall and F1, each ×100.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, cand: usize, refr: usize) -> Self {
        if hits == 0 || cand == 0 || refr == 0 {
            return Prf::default();
        }
        let p = hits as f64 / cand as f64;
        let r = hits as f64 / refr as f64;
        Prf {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * 2.0 * p * r / (p + r),
        }
    }
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<Prf, MetricsError> {
    if !(1..=2).contains(&n) {
        return Err(MetricsError::UnsupportedOrder(n));
    }
    let (c, r) = (tokenize(candidate), tokenize(reference));
    // A reference too short for order n is scored at the highest order it
    // has, so one-word answers still reach 100 when matched exactly.
    let n = n.min(r.len()).max(1);
    let (hits, total) = clipped(&c, &r, n);
    Ok(Prf::from_counts(hits, total, r.len().saturating_sub(n - 1)))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub bleu4: f64,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    /// Candidate or reference had no tokens; all scores are 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu4: f64,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub count: usize,
    pub empty_items: Vec<String>,
    pub items: Vec<ItemScore>,
}

impl ScoreReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<10}{:>8}\n", "metric", "score");
        for (name, v) in [
            ("BLEU-4", self.bleu4),
            ("ROUGE-1", self.rouge1_f),
            ("ROUGE-2", self.rouge2_f),
            ("ROUGE-L", self.rouge_l_f),
        ] {
            s.push_str(&format!("{name:<10}{v:>8.2}\n"));
        }
        s.push_str(&format!("{} items, {} empty\n", self.count, self.empty_items.len()));
        s
    }
}

/// Scores `(id, candidate, reference)` triples. Items are reported in id
/// order, so the report does not depend on input order.
pub fn score_items(items: &[(String, String, String)]) -> Result<ScoreReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut sorted: Vec<&(String, String, String)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let rows: Vec<(ItemScore, BleuStats)> = sorted
        .par_iter()
        .map(|(id, cand, refr)| {
            let (c, r) = (tokenize(cand), tokenize(refr));
            let stats = BleuStats::of(&c, &r);
            let empty = c.is_empty() || r.is_empty();
            let item = ItemScore {
                id: id.clone(),
                bleu4: stats.score(true),
                rouge1_f: rouge_n(cand, refr, 1).expect("order 1").f1,
                rouge2_f: rouge_n(cand, refr, 2).expect("order 2").f1,
                rouge_l_f: rouge_l(cand, refr).f1,
                empty,
            };
            (item, stats)
        })
        .collect();
    let total = rows.iter().fold(BleuStats::default(), |acc, (_, s)| acc.add(*s));
    let n = rows.len() as f64;
    let mean = |f: fn(&ItemScore) -> f64| rows.iter().map(|(i, _)| f(i)).sum::<f64>() / n;
    Ok(ScoreReport {
        bleu4: total.score(false),
        rouge1_f: mean(|i| i.rouge1_f),
        rouge2_f: mean(|i| i.rouge2_f),
        rouge_l_f: mean(|i| i.rouge_l_f),
        count: rows.len(),
        empty_items: rows.iter().filter(|(i, _)| i.empty).map(|(i, _)| i.id.clone()).collect(),
        items: rows.into_iter().map(|(i, _)| i).collect(),
    })
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, Value)>, MetricsError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| MetricsError::Io {
        path: p.clone(),
        msg: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| MetricsError::ParseFailure {
                path: p.clone(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn field(v: &Value, path: &Path, line: usize, names: &[&str]) -> Result<String, MetricsError> {
    names
        .iter()
        .find_map(|n| v.get(n).and_then(Value::as_str))
        .map(str::to_string)
        .ok_or_else(|| MetricsError::ParseFailure {
            path: path.display().to_string(),
            line,
            msg: format!("missing string field {}", names.join("/")),
        })
}

/// Reference answer of a line: the assistant turn of a dataset record, or a
/// plain `reference`/`answer` field.
fn reference_of(v: &Value, path: &Path, line: usize) -> Result<String, MetricsError> {
    if let Some(turns) = v.get("conversations").and_then(Value::as_array) {
        if let Some(a) = turns.iter().find(|t| t.get("from").and_then(Value::as_str) == Some("gpt")) {
            return field(a, path, line, &["value"]);
        }
    }
    field(v, path, line, &["reference", "answer"])
}

/// Joins predictions and references on `id` and scores them.
pub fn evaluate_file(predictions: &Path, references: &Path) -> Result<ScoreReport, MetricsError> {
    let mut refs = BTreeMap::new();
    for (line, v) in read_jsonl(references)? {
        refs.insert(field(&v, references, line, &["id"])?, reference_of(&v, references, line)?);
    }
    let mut preds = BTreeMap::new();
    for (line, v) in read_jsonl(predictions)? {
        preds.insert(field(&v, predictions, line, &["id"])?, field(&v, predictions, line, &["prediction"])?);
    }
    let missing: Vec<String> = refs.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingIds(missing));
    }
    let ref_ids: BTreeSet<&String> = refs.keys().collect();
    let unknown: Vec<String> = preds.keys().filter(|k| !ref_ids.contains(k)).cloned().collect();
    if !unknown.is_empty() {
        return Err(MetricsError::UnknownIds(unknown));
    }
    let items: Vec<(String, String, String)> = refs.into_iter().map(|(id, r)| (id.clone(), preds.remove(&id).expect("joined"), r)).collect();
    score_items(&items)
}
