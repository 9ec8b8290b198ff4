//! Answer extraction and answer scoring.
//!
//! An [`Extractor`] turns a question and a context (the label of the node the
//! agent is reading) into an [`AnswerPrediction`]: a distribution over every
//! candidate span of up to `max_span_len` tokens. Spans are enumerated by start
//! position, then by length, so index order is also the tie-break order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize_answer, normalize_token, normalized_terms};

pub const DEFAULT_MAX_SPAN_LEN: usize = 8;
pub const DEFAULT_ORACLE_PROBABILITY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPrediction {
    /// Tokens of the top span (z).
    pub tokens: Vec<String>,
    /// Start and end (exclusive) of the top span in the context.
    pub span: (usize, usize),
    pub span_distribution: Vec<f64>,
    /// z_l
    pub top_logit: f64,
    /// z_e, in nats
    pub entropy: f64,
    /// z_n
    pub context_token_count: usize,
    pub top_probability: f64,
}

impl AnswerPrediction {
    /// Prediction for an empty context: no answer tokens and a single point mass.
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            span: (0, 0),
            span_distribution: vec![1.0],
            top_logit: 0.0,
            entropy: 0.0,
            context_token_count: 0,
            top_probability: 1.0,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// (z_e, z_l, z_n)
    pub fn phi_z(&self) -> [f64; 3] {
        [
            self.entropy,
            self.top_logit,
            self.context_token_count as f64,
        ]
    }

    fn from_distribution(
        context: &[impl AsRef<str>],
        spans: &[(usize, usize)],
        probs: Vec<f64>,
        top: usize,
        top_logit: f64,
    ) -> Self {
        let (s, e) = spans[top];
        Self {
            tokens: context[s..e]
                .iter()
                .map(|t| t.as_ref().to_string())
                .collect(),
            span: (s, e),
            top_probability: probs[top],
            entropy: entropy(&probs),
            span_distribution: probs,
            top_logit,
            context_token_count: context.len(),
        }
    }
}

/// All spans of length `1..=max_len` over `n` tokens, ordered by start then length.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..n {
        for len in 1..=max_len.min(n - s) {
            out.push((s, s + len));
        }
    }
    out
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// First index of the maximum; earlier spans win ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Scores each span by the number of distinct question terms it contains,
/// divided by the square root of its length, and softmaxes the scores.
pub fn extract_overlap<Q: AsRef<str>, C: AsRef<str>>(
    question: &[Q],
    context: &[C],
    max_span_len: usize,
) -> Result<AnswerPrediction> {
    if context.is_empty() {
        return Err(Error::Invalid("extraction context is empty".into()));
    }
    if max_span_len == 0 {
        return Err(Error::Invalid("max_span_len must be at least 1".into()));
    }
    let q: HashSet<String> = question
        .iter()
        .filter_map(|t| normalize_token(t.as_ref()))
        .collect();
    let ctx: Vec<Option<String>> = context
        .iter()
        .map(|t| normalize_token(t.as_ref()))
        .collect();
    let spans = enumerate_spans(context.len(), max_span_len);
    let mut seen: HashSet<&str> = HashSet::new();
    let scores: Vec<f64> = spans
        .iter()
        .map(|&(s, e)| {
            seen.clear();
            for t in ctx[s..e].iter().flatten() {
                if q.contains(t) {
                    seen.insert(t.as_str());
                }
            }
            seen.len() as f64 / ((e - s) as f64).sqrt()
        })
        .collect();
    let top = argmax(&scores);
    let top_logit = scores[top];
    Ok(AnswerPrediction::from_distribution(
        context,
        &spans,
        softmax(&scores),
        top,
        top_logit,
    ))
}

/// Puts `top_probability` on the first occurrence of any alias and spreads the
/// rest uniformly; uniform over all spans when no alias occurs.
pub fn extract_oracle<C: AsRef<str>>(
    context: &[C],
    aliases: &[String],
    max_span_len: usize,
    top_probability: f64,
) -> Result<AnswerPrediction> {
    if context.is_empty() {
        return Err(Error::Invalid("extraction context is empty".into()));
    }
    let ctx: Vec<Option<String>> = context
        .iter()
        .map(|t| normalize_token(t.as_ref()))
        .collect();
    let mut hit: Option<(usize, usize)> = None;
    for alias in aliases {
        let needle = normalized_terms(alias);
        if needle.is_empty() || needle.len() > ctx.len() {
            continue;
        }
        let found = (0..=ctx.len() - needle.len()).find(|&s| {
            ctx[s..s + needle.len()]
                .iter()
                .zip(&needle)
                .all(|(c, n)| c.as_deref() == Some(n.as_str()))
        });
        if let Some(s) = found {
            if hit.is_none_or(|(hs, _)| s < hs) {
                hit = Some((s, s + needle.len()));
            }
        }
    }
    let max_len = hit.map_or(max_span_len, |(s, e)| max_span_len.max(e - s));
    let spans = enumerate_spans(context.len(), max_len);
    let n = spans.len() as f64;
    let (probs, top) = match hit.and_then(|h| spans.iter().position(|s| *s == h)) {
        Some(top) if spans.len() > 1 => {
            let rest = (1.0 - top_probability) / (n - 1.0);
            let mut p = vec![rest; spans.len()];
            p[top] = top_probability;
            (p, top)
        }
        _ => (vec![1.0 / n; spans.len()], 0),
    };
    let logit = probs[top].ln();
    Ok(AnswerPrediction::from_distribution(
        context, &spans, probs, top, logit,
    ))
}

/// Question, context and identifiers for one extraction call.
#[derive(Debug, Clone, Copy)]
pub struct ExtractQuery<'a, T: AsRef<str>> {
    pub qid: &'a str,
    pub doc_id: &'a str,
    pub node_index: u32,
    pub question: &'a [T],
    pub context: &'a [T],
    pub aliases: &'a [String],
}

pub trait Extractor: Send + Sync {
    fn extract(&self, query: &ExtractQuery<'_, crate::doctree::Token>) -> Result<AnswerPrediction>;
}

#[derive(Debug, Clone)]
pub struct OverlapExtractor {
    pub max_span_len: usize,
}

impl Extractor for OverlapExtractor {
    fn extract(&self, q: &ExtractQuery<'_, crate::doctree::Token>) -> Result<AnswerPrediction> {
        extract_overlap(q.question, q.context, self.max_span_len)
    }
}

#[derive(Debug, Clone)]
pub struct OracleExtractor {
    pub max_span_len: usize,
    pub top_probability: f64,
}

impl Extractor for OracleExtractor {
    fn extract(&self, q: &ExtractQuery<'_, crate::doctree::Token>) -> Result<AnswerPrediction> {
        extract_oracle(
            q.context,
            q.aliases,
            self.max_span_len,
            self.top_probability,
        )
    }
}

/// One line of an external predictions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRecord {
    pub qid: String,
    #[serde(default)]
    pub doc_id: Option<String>,
    pub node_index: u32,
    pub answer: String,
    pub top_probability: f64,
    pub top_logit: f64,
    pub entropy: f64,
}

/// Predictions computed offline by another reading-comprehension model,
/// keyed by question, optional document, and node index. Lookups that miss
/// fall back to the overlap extractor.
#[derive(Debug, Clone)]
pub struct ExternalExtractor {
    records: HashMap<(String, Option<String>, u32), ExternalRecord>,
    fallback: OverlapExtractor,
}

impl ExternalExtractor {
    pub fn new(records: Vec<ExternalRecord>, max_span_len: usize) -> Self {
        let records = records
            .into_iter()
            .map(|r| ((r.qid.clone(), r.doc_id.clone(), r.node_index), r))
            .collect();
        Self {
            records,
            fallback: OverlapExtractor { max_span_len },
        }
    }

    pub fn load(path: &Path, max_span_len: usize) -> Result<Self> {
        let records: Vec<ExternalRecord> = crate::dataset::read_jsonl(path)?;
        for r in &records {
            if !(0.0..=1.0).contains(&r.top_probability) || r.entropy < 0.0 {
                return Err(Error::Invalid(format!(
                    "{}: record for {} node {} has an invalid probability or entropy",
                    path.display(),
                    r.qid,
                    r.node_index
                )));
            }
        }
        Ok(Self::new(records, max_span_len))
    }

    fn lookup(&self, qid: &str, doc_id: &str, node_index: u32) -> Option<&ExternalRecord> {
        self.records
            .get(&(qid.to_string(), Some(doc_id.to_string()), node_index))
            .or_else(|| self.records.get(&(qid.to_string(), None, node_index)))
    }
}

impl Extractor for ExternalExtractor {
    fn extract(&self, q: &ExtractQuery<'_, crate::doctree::Token>) -> Result<AnswerPrediction> {
        let Some(r) = self.lookup(q.qid, q.doc_id, q.node_index) else {
            return self.fallback.extract(q);
        };
        let tokens = crate::text::tokenize(&r.answer);
        Ok(AnswerPrediction {
            span: (0, tokens.len()),
            tokens,
            span_distribution: vec![r.top_probability, 1.0 - r.top_probability],
            top_logit: r.top_logit,
            entropy: r.entropy,
            context_token_count: q.context.len(),
            top_probability: r.top_probability,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReaderKind {
    #[default]
    Overlap,
    Oracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderConfig {
    pub kind: ReaderKind,
    pub max_span_len: usize,
    pub oracle_probability: f64,
    /// Predictions file for the external reader.
    pub predictions: Option<std::path::PathBuf>,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self {
            kind: ReaderKind::Overlap,
            max_span_len: DEFAULT_MAX_SPAN_LEN,
            oracle_probability: DEFAULT_ORACLE_PROBABILITY,
            predictions: None,
        }
    }
}

impl ReaderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_span_len == 0 {
            return Err(Error::Config(
                "reader.max_span_len must be at least 1".into(),
            ));
        }
        if !(self.oracle_probability > 0.0 && self.oracle_probability <= 1.0) {
            return Err(Error::Config(
                "reader.oracle_probability must be in (0, 1]".into(),
            ));
        }
        if self.kind == ReaderKind::External && self.predictions.is_none() {
            return Err(Error::Config(
                "reader.predictions is required when reader.kind = \"external\"".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Extractor>> {
        self.validate()?;
        Ok(match self.kind {
            ReaderKind::Overlap => Arc::new(OverlapExtractor {
                max_span_len: self.max_span_len,
            }),
            ReaderKind::Oracle => Arc::new(OracleExtractor {
                max_span_len: self.max_span_len,
                top_probability: self.oracle_probability,
            }),
            ReaderKind::External => Arc::new(ExternalExtractor::load(
                self.predictions.as_deref().expect("validated"),
                self.max_span_len,
            )?),
        })
    }
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact match and token F1 against the best-matching alias.
pub fn score_em_f1(prediction: &str, aliases: &[String]) -> (f64, f64) {
    let pred = normalize_answer(prediction);
    if pred.is_empty() {
        return (0.0, 0.0);
    }
    let pred_toks: Vec<&str> = pred.split_whitespace().collect();
    let mut em: f64 = 0.0;
    let mut f1: f64 = 0.0;
    for a in aliases {
        let gold = normalize_answer(a);
        if gold == pred {
            em = 1.0;
        }
        let gold_toks: Vec<&str> = gold.split_whitespace().collect();
        f1 = f1.max(token_f1(&pred_toks, &gold_toks));
    }
    (em, f1)
}

/// Answer whose normalized form has the highest summed probability across
/// documents; ties go to the lexicographically smallest normalized form.
/// Returns the first surface form seen for the winner.
pub fn aggregate_answer<S: AsRef<str>>(per_doc: &[(S, f64)]) -> Option<String> {
    let mut sums: BTreeMap<String, (f64, &str)> = BTreeMap::new();
    for (answer, p) in per_doc {
        let e = sums
            .entry(normalize_answer(answer.as_ref()))
            .or_insert((0.0, answer.as_ref()));
        e.0 += p;
    }
    let mut best: Option<(&String, f64, &str)> = None;
    for (k, (sum, surface)) in &sums {
        if best.is_none_or(|(_, b, _)| *sum > b) {
            best = Some((k, *sum, surface));
        }
    }
    best.map(|(_, _, s)| s.to_string())
}
