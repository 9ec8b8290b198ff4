//! Navigation outcomes, traces, and the metrics computed from them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doctree::{Histogram, NodeId, NodeKind, QASample};
use crate::env::{Action, Env, Episode, NavState};
use crate::error::{Error, Result};
use crate::reader::{aggregate_answer, score_em_f1, AnswerPrediction};

/// Observation tokens kept per trace step.
pub const TRACE_OBSERVATION_TOKENS: usize = 12;

/// Result of one (question, document) navigation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavOutcome {
    pub qid: String,
    pub doc_id: String,
    pub stop_node: u32,
    pub stop_index: u32,
    pub stop_kind: NodeKind,
    /// Judged at the containing paragraph for sentence stops.
    pub stop_has_answer: bool,
    pub fao: Option<u32>,
    pub path_length: u32,
    pub answer_actions: u32,
    pub tokens_consumed: usize,
    pub doc_tokens: usize,
    pub final_answer: Option<String>,
    pub answer_probability: Option<f64>,
}

impl NavOutcome {
    fn base(env: &Env<'_>, node: NodeId, prediction: Option<&AnswerPrediction>) -> Self {
        let doc = env.doc;
        let answer = prediction.filter(|p| !p.tokens.is_empty());
        NavOutcome {
            qid: env.sample.question_id.clone(),
            doc_id: doc.doc_id.clone(),
            stop_node: node.0,
            stop_index: doc.index(node),
            stop_kind: doc.kind(node),
            stop_has_answer: doc.stop_has_answer(node),
            fao: doc.fao(),
            path_length: 0,
            answer_actions: 0,
            tokens_consumed: 0,
            doc_tokens: doc.token_count(),
            final_answer: answer.map(AnswerPrediction::text),
            answer_probability: answer.map(|p| p.top_probability),
        }
    }

    /// Outcome of a finished episode.
    pub fn from_episode(ep: &Episode<'_, '_>) -> Self {
        NavOutcome {
            path_length: ep.step_count,
            answer_actions: ep
                .trace
                .iter()
                .filter(|t| t.action == Action::Answer)
                .count() as u32,
            tokens_consumed: ep.tokens_consumed(),
            ..Self::base(ep.env, ep.stop_node(), ep.emitted.as_deref())
        }
    }

    /// Outcome of a method that selects a node directly and reads it once.
    pub fn from_selection(env: &Env<'_>, node: NodeId) -> Self {
        let p = env.extract(node);
        NavOutcome {
            tokens_consumed: p.context_token_count,
            ..Self::base(env, node, Some(&p))
        }
    }

    /// Outcome for an externally produced prediction at `node`.
    pub fn with_prediction(env: &Env<'_>, node: NodeId, p: &AnswerPrediction) -> Self {
        NavOutcome {
            tokens_consumed: p.context_token_count,
            ..Self::base(env, node, Some(p))
        }
    }

    pub fn tokens_fraction(&self) -> f64 {
        if self.doc_tokens == 0 {
            0.0
        } else {
            (self.tokens_consumed as f64 / self.doc_tokens as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub node_index: u32,
    pub node_kind: NodeKind,
    pub observation: String,
    pub action: Action,
    pub reward: f64,
    /// Extractor output on Answer and Stop steps.
    pub answer: Option<String>,
    pub answer_probability: Option<f64>,
}

/// One JSON line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub policy: String,
    pub outcome: NavOutcome,
    pub steps: Vec<TraceStep>,
}

/// Runs `policy` from the root until the episode ends, recording every step.
pub fn navigate<F>(env: &Env<'_>, policy_name: &str, mut policy: F) -> Result<TraceRecord>
where
    F: FnMut(&NavState) -> Result<Action>,
{
    let mut ep = env.episode();
    let mut steps = Vec::new();
    while !ep.done {
        let before = ep.state.clone();
        let r = ep.step(policy(&before)?);
        let pred = match r.action {
            Action::Stop => r.emitted_answer.clone(),
            Action::Answer if env.is_legal(Action::Answer) => r.next_state.answer_pred.clone(),
            _ => None,
        };
        let observation: Vec<&str> = before
            .observation
            .iter()
            .take(TRACE_OBSERVATION_TOKENS)
            .map(|t| &**t)
            .collect();
        steps.push(TraceStep {
            step: before.step,
            node_index: env.doc.index(before.node),
            node_kind: env.doc.kind(before.node),
            observation: observation.join(" "),
            action: r.action,
            reward: r.reward,
            answer: pred.as_deref().map(AnswerPrediction::text),
            answer_probability: pred.as_deref().map(|p| p.top_probability),
        });
    }
    Ok(TraceRecord {
        policy: policy_name.to_string(),
        outcome: NavOutcome::from_episode(&ep),
        steps,
    })
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    crate::dataset::write_jsonl(path, records)
}

/// Reads one trace file, or every `*.jsonl` file of a directory in name order.
pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    if !path.is_dir() {
        return crate::dataset::read_jsonl(path);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(crate::dataset::read_jsonl::<TraceRecord>(&f)?);
    }
    Ok(out)
}

fn nonempty(outcomes: &[NavOutcome]) -> Result<()> {
    if outcomes.is_empty() {
        Err(Error::Invalid("no outcomes to evaluate".into()))
    } else {
        Ok(())
    }
}

/// Mean over pairs of `stop_has_answer`.
pub fn navigation_accuracy(outcomes: &[NavOutcome]) -> Result<f64> {
    nonempty(outcomes)?;
    Ok(outcomes.iter().filter(|o| o.stop_has_answer).count() as f64 / outcomes.len() as f64)
}

fn by_question(outcomes: &[NavOutcome]) -> BTreeMap<&str, Vec<&NavOutcome>> {
    let mut m: BTreeMap<&str, Vec<&NavOutcome>> = BTreeMap::new();
    for o in outcomes {
        m.entry(o.qid.as_str()).or_default().push(o);
    }
    m
}

/// Fraction of questions with at least one correctly navigated document.
pub fn aggregated_accuracy(outcomes: &[NavOutcome]) -> Result<f64> {
    nonempty(outcomes)?;
    let groups = by_question(outcomes);
    let hits = groups
        .values()
        .filter(|g| g.iter().any(|o| o.stop_has_answer))
        .count();
    Ok(hits as f64 / groups.len() as f64)
}

/// Mean EM and F1 over the questions in `aliases`, answering each with the
/// probability-summed aggregate over its documents. Questions without any
/// prediction score zero.
pub fn qa_metrics(outcomes: &[NavOutcome], aliases: &BTreeMap<String, Vec<String>>) -> (f64, f64) {
    if aliases.is_empty() {
        return (0.0, 0.0);
    }
    let groups = by_question(outcomes);
    let (mut em, mut f1) = (0.0, 0.0);
    for (qid, gold) in aliases {
        let preds: Vec<(&str, f64)> = groups
            .get(qid.as_str())
            .into_iter()
            .flatten()
            .filter_map(|o| {
                Some((
                    o.final_answer.as_deref()?,
                    o.answer_probability.unwrap_or(0.0),
                ))
            })
            .collect();
        if let Some(answer) = aggregate_answer(&preds) {
            let (e, f) = score_em_f1(&answer, gold);
            em += e;
            f1 += f;
        }
    }
    let n = aliases.len() as f64;
    (em / n, f1 / n)
}

/// Aliases of every sample, keyed by question id.
pub fn alias_table<'a>(
    samples: impl IntoIterator<Item = &'a QASample>,
) -> BTreeMap<String, Vec<String>> {
    samples
        .into_iter()
        .map(|s| (s.question_id.clone(), s.answer_aliases.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub count: usize,
    pub path_length_mean: f64,
    pub path_length_min: u32,
    pub path_length_max: u32,
    pub answer_actions_mean: f64,
    /// Mean fraction of document tokens consumed, in percent.
    pub tokens_consumed_pct: f64,
    /// Percentage of stops per node kind.
    pub stop_kinds_pct: BTreeMap<String, f64>,
}

pub fn path_stats(outcomes: &[NavOutcome]) -> Result<PathStats> {
    nonempty(outcomes)?;
    let n = outcomes.len() as f64;
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for o in outcomes {
        *kinds.entry(o.stop_kind.name().to_string()).or_default() += 1;
    }
    Ok(PathStats {
        count: outcomes.len(),
        path_length_mean: outcomes
            .iter()
            .map(|o| f64::from(o.path_length))
            .sum::<f64>()
            / n,
        path_length_min: outcomes.iter().map(|o| o.path_length).min().unwrap_or(0),
        path_length_max: outcomes.iter().map(|o| o.path_length).max().unwrap_or(0),
        answer_actions_mean: outcomes
            .iter()
            .map(|o| f64::from(o.answer_actions))
            .sum::<f64>()
            / n,
        tokens_consumed_pct: 100.0
            * outcomes
                .iter()
                .map(NavOutcome::tokens_fraction)
                .sum::<f64>()
            / n,
        stop_kinds_pct: kinds
            .into_iter()
            .map(|(k, c)| (k, 100.0 * c as f64 / n))
            .collect(),
    })
}

pub fn stop_index_histogram(outcomes: &[NavOutcome]) -> Histogram {
    Histogram::from_values(outcomes.iter().map(|o| o.stop_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaoBucket {
    /// Inclusive lower edge.
    pub lo: u32,
    /// Exclusive upper edge; `None` for the last bucket.
    pub hi: Option<u32>,
    pub count: usize,
    /// `None` when the bucket is empty.
    pub accuracy: Option<f64>,
    pub fraction: f64,
}

/// Navigation accuracy per FAO bucket. `edges` are ascending lower bounds;
/// pairs below the first edge or without an FAO are ignored.
pub fn accuracy_by_fao(outcomes: &[NavOutcome], edges: &[u32]) -> Result<Vec<FaoBucket>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "bucket edges must be non-empty and strictly ascending".into(),
        ));
    }
    let mut hits = vec![0usize; edges.len()];
    let mut counts = vec![0usize; edges.len()];
    for o in outcomes {
        let Some(fao) = o.fao else { continue };
        if fao < edges[0] {
            continue;
        }
        let b = edges.partition_point(|&e| e <= fao) - 1;
        counts[b] += 1;
        hits[b] += usize::from(o.stop_has_answer);
    }
    let total: usize = counts.iter().sum();
    Ok(edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| FaoBucket {
            lo,
            hi: edges.get(i + 1).copied(),
            count: counts[i],
            accuracy: (counts[i] > 0).then(|| hits[i] as f64 / counts[i] as f64),
            fraction: if total == 0 {
                0.0
            } else {
                counts[i] as f64 / total as f64
            },
        })
        .collect())
}

/// Default FAO bucket edges for reports.
pub const FAO_EDGES: [u32; 8] = [0, 2, 5, 10, 15, 20, 30, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub pairs: usize,
    pub questions: usize,
    pub navigation_accuracy: f64,
    pub aggregated_accuracy: f64,
    pub exact_match: f64,
    pub f1: f64,
    pub path: PathStats,
    pub stop_index_median: Option<f64>,
    pub accuracy_by_fao: Vec<FaoBucket>,
}

/// Full report for one policy's outcomes.
pub fn report(
    policy: &str,
    outcomes: &[NavOutcome],
    aliases: &BTreeMap<String, Vec<String>>,
) -> Result<PolicyReport> {
    let (em, f1) = qa_metrics(outcomes, aliases);
    Ok(PolicyReport {
        policy: policy.to_string(),
        pairs: outcomes.len(),
        questions: by_question(outcomes).len(),
        navigation_accuracy: navigation_accuracy(outcomes)?,
        aggregated_accuracy: aggregated_accuracy(outcomes)?,
        exact_match: em,
        f1,
        path: path_stats(outcomes)?,
        stop_index_median: stop_index_histogram(outcomes).median,
        accuracy_by_fao: accuracy_by_fao(outcomes, &FAO_EDGES)?,
    })
}

/// Groups trace outcomes by policy name, preserving first-seen order.
pub fn outcomes_by_policy(records: &[TraceRecord]) -> Vec<(String, Vec<NavOutcome>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<NavOutcome>> = HashMap::new();
    for r in records {
        if !groups.contains_key(r.policy.as_str()) {
            order.push(r.policy.clone());
        }
        groups
            .entry(r.policy.as_str())
            .or_default()
            .push(r.outcome.clone());
    }
    order
        .into_iter()
        .map(|p| {
            let g = groups.remove(p.as_str()).unwrap_or_default();
            (p, g)
        })
        .collect()
}

/// `lo,hi,count,accuracy,fraction` rows; empty buckets leave accuracy blank.
pub fn fao_csv(buckets: &[FaoBucket]) -> String {
    let mut out = String::from("lo,hi,count,accuracy,fraction\n");
    for b in buckets {
        let hi = b.hi.map(|h| h.to_string()).unwrap_or_default();
        let acc = b.accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{hi},{},{acc},{}\n", b.lo, b.count, b.fraction));
    }
    out
}

#[cfg(test)]
mod tests;
