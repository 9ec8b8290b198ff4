//! Non-learned navigation baselines and agent/tf-idf ensembles.

mod tfidf;

use rand::seq::SliceRandom;

use crate::doctree::{DocTree, NodeId, QASample, Token};
use crate::env::{Action, Env, Episode};
use crate::error::Result;
use crate::eval::NavOutcome;
use crate::reader::{aggregate_answer, AnswerPrediction, ExtractQuery, Extractor};
use crate::seed::Rng;
use crate::text::{find_subsequence, normalize_tokens, normalized_terms};

pub use tfidf::{
    argmax_cosine, cosine, counts, doc_tfidf_select, global_tfidf_select, norm, select_paragraph,
    terms, SparseVec, TfIdfIndex, TfIdfSelection,
};

/// Tokens read by the read-top baseline.
pub const READ_TOP_TOKENS: usize = 800;
/// Node-index threshold of the navigation ensemble.
pub const DEFAULT_THRESHOLD: u32 = 5;

/// Uniformly random legal actions until Stop or the environment budget.
pub fn random_walk<'e, 'a>(env: &'e Env<'a>, rng: &mut Rng) -> Episode<'e, 'a> {
    let legal: Vec<Action> = Action::ALL
        .into_iter()
        .filter(|a| env.is_legal(*a))
        .collect();
    let mut ep = env.episode();
    while !ep.done {
        ep.step(*legal.choose(rng).expect("Stop is always legal"));
    }
    ep
}

/// Uniform over non-sentence nodes.
pub fn random_para(tree: &DocTree, rng: &mut Rng) -> NodeId {
    let pool: Vec<NodeId> = tree.non_sentences().collect();
    *pool.choose(rng).expect("the root is never a sentence")
}

/// The first `n_tokens` tokens of the document: non-sentence labels in index order.
pub fn read_top_context(tree: &DocTree, n_tokens: usize) -> Vec<Token> {
    let mut out = Vec::new();
    for id in tree.non_sentences() {
        let label = &tree.node(id).label;
        let room = n_tokens - out.len();
        out.extend(label.iter().take(room).cloned());
        if out.len() == n_tokens {
            break;
        }
    }
    out
}

/// Runs the extractor once on the document prefix.
pub fn read_top(
    sample: &QASample,
    tree: &DocTree,
    n_tokens: usize,
    extractor: &dyn Extractor,
) -> Result<AnswerPrediction> {
    let context = read_top_context(tree, n_tokens);
    if context.is_empty() {
        return Ok(AnswerPrediction::empty());
    }
    extractor.extract(&ExtractQuery {
        qid: &sample.question_id,
        doc_id: &tree.doc_id,
        node_index: 0,
        question: &sample.question_tokens,
        context: &context,
        aliases: &sample.answer_aliases,
    })
}

/// Read-top outcome. The returned text counts as correct when the prefix contains an alias.
pub fn read_top_outcome(
    env: &Env<'_>,
    n_tokens: usize,
    extractor: &dyn Extractor,
) -> Result<NavOutcome> {
    let context = read_top_context(env.doc, n_tokens);
    let p = read_top(env.sample, env.doc, n_tokens, extractor)?;
    let mut o = NavOutcome::with_prediction(env, NodeId::ROOT, &p);
    let text = normalize_tokens(&context);
    o.stop_has_answer = env
        .sample
        .answer_aliases
        .iter()
        .map(|a| normalized_terms(a))
        .any(|a| find_subsequence(&text, &a).is_some());
    Ok(o)
}

/// The agent's outcome when it stopped at index at most `l`, otherwise tf-idf's.
/// `l = None` always keeps the agent.
pub fn ensemble_threshold<'o>(
    agent: &'o NavOutcome,
    tfidf: &'o NavOutcome,
    l: Option<u32>,
) -> &'o NavOutcome {
    match l {
        Some(l) if agent.stop_index > l => tfidf,
        _ => agent,
    }
}

/// Threshold with the best navigation accuracy over paired outcomes; ties keep the smaller `l`.
pub fn tune_threshold(
    agent: &[NavOutcome],
    tfidf: &[NavOutcome],
    candidates: impl IntoIterator<Item = u32>,
) -> Option<(u32, f64)> {
    assert_eq!(agent.len(), tfidf.len(), "outcomes must be paired");
    if agent.is_empty() {
        return None;
    }
    let mut best: Option<(u32, f64)> = None;
    for l in candidates {
        let hits = agent
            .iter()
            .zip(tfidf)
            .filter(|(a, t)| ensemble_threshold(a, t, Some(l)).stop_has_answer)
            .count();
        let acc = hits as f64 / agent.len() as f64;
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((l, acc));
        }
    }
    best
}

/// Answer with the highest probability summed over both models' per-document predictions.
pub fn ensemble_answer<S: AsRef<str>>(agent: &[(S, f64)], tfidf: &[(S, f64)]) -> Option<String> {
    let all: Vec<(&str, f64)> = agent
        .iter()
        .chain(tfidf)
        .map(|(a, p)| (a.as_ref(), *p))
        .collect();
    aggregate_answer(&all)
}
