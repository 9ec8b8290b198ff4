use std::collections::{BTreeMap, BTreeSet};

use crate::doctree::{DocTree, NodeId, Token};
use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use crate::text::normalize_tokens;

/// Relative score difference under which two paragraphs count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Sparse term weights, ordered so every reduction runs in the same order.
pub type SparseVec = BTreeMap<String, f64>;

/// Document frequencies over a scope: a document's paragraphs, or whole documents of a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfIdfIndex {
    pub n_units: usize,
    pub df: BTreeMap<String, usize>,
}

impl TfIdfIndex {
    /// Each unit is one bag of normalized terms.
    pub fn from_units<I, U>(units: I) -> Self
    where
        I: IntoIterator<Item = U>,
        U: IntoIterator<Item = String>,
    {
        let mut idx = TfIdfIndex::default();
        for unit in units {
            idx.add_unit(unit.into_iter().collect());
        }
        idx
    }

    fn add_unit(&mut self, terms: BTreeSet<String>) {
        self.n_units += 1;
        for t in terms {
            *self.df.entry(t).or_insert(0) += 1;
        }
    }

    /// Paragraphs of one document are the units.
    pub fn document_scope(tree: &DocTree) -> Self {
        Self::from_units(tree.paragraphs().map(|p| terms(&tree.node(p).label)))
    }

    /// Whole documents are the units. Term sets are built per document, then merged in order.
    pub fn corpus(trees: &[&DocTree], par: Parallelism) -> Self {
        let sets = parallel::map(par, trees, |t| {
            t.ids()
                .flat_map(|id| terms(&t.node(id).label))
                .collect::<BTreeSet<String>>()
        });
        let mut idx = TfIdfIndex::default();
        for s in sets {
            idx.add_unit(s);
        }
        idx
    }

    /// `ln((N + 1) / (df + 1)) + 1`; `None` for terms outside the scope.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = *self.df.get(term)?;
        Some(((self.n_units as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0)
    }

    /// Raw term counts times idf; out-of-scope terms are dropped.
    pub fn weigh(&self, counts: &BTreeMap<String, f64>) -> SparseVec {
        counts
            .iter()
            .filter_map(|(t, c)| self.idf(t).map(|idf| (t.clone(), c * idf)))
            .collect()
    }

    pub fn vector(&self, tokens: &[Token]) -> SparseVec {
        self.weigh(&counts(terms(tokens)))
    }
}

pub fn terms(tokens: &[Token]) -> Vec<String> {
    normalize_tokens(tokens)
}

pub fn counts(terms: impl IntoIterator<Item = String>) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in terms {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

pub fn norm(v: &SparseVec) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    dot / (na * nb)
}

/// Position of the highest cosine; near-ties go to the earlier candidate.
pub fn argmax_cosine(q: &SparseVec, candidates: &[SparseVec]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine(q, c);
        match best {
            Some((_, b)) if s <= b + TIE_TOLERANCE * b.abs().max(s.abs()) => {}
            _ => best = Some((i, s)),
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfIdfSelection {
    pub node: NodeId,
    pub score: f64,
    /// The question had no in-scope terms, so the first paragraph was returned.
    pub fallback: bool,
}

/// Paragraph of `tree` most similar to the question under `index`'s idf.
pub fn select_paragraph(
    question: &[Token],
    tree: &DocTree,
    index: &TfIdfIndex,
) -> Result<TfIdfSelection> {
    let paragraphs: Vec<NodeId> = tree.paragraphs().collect();
    let &first = paragraphs
        .first()
        .ok_or_else(|| Error::Invalid(format!("document {} has no paragraphs", tree.doc_id)))?;
    let q = index.vector(question);
    if norm(&q) == 0.0 {
        return Ok(TfIdfSelection {
            node: first,
            score: 0.0,
            fallback: true,
        });
    }
    let vecs: Vec<SparseVec> = paragraphs
        .iter()
        .map(|p| index.vector(&tree.node(*p).label))
        .collect();
    let (i, score) = argmax_cosine(&q, &vecs).expect("at least one paragraph");
    Ok(TfIdfSelection {
        node: paragraphs[i],
        score,
        fallback: false,
    })
}

/// Idf over this document's paragraphs.
pub fn doc_tfidf_select(question: &[Token], tree: &DocTree) -> Result<TfIdfSelection> {
    select_paragraph(question, tree, &TfIdfIndex::document_scope(tree))
}

/// Idf over all documents of the corpus.
pub fn global_tfidf_select(
    question: &[Token],
    tree: &DocTree,
    corpus: &TfIdfIndex,
) -> Result<TfIdfSelection> {
    select_paragraph(question, tree, corpus)
}
