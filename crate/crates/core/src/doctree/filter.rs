//! Preface removal, answer annotation, and the sample filters.

use serde::{Deserialize, Serialize};

use super::{DocTree, NodeKind, QASample};
use crate::text::{find_subsequence, normalize_answer, normalize_tokens, normalized_terms};

/// Documents whose first answer occurrence lies deeper than this are dropped.
pub const MAX_FAO_INDEX: u32 = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    NoAnswer,
    AnswerOnlyInTitles,
    FaoTooDeep { fao: u32 },
    SingleCharacterAnswer,
    NoDocuments,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::NoAnswer => "no_answer",
            RejectReason::AnswerOnlyInTitles => "answer_only_in_titles",
            RejectReason::FaoTooDeep { .. } => "fao_too_deep",
            RejectReason::SingleCharacterAnswer => "single_character_answer",
            RejectReason::NoDocuments => "no_documents",
        }
    }
}

/// Drops everything between the title and the first section.
pub fn remove_preface(tree: &DocTree) -> DocTree {
    let mut spec = tree.to_spec();
    let first_section = spec
        .children
        .iter()
        .position(|c| c.kind == NodeKind::Section)
        .unwrap_or(spec.children.len());
    if first_section == 0 {
        return tree.clone();
    }
    spec.children.drain(..first_section);
    DocTree::build(tree.doc_id.clone(), spec).expect("subtree of a valid tree is valid")
}

/// Marks every node whose normalized label contains one of the aliases.
pub fn annotate_answers(mut tree: DocTree, aliases: &[String]) -> DocTree {
    let needles: Vec<Vec<String>> = aliases
        .iter()
        .map(|a| normalized_terms(a))
        .filter(|n| !n.is_empty())
        .collect();
    let hits = tree
        .ids()
        .filter(|id| {
            let label = normalize_tokens(&tree.node(*id).label);
            needles
                .iter()
                .any(|n| find_subsequence(&label, n).is_some())
        })
        .collect();
    tree.set_answer_nodes(hits);
    tree
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub sample: Option<QASample>,
    pub dropped_documents: Vec<(String, RejectReason)>,
    pub rejection: Option<RejectReason>,
}

fn document_rejection(doc: &DocTree) -> Option<RejectReason> {
    let answers = doc.answer_nodes();
    if answers.is_empty() {
        return Some(RejectReason::NoAnswer);
    }
    if answers.iter().all(|id| doc.kind(*id).is_heading()) {
        return Some(RejectReason::AnswerOnlyInTitles);
    }
    match doc.fao() {
        Some(fao) if fao > MAX_FAO_INDEX => Some(RejectReason::FaoTooDeep { fao }),
        _ => None,
    }
}

/// Applies the dataset filters to an annotated sample.
pub fn filter_sample(mut sample: QASample) -> FilterOutcome {
    let single_char = sample
        .answer_aliases
        .iter()
        .all(|a| normalize_answer(a).chars().count() <= 1);
    if single_char {
        return FilterOutcome {
            sample: None,
            dropped_documents: Vec::new(),
            rejection: Some(RejectReason::SingleCharacterAnswer),
        };
    }
    let mut dropped = Vec::new();
    sample
        .documents
        .retain(|doc| match document_rejection(doc) {
            Some(reason) => {
                dropped.push((doc.doc_id.clone(), reason));
                false
            }
            None => true,
        });
    if sample.documents.is_empty() {
        FilterOutcome {
            sample: None,
            dropped_documents: dropped,
            rejection: Some(RejectReason::NoDocuments),
        }
    } else {
        FilterOutcome {
            sample: Some(sample),
            dropped_documents: dropped,
            rejection: None,
        }
    }
}
