//! Documents as ordered trees of structural elements.
//!
//! Nodes live in an arena laid out in pre-order, so `NodeId(0)` is always the
//! title. Non-sentence nodes carry their pre-order rank as `index`; sentences
//! inherit the index of the paragraph that contains them.

mod corpus;
mod filter;
mod ingest;
mod stats;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub use corpus::{generate_corpus, generate_corpus_with, CorpusSpec, GeneratedCorpus};
pub use filter::{
    annotate_answers, filter_sample, remove_preface, FilterOutcome, RejectReason, MAX_FAO_INDEX,
};
pub use ingest::{ingest_document, DocumentRecord, NodeRecord};
pub use stats::{fao_histogram, median_sorted, Histogram};

/// Tokens are shared between trees, observations, and replay entries.
pub type Token = Arc<str>;

pub fn to_tokens(text: &str) -> Vec<Token> {
    text::tokenize(text).into_iter().map(Token::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn ix(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Title,
    Section,
    Subsection,
    Paragraph,
    Sentence,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Title,
        NodeKind::Section,
        NodeKind::Subsection,
        NodeKind::Paragraph,
        NodeKind::Sentence,
    ];

    fn rank(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Title => "title",
            NodeKind::Section => "section",
            NodeKind::Subsection => "subsection",
            NodeKind::Paragraph => "paragraph",
            NodeKind::Sentence => "sentence",
        }
    }

    pub fn parse(s: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Title, section, and subsection labels all count as headings.
    pub fn is_heading(self) -> bool {
        matches!(
            self,
            NodeKind::Title | NodeKind::Section | NodeKind::Subsection
        )
    }

    /// Whether a node of kind `child` may sit directly under `self`.
    pub fn may_contain(self, child: NodeKind) -> bool {
        match child {
            NodeKind::Title => false,
            NodeKind::Sentence => self == NodeKind::Paragraph,
            _ => child.rank() > self.rank(),
        }
    }
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct DocNode {
    pub kind: NodeKind,
    pub text: String,
    pub label: Vec<Token>,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub index: u32,
    pub depth: u32,
    /// Distance to the farthest leaf below, sentences included.
    pub height: u32,
    /// Position among the parent's children.
    pub sibling_pos: u32,
    pub sibling_count: u32,
}

/// Construction input for [`DocTree::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub kind: NodeKind,
    pub text: String,
    pub children: Vec<NodeSpec>,
    pub is_answer: bool,
}

impl NodeSpec {
    pub fn new(kind: NodeKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            children: Vec::new(),
            is_answer: false,
        }
    }

    pub fn with_children(mut self, children: Vec<NodeSpec>) -> Self {
        self.children = children;
        self
    }
}

#[derive(Debug, Clone)]
pub struct DocTree {
    pub doc_id: String,
    nodes: Vec<DocNode>,
    max_index: u32,
    token_count: usize,
    answer_nodes: Vec<NodeId>,
}

impl DocTree {
    /// Builds a tree from a nested spec, validating nesting and assigning indices.
    pub fn build(doc_id: impl Into<String>, root: NodeSpec) -> Result<DocTree> {
        if root.kind != NodeKind::Title {
            return Err(Error::Nesting {
                path: "root".into(),
                parent: "document".into(),
                child: root.kind.to_string(),
            });
        }
        let mut tree = DocTree {
            doc_id: doc_id.into(),
            nodes: Vec::new(),
            max_index: 0,
            token_count: 0,
            answer_nodes: Vec::new(),
        };
        let mut next_index = 0u32;
        tree.push(root, None, 0, 0, 1, "root".to_string(), &mut next_index)?;
        tree.max_index = next_index.saturating_sub(1);
        tree.token_count = tree
            .nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Sentence || !tree.paragraph_has_text(n))
            .map(|n| n.label.len())
            .sum();
        Ok(tree)
    }

    // Sentences are counted only when their paragraph carries no text of its own.
    fn paragraph_has_text(&self, sentence: &DocNode) -> bool {
        sentence
            .parent
            .map(|p| !self.nodes[p.ix()].label.is_empty())
            .unwrap_or(false)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        spec: NodeSpec,
        parent: Option<NodeId>,
        depth: u32,
        sibling_pos: u32,
        sibling_count: u32,
        path: String,
        next_index: &mut u32,
    ) -> Result<(NodeId, u32)> {
        let id = NodeId(self.nodes.len() as u32);
        let index = if spec.kind == NodeKind::Sentence {
            // parent is a paragraph, already indexed
            self.nodes[parent.expect("sentence has a parent").ix()].index
        } else {
            let i = *next_index;
            *next_index += 1;
            i
        };
        let mut text = spec.text;
        if text.trim().is_empty() && spec.kind == NodeKind::Paragraph {
            text = spec
                .children
                .iter()
                .map(|c| c.text.trim())
                .filter(|t| !t.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
        }
        self.nodes.push(DocNode {
            kind: spec.kind,
            label: to_tokens(&text),
            text,
            children: Vec::new(),
            parent,
            index,
            depth,
            height: 0,
            sibling_pos,
            sibling_count,
        });
        if spec.is_answer {
            self.answer_nodes.push(id);
        }
        let n_children = spec.children.len() as u32;
        let mut height = 0;
        for (pos, child) in spec.children.into_iter().enumerate() {
            let child_path = format!("{path}.children[{pos}]");
            if !spec.kind.may_contain(child.kind) {
                return Err(Error::Nesting {
                    path: child_path,
                    parent: spec.kind.to_string(),
                    child: child.kind.to_string(),
                });
            }
            let (cid, h) = self.push(
                child,
                Some(id),
                depth + 1,
                pos as u32,
                n_children,
                child_path,
                next_index,
            )?;
            self.nodes[id.ix()].children.push(cid);
            height = height.max(h + 1);
        }
        self.nodes[id.ix()].height = height;
        Ok((id, height))
    }

    /// Inverse of [`DocTree::build`]; answer flags are carried along.
    pub fn to_spec(&self) -> NodeSpec {
        self.spec_of(NodeId::ROOT)
    }

    fn spec_of(&self, id: NodeId) -> NodeSpec {
        let n = self.node(id);
        NodeSpec {
            kind: n.kind,
            text: n.text.clone(),
            children: n.children.iter().map(|c| self.spec_of(*c)).collect(),
            is_answer: self.is_answer(id),
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn node(&self, id: NodeId) -> &DocNode {
        &self.nodes[id.ix()]
    }

    pub fn nodes(&self) -> &[DocNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn max_index(&self) -> u32 {
        self.max_index
    }

    /// Total tokens in the document text.
    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.node(id).kind
    }

    pub fn index(&self, id: NodeId) -> u32 {
        self.node(id).index
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.node(id).children
    }

    pub fn first_child(&self, id: NodeId) -> Option<NodeId> {
        self.children(id).first().copied()
    }

    /// Sibling at `offset` positions from `id`, if it exists.
    pub fn sibling(&self, id: NodeId, offset: i64) -> Option<NodeId> {
        let parent = self.parent(id)?;
        let pos = self.node(id).sibling_pos as i64 + offset;
        let siblings = self.children(parent);
        if pos < 0 || pos >= siblings.len() as i64 {
            None
        } else {
            Some(siblings[pos as usize])
        }
    }

    /// Node whose text an extractor reads when positioned at `id`.
    pub fn reading_node(&self, id: NodeId) -> NodeId {
        match self.kind(id) {
            NodeKind::Sentence => self.parent(id).unwrap_or(id),
            _ => id,
        }
    }

    /// Nodes from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn sentences(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|id| self.kind(*id) == NodeKind::Sentence)
    }

    pub fn non_sentences(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids().filter(|id| self.kind(*id) != NodeKind::Sentence)
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids()
            .filter(|id| self.kind(*id) == NodeKind::Paragraph)
    }

    /// The non-sentence node with pre-order rank `index`.
    pub fn node_at_index(&self, index: u32) -> Option<NodeId> {
        self.non_sentences().find(|id| self.index(*id) == index)
    }

    pub fn answer_nodes(&self) -> &[NodeId] {
        &self.answer_nodes
    }

    pub fn is_answer(&self, id: NodeId) -> bool {
        self.answer_nodes.binary_search(&id).is_ok()
    }

    pub(crate) fn set_answer_nodes(&mut self, mut ids: Vec<NodeId>) {
        ids.sort_unstable();
        ids.dedup();
        self.answer_nodes = ids;
    }

    /// First answer occurrence: smallest index over answer nodes.
    pub fn fao(&self) -> Option<u32> {
        self.answer_nodes.iter().map(|id| self.index(*id)).min()
    }

    /// Answer paragraphs, i.e. the starting points for backward sampling.
    pub fn answer_paragraphs(&self) -> Vec<NodeId> {
        self.answer_nodes
            .iter()
            .copied()
            .filter(|id| self.kind(*id) == NodeKind::Paragraph)
            .collect()
    }

    /// Whether stopping at `id` returns text containing an answer. Sentence
    /// stops are judged by their paragraph.
    pub fn stop_has_answer(&self, id: NodeId) -> bool {
        self.is_answer(self.reading_node(id))
    }

    /// Index of the answer node closest to `index`; ties go to the smaller index.
    pub fn nearest_answer_index(&self, index: u32) -> Option<u32> {
        self.answer_nodes
            .iter()
            .map(|id| self.index(*id))
            .min_by_key(|&a| (a.abs_diff(index), a))
    }

    pub fn title(&self) -> &str {
        &self.nodes[0].text
    }
}

/// A question with its accepted answers and evidence documents.
#[derive(Debug, Clone)]
pub struct QASample {
    pub question_id: String,
    pub question: String,
    pub question_tokens: Vec<Token>,
    pub answer_aliases: Vec<String>,
    pub documents: Vec<DocTree>,
}

impl QASample {
    pub fn new(
        question_id: impl Into<String>,
        question: impl Into<String>,
        answer_aliases: Vec<String>,
        documents: Vec<DocTree>,
    ) -> Self {
        let question = question.into();
        QASample {
            question_id: question_id.into(),
            question_tokens: to_tokens(&question),
            question,
            answer_aliases,
            documents,
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn para(text: &str, sentences: &[&str]) -> NodeSpec {
        NodeSpec::new(NodeKind::Paragraph, text).with_children(
            sentences
                .iter()
                .map(|s| NodeSpec::new(NodeKind::Sentence, *s))
                .collect(),
        )
    }

    /// Ten nodes: a preface paragraph followed by two sections.
    pub fn phuket() -> DocTree {
        let root = NodeSpec::new(NodeKind::Title, "Phuket Province").with_children(vec![
            para("Phuket is one of the southern provinces of Thailand .", &[]),
            NodeSpec::new(NodeKind::Section, "History")
                .with_children(vec![para("The island was a trading hub .", &[])]),
            NodeSpec::new(NodeKind::Section, "Geography").with_children(vec![
                NodeSpec::new(NodeKind::Subsection, "Climate").with_children(vec![para(
                    "",
                    &["It is hot .", "Monsoon rains fall in Thailand ."],
                )]),
                para("Beaches line the west coast .", &[]),
            ]),
        ]);
        DocTree::build("phuket", root).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn preorder_oracle(tree: &DocTree, id: NodeId, next: &mut u32, out: &mut Vec<(NodeId, u32)>) {
        if tree.kind(id) != NodeKind::Sentence {
            out.push((id, *next));
            *next += 1;
        }
        for c in tree.children(id) {
            preorder_oracle(tree, *c, next, out);
        }
    }

    #[test]
    fn indices_follow_preorder() {
        let t = phuket();
        assert_eq!(t.len(), 10);
        let idx: Vec<u32> = t.ids().map(|i| t.index(i)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5, 6, 6, 6, 7]);
        assert_eq!(t.max_index(), 7);
        let mut seen = Vec::new();
        preorder_oracle(&t, t.root(), &mut 0, &mut seen);
        for (id, i) in seen {
            assert_eq!(t.index(id), i);
        }
    }

    #[test]
    fn geometry() {
        let t = phuket();
        assert_eq!(t.node(NodeId::ROOT).height, 4);
        assert_eq!(t.node(NodeId(4)).height, 3);
        assert_eq!(t.node(NodeId(7)).depth, 4);
        assert_eq!(t.node(NodeId(4)).sibling_pos, 2);
        assert_eq!(t.sibling(NodeId(2), 1), Some(NodeId(4)));
        assert_eq!(t.sibling(NodeId(4), 1), None);
        assert_eq!(t.reading_node(NodeId(7)), NodeId(6));
    }

    #[test]
    fn empty_paragraph_takes_sentence_text() {
        let t = phuket();
        assert_eq!(
            t.node(NodeId(6)).text,
            "It is hot . Monsoon rains fall in Thailand ."
        );
        // sentences are not double counted
        let direct: usize = [0usize, 1, 2, 3, 4, 5, 6, 9]
            .iter()
            .map(|i| t.node(NodeId(*i as u32)).label.len())
            .sum();
        assert_eq!(t.token_count(), direct);
    }

    #[test]
    fn sentence_under_section_is_rejected() {
        let root = NodeSpec::new(NodeKind::Title, "T").with_children(vec![NodeSpec::new(
            NodeKind::Section,
            "S",
        )
        .with_children(vec![NodeSpec::new(NodeKind::Sentence, "x")])]);
        let err = DocTree::build("d", root).unwrap_err();
        assert!(matches!(err, Error::Nesting { .. }), "{err}");
        assert!(err.to_string().contains("root.children[0].children[0]"));
    }

    #[test]
    fn nearest_answer_prefers_smaller_on_ties() {
        let mut t = phuket();
        t.set_answer_nodes(vec![NodeId(1), NodeId(6)]);
        assert_eq!(t.nearest_answer_index(4), Some(6));
        assert_eq!(t.nearest_answer_index(3), Some(1));
        t.set_answer_nodes(vec![NodeId(3), NodeId(9)]);
        assert_eq!(t.index(NodeId(9)), 7);
        assert_eq!(t.nearest_answer_index(5), Some(3));
    }
}
