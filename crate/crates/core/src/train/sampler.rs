use rand::seq::SliceRandom;
use rand::Rng as _;

use super::config::SamplerKind;
use crate::doctree::{DocTree, NodeId, NodeKind};
use crate::env::{move_node, Action};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Chance that the uniform sampler draws from the sentence pool.
pub const LEAF_PROBABILITY: f64 = 0.2;
/// Largest number of random moves taken away from an answer paragraph.
pub const MAX_BACKWARD_MOVES: u32 = 3;

/// Distribution over tree nodes used to seed tree-sampled episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingDistribution {
    Sequential,
    UniformTree,
    Backward,
    /// Each draw picks the uniform sampler with probability `lambda`, else the backward one.
    Mixture {
        lambda: f64,
    },
}

impl SamplingDistribution {
    pub fn from_kind(kind: SamplerKind, lambda: f64) -> Self {
        match kind {
            SamplerKind::Sequential => Self::Sequential,
            SamplerKind::Uniform => Self::UniformTree,
            SamplerKind::Backward => Self::Backward,
            SamplerKind::Mixture => Self::Mixture { lambda },
        }
    }

    pub fn sample(&self, tree: &DocTree, rng: &mut Rng) -> Result<NodeId> {
        match *self {
            Self::Sequential => Err(Error::Config(
                "the sequential distribution has no node sampler".into(),
            )),
            Self::UniformTree => Ok(sample_f_u(tree, rng)),
            Self::Backward => sample_f_b(tree, rng),
            Self::Mixture { lambda } => {
                if rng.gen::<f64>() < lambda {
                    Ok(sample_f_u(tree, rng))
                } else {
                    sample_f_b(tree, rng)
                }
            }
        }
    }
}

/// A sentence with probability 0.2, otherwise a non-sentence node; uniform
/// within the chosen pool. An empty pool hands its mass to the other.
pub fn sample_f_u(tree: &DocTree, rng: &mut Rng) -> NodeId {
    let (leaves, inner): (Vec<NodeId>, Vec<NodeId>) = tree
        .ids()
        .partition(|id| tree.kind(*id) == NodeKind::Sentence);
    let want_leaf = rng.gen::<f64>() < LEAF_PROBABILITY;
    let pool = if leaves.is_empty() {
        &inner
    } else if inner.is_empty() || want_leaf {
        &leaves
    } else {
        &inner
    };
    *pool.choose(rng).expect("a tree has at least one node")
}

/// Uniform answer paragraph, then `B ~ U{1,2,3}` uniformly random movement actions.
pub fn sample_f_b(tree: &DocTree, rng: &mut Rng) -> Result<NodeId> {
    let starts = tree.answer_paragraphs();
    let &start = starts.choose(rng).ok_or_else(|| {
        Error::Invalid(format!("document {} has no answer paragraph", tree.doc_id))
    })?;
    let moves = rng.gen_range(1..=MAX_BACKWARD_MOVES);
    let mut node = start;
    for _ in 0..moves {
        let a = *Action::MOVEMENTS.choose(rng).expect("non-empty");
        node = move_node(tree, node, a);
    }
    Ok(node)
}
