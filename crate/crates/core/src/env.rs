//! The navigation MDP over a single document tree.
//!
//! A state is the current node, the question, the observation (label prefixes
//! along the root path), the last answer prediction, and two feature vectors:
//! `phi_n` for tree geometry and `phi_z` for the prediction.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::doctree::{DocTree, NodeId, QASample, Token};
use crate::reader::{AnswerPrediction, ExtractQuery, Extractor};

/// Tokens each root-path node contributes to the observation.
pub const NODE_PREFIX_LEN: usize = 20;
/// Observation length cap; the most recent tokens are kept.
pub const MAX_OBSERVATION_LEN: usize = 120;

pub const STOP_EXACT_REWARD: f64 = 2.0;
pub const ANSWER_REWARD: f64 = -0.06;
pub const STEP_REWARD: f64 = -0.02;

pub const TRAIN_BUDGET: u32 = 30;
pub const EVAL_BUDGET: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Down,
    Right,
    Left,
    UpRight,
    UpLeft,
    Answer,
    Stop,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] = [
        Action::Down,
        Action::Right,
        Action::Left,
        Action::UpRight,
        Action::UpLeft,
        Action::Answer,
        Action::Stop,
    ];
    pub const MOVEMENTS: [Action; 5] = [
        Action::Down,
        Action::Right,
        Action::Left,
        Action::UpRight,
        Action::UpLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn is_movement(self) -> bool {
        self.index() < 5
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Down => "down",
            Action::Right => "right",
            Action::Left => "left",
            Action::UpRight => "up_right",
            Action::UpLeft => "up_left",
            Action::Answer => "answer",
            Action::Stop => "stop",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub node: NodeId,
    pub question: Arc<[Token]>,
    pub observation: Arc<[Token]>,
    pub answer_pred: Option<Arc<AnswerPrediction>>,
    /// Node the current prediction was extracted at.
    pub pred_node: Option<NodeId>,
    /// (height, depth, h_dist_start, h_dist_end, parent h_dist_start, parent h_dist_end, step)
    pub phi_n: [f64; 7],
    /// (entropy, logit, context tokens); zeros without a prediction.
    pub phi_z: [f64; 3],
    pub step: u32,
}

impl NavState {
    pub fn answer_tokens(&self) -> &[String] {
        self.answer_pred
            .as_deref()
            .map_or(&[], |p| p.tokens.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// Action actually applied; differs from the requested one when the budget forces a stop.
    pub action: Action,
    pub next_state: NavState,
    pub reward: f64,
    pub terminal: bool,
    pub emitted_answer: Option<Arc<AnswerPrediction>>,
    /// Context tokens passed to the extractor on this step (0 when cached or no extraction).
    pub extracted_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvOptions {
    pub budget: u32,
    /// Answer is unavailable and Stop both extracts and terminates.
    pub coupled: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            budget: TRAIN_BUDGET,
            coupled: false,
        }
    }
}

/// One (question, document) pair with an extractor.
#[derive(Clone)]
pub struct Env<'a> {
    pub sample: &'a QASample,
    pub doc: &'a DocTree,
    extractor: &'a dyn Extractor,
    question: Arc<[Token]>,
    pub options: EnvOptions,
}

impl<'a> Env<'a> {
    pub fn new(
        sample: &'a QASample,
        doc: &'a DocTree,
        extractor: &'a dyn Extractor,
        options: EnvOptions,
    ) -> Self {
        Self {
            sample,
            doc,
            extractor,
            question: sample.question_tokens.clone().into(),
            options,
        }
    }

    pub fn observation(&self, node: NodeId) -> Vec<Token> {
        let path = self.doc.path_from_root(node);
        concat_prefixes(path.iter().map(|id| self.doc.node(*id).label.as_slice()))
    }

    pub fn phi_n(&self, node: NodeId, step: u32) -> [f64; 7] {
        let n = self.doc.node(node);
        let (ps, pe) = match n.parent {
            Some(p) => horizontal(self.doc, p),
            None => (0, 0),
        };
        let (s, e) = horizontal(self.doc, node);
        [n.height, n.depth, s, e, ps, pe, step].map(f64::from)
    }

    pub fn make_state(
        &self,
        node: NodeId,
        step: u32,
        pred: Option<(Arc<AnswerPrediction>, NodeId)>,
    ) -> NavState {
        let (answer_pred, pred_node) = match pred {
            Some((p, n)) => (Some(p), Some(n)),
            None => (None, None),
        };
        NavState {
            node,
            question: self.question.clone(),
            observation: self.observation(node).into(),
            phi_z: answer_pred
                .as_deref()
                .map_or([0.0; 3], AnswerPrediction::phi_z),
            answer_pred,
            pred_node,
            phi_n: self.phi_n(node, step),
            step,
        }
    }

    pub fn reset(&self) -> NavState {
        self.make_state(NodeId::ROOT, 0, None)
    }

    /// State at an arbitrary node, with the step feature approximated by depth.
    pub fn state_at(&self, node: NodeId) -> NavState {
        self.make_state(node, self.doc.node(node).depth, None)
    }

    pub fn is_legal(&self, action: Action) -> bool {
        !(self.options.coupled && action == Action::Answer)
    }

    pub fn action_mask(&self) -> [bool; Action::COUNT] {
        Action::ALL.map(|a| self.is_legal(a))
    }

    pub fn move_target(&self, node: NodeId, action: Action) -> NodeId {
        move_node(self.doc, node, action)
    }

    pub fn stop_reward(&self, node: NodeId) -> f64 {
        let n = self.doc.index(node);
        let nearest = self
            .doc
            .nearest_answer_index(n)
            .expect("documents in an environment have an answer node");
        if nearest == n {
            STOP_EXACT_REWARD
        } else {
            1.0 - f64::from(n.abs_diff(nearest)) / f64::from(self.doc.max_index().max(1))
        }
    }

    pub fn reward(&self, state: &NavState, action: Action) -> f64 {
        match action {
            Action::Stop => self.stop_reward(state.node),
            Action::Answer if self.is_legal(Action::Answer) => ANSWER_REWARD,
            _ => STEP_REWARD,
        }
    }

    /// Runs the extractor on the node's label, or on the containing paragraph for sentences.
    pub fn extract(&self, node: NodeId) -> AnswerPrediction {
        let reading = self.doc.reading_node(node);
        let context = &self.doc.node(reading).label;
        if context.is_empty() {
            return AnswerPrediction::empty();
        }
        let query = ExtractQuery {
            qid: &self.sample.question_id,
            doc_id: &self.doc.doc_id,
            node_index: self.doc.index(reading),
            question: &self.sample.question_tokens,
            context,
            aliases: &self.sample.answer_aliases,
        };
        match self.extractor.extract(&query) {
            Ok(p) => p,
            Err(e) => {
                log::warn!(
                    "extractor failed at {} node {}: {e}",
                    self.doc.doc_id,
                    node.0
                );
                AnswerPrediction::empty()
            }
        }
    }

    fn cached_or_extract(&self, state: &NavState) -> (Arc<AnswerPrediction>, usize) {
        match (&state.answer_pred, state.pred_node) {
            (Some(p), Some(n)) if n == state.node => (p.clone(), 0),
            _ => {
                let p = self.extract(state.node);
                let n = p.context_token_count;
                (Arc::new(p), n)
            }
        }
    }

    /// Applies one action. When this is the last step of the budget, the action becomes Stop.
    pub fn transition(&self, state: &NavState, action: Action) -> StepResult {
        let action = if state.step + 1 >= self.options.budget {
            Action::Stop
        } else {
            action
        };
        let reward = self.reward(state, action);
        let step = state.step + 1;
        let carried = || state.answer_pred.clone().zip(state.pred_node);
        match action {
            Action::Stop => {
                let (pred, tokens) = self.cached_or_extract(state);
                StepResult {
                    action,
                    next_state: self.make_state(state.node, step, Some((pred.clone(), state.node))),
                    reward,
                    terminal: true,
                    emitted_answer: Some(pred),
                    extracted_tokens: tokens,
                }
            }
            Action::Answer if self.is_legal(action) => {
                let (pred, tokens) = self.cached_or_extract(state);
                StepResult {
                    action,
                    next_state: self.make_state(state.node, step, Some((pred, state.node))),
                    reward,
                    terminal: false,
                    emitted_answer: None,
                    extracted_tokens: tokens,
                }
            }
            _ => StepResult {
                action,
                next_state: self.make_state(self.move_target(state.node, action), step, carried()),
                reward,
                terminal: false,
                emitted_answer: None,
                extracted_tokens: 0,
            },
        }
    }

    pub fn episode(&self) -> Episode<'_, 'a> {
        Episode::new(self, self.reset())
    }

    pub fn episode_from(&self, state: NavState) -> Episode<'_, 'a> {
        Episode::new(self, state)
    }
}

/// Destination of a movement action; illegal moves stay in place.
pub fn move_node(doc: &DocTree, node: NodeId, action: Action) -> NodeId {
    let target = match action {
        Action::Down => doc.first_child(node),
        Action::Right => doc.sibling(node, 1),
        Action::Left => doc.sibling(node, -1),
        Action::UpRight => doc.parent(node).and_then(|p| doc.sibling(p, 1)),
        Action::UpLeft => doc.parent(node).and_then(|p| doc.sibling(p, -1)),
        Action::Answer | Action::Stop => None,
    };
    target.unwrap_or(node)
}

/// Concatenates the first [`NODE_PREFIX_LEN`] tokens of each label, keeping
/// the last [`MAX_OBSERVATION_LEN`] tokens.
pub fn concat_prefixes<'t>(labels: impl IntoIterator<Item = &'t [Token]>) -> Vec<Token> {
    let mut o: Vec<Token> = Vec::new();
    for label in labels {
        o.extend(label.iter().take(NODE_PREFIX_LEN).cloned());
    }
    if o.len() > MAX_OBSERVATION_LEN {
        o.drain(..o.len() - MAX_OBSERVATION_LEN);
    }
    o
}

fn horizontal(doc: &DocTree, id: NodeId) -> (u32, u32) {
    let n = doc.node(id);
    if n.parent.is_none() {
        return (0, 0);
    }
    (n.sibling_pos, n.sibling_count - 1 - n.sibling_pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub node_index: u32,
    pub node: u32,
    pub action: Action,
    pub reward: f64,
}

/// A running episode. Steps are counted from the starting state's step feature.
pub struct Episode<'e, 'a> {
    pub env: &'e Env<'a>,
    pub state: NavState,
    pub step_count: u32,
    pub trace: Vec<TraceStep>,
    pub done: bool,
    pub emitted: Option<Arc<AnswerPrediction>>,
    visited: BTreeSet<NodeId>,
    extracted_tokens: usize,
}

impl<'e, 'a> Episode<'e, 'a> {
    fn new(env: &'e Env<'a>, state: NavState) -> Self {
        Self {
            env,
            visited: BTreeSet::from([state.node]),
            state,
            step_count: 0,
            trace: Vec::new(),
            done: false,
            emitted: None,
            extracted_tokens: 0,
        }
    }

    pub fn step(&mut self, action: Action) -> StepResult {
        assert!(!self.done, "episode already terminated");
        let r = self.env.transition(&self.state, action);
        self.trace.push(TraceStep {
            node_index: self.env.doc.index(self.state.node),
            node: self.state.node.0,
            action: r.action,
            reward: r.reward,
        });
        self.step_count += 1;
        self.extracted_tokens += r.extracted_tokens;
        self.visited.insert(r.next_state.node);
        self.done = r.terminal;
        if r.terminal {
            self.emitted = r.emitted_answer.clone();
        }
        self.state = r.next_state.clone();
        r
    }

    pub fn stop_node(&self) -> NodeId {
        self.state.node
    }

    pub fn total_reward(&self) -> f64 {
        self.trace.iter().map(|t| t.reward).sum()
    }

    pub fn visited(&self) -> &BTreeSet<NodeId> {
        &self.visited
    }

    /// Label-prefix tokens of every distinct visited node plus extractor context tokens.
    pub fn tokens_consumed(&self) -> usize {
        let labels: usize = self
            .visited
            .iter()
            .map(|id| self.env.doc.node(*id).label.len().min(NODE_PREFIX_LEN))
            .sum();
        labels + self.extracted_tokens
    }
}
