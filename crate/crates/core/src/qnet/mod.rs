//! Dueling action-value network over navigation states.
//!
//! Tokens are embedded as `[word ; char-CNN]`. The question is read by a
//! bidirectional LSTM, the observation by an LSTM, both pooled with
//! self-attention; the answer prediction is read by an LSTM whose last state
//! is joined with `phi_z`. The fused state passes through a shared tanh layer
//! and two tanh branches; `phi_n` joins each branch at its output layer.
//!
//! Parameters live in one flat vector addressed through [`Layout`], and all
//! gradients are computed by hand-written backward passes.

mod kernels;
mod layers;
mod layout;
mod lexicon;
mod loss;
mod optim;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::doctree::Token;
use crate::env::{Action, NavState};
use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use crate::seed::Rng;

pub use kernels::{dot, matvec_add, sigmoid};
pub use layers::CharTape;
pub use layout::{Attention, Dense, Layout, Lstm, Tensor, PHI_N_DIM, PHI_Z_DIM};
pub use lexicon::{Lexicon, MAX_WORD_CHARS, NULL_TOKEN, NULL_WORD, UNK_CHAR, UNK_WORD};
pub use loss::{td_loss, td_loss_value, td_target, TdOptions, TdOutput};
pub use optim::{global_norm, RmsProp, RmsPropConfig};

use layers::{AttTape, LstmTape};

/// Navigation features are divided by 10 before entering the network.
pub const PHI_N_SCALE: f64 = 0.1;
/// The context-length component of `phi_z` is divided by 100.
pub const Z_N_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QNetConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub conv_filter_size: usize,
    pub hidden_dim: usize,
    pub ffnn1_dim: usize,
    pub ffnn2_dim: usize,
    pub dropout: f64,
    /// Hidden width of the attention scorers; `hidden_dim` when unset.
    pub attention_dim: Option<usize>,
    pub max_words: usize,
    pub min_word_count: usize,
    /// Optional text-format word vectors (`word v1 v2 ...` per line).
    pub word_vectors: Option<std::path::PathBuf>,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl QNetConfig {
    pub fn paper() -> Self {
        Self {
            word_dim: 300,
            char_dim: 20,
            conv_filter_size: 5,
            hidden_dim: 300,
            ffnn1_dim: 512,
            ffnn2_dim: 256,
            dropout: 0.2,
            attention_dim: None,
            max_words: 100_000,
            min_word_count: 1,
            word_vectors: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            word_dim: 16,
            char_dim: 8,
            conv_filter_size: 3,
            hidden_dim: 32,
            ffnn1_dim: 64,
            ffnn2_dim: 32,
            dropout: 0.0,
            attention_dim: None,
            max_words: 5000,
            min_word_count: 1,
            word_vectors: None,
        }
    }

    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or(self.hidden_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.word_dim + self.char_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("conv_filter_size", self.conv_filter_size),
            ("hidden_dim", self.hidden_dim),
            ("ffnn1_dim", self.ffnn1_dim),
            ("ffnn2_dim", self.ffnn2_dim),
            ("attention_dim", self.attention_dim()),
            ("max_words", self.max_words),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("qnet.{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "qnet.dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues {
    pub q: [f64; Action::COUNT],
    pub value: f64,
    pub advantages: [f64; Action::COUNT],
}

impl QValues {
    /// `Q = V + A - mean(A)`
    pub fn from_parts(value: f64, advantages: [f64; Action::COUNT]) -> Self {
        let mean = advantages.iter().sum::<f64>() / Action::COUNT as f64;
        Self {
            q: advantages.map(|a| value + a - mean),
            value,
            advantages,
        }
    }

    /// Highest-valued allowed action; the lowest index wins ties.
    pub fn greedy(&self, mask: &[bool; Action::COUNT]) -> Action {
        let mut best: Option<usize> = None;
        for i in 0..Action::COUNT {
            if mask[i] && best.is_none_or(|b| self.q[i] > self.q[b]) {
                best = Some(i);
            }
        }
        Action::from_index(best.unwrap_or(Action::Stop.index()))
    }

    pub fn max(&self, mask: &[bool; Action::COUNT]) -> f64 {
        self.q[self.greedy(mask).index()]
    }
}

/// Unique tokens of a batch with their embeddings, so each distinct token is
/// embedded and backpropagated once.
pub(crate) struct TokenTable<'a> {
    index: HashMap<&'a str, usize>,
    words: Vec<u32>,
    chars: Vec<Vec<u32>>,
    tapes: Vec<CharTape>,
    /// `[n_tokens][embed_dim]`
    emb: Vec<f64>,
}

impl<'a> TokenTable<'a> {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            words: Vec::new(),
            chars: Vec::new(),
            tapes: Vec::new(),
            emb: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.words.len()
    }

    fn intern(&mut self, net: &QNet, token: &'a str) -> usize {
        if let Some(i) = self.index.get(token) {
            return *i;
        }
        let i = self.words.len();
        self.index.insert(token, i);
        self.words.push(net.lexicon.word_id(token));
        self.chars.push(net.lexicon.char_ids(token));
        i
    }

    fn intern_all(&mut self, net: &QNet, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().map(|t| self.intern(net, t)).collect()
    }

    /// Embeds every interned token not embedded yet.
    fn embed(&mut self, net: &QNet, par: Parallelism) {
        let l = &net.layout;
        let start = self.tapes.len();
        let new: Vec<usize> = (start..self.len()).collect();
        let tapes = parallel::map(par, &new, |&i| {
            layers::char_cnn(&l.char_emb, &l.conv, &net.params, &self.chars[i])
        });
        for (i, tape) in new.into_iter().zip(tapes) {
            self.emb
                .extend_from_slice(l.word_emb.row(&net.params, self.words[i] as usize));
            self.emb.extend_from_slice(&tape.out);
            self.tapes.push(tape);
        }
    }

    fn gather(&self, ids: &[usize], e: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            x.extend_from_slice(&self.emb[i * e..(i + 1) * e]);
        }
        x
    }

    /// Pushes per-token embedding gradients into the word and character parameters.
    fn backward(&self, net: &QNet, dtok: &[f64], g: &mut [f64]) {
        let l = &net.layout;
        let e = net.config.embed_dim();
        let w = net.config.word_dim;
        for i in 0..self.len() {
            let d = &dtok[i * e..(i + 1) * e];
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            kernels::axpy(1.0, &d[..w], l.word_emb.row_mut(g, self.words[i] as usize));
            layers::char_cnn_backward(
                &l.char_emb,
                &l.conv,
                &net.params,
                &self.chars[i],
                &self.tapes[i],
                &d[w..],
                g,
            );
        }
    }
}

/// Token positions of one state inside a [`TokenTable`] plus scaled features.
pub(crate) struct StateInput {
    q: Vec<usize>,
    o: Vec<usize>,
    z: Vec<usize>,
    phi_n: [f64; PHI_N_DIM],
    phi_z: [f64; PHI_Z_DIM],
}

pub(crate) struct QuestionEnc {
    x: Vec<f64>,
    fw: LstmTape,
    bw: LstmTape,
    u: Vec<f64>,
    att: AttTape,
}

pub(crate) struct StateTape {
    q: Arc<QuestionEnc>,
    o_x: Vec<f64>,
    o_lstm: LstmTape,
    o_att: AttTape,
    z_x: Vec<f64>,
    z_lstm: LstmTape,
    hs: Vec<f64>,
    hs_mask: Option<Vec<f64>>,
    v0: Vec<f64>,
    v0_mask: Option<Vec<f64>>,
    v0d: Vec<f64>,
    v1v: Vec<f64>,
    v1a: Vec<f64>,
    in2v: Vec<f64>,
    in2a: Vec<f64>,
}

fn dropout_mask(rate: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

/// One parameter tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Serialized network format version.
pub const NETWORK_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QNetData {
    format: u32,
    config: QNetConfig,
    lexicon: Lexicon,
    tensors: Vec<TensorRecord>,
}

/// Question encodings keyed by question tokens. Clear it whenever the
/// parameters that filled it change.
#[derive(Default)]
pub struct QuestionCache {
    encs: HashMap<Arc<[Token]>, Arc<QuestionEnc>>,
}

impl QuestionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.encs.clear();
    }

    pub fn len(&self) -> usize {
        self.encs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encs.is_empty()
    }
}

/// Network configuration, vocabulary, and parameters.
#[derive(Debug, Clone)]
pub struct QNet {
    pub config: Arc<QNetConfig>,
    pub lexicon: Arc<Lexicon>,
    pub layout: Arc<Layout>,
    pub params: Vec<f64>,
}

impl PartialEq for QNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.lexicon == other.lexicon && self.params == other.params
    }
}

impl Serialize for QNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        QNetData {
            format: NETWORK_FORMAT,
            config: (*self.config).clone(),
            lexicon: (*self.lexicon).clone(),
            tensors: self.tensors(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = QNetData::deserialize(d)?;
        if data.format != NETWORK_FORMAT {
            return Err(serde::de::Error::custom(format!(
                "unsupported network format {}",
                data.format
            )));
        }
        QNet::from_tensors(data.config, data.lexicon, &data.tensors)
            .map_err(serde::de::Error::custom)
    }
}

impl QNet {
    pub fn new(config: QNetConfig, lexicon: Lexicon, rng: &mut Rng) -> Result<QNet> {
        config.validate()?;
        let layout = Layout::new(&config, lexicon.n_words(), lexicon.n_chars());
        let params = layout.init(rng);
        let mut net = QNet {
            config: Arc::new(config),
            lexicon: Arc::new(lexicon),
            layout: Arc::new(layout),
            params,
        };
        if let Some(path) = net.config.word_vectors.clone() {
            let n = net.load_word_vectors(&path)?;
            log::info!("loaded {n} word vectors from {}", path.display());
        }
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter slice of a named tensor, e.g. `"question_fw.W"`.
    pub fn tensor(&self, name: &str) -> Option<(&[f64], usize, usize)> {
        self.layout
            .tensor(name)
            .map(|t| (t.of(&self.params), t.rows, t.cols))
    }

    /// Copies vectors for known words from a `word v1 ... vD` text file.
    pub fn load_word_vectors(&mut self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dim = self.config.word_dim;
        let mut loaded = 0;
        for (ln, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values
                .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), ln + 1)))?;
            if values.len() != dim {
                return Err(Error::Invalid(format!(
                    "{}:{}: expected {dim} values, found {}",
                    path.display(),
                    ln + 1,
                    values.len()
                )));
            }
            let id = self.lexicon.word_id(word);
            if id != UNK_WORD && id != NULL_WORD {
                self.layout
                    .word_emb
                    .row_mut(&mut self.params, id as usize)
                    .copy_from_slice(&values);
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Every parameter tensor, in layout order.
    pub fn tensors(&self) -> Vec<TensorRecord> {
        self.layout
            .names
            .iter()
            .map(|(name, t)| TensorRecord {
                name: name.clone(),
                shape: [t.rows, t.cols],
                data: t.of(&self.params).to_vec(),
            })
            .collect()
    }

    /// Rebuilds a network; every tensor of the layout must be present with its exact shape.
    pub fn from_tensors(
        config: QNetConfig,
        lexicon: Lexicon,
        tensors: &[TensorRecord],
    ) -> Result<QNet> {
        config.validate()?;
        let layout = Layout::new(&config, lexicon.n_words(), lexicon.n_chars());
        let by_name: HashMap<&str, &TensorRecord> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if by_name.len() != tensors.len() {
            return Err(Error::Invalid("duplicate tensor names".into()));
        }
        let mut params = vec![0.0; layout.total];
        for (name, t) in &layout.names {
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Invalid(format!("missing tensor {name}")))?;
            if rec.shape != [t.rows, t.cols] || rec.data.len() != t.len() {
                return Err(Error::Invalid(format!(
                    "tensor {name} has shape {:?}, expected [{}, {}]",
                    rec.shape, t.rows, t.cols
                )));
            }
            t.of_mut(&mut params).copy_from_slice(&rec.data);
        }
        if tensors.len() != layout.names.len() {
            return Err(Error::Invalid(format!(
                "expected {} tensors, found {}",
                layout.names.len(),
                tensors.len()
            )));
        }
        Ok(QNet {
            config: Arc::new(config),
            lexicon: Arc::new(lexicon),
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<QNet> {
        serde_json::from_str(s).map_err(|e| Error::Invalid(format!("invalid network: {e}")))
    }

    fn input<'a>(&self, table: &mut TokenTable<'a>, state: &'a NavState) -> Result<StateInput> {
        if state.question.is_empty() {
            return Err(Error::Invalid("question has no tokens".into()));
        }
        let q = table.intern_all(self, state.question.iter().map(|t| &**t));
        let o = if state.observation.is_empty() {
            vec![table.intern(self, NULL_TOKEN)]
        } else {
            table.intern_all(self, state.observation.iter().map(|t| &**t))
        };
        let z = match state.answer_pred.as_deref() {
            Some(p) if !p.tokens.is_empty() => {
                table.intern_all(self, p.tokens.iter().map(String::as_str))
            }
            _ => vec![table.intern(self, NULL_TOKEN)],
        };
        Ok(StateInput {
            q,
            o,
            z,
            phi_n: state.phi_n.map(|x| x * PHI_N_SCALE),
            phi_z: [state.phi_z[0], state.phi_z[1], state.phi_z[2] * Z_N_SCALE],
        })
    }

    fn encode_question_ids(&self, table: &TokenTable, ids: &[usize]) -> QuestionEnc {
        let l = &self.layout;
        let h = self.config.hidden_dim;
        let x = table.gather(ids, self.config.embed_dim());
        let fw = layers::lstm(&l.q_fw, &self.params, &x, false);
        let bw = layers::lstm(&l.q_bw, &self.params, &x, true);
        let mut u = Vec::with_capacity(ids.len() * 2 * h);
        for t in 0..ids.len() {
            u.extend_from_slice(fw.h(t));
            u.extend_from_slice(bw.h(t));
        }
        let att = layers::attention(&l.q_att, &self.params, &u, 2 * h);
        QuestionEnc { x, fw, bw, u, att }
    }

    /// Encodes each distinct question among `inputs` once; returns one encoding per input.
    fn shared_questions(
        &self,
        table: &TokenTable,
        inputs: &[&StateInput],
        par: Parallelism,
    ) -> Vec<Arc<QuestionEnc>> {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut unique: Vec<&[usize]> = Vec::new();
        let slots: Vec<usize> = inputs
            .iter()
            .map(|inp| {
                *index.entry(&inp.q[..]).or_insert_with(|| {
                    unique.push(&inp.q);
                    unique.len() - 1
                })
            })
            .collect();
        let encs = parallel::map(par, &unique, |ids| {
            Arc::new(self.encode_question_ids(table, ids))
        });
        slots.into_iter().map(|i| encs[i].clone()).collect()
    }

    /// Forward pass. `question` reuses an encoding from the same parameters;
    /// `dropout` enables training-mode dropout.
    fn forward(
        &self,
        table: &TokenTable,
        inp: &StateInput,
        question: Option<Arc<QuestionEnc>>,
        dropout: Option<&mut Rng>,
    ) -> (QValues, StateTape) {
        let l = &self.layout;
        let p = &self.params;
        let h = self.config.hidden_dim;
        let e = self.config.embed_dim();
        let q = question.unwrap_or_else(|| Arc::new(self.encode_question_ids(table, &inp.q)));
        let o_x = table.gather(&inp.o, e);
        let o_lstm = layers::lstm(&l.o_lstm, p, &o_x, false);
        let o_att = layers::attention(&l.o_att, p, &o_lstm.hs, h);
        let z_x = table.gather(&inp.z, e);
        let z_lstm = layers::lstm(&l.z_lstm, p, &z_x, false);

        let mut hs = Vec::with_capacity(4 * h + PHI_Z_DIM);
        hs.extend_from_slice(&q.att.out);
        hs.extend_from_slice(&o_att.out);
        hs.extend_from_slice(z_lstm.last());
        hs.extend_from_slice(&inp.phi_z);

        let rate = self.config.dropout;
        let (hs_mask, v0_mask, v0, v0d, hs) = match dropout {
            Some(rng) if rate > 0.0 => {
                let m1 = dropout_mask(rate, hs.len(), rng);
                let hs: Vec<f64> = hs.iter().zip(&m1).map(|(a, b)| a * b).collect();
                let v0 = layers::dense_tanh(&l.fuse, p, &hs);
                let m2 = dropout_mask(rate, v0.len(), rng);
                let v0d = v0.iter().zip(&m2).map(|(a, b)| a * b).collect();
                (Some(m1), Some(m2), v0, v0d, hs)
            }
            _ => {
                let v0 = layers::dense_tanh(&l.fuse, p, &hs);
                let v0d = v0.clone();
                (None, None, v0, v0d, hs)
            }
        };
        let v1v = layers::dense_tanh(&l.v1_value, p, &v0d);
        let v1a = layers::dense_tanh(&l.v1_adv, p, &v0d);
        let in2v: Vec<f64> = v1v.iter().chain(&inp.phi_n).copied().collect();
        let in2a: Vec<f64> = v1a.iter().chain(&inp.phi_n).copied().collect();
        let value = layers::linear(&l.v2_value, p, &in2v)[0];
        let adv = layers::linear(&l.v2_adv, p, &in2a);
        let mut a = [0.0; Action::COUNT];
        a.copy_from_slice(&adv);
        (
            QValues::from_parts(value, a),
            StateTape {
                q,
                o_x,
                o_lstm,
                o_att,
                z_x,
                z_lstm,
                hs,
                hs_mask,
                v0,
                v0_mask,
                v0d,
                v1v,
                v1a,
                in2v,
                in2a,
            },
        )
    }

    /// Accumulates parameter gradients into `g` and token-embedding gradients into `dtok`.
    fn backward(
        &self,
        inp: &StateInput,
        tape: &StateTape,
        dq: &[f64; Action::COUNT],
        g: &mut [f64],
        dtok: &mut [f64],
    ) {
        let l = &self.layout;
        let p = &self.params;
        let h = self.config.hidden_dim;
        let e = self.config.embed_dim();
        let f2 = self.config.ffnn2_dim;

        let dv: f64 = dq.iter().sum();
        let mean = dv / Action::COUNT as f64;
        let da: Vec<f64> = dq.iter().map(|d| d - mean).collect();

        let mut din2v = vec![0.0; tape.in2v.len()];
        layers::linear_backward(&l.v2_value, p, &tape.in2v, &[dv], g, Some(&mut din2v));
        let mut din2a = vec![0.0; tape.in2a.len()];
        layers::linear_backward(&l.v2_adv, p, &tape.in2a, &da, g, Some(&mut din2a));

        let mut dv0d = vec![0.0; tape.v0d.len()];
        layers::dense_tanh_backward(
            &l.v1_value,
            p,
            &tape.v0d,
            &tape.v1v,
            &din2v[..f2],
            g,
            Some(&mut dv0d),
        );
        layers::dense_tanh_backward(
            &l.v1_adv,
            p,
            &tape.v0d,
            &tape.v1a,
            &din2a[..f2],
            g,
            Some(&mut dv0d),
        );
        if let Some(m) = &tape.v0_mask {
            for (d, m) in dv0d.iter_mut().zip(m) {
                *d *= m;
            }
        }
        let mut dhs = vec![0.0; tape.hs.len()];
        layers::dense_tanh_backward(&l.fuse, p, &tape.hs, &tape.v0, &dv0d, g, Some(&mut dhs));
        if let Some(m) = &tape.hs_mask {
            for (d, m) in dhs.iter_mut().zip(m) {
                *d *= m;
            }
        }
        let (dh_q, rest) = dhs.split_at(2 * h);
        let (dh_o, rest) = rest.split_at(h);
        let dh_z = &rest[..h];

        // answer encoder: only the last state feeds forward
        let mut dz_hs = vec![0.0; tape.z_lstm.hs.len()];
        let last = inp.z.len() - 1;
        dz_hs[last * h..(last + 1) * h].copy_from_slice(dh_z);
        let mut dz_x = vec![0.0; tape.z_x.len()];
        layers::lstm_backward(&l.z_lstm, p, &tape.z_lstm, &tape.z_x, &dz_hs, g, &mut dz_x);
        scatter(&inp.z, &dz_x, e, dtok);

        let mut do_hs = vec![0.0; tape.o_lstm.hs.len()];
        layers::attention_backward(
            &l.o_att,
            p,
            &tape.o_att,
            &tape.o_lstm.hs,
            h,
            dh_o,
            g,
            &mut do_hs,
        );
        let mut do_x = vec![0.0; tape.o_x.len()];
        layers::lstm_backward(&l.o_lstm, p, &tape.o_lstm, &tape.o_x, &do_hs, g, &mut do_x);
        scatter(&inp.o, &do_x, e, dtok);

        let q = &tape.q;
        let n = inp.q.len();
        let mut du = vec![0.0; q.u.len()];
        layers::attention_backward(&l.q_att, p, &q.att, &q.u, 2 * h, dh_q, g, &mut du);
        let mut dfw = vec![0.0; n * h];
        let mut dbw = vec![0.0; n * h];
        for t in 0..n {
            dfw[t * h..(t + 1) * h].copy_from_slice(&du[t * 2 * h..t * 2 * h + h]);
            dbw[t * h..(t + 1) * h].copy_from_slice(&du[t * 2 * h + h..(t + 1) * 2 * h]);
        }
        let mut dq_x = vec![0.0; q.x.len()];
        layers::lstm_backward(&l.q_fw, p, &q.fw, &q.x, &dfw, g, &mut dq_x);
        layers::lstm_backward(&l.q_bw, p, &q.bw, &q.x, &dbw, g, &mut dq_x);
        scatter(&inp.q, &dq_x, e, dtok);
    }

    pub fn q_values(&self, state: &NavState) -> Result<QValues> {
        Ok(self
            .q_values_batch(&[state], Parallelism::Sequential)?
            .remove(0))
    }

    /// Evaluation-mode Q-values for several states; one embedding pass covers all of them.
    pub fn q_values_batch(&self, states: &[&NavState], par: Parallelism) -> Result<Vec<QValues>> {
        let mut table = TokenTable::new();
        let inputs = states
            .iter()
            .map(|s| self.input(&mut table, s))
            .collect::<Result<Vec<_>>>()?;
        table.embed(self, par);
        let refs: Vec<&StateInput> = inputs.iter().collect();
        let questions = self.shared_questions(&table, &refs, par);
        let jobs: Vec<(&StateInput, &Arc<QuestionEnc>)> = inputs.iter().zip(&questions).collect();
        let out = parallel::map(par, &jobs, |(inp, q)| {
            self.forward(&table, inp, Some(Arc::clone(q)), None).0
        });
        for q in &out {
            check_finite(q)?;
        }
        Ok(out)
    }

    /// [`QNet::q_values`] reusing question encodings from `cache`. The cache
    /// is only valid for the parameters it was filled with.
    pub fn q_values_cached(&self, state: &NavState, cache: &mut QuestionCache) -> Result<QValues> {
        let mut table = TokenTable::new();
        let inp = self.input(&mut table, state)?;
        table.embed(self, Parallelism::Sequential);
        let enc = match cache.encs.get(&state.question[..]) {
            Some(enc) => Arc::clone(enc),
            None => {
                let enc = Arc::new(self.encode_question_ids(&table, &inp.q));
                cache
                    .encs
                    .insert(Arc::clone(&state.question), Arc::clone(&enc));
                enc
            }
        };
        let q = self.forward(&table, &inp, Some(enc), None).0;
        check_finite(&q)?;
        Ok(q)
    }

    /// `[word ; char]` embedding per token.
    pub fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(Error::Invalid(
                "cannot embed an empty token sequence".into(),
            ));
        }
        let mut table = TokenTable::new();
        let ids = table.intern_all(self, tokens.iter().copied());
        table.embed(self, Parallelism::Sequential);
        let e = self.config.embed_dim();
        Ok(ids
            .iter()
            .map(|&i| table.emb[i * e..(i + 1) * e].to_vec())
            .collect())
    }

    /// `(h_q, attention weights)`
    pub fn encode_question(&self, tokens: &[&str]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::Invalid("question has no tokens".into()));
        }
        let mut table = TokenTable::new();
        let ids = table.intern_all(self, tokens.iter().copied());
        table.embed(self, Parallelism::Sequential);
        let enc = self.encode_question_ids(&table, &ids);
        Ok((enc.att.out, enc.att.alpha))
    }

    /// `(h_o, attention weights)`
    pub fn encode_observation(&self, tokens: &[&str]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::Invalid("observation has no tokens".into()));
        }
        let mut table = TokenTable::new();
        let ids = table.intern_all(self, tokens.iter().copied());
        table.embed(self, Parallelism::Sequential);
        let x = table.gather(&ids, self.config.embed_dim());
        let lstm = layers::lstm(&self.layout.o_lstm, &self.params, &x, false);
        let att = layers::attention(
            &self.layout.o_att,
            &self.params,
            &lstm.hs,
            self.config.hidden_dim,
        );
        Ok((att.out, att.alpha))
    }

    /// `h_z = [last LSTM state ; scaled phi_z]`; an empty `tokens` reads the null token.
    pub fn encode_answer_pred(&self, tokens: &[&str], phi_z: [f64; PHI_Z_DIM]) -> Vec<f64> {
        let tokens: Vec<&str> = if tokens.is_empty() {
            vec![NULL_TOKEN]
        } else {
            tokens.to_vec()
        };
        let mut table = TokenTable::new();
        let ids = table.intern_all(self, tokens.iter().copied());
        table.embed(self, Parallelism::Sequential);
        let x = table.gather(&ids, self.config.embed_dim());
        let lstm = layers::lstm(&self.layout.z_lstm, &self.params, &x, false);
        let mut out = lstm.last().to_vec();
        out.extend_from_slice(&[phi_z[0], phi_z[1], phi_z[2] * Z_N_SCALE]);
        out
    }

    /// Deep copy used as the target network.
    pub fn sync_target(&self) -> QNet {
        self.clone()
    }
}

fn scatter(ids: &[usize], dx: &[f64], e: usize, dtok: &mut [f64]) {
    for (t, &i) in ids.iter().enumerate() {
        kernels::axpy(1.0, &dx[t * e..(t + 1) * e], &mut dtok[i * e..(i + 1) * e]);
    }
}

fn check_finite(q: &QValues) -> Result<()> {
    if q.q.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(
            "Q-values contain a non-finite entry".into(),
        ))
    }
}

#[cfg(test)]
mod tests;
