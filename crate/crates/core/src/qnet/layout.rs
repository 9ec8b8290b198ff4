//! Named tensors inside one flat parameter vector.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::QNetConfig;
use crate::env::Action;
use crate::seed::Rng;

/// Number of navigation features appended at the second dueling layer.
pub const PHI_N_DIM: usize = 7;
pub const PHI_Z_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.rows * self.cols]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.offset..self.offset + self.rows * self.cols]
    }

    #[inline]
    pub fn row<'a>(&self, p: &'a [f64], r: usize) -> &'a [f64] {
        let s = self.offset + r * self.cols;
        &p[s..s + self.cols]
    }

    #[inline]
    pub fn row_mut<'a>(&self, p: &'a mut [f64], r: usize) -> &'a mut [f64] {
        let s = self.offset + r * self.cols;
        &mut p[s..s + self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }
}

/// Gate order within the stacked rows: input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lstm {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl Lstm {
    pub fn hidden(&self) -> usize {
        self.u.cols
    }
}

/// Two-layer scorer: `a_i = w2 · tanh(W1 u_i + b1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attention {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub word_emb: Tensor,
    pub char_emb: Tensor,
    /// Kernel `[char_dim][conv_filter_size * char_dim]` and bias.
    pub conv: Dense,
    pub q_fw: Lstm,
    pub q_bw: Lstm,
    pub q_att: Attention,
    pub o_lstm: Lstm,
    pub o_att: Attention,
    pub z_lstm: Lstm,
    pub fuse: Dense,
    pub v1_value: Dense,
    pub v1_adv: Dense,
    pub v2_value: Dense,
    pub v2_adv: Dense,
    pub names: Vec<(String, Tensor)>,
    pub total: usize,
}

struct Builder {
    next: usize,
    names: Vec<(String, Tensor)>,
}

impl Builder {
    fn add(&mut self, name: &str, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        self.names.push((name.to_string(), t));
        t
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) -> Dense {
        Dense {
            w: self.add(&format!("{name}.W"), out, inp),
            b: self.add(&format!("{name}.b"), 1, out),
        }
    }

    fn lstm(&mut self, name: &str, inp: usize, h: usize) -> Lstm {
        Lstm {
            w: self.add(&format!("{name}.W"), 4 * h, inp),
            u: self.add(&format!("{name}.U"), 4 * h, h),
            b: self.add(&format!("{name}.b"), 1, 4 * h),
        }
    }

    fn attention(&mut self, name: &str, inp: usize, width: usize) -> Attention {
        Attention {
            w1: self.add(&format!("{name}.W1"), width, inp),
            b1: self.add(&format!("{name}.b1"), 1, width),
            w2: self.add(&format!("{name}.w2"), 1, width),
        }
    }
}

impl Layout {
    pub fn new(cfg: &QNetConfig, n_words: usize, n_chars: usize) -> Layout {
        let mut b = Builder {
            next: 0,
            names: Vec::new(),
        };
        let e = cfg.word_dim + cfg.char_dim;
        let h = cfg.hidden_dim;
        let att = cfg.attention_dim();
        let hs = 4 * h + PHI_Z_DIM;
        let word_emb = b.add("word_emb", n_words, cfg.word_dim);
        let char_emb = b.add("char_emb", n_chars, cfg.char_dim);
        let conv = b.dense(
            "char_conv",
            cfg.char_dim,
            cfg.conv_filter_size * cfg.char_dim,
        );
        let q_fw = b.lstm("question_fw", e, h);
        let q_bw = b.lstm("question_bw", e, h);
        let q_att = b.attention("question_att", 2 * h, att);
        let o_lstm = b.lstm("observation", e, h);
        let o_att = b.attention("observation_att", h, att);
        let z_lstm = b.lstm("answer", e, h);
        let fuse = b.dense("v0", cfg.ffnn1_dim, hs);
        let v1_value = b.dense("v1_value", cfg.ffnn2_dim, cfg.ffnn1_dim);
        let v1_adv = b.dense("v1_adv", cfg.ffnn2_dim, cfg.ffnn1_dim);
        let v2_value = b.dense("v2_value", 1, cfg.ffnn2_dim + PHI_N_DIM);
        let v2_adv = b.dense("v2_adv", Action::COUNT, cfg.ffnn2_dim + PHI_N_DIM);
        Layout {
            word_emb,
            char_emb,
            conv,
            q_fw,
            q_bw,
            q_att,
            o_lstm,
            o_att,
            z_lstm,
            fuse,
            v1_value,
            v1_adv,
            v2_value,
            v2_adv,
            total: b.next,
            names: b.names,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.names.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    /// Seeded initialization: Glorot-uniform matrices, small uniform
    /// embeddings, zero biases, and forget-gate biases of 1.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let mut uniform = |t: Tensor, bound: f64, p: &mut [f64]| {
            for x in t.of_mut(p) {
                *x = rng.gen_range(-bound..bound);
            }
        };
        let glorot = |t: Tensor| (6.0 / (t.rows + t.cols) as f64).sqrt();
        uniform(self.word_emb, 0.1, &mut p);
        uniform(self.char_emb, 0.1, &mut p);
        for (name, t) in &self.names {
            let is_matrix = name.ends_with(".W") || name.ends_with(".U") || name.ends_with(".W1");
            if is_matrix {
                uniform(*t, glorot(*t), &mut p);
            } else if name.ends_with(".w2") {
                uniform(*t, (6.0 / (t.cols + 1) as f64).sqrt(), &mut p);
            }
        }
        for l in [self.q_fw, self.q_bw, self.o_lstm, self.z_lstm] {
            let h = l.hidden();
            for x in &mut l.b.of_mut(&mut p)[h..2 * h] {
                *x = 1.0;
            }
        }
        p
    }
}
