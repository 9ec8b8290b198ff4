//! Forward passes that record what their backward passes need.
//!
//! Every backward function adds parameter gradients into `g` (laid out like
//! the parameter vector) and input gradients into a caller-provided buffer.

use super::kernels::{
    axpy, dot, matvec_add, matvec_t_add, outer_add, sigmoid_in_place, softmax_in_place,
    tanh_in_place,
};
use super::layout::{Attention, Dense, Lstm, Tensor};

/// `y = tanh(W x + b)`
pub fn dense_tanh(d: &Dense, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = d.b.of(p).to_vec();
    matvec_add(d.w.of(p), x, &mut y);
    tanh_in_place(&mut y);
    y
}

pub fn dense_tanh_backward(
    d: &Dense,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    g: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let dz: Vec<f64> = dy.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
    linear_backward(d, p, x, &dz, g, dx);
}

/// `y = W x + b`
pub fn linear(d: &Dense, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = d.b.of(p).to_vec();
    matvec_add(d.w.of(p), x, &mut y);
    y
}

pub fn linear_backward(
    d: &Dense,
    p: &[f64],
    x: &[f64],
    dz: &[f64],
    g: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    axpy(1.0, dz, d.b.of_mut(g));
    outer_add(dz, x, d.w.of_mut(g));
    if let Some(dx) = dx {
        matvec_t_add(d.w.of(p), dz, dx);
    }
}

pub struct CharTape {
    /// Winning window position per output channel.
    pub argmax: Vec<usize>,
    pub out: Vec<f64>,
}

fn window(chars: &Tensor, p: &[f64], ids: &[u32], t: usize, width: usize, buf: &mut [f64]) {
    let dim = chars.cols;
    let left = (width - 1) / 2;
    for k in 0..width {
        let slot = &mut buf[k * dim..(k + 1) * dim];
        let pos = t as isize - left as isize + k as isize;
        if pos >= 0 && (pos as usize) < ids.len() {
            slot.copy_from_slice(chars.row(p, ids[pos as usize] as usize));
        } else {
            slot.fill(0.0);
        }
    }
}

/// Character CNN: same-padded convolution, max over positions, tanh.
pub fn char_cnn(chars: &Tensor, conv: &Dense, p: &[f64], ids: &[u32]) -> CharTape {
    let dim = chars.cols;
    let width = conv.in_dim() / dim;
    let out_dim = conv.out_dim();
    let mut best = vec![f64::NEG_INFINITY; out_dim];
    let mut argmax = vec![0; out_dim];
    let mut buf = vec![0.0; width * dim];
    let mut y = vec![0.0; out_dim];
    for t in 0..ids.len() {
        window(chars, p, ids, t, width, &mut buf);
        y.copy_from_slice(conv.b.of(p));
        matvec_add(conv.w.of(p), &buf, &mut y);
        for c in 0..out_dim {
            if y[c] > best[c] {
                best[c] = y[c];
                argmax[c] = t;
            }
        }
    }
    CharTape {
        argmax,
        out: {
            tanh_in_place(&mut best);
            best
        },
    }
}

pub fn char_cnn_backward(
    chars: &Tensor,
    conv: &Dense,
    p: &[f64],
    ids: &[u32],
    tape: &CharTape,
    dout: &[f64],
    g: &mut [f64],
) {
    let dim = chars.cols;
    let width = conv.in_dim() / dim;
    let left = (width - 1) / 2;
    let mut buf = vec![0.0; width * dim];
    let mut dbuf = vec![0.0; width * dim];
    for c in 0..conv.out_dim() {
        let dm = dout[c] * (1.0 - tape.out[c] * tape.out[c]);
        if dm == 0.0 {
            continue;
        }
        let t = tape.argmax[c];
        window(chars, p, ids, t, width, &mut buf);
        conv.b.of_mut(g)[c] += dm;
        axpy(dm, &buf, conv.w.row_mut(g, c));
        dbuf.fill(0.0);
        axpy(dm, conv.w.row(p, c), &mut dbuf);
        for k in 0..width {
            let pos = t as isize - left as isize + k as isize;
            if pos >= 0 && (pos as usize) < ids.len() {
                axpy(
                    1.0,
                    &dbuf[k * dim..(k + 1) * dim],
                    chars.row_mut(g, ids[pos as usize] as usize),
                );
            }
        }
    }
}

pub struct LstmTape {
    pub len: usize,
    pub reverse: bool,
    /// Hidden states by sequence position, `[len][H]`.
    pub hs: Vec<f64>,
    cs: Vec<f64>,
    /// `tanh` of the cell states.
    tcs: Vec<f64>,
    /// Activated gates by position, `[len][4H]`.
    gates: Vec<f64>,
}

impl LstmTape {
    pub fn h(&self, t: usize) -> &[f64] {
        let h = self.hs.len() / self.len;
        &self.hs[t * h..(t + 1) * h]
    }

    /// Hidden state after the last processed position.
    pub fn last(&self) -> &[f64] {
        self.h(if self.reverse { 0 } else { self.len - 1 })
    }
}

fn order(len: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..len).map(move |k| if reverse { len - 1 - k } else { k })
}

/// Single-layer LSTM over `xs` (`[len][in]`), right to left when `reverse`.
pub fn lstm(l: &Lstm, p: &[f64], xs: &[f64], reverse: bool) -> LstmTape {
    let n_in = l.w.cols;
    let h = l.hidden();
    let len = xs.len() / n_in;
    let mut hs = vec![0.0; len * h];
    let mut cs = vec![0.0; len * h];
    let mut tcs = vec![0.0; len * h];
    let mut gates = vec![0.0; len * 4 * h];
    let mut c_prev = vec![0.0; h];
    let mut prev: Option<usize> = None;
    let (w, u, b) = (l.w.of(p), l.u.of(p), l.b.of(p));
    for t in order(len, reverse) {
        let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        z.copy_from_slice(b);
        matvec_add(w, &xs[t * n_in..(t + 1) * n_in], z);
        match prev {
            Some(s) => {
                matvec_add(u, &hs[s * h..(s + 1) * h], z);
                c_prev.copy_from_slice(&cs[s * h..(s + 1) * h]);
            }
            None => c_prev.fill(0.0),
        }
        sigmoid_in_place(&mut z[..2 * h]);
        tanh_in_place(&mut z[2 * h..3 * h]);
        sigmoid_in_place(&mut z[3 * h..]);
        let c_new = &mut cs[t * h..(t + 1) * h];
        for j in 0..h {
            c_new[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
        }
        let tc = &mut tcs[t * h..(t + 1) * h];
        tc.copy_from_slice(c_new);
        tanh_in_place(tc);
        let h_new = &mut hs[t * h..(t + 1) * h];
        for j in 0..h {
            h_new[j] = z[3 * h + j] * tc[j];
        }
        prev = Some(t);
    }
    LstmTape {
        len,
        reverse,
        hs,
        cs,
        tcs,
        gates,
    }
}

/// Backpropagates `dhs` (`[len][H]`, gradient w.r.t. every output) into `g` and `dxs`.
pub fn lstm_backward(
    l: &Lstm,
    p: &[f64],
    tape: &LstmTape,
    xs: &[f64],
    dhs: &[f64],
    g: &mut [f64],
    dxs: &mut [f64],
) {
    let n_in = l.w.cols;
    let h = l.hidden();
    let len = tape.len;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    let steps: Vec<usize> = order(len, tape.reverse).collect();
    for (k, &t) in steps.iter().enumerate().rev() {
        let prev = if k > 0 { Some(steps[k - 1]) } else { None };
        let gates = &tape.gates[t * 4 * h..(t + 1) * 4 * h];
        let tcs = &tape.tcs[t * h..(t + 1) * h];
        let (h_prev, c_prev) = match prev {
            Some(s) => (&tape.hs[s * h..(s + 1) * h], &tape.cs[s * h..(s + 1) * h]),
            None => (&zeros[..], &zeros[..]),
        };
        for j in 0..h {
            let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let dh = dhs[t * h + j] + dh_next[j];
            let tc = tcs[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - gg * gg);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        axpy(1.0, &dz, l.b.of_mut(g));
        let x = &xs[t * n_in..(t + 1) * n_in];
        outer_add(&dz, x, l.w.of_mut(g));
        matvec_t_add(l.w.of(p), &dz, &mut dxs[t * n_in..(t + 1) * n_in]);
        dh_next.fill(0.0);
        if prev.is_some() {
            outer_add(&dz, h_prev, l.u.of_mut(g));
            matvec_t_add(l.u.of(p), &dz, &mut dh_next);
        }
    }
}

pub struct AttTape {
    pub alpha: Vec<f64>,
    /// Scorer hidden activations `[len][A]`.
    s: Vec<f64>,
    pub out: Vec<f64>,
}

/// Self-attention pooling of `us` (`[len][dim]`).
pub fn attention(a: &Attention, p: &[f64], us: &[f64], dim: usize) -> AttTape {
    let len = us.len() / dim;
    let width = a.w1.rows;
    let mut s = vec![0.0; len * width];
    let mut logits = vec![0.0; len];
    for t in 0..len {
        let st = &mut s[t * width..(t + 1) * width];
        st.copy_from_slice(a.b1.of(p));
        matvec_add(a.w1.of(p), &us[t * dim..(t + 1) * dim], st);
        tanh_in_place(st);
        logits[t] = dot(a.w2.of(p), st);
    }
    softmax_in_place(&mut logits);
    let mut out = vec![0.0; dim];
    for t in 0..len {
        axpy(logits[t], &us[t * dim..(t + 1) * dim], &mut out);
    }
    AttTape {
        alpha: logits,
        s,
        out,
    }
}

pub fn attention_backward(
    a: &Attention,
    p: &[f64],
    tape: &AttTape,
    us: &[f64],
    dim: usize,
    dout: &[f64],
    g: &mut [f64],
    dus: &mut [f64],
) {
    let len = tape.alpha.len();
    let width = a.w1.rows;
    let dalpha: Vec<f64> = (0..len)
        .map(|t| dot(dout, &us[t * dim..(t + 1) * dim]))
        .collect();
    let mean: f64 = tape.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let mut dpre = vec![0.0; width];
    for t in 0..len {
        let alpha = tape.alpha[t];
        let du = &mut dus[t * dim..(t + 1) * dim];
        axpy(alpha, dout, du);
        let da = alpha * (dalpha[t] - mean);
        if da == 0.0 {
            continue;
        }
        let st = &tape.s[t * width..(t + 1) * width];
        axpy(da, st, a.w2.of_mut(g));
        let w2 = a.w2.of(p);
        for j in 0..width {
            dpre[j] = da * w2[j] * (1.0 - st[j] * st[j]);
        }
        axpy(1.0, &dpre, a.b1.of_mut(g));
        outer_add(&dpre, &us[t * dim..(t + 1) * dim], a.w1.of_mut(g));
        matvec_t_add(a.w1.of(p), &dpre, du);
    }
}
