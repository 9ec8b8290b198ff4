//! Importance-weighted TD loss with a double-Q target.

use super::{check_finite, QNet, QValues, StateInput, TokenTable};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use crate::replay::Transition;
use crate::seed::SeedSource;

/// Transitions per work unit; fixed so gradients do not depend on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct TdOptions {
    pub gamma: f64,
    /// Select the bootstrap action with the online network and evaluate it with the target.
    pub double_q: bool,
    /// Actions allowed in next states.
    pub action_mask: [bool; Action::COUNT],
    pub dropout_seed: u64,
    pub parallelism: Parallelism,
}

impl Default for TdOptions {
    fn default() -> Self {
        Self {
            gamma: 0.996,
            double_q: true,
            action_mask: [true; Action::COUNT],
            dropout_seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TdOutput {
    /// Mean of `w_i * (y_i - Q(s_i, a_i))^2`.
    pub loss: f64,
    /// `|y_i - Q(s_i, a_i)|`, for priority updates.
    pub td_errors: Vec<f64>,
    pub targets: Vec<f64>,
    pub q_taken: Vec<f64>,
    /// Gradient of `loss` with respect to the online parameters.
    pub grads: Vec<f64>,
}

/// `r` for terminal transitions, otherwise `r + gamma * Q_target(s', a*)` where
/// `a*` maximizes the online values (double-Q) or the target values.
pub fn td_target(
    reward: f64,
    terminal: bool,
    gamma: f64,
    online_next: Option<&QValues>,
    target_next: Option<&QValues>,
    double_q: bool,
    mask: &[bool; Action::COUNT],
) -> f64 {
    if terminal {
        return reward;
    }
    let target_next = target_next.expect("non-terminal transitions need target values");
    let a = match (double_q, online_next) {
        (true, Some(q)) => q.greedy(mask),
        _ => target_next.greedy(mask),
    };
    reward + gamma * target_next.q[a.index()]
}

struct Row {
    weighted_sq: f64,
    delta: f64,
    target: f64,
    q: f64,
}

pub fn td_loss(
    online: &QNet,
    target: &QNet,
    batch: &[&Transition],
    weights: &[f64],
    opts: &TdOptions,
) -> Result<TdOutput> {
    evaluate(online, target, batch, weights, opts, true)
}

/// [`td_loss`] without the backward pass; `grads` is left empty.
pub fn td_loss_value(
    online: &QNet,
    target: &QNet,
    batch: &[&Transition],
    weights: &[f64],
    opts: &TdOptions,
) -> Result<TdOutput> {
    evaluate(online, target, batch, weights, opts, false)
}

fn evaluate(
    online: &QNet,
    target: &QNet,
    batch: &[&Transition],
    weights: &[f64],
    opts: &TdOptions,
    with_grads: bool,
) -> Result<TdOutput> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty TD batch".into()));
    }
    if weights.len() != batch.len() {
        return Err(Error::Invalid(
            "one importance weight per transition is required".into(),
        ));
    }
    if !(0.0..1.0).contains(&opts.gamma) {
        return Err(Error::Invalid(format!(
            "gamma must be in [0, 1), got {}",
            opts.gamma
        )));
    }
    let par = opts.parallelism;
    let e = online.config.embed_dim();
    let n = batch.len() as f64;

    let mut on_table = TokenTable::new();
    let mut tg_table = TokenTable::new();
    let mut s_in = Vec::with_capacity(batch.len());
    let mut next_on = Vec::with_capacity(batch.len());
    let mut next_tg = Vec::with_capacity(batch.len());
    for t in batch {
        s_in.push(online.input(&mut on_table, &t.state)?);
        if t.terminal {
            next_on.push(None);
            next_tg.push(None);
        } else {
            if opts.double_q {
                next_on.push(Some(online.input(&mut on_table, &t.next_state)?));
            } else {
                next_on.push(None);
            }
            next_tg.push(Some(target.input(&mut tg_table, &t.next_state)?));
        }
    }
    on_table.embed(online, par);
    tg_table.embed(target, par);
    let s_refs: Vec<&StateInput> = s_in.iter().collect();
    let q_on = online.shared_questions(&on_table, &s_refs, par);
    let tg_refs: Vec<&StateInput> = next_tg.iter().flatten().collect();
    let mut q_tg_flat = target
        .shared_questions(&tg_table, &tg_refs, par)
        .into_iter();
    let q_tg: Vec<_> = next_tg
        .iter()
        .map(|n| n.as_ref().and_then(|_| q_tg_flat.next()))
        .collect();

    let dropout_seeds = SeedSource::new(opts.dropout_seed);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = parallel::map_chunks(
        par,
        &idx,
        CHUNK,
        |_, ids| -> Result<(Vec<Row>, Vec<f64>, Vec<f64>)> {
            let (np, nt) = if with_grads {
                (online.params.len(), on_table.len() * e)
            } else {
                (0, 0)
            };
            let mut g = vec![0.0; np];
            let mut dtok = vec![0.0; nt];
            let mut rows = Vec::with_capacity(ids.len());
            for &i in ids {
                let tr = batch[i];
                let mut rng = dropout_seeds.fork_indexed("dropout", i as u64);
                let (q, tape) =
                    online.forward(&on_table, &s_in[i], Some(q_on[i].clone()), Some(&mut rng));
                check_finite(&q)?;
                let on_next = next_on[i]
                    .as_ref()
                    .map(|inp| online.forward(&on_table, inp, Some(tape.q.clone()), None).0);
                let tg_next = next_tg[i]
                    .as_ref()
                    .map(|inp| target.forward(&tg_table, inp, q_tg[i].clone(), None).0);
                if let Some(q) = &tg_next {
                    check_finite(q)?;
                }
                let y = td_target(
                    tr.reward,
                    tr.terminal,
                    opts.gamma,
                    on_next.as_ref(),
                    tg_next.as_ref(),
                    opts.double_q,
                    &opts.action_mask,
                );
                let a = tr.action.index();
                let delta = y - q.q[a];
                let mut dq = [0.0; Action::COUNT];
                dq[a] = -2.0 * weights[i] * delta / n;
                if with_grads {
                    online.backward(&s_in[i], &tape, &dq, &mut g, &mut dtok);
                }
                rows.push(Row {
                    weighted_sq: weights[i] * delta * delta,
                    delta,
                    target: y,
                    q: q.q[a],
                });
            }
            Ok((rows, g, dtok))
        },
    );

    let (np, nt) = if with_grads {
        (online.params.len(), on_table.len() * e)
    } else {
        (0, 0)
    };
    let mut grads = vec![0.0; np];
    let mut dtok = vec![0.0; nt];
    let mut out = TdOutput {
        loss: 0.0,
        td_errors: Vec::with_capacity(batch.len()),
        targets: Vec::with_capacity(batch.len()),
        q_taken: Vec::with_capacity(batch.len()),
        grads: Vec::new(),
    };
    for part in parts {
        let (rows, g, d) = part?;
        super::kernels::axpy(1.0, &g, &mut grads);
        super::kernels::axpy(1.0, &d, &mut dtok);
        for r in rows {
            out.loss += r.weighted_sq;
            out.td_errors.push(r.delta.abs());
            out.targets.push(r.target);
            out.q_taken.push(r.q);
        }
    }
    if with_grads {
        on_table.backward(online, &dtok, &mut grads);
    }
    out.loss /= n;
    out.grads = grads;
    if !out.loss.is_finite() {
        return Err(Error::NonFinite("TD loss is not finite".into()));
    }
    Ok(out)
}
