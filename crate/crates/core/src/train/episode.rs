use rand::seq::SliceRandom;
use rand::Rng as _;

use super::sampler::SamplingDistribution;
use crate::env::{Action, Env, Episode, NavState};
use crate::error::Result;
use crate::qnet::{QNet, QuestionCache};
use crate::replay::Transition;
use crate::seed::Rng;

/// With probability `epsilon` a uniformly random legal action, otherwise the
/// greedy one. The network is only evaluated on greedy draws.
pub fn select_action(
    net: &QNet,
    cache: &mut QuestionCache,
    state: &NavState,
    mask: &[bool; Action::COUNT],
    epsilon: f64,
    rng: &mut Rng,
) -> Result<Action> {
    if rng.gen::<f64>() < epsilon {
        let legal: Vec<Action> = Action::ALL
            .into_iter()
            .filter(|a| mask[a.index()])
            .collect();
        return Ok(*legal.choose(rng).expect("Stop is always legal"));
    }
    Ok(net.q_values_cached(state, cache)?.greedy(mask))
}

/// One epsilon-greedy rollout from the root until Stop or the budget.
pub fn run_episode_sequential(
    env: &Env<'_>,
    net: &QNet,
    cache: &mut QuestionCache,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<Vec<Transition>> {
    let mask = env.action_mask();
    let mut state = env.reset();
    let mut out = Vec::new();
    loop {
        let a = select_action(net, cache, &state, &mask, epsilon, rng)?;
        let r = env.transition(&state, a);
        let terminal = r.terminal;
        out.push(Transition {
            state,
            action: r.action,
            reward: r.reward,
            next_state: r.next_state.clone(),
            terminal,
        });
        if terminal {
            return Ok(out);
        }
        state = r.next_state;
    }
}

/// `k` independent one-step transitions from nodes drawn from `dist`.
pub fn run_episode_sampled(
    env: &Env<'_>,
    net: &QNet,
    cache: &mut QuestionCache,
    dist: SamplingDistribution,
    k: usize,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<Vec<Transition>> {
    let mask = env.action_mask();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let node = dist.sample(env.doc, rng)?;
        let state = env.state_at(node);
        let a = select_action(net, cache, &state, &mask, epsilon, rng)?;
        let r = env.transition(&state, a);
        out.push(Transition {
            state,
            action: r.action,
            reward: r.reward,
            next_state: r.next_state,
            terminal: r.terminal,
        });
    }
    Ok(out)
}

/// Greedy rollout from the root, kept as an [`Episode`] for tracing.
pub fn run_greedy<'e, 'a>(
    env: &'e Env<'a>,
    net: &QNet,
    cache: &mut QuestionCache,
) -> Result<Episode<'e, 'a>> {
    let mask = env.action_mask();
    let mut ep = env.episode();
    while !ep.done {
        let a = net.q_values_cached(&ep.state, cache)?.greedy(&mask);
        ep.step(a);
    }
    Ok(ep)
}
