use super::*;
use crate::doctree::fixtures::phuket;
use crate::doctree::{annotate_answers, QASample};
use crate::env::{Env, EnvOptions};
use crate::reader::OverlapExtractor;
use crate::replay::Transition;
use crate::seed::SeedSource;
use approx::assert_abs_diff_eq;

fn sample() -> QASample {
    let t = annotate_answers(phuket(), &["Thailand".into()]);
    QASample::new(
        "q",
        "where do monsoon rains fall ?",
        vec!["Thailand".into()],
        vec![t],
    )
}

fn net(sample: &QASample) -> QNet {
    let lex = Lexicon::from_samples(std::slice::from_ref(sample), 100, 1);
    QNet::new(
        QNetConfig::desk(),
        lex,
        &mut SeedSource::new(3).fork("qnet"),
    )
    .unwrap()
}

const EX: OverlapExtractor = OverlapExtractor { max_span_len: 8 };

#[test]
fn embedding_shapes_and_determinism() {
    let s = sample();
    let n = net(&s);
    let e = n.embed_tokens(&["rains", "rains", "unseen"]).unwrap();
    assert_eq!(e.len(), 3);
    assert_eq!(e[0].len(), 24);
    assert_eq!(e[0], e[1]);
    assert_ne!(e[0], e[2]);
    assert!(n.embed_tokens(&[]).is_err());
}

#[test]
fn encoders() {
    let s = sample();
    let n = net(&s);
    let (hq, alpha) = n
        .encode_question(&["where", "do", "rains", "fall"])
        .unwrap();
    assert_eq!(hq.len(), 64);
    assert_abs_diff_eq!(alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    let (_, single) = n.encode_question(&["rains"]).unwrap();
    assert_eq!(single, vec![1.0]);
    let (permuted, _) = n
        .encode_question(&["fall", "rains", "do", "where"])
        .unwrap();
    assert_ne!(hq, permuted);
    assert!(n.encode_question(&[]).is_err());

    let (ho, a) = n.encode_observation(&["Phuket", "Province"]).unwrap();
    assert_eq!(ho.len(), 32);
    assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    assert_eq!(n.encode_observation(&["Phuket"]).unwrap().1, vec![1.0]);

    let hz = n.encode_answer_pred(&[], [0.0; 3]);
    assert_eq!(hz.len(), 35);
    assert_eq!(hz, n.encode_answer_pred(&[NULL_TOKEN], [0.0; 3]));
    assert_eq!(&hz[32..], &[0.0, 0.0, 0.0]);
}

#[test]
fn dueling_identity() {
    let a = [0.3, -1.0, 2.0, 0.0, 0.5, -0.2, 1.1];
    let base = QValues::from_parts(0.7, a);
    let shifted = QValues::from_parts(0.7, a.map(|x| x + 12.5));
    for i in 0..7 {
        assert_abs_diff_eq!(base.q[i], shifted.q[i], epsilon = 1e-12);
    }
}

#[test]
fn zero_params_give_bias_determined_q() {
    let s = sample();
    let mut n = net(&s);
    n.params.iter_mut().for_each(|p| *p = 0.0);
    let bv = n.layout.v2_value.b;
    let ba = n.layout.v2_adv.b;
    n.params[bv.offset] = 0.25;
    let biases = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    ba.of_mut(&mut n.params).copy_from_slice(&biases);
    let env = Env::new(&s, &s.documents[0], &EX, EnvOptions::default());
    for node in [0, 3, 7] {
        let q = n
            .q_values(&env.state_at(crate::doctree::NodeId(node)))
            .unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(q.q[i], 0.25 + biases[i] - 4.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn batch_matches_single_and_is_deterministic() {
    let s = sample();
    let n = net(&s);
    let env = Env::new(&s, &s.documents[0], &EX, EnvOptions::default());
    let states: Vec<NavState> = (0..10)
        .map(|i| env.state_at(crate::doctree::NodeId(i)))
        .collect();
    let refs: Vec<&NavState> = states.iter().collect();
    let seq = n.q_values_batch(&refs, Parallelism::Sequential).unwrap();
    let par = n.q_values_batch(&refs, Parallelism::Rayon).unwrap();
    assert_eq!(seq, par);
    for (st, q) in states.iter().zip(&seq) {
        assert_eq!(n.q_values(st).unwrap(), *q);
    }
}

#[test]
fn td_targets() {
    let mask = [true; 7];
    assert_eq!(td_target(2.0, true, 0.996, None, None, true, &mask), 2.0);
    let on = QValues::from_parts(0.0, [0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let tg = QValues::from_parts(0.0, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
    assert_eq!(
        td_target(-0.02, false, 0.0, Some(&on), Some(&tg), true, &mask),
        -0.02
    );
    // double-Q: online picks action 1, target evaluates it
    let y = td_target(-0.02, false, 0.5, Some(&on), Some(&tg), true, &mask);
    assert_abs_diff_eq!(y, -0.02 + 0.5 * tg.q[1], epsilon = 1e-12);
    // plain max over target values picks action 6
    let y = td_target(-0.02, false, 0.5, Some(&on), Some(&tg), false, &mask);
    assert_abs_diff_eq!(y, -0.02 + 0.5 * tg.q[6], epsilon = 1e-12);
    let mut no_right = mask;
    no_right[1] = false;
    let y = td_target(0.0, false, 0.5, Some(&on), Some(&tg), true, &no_right);
    assert_abs_diff_eq!(y, 0.5 * tg.q[6], epsilon = 1e-12);
}

fn transitions(s: &QASample) -> Vec<Transition> {
    let env = Env::new(s, &s.documents[0], &EX, EnvOptions::default());
    let mut out = Vec::new();
    let st = env.reset();
    for a in [Action::Down, Action::Answer, Action::Stop] {
        let st = if out.is_empty() {
            st.clone()
        } else {
            out.last()
                .map(|t: &Transition| t.next_state.clone())
                .unwrap()
        };
        let r = env.transition(&st, a);
        out.push(Transition {
            state: st,
            action: r.action,
            reward: r.reward,
            next_state: r.next_state,
            terminal: r.terminal,
        });
    }
    out
}

#[test]
fn td_loss_matches_manual_targets() {
    let s = sample();
    let online = net(&s);
    let mut target = online.sync_target();
    target.params.iter_mut().for_each(|p| *p *= 0.9);
    let trs = transitions(&s);
    let batch: Vec<&Transition> = trs.iter().collect();
    let w = [1.0, 0.5, 0.25];
    let out = td_loss(
        &online,
        &target,
        &batch,
        &w,
        &TdOptions {
            gamma: 0.9,
            ..Default::default()
        },
    )
    .unwrap();
    let mut loss = 0.0;
    for (i, t) in trs.iter().enumerate() {
        let q = online.q_values(&t.state).unwrap().q[t.action.index()];
        let y = if t.terminal {
            t.reward
        } else {
            let a = online.q_values(&t.next_state).unwrap().greedy(&[true; 7]);
            t.reward + 0.9 * target.q_values(&t.next_state).unwrap().q[a.index()]
        };
        assert_abs_diff_eq!(out.targets[i], y, epsilon = 1e-12);
        assert_abs_diff_eq!(out.td_errors[i], (y - q).abs(), epsilon = 1e-12);
        loss += w[i] * (y - q).powi(2);
    }
    assert_abs_diff_eq!(out.loss, loss / 3.0, epsilon = 1e-12);
    assert_eq!(out.targets[2], trs[2].reward);

    let seq = td_loss(
        &online,
        &target,
        &batch,
        &w,
        &TdOptions {
            gamma: 0.9,
            parallelism: Parallelism::Sequential,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(seq.grads, out.grads);
}

#[test]
fn target_copy_is_frozen() {
    let s = sample();
    let mut online = net(&s);
    let target = online.sync_target();
    assert_eq!(target, online);
    let trs = transitions(&s);
    let batch: Vec<&Transition> = trs.iter().collect();
    let before = target.q_values(&trs[0].state).unwrap();
    let out = td_loss(&online, &target, &batch, &[1.0; 3], &TdOptions::default()).unwrap();
    let mut opt = RmsProp::new(
        RmsPropConfig {
            lr: 1e-2,
            ..Default::default()
        },
        online.n_params(),
    );
    opt.apply(&mut online.params, &out.grads).unwrap();
    assert_ne!(target, online);
    assert_eq!(target.q_values(&trs[0].state).unwrap(), before);
}

#[test]
fn json_round_trip() {
    let s = sample();
    let n = net(&s);
    let back = QNet::from_json(&n.to_json().unwrap()).unwrap();
    assert_eq!(back, n);
}

#[test]
fn word_vectors_file() {
    let s = sample();
    let mut n = net(&s);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vec.txt");
    let row: Vec<String> = (0..16).map(|i| format!("{}", i as f64 / 10.0)).collect();
    std::fs::write(
        &path,
        format!("rains {}\nzzz {}\n", row.join(" "), row.join(" ")),
    )
    .unwrap();
    assert_eq!(n.load_word_vectors(&path).unwrap(), 1);
    let id = n.lexicon.word_id("rains") as usize;
    assert_eq!(n.layout.word_emb.row(&n.params, id)[3], 0.3);
    std::fs::write(&path, "rains 1 2\n").unwrap();
    assert!(n.load_word_vectors(&path).is_err());
}

#[test]
fn cached_question_encoding_matches_fresh_forward() {
    let s = sample();
    let n = net(&s);
    let env = Env::new(&s, &s.documents[0], &EX, EnvOptions::default());
    let mut cache = QuestionCache::new();
    for i in 0..10 {
        let st = env.state_at(crate::doctree::NodeId(i));
        assert_eq!(
            n.q_values_cached(&st, &mut cache).unwrap(),
            n.q_values(&st).unwrap()
        );
    }
    assert_eq!(cache.len(), 1);
}
