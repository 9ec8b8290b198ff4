//! Acceptance suite: one PASS/FAIL line per criterion, with its time budget.
//!
//! By default the training-based criteria (9, 11, 13) are skipped so the
//! workspace test run stays short; `ACCEPTANCE_FULL=1` runs all of them and
//! `ACCEPTANCE_ONLY=1,2,7` runs a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng as _;
use treenav::baselines::{self, TfIdfIndex};
use treenav::dataset::Split;
use treenav::doctree::{
    annotate_answers, generate_corpus, CorpusSpec, DocTree, NodeId, NodeKind, NodeSpec, QASample,
    Token,
};
use treenav::env::{
    concat_prefixes, move_node, Action, Env, EnvOptions, EVAL_BUDGET, MAX_OBSERVATION_LEN,
    NODE_PREFIX_LEN,
};
use treenav::eval::{self, NavOutcome};
use treenav::parallel::Parallelism;
use treenav::qnet::{td_loss, Lexicon, QNet, QNetConfig, QValues, QuestionCache, TdOptions};
use treenav::replay::{PrioritizedBuffer, SumTree, Transition, PRIORITY_EPS};
use treenav::seed::{Rng, SeedSource};
use treenav::train::{self, run_greedy, sample_f_b, sample_f_u, Mode, TrainConfig, METRICS_FILE};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

/// Criteria that train agents.
const LONG: [u32; 3] = [9, 11, 13];

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "reward exactness",
            budget: secs(1),
            run: c1_rewards,
        },
        Criterion {
            id: 2,
            name: "transition golden table",
            budget: secs(1),
            run: c2_transitions,
        },
        Criterion {
            id: 3,
            name: "observation contract",
            budget: secs(5),
            run: c3_observations,
        },
        Criterion {
            id: 4,
            name: "dueling identity",
            budget: secs(5),
            run: c4_dueling,
        },
        Criterion {
            id: 5,
            name: "gradient check",
            budget: secs(60),
            run: c5_gradients,
        },
        Criterion {
            id: 6,
            name: "double-Q target oracle",
            budget: secs(5),
            run: c6_double_q,
        },
        Criterion {
            id: 7,
            name: "prioritized replay",
            budget: secs(30),
            run: c7_replay,
        },
        Criterion {
            id: 8,
            name: "sampler frequencies",
            budget: secs(30),
            run: c8_samplers,
        },
        Criterion {
            id: 9,
            name: "directional exploration replication",
            budget: secs(1800),
            run: c9_exploration,
        },
        Criterion {
            id: 10,
            name: "baseline ordering",
            budget: secs(300),
            run: c10_baselines,
        },
        Criterion {
            id: 11,
            name: "ensemble gain",
            budget: secs(300),
            run: c11_ensemble,
        },
        Criterion {
            id: 12,
            name: "metric oracles",
            budget: secs(1),
            run: c12_metrics,
        },
        Criterion {
            id: 13,
            name: "determinism",
            budget: secs(600),
            run: c13_determinism,
        },
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let full = std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    for c in &criteria {
        match &only {
            Some(o) if !o.contains(&c.id) => continue,
            None if !full && LONG.contains(&c.id) => {
                println!(
                    "SKIP criterion {:>2} {}: set ACCEPTANCE_FULL=1 [budget {}s]",
                    c.id,
                    c.name,
                    c.budget.as_secs()
                );
                continue;
            }
            _ => {}
        }
        let start = Instant::now();
        let r = (c.run)();
        let took = start.elapsed();
        let in_time = took <= c.budget;
        let pass = r.pass && in_time;
        println!(
            "{} criterion {:>2} {}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            r.detail,
            took.as_secs_f64(),
            c.budget.as_secs()
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn label(rng: &mut Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..400)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_paragraph(rng: &mut Rng, gold: bool) -> NodeSpec {
    let mut text = label(rng, 0, 40);
    let sentences: Vec<NodeSpec> = (0..rng.gen_range(0..=3))
        .map(|_| NodeSpec::new(NodeKind::Sentence, label(rng, 1, 30)))
        .collect();
    if text.is_empty() && sentences.is_empty() {
        text = label(rng, 1, 10);
    }
    if gold {
        text.push_str(" gold");
    }
    NodeSpec::new(NodeKind::Paragraph, text).with_children(sentences)
}

/// Random title/section/subsection/paragraph/sentence tree. With `answers`,
/// about a quarter of the paragraphs (at least one) carry the token `gold`.
fn random_tree(rng: &mut Rng, id: usize, answers: bool) -> DocTree {
    let mut paragraphs = 0usize;
    let mut sections: Vec<NodeSpec> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let mut children: Vec<NodeSpec> = (0..rng.gen_range(0..=2))
                .map(|_| {
                    paragraphs += 1;
                    {
                        let gold = answers && rng.gen_bool(0.25);
                        random_paragraph(rng, gold)
                    }
                })
                .collect();
            for _ in 0..rng.gen_range(0..=3) {
                let paras = (0..rng.gen_range(1..=3))
                    .map(|_| {
                        paragraphs += 1;
                        {
                            let gold = answers && rng.gen_bool(0.25);
                            random_paragraph(rng, gold)
                        }
                    })
                    .collect();
                children.push(
                    NodeSpec::new(NodeKind::Subsection, label(rng, 1, 40)).with_children(paras),
                );
            }
            NodeSpec::new(NodeKind::Section, label(rng, 1, 40)).with_children(children)
        })
        .collect();
    if paragraphs == 0 || answers {
        sections[0].children.push(random_paragraph(rng, answers));
    }
    let root = NodeSpec::new(NodeKind::Title, label(rng, 1, 40)).with_children(sections);
    let tree = DocTree::build(format!("r{id}"), root).unwrap();
    if answers {
        annotate_answers(tree, &["gold".into()])
    } else {
        tree
    }
}

fn random_sample(rng: &mut Rng, id: usize) -> QASample {
    let tree = random_tree(rng, id, true);
    QASample::new(
        format!("r{id}"),
        label(rng, 2, 12),
        vec!["gold".into()],
        vec![tree],
    )
}

fn random_state(env: &Env<'_>, rng: &mut Rng) -> treenav::env::NavState {
    let node = NodeId(rng.gen_range(0..env.doc.len() as u32));
    let step = rng.gen_range(0..30);
    if rng.gen_bool(0.5) {
        let p = Arc::new(env.extract(node));
        env.make_state(node, step, Some((p, node)))
    } else {
        env.make_state(node, step, None)
    }
}

fn net_for(samples: &[QASample], seed: u64) -> QNet {
    let lex = Lexicon::from_samples(samples, 5000, 1);
    QNet::new(
        QNetConfig::desk(),
        lex,
        &mut SeedSource::new(seed).fork("qnet"),
    )
    .unwrap()
}

// ---------------------------------------------------------------- 1-4

fn c1_rewards() -> Outcome {
    let sample = phuket_sample("where is phuket");
    let env = Env::new(
        &sample,
        &sample.documents[0],
        &EXTRACTOR,
        EnvOptions::default(),
    );
    let answer_node = sample.documents[0].answer_nodes()[0];
    let at = env.state_at(answer_node);
    let stop_exact = env.reward(&at, Action::Stop);
    let answer = env.reward(&at, Action::Answer);
    let moves: Vec<f64> = Action::MOVEMENTS
        .iter()
        .map(|a| env.reward(&at, *a))
        .collect();

    // title + 50 paragraphs: max index 50, answer at index 10, stop at 15
    let paras: Vec<NodeSpec> = (1..=50)
        .map(|i| {
            NodeSpec::new(
                NodeKind::Paragraph,
                if i == 10 { "gold here" } else { "filler" },
            )
        })
        .collect();
    let tree = annotate_answers(
        DocTree::build(
            "flat",
            NodeSpec::new(NodeKind::Title, "T").with_children(paras),
        )
        .unwrap(),
        &["gold".into()],
    );
    let flat = QASample::new("f", "q", vec!["gold".into()], vec![tree]);
    let fenv = Env::new(&flat, &flat.documents[0], &EXTRACTOR, EnvOptions::default());
    let node = fenv.doc.node_at_index(15).unwrap();
    let distance = fenv.reward(&fenv.state_at(node), Action::Stop);

    let pass = stop_exact == 2.0
        && fenv.doc.max_index() == 50
        && (distance - 0.9).abs() < 1e-12
        && answer == -0.06
        && moves.iter().all(|m| *m == -0.02);
    outcome(
        pass,
        format!(
            "stop@answer {stop_exact}, stop d=5/50 {distance}, answer {answer}, moves {moves:?}"
        ),
    )
}

fn c2_transitions() -> Outcome {
    let sample = phuket_sample("where is phuket");
    let env = Env::new(
        &sample,
        &sample.documents[0],
        &EXTRACTOR,
        EnvOptions::default(),
    );
    let mut rows = 0;
    let mut mismatches = Vec::new();
    for line in fixture("phuket_transitions.tsv")
        .lines()
        .filter(|l| !l.starts_with('#'))
    {
        let f: Vec<&str> = line.split('\t').collect();
        let node = NodeId(f[0].parse().unwrap());
        let action = Action::parse(f[1]).unwrap();
        let r = env.transition(&env.state_at(node), action);
        let want_reward = golden_reward(f[3]);
        if r.next_state.node != NodeId(f[2].parse().unwrap())
            || r.reward != want_reward
            || r.terminal != (f[4] == "true")
        {
            mismatches.push(line.to_string());
        }
        rows += 1;
    }
    outcome(
        rows == 70 && mismatches.is_empty(),
        format!(
            "{rows} rows, {} mismatches {:?}",
            mismatches.len(),
            mismatches
        ),
    )
}

/// Parses "2", "-0.02" or "1-a/b" from the golden table.
fn golden_reward(s: &str) -> f64 {
    match s.split_once('-') {
        Some((one, frac)) if !one.is_empty() => {
            let (a, b) = frac.split_once('/').unwrap();
            one.parse::<f64>().unwrap() - a.parse::<f64>().unwrap() / b.parse::<f64>().unwrap()
        }
        _ => s.parse().unwrap(),
    }
}

fn c3_observations() -> Outcome {
    let mut rng = SeedSource::new(3).fork("acceptance/observations");
    let mut violations = 0;
    let mut longest = 0;
    for case in 0..1000 {
        let sample = random_sample(&mut rng, case);
        let doc = &sample.documents[0];
        let env = Env::new(&sample, doc, &EXTRACTOR, EnvOptions::default());
        for id in doc.ids() {
            let o = env.observation(id);
            longest = longest.max(o.len());
            // oracle: per-node prefixes concatenated root first, keeping the last 120
            let full: Vec<&str> = doc
                .path_from_root(id)
                .iter()
                .flat_map(|n| {
                    doc.node(*n)
                        .label
                        .iter()
                        .take(NODE_PREFIX_LEN)
                        .map(|t| &**t)
                })
                .collect();
            let expected = &full[full.len().saturating_sub(MAX_OBSERVATION_LEN)..];
            let got: Vec<&str> = o.iter().map(|t| &**t).collect();
            if o.len() > MAX_OBSERVATION_LEN || got != expected {
                violations += 1;
            }
        }
    }
    // the Name row: title "Phuket Province", three sections, state at the first section
    let root = NodeSpec::new(NodeKind::Title, "Phuket Province").with_children(vec![
        NodeSpec::new(NodeKind::Section, "Name").with_children(vec![NodeSpec::new(
            NodeKind::Paragraph,
            "",
        )
        .with_children(vec![NodeSpec::new(
            NodeKind::Sentence,
            "The name comes from Malay .",
        )])]),
        NodeSpec::new(NodeKind::Section, "History")
            .with_children(vec![NodeSpec::new(NodeKind::Paragraph, "Trade grew .")]),
        NodeSpec::new(NodeKind::Section, "Geography").with_children(vec![NodeSpec::new(
            NodeKind::Paragraph,
            "Thailand island .",
        )]),
    ]);
    let tree = annotate_answers(DocTree::build("name", root).unwrap(), &["Thailand".into()]);
    let sample = QASample::new("q", "where is Phuket", vec!["Thailand".into()], vec![tree]);
    let env = Env::new(
        &sample,
        &sample.documents[0],
        &EXTRACTOR,
        EnvOptions::default(),
    );
    let st = env.make_state(NodeId(1), 1, None);
    let o: Vec<&str> = st.observation.iter().map(|t| &**t).collect();
    let row_ok =
        o == ["Phuket", "Province", "Name"] && st.phi_n == [2.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0];
    // five structural levels cap a real path at 100 tokens; the 120-token
    // truncation is exercised on longer synthetic label chains
    let mut cut_violations = 0;
    let mut truncated = 0;
    for _ in 0..1000 {
        let chain: Vec<Vec<Token>> = (0..rng.gen_range(1..=12))
            .map(|_| {
                (0..rng.gen_range(0..30))
                    .map(|i| Token::from(format!("t{i}")))
                    .collect()
            })
            .collect();
        let full: Vec<Token> = chain
            .iter()
            .flat_map(|l| l.iter().take(NODE_PREFIX_LEN).cloned())
            .collect();
        let expected = &full[full.len().saturating_sub(MAX_OBSERVATION_LEN)..];
        truncated += usize::from(full.len() > MAX_OBSERVATION_LEN);
        if concat_prefixes(chain.iter().map(|l| l.as_slice())) != expected {
            cut_violations += 1;
        }
    }
    outcome(
        violations == 0 && cut_violations == 0 && row_ok && longest <= MAX_OBSERVATION_LEN,
        format!(
            "1000 trees, {violations} violations, longest {longest}; 1000 chains ({truncated} truncated), {cut_violations} violations; example row o={o:?} phi_n={:?}",
            st.phi_n
        ),
    )
}

fn c4_dueling() -> Outcome {
    let mut rng = SeedSource::new(4).fork("acceptance/dueling");
    let samples: Vec<QASample> = (0..50).map(|i| random_sample(&mut rng, i)).collect();
    let net = net_for(&samples, 4);
    let mut worst = 0.0f64;
    let mut from_parts = 0.0f64;
    for i in 0..1000 {
        let s = &samples[i % samples.len()];
        let env = Env::new(s, &s.documents[0], &EXTRACTOR, EnvOptions::default());
        let st = random_state(&env, &mut rng);
        let shift = rng.gen_range(-50.0..50.0);
        let mut shifted = net.clone();
        let b = shifted.layout.v2_adv.b;
        b.of_mut(&mut shifted.params)
            .iter_mut()
            .for_each(|x| *x += shift);
        let q = net.q_values(&st).unwrap();
        let q2 = shifted.q_values(&st).unwrap();
        for a in 0..Action::COUNT {
            worst = worst.max((q.q[a] - q2.q[a]).abs());
        }
        let manual = QValues::from_parts(q.value, q.advantages.map(|x| x + shift));
        for a in 0..Action::COUNT {
            from_parts = from_parts.max((q.q[a] - manual.q[a]).abs());
        }
    }
    outcome(
        worst < 1e-6 && from_parts < 1e-6,
        format!("1000 states, max |dQ| {worst:.2e} (network), {from_parts:.2e} (head)"),
    )
}

// ---------------------------------------------------------------- 5-8

fn c5_gradients() -> Outcome {
    let sample = phuket_sample("which country holds the monsoon rains of Phuket ?");
    let online = desk_net(&sample, 7);
    let mut target = online.sync_target();
    target.params.iter_mut().for_each(|p| *p *= 0.8);
    let batch = three_transitions(&sample);
    let r = gradient_check(&online, &target, &batch, 1e-4, 1e-3, 1e-6);
    let tensors = online.layout.names.len();
    outcome(
        r.failures.is_empty() && r.checked == online.n_params(),
        format!(
            "{} parameters in {tensors} tensors, worst relative error {:.2e} ({}), {} above 1e-3",
            r.checked,
            r.worst_rel,
            r.worst_tensor,
            r.failures.len()
        ),
    )
}

fn c6_double_q() -> Outcome {
    let mut rng = SeedSource::new(6).fork("acceptance/double_q");
    let samples: Vec<QASample> = (0..40).map(|i| random_sample(&mut rng, i)).collect();
    let online = net_for(&samples, 6);
    let mut target = online.sync_target();
    target.params.iter_mut().for_each(|p| *p *= 0.7);
    let mut compared = 0;
    let mut mismatches = 0;
    for b in 0..100 {
        let coupled = b % 4 == 3;
        let mask = Action::ALL.map(|a| !(coupled && a == Action::Answer));
        let n = rng.gen_range(4..=24);
        let batch: Vec<Transition> = (0..n)
            .map(|_| {
                let s = &samples[rng.gen_range(0..samples.len())];
                let env = Env::new(
                    s,
                    &s.documents[0],
                    &EXTRACTOR,
                    EnvOptions {
                        coupled,
                        ..Default::default()
                    },
                );
                let st = random_state(&env, &mut rng);
                let legal: Vec<Action> = Action::ALL
                    .into_iter()
                    .filter(|a| mask[a.index()])
                    .collect();
                let a = legal[rng.gen_range(0..legal.len())];
                let r = env.transition(&st, a);
                Transition {
                    state: st,
                    action: r.action,
                    reward: r.reward,
                    next_state: r.next_state,
                    terminal: r.terminal,
                }
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let weights = vec![1.0; n];
        let gamma = 0.996;
        let opts = TdOptions {
            gamma,
            action_mask: mask,
            ..Default::default()
        };
        let out = td_loss(&online, &target, &refs, &weights, &opts).unwrap();
        for (t, y) in batch.iter().zip(&out.targets) {
            let expected = if t.terminal {
                t.reward
            } else {
                let qo = online.q_values(&t.next_state).unwrap().q;
                let mut best = None;
                for a in 0..Action::COUNT {
                    if mask[a] && best.is_none_or(|b: usize| qo[a] > qo[b]) {
                        best = Some(a);
                    }
                }
                let qt = target.q_values(&t.next_state).unwrap().q;
                t.reward + gamma * qt[best.unwrap()]
            };
            compared += 1;
            if expected != *y {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("100 batches, {compared} targets, {mismatches} differ"),
    )
}

fn c7_replay() -> Outcome {
    let mut rng = SeedSource::new(7).fork("acceptance/replay");
    let mut b = PrioritizedBuffer::new(2, 1.0);
    b.push(0usize);
    b.push(1usize);
    b.update_priorities(&[0, 1], &[1.0 - PRIORITY_EPS, 3.0 - PRIORITY_EPS]);
    let mut counts = [0usize; 2];
    for _ in 0..100_000 {
        let s = b.sample(1, 0.4, &mut rng).unwrap();
        counts[*s.items[0]] += 1;
    }
    let ratio = counts[1] as f64 / counts[0] as f64;
    let ratio_ok = (ratio - 3.0).abs() / 3.0 < 0.02;

    let cap = 37;
    let mut tree = SumTree::new(cap);
    let mut shadow = vec![0.0f64; cap];
    let mut worst = 0.0f64;
    let mut find_errors = 0;
    for _ in 0..10_000 {
        let i = rng.gen_range(0..cap);
        let v = if rng.gen_bool(0.1) {
            0.0
        } else {
            rng.gen_range(0.0..10.0)
        };
        tree.set(i, v);
        shadow[i] = v;
        let sum: f64 = shadow.iter().sum();
        worst = worst.max((tree.total() - sum).abs() / sum.max(1.0));
        if sum > 0.0 {
            let mass = rng.gen_range(0.0..sum);
            let leaf = tree.find(mass);
            if shadow[leaf] <= 0.0 {
                find_errors += 1;
            }
        }
    }
    outcome(
        ratio_ok && worst < 1e-9 && find_errors == 0,
        format!("ratio {ratio:.4} (target 3, counts {counts:?}); sum-tree root drift {worst:.1e}, {find_errors} zero-leaf hits"),
    )
}

/// Nodes from which `target` can be reached in at most `depth` movements, by
/// BFS over the reversed movement graph.
fn reverse_bfs(doc: &DocTree, target: NodeId, depth: u32) -> BTreeSet<NodeId> {
    let mut reverse: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for u in doc.ids() {
        for a in Action::MOVEMENTS {
            reverse.entry(move_node(doc, u, a)).or_default().push(u);
        }
    }
    let mut seen = BTreeSet::from([target]);
    let mut queue = VecDeque::from([(target, 0)]);
    while let Some((v, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        for &u in reverse.get(&v).into_iter().flatten() {
            if seen.insert(u) {
                queue.push_back((u, d + 1));
            }
        }
    }
    seen
}

fn c8_samplers() -> Outcome {
    let mut rng = SeedSource::new(8).fork("acceptance/samplers");
    let trees: Vec<DocTree> = (0..200)
        .map(|i| loop {
            let t = random_tree(&mut rng, i, true);
            if t.sentences().next().is_some() {
                break t;
            }
        })
        .collect();
    let mut leaves = 0;
    for k in 0..100_000 {
        let t = &trees[k % trees.len()];
        if t.kind(sample_f_u(t, &mut rng)) == NodeKind::Sentence {
            leaves += 1;
        }
    }
    let mass = leaves as f64 / 100_000.0;
    let mut near = 0;
    for k in 0..10_000 {
        let t = &trees[k % trees.len()];
        let node = sample_f_b(t, &mut rng).unwrap();
        let answers: BTreeSet<NodeId> = t.answer_paragraphs().into_iter().collect();
        if reverse_bfs(t, node, 3).iter().any(|u| answers.contains(u)) {
            near += 1;
        }
    }
    outcome(
        (mass - 0.2).abs() <= 0.01 && near == 10_000,
        format!("f_U leaf mass {mass:.4}; f_B within 3 moves in {near}/10000"),
    )
}

// ---------------------------------------------------------------- 9-11, 13

fn dataset(seed: u64) -> treenav::dataset::Dataset {
    generate_corpus(&CorpusSpec {
        seed,
        ..CorpusSpec::default()
    })
    .unwrap()
    .dataset()
    .unwrap()
}

fn greedy_outcomes(net: &QNet, samples: &[QASample]) -> Vec<NavOutcome> {
    let options = EnvOptions {
        budget: EVAL_BUDGET,
        coupled: false,
    };
    let mut out = Vec::new();
    for s in samples {
        for d in &s.documents {
            let env = Env::new(s, d, &EXTRACTOR, options);
            let mut cache = QuestionCache::new();
            out.push(NavOutcome::from_episode(
                &run_greedy(&env, net, &mut cache).unwrap(),
            ));
        }
    }
    out
}

fn deep(outcomes: &[NavOutcome]) -> Vec<NavOutcome> {
    outcomes
        .iter()
        .filter(|o| o.fao.is_some_and(|f| f > 20))
        .cloned()
        .collect()
}

fn held_out(ds: &treenav::dataset::Dataset) -> Vec<QASample> {
    let mut v = ds.split_owned(Split::Dev);
    v.extend(ds.split_owned(Split::Test));
    v
}

fn c9_exploration() -> Outcome {
    let ds = dataset(1);
    let train_set = ds.split_owned(Split::Train);
    let eval_set = held_out(&ds);
    let median = treenav::doctree::fao_histogram(&ds.samples)
        .median
        .unwrap_or(0.0);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let mut row = Vec::new();
        for mode in [Mode::Dqn, Mode::Docqn] {
            let cfg = TrainConfig {
                seed,
                mode,
                ..TrainConfig::desk()
            };
            let net = train::train(&cfg, &train_set, &EXTRACTOR, None)
                .unwrap()
                .network;
            let outs = greedy_outcomes(&net, &eval_set);
            let stop = eval::stop_index_histogram(&outs).median.unwrap_or(0.0);
            let deep_acc = eval::navigation_accuracy(&deep(&outs)).unwrap_or(0.0);
            row.push((stop, deep_acc));
        }
        let ok = row[1].0 > row[0].0 && row[1].1 >= row[0].1;
        wins += usize::from(ok);
        lines.push(format!(
            "seed {seed}: stop median dqn {} docqn {}, deep acc dqn {:.3} docqn {:.3}",
            row[0].0, row[1].0, row[0].1, row[1].1
        ));
    }
    let band = (10.0..=18.0).contains(&median);
    outcome(
        band && wins >= 2,
        format!(
            "FAO median {median}; {wins}/3 seeds agree; {}",
            lines.join("; ")
        ),
    )
}

/// Large enough that one dev pair moves accuracy by about half a point.
const BASELINE_CORPUS_DOCS: usize = 2000;

fn c10_baselines() -> Outcome {
    let spec = CorpusSpec {
        num_docs: BASELINE_CORPUS_DOCS,
        ..CorpusSpec::default()
    };
    let ds = generate_corpus(&spec).unwrap().dataset().unwrap();
    let dev = ds.split_owned(Split::Dev);
    let mut docs_seen = BTreeSet::new();
    let all_docs: Vec<&DocTree> = ds
        .samples
        .iter()
        .flat_map(|s| &s.documents)
        .filter(|d| docs_seen.insert(d.doc_id.clone()))
        .collect();
    let corpus = TfIdfIndex::corpus(&all_docs, Parallelism::default());
    let seeds = SeedSource::new(10);
    let mut acc: BTreeMap<&str, Vec<NavOutcome>> = BTreeMap::new();
    let options = EnvOptions {
        budget: EVAL_BUDGET,
        coupled: false,
    };
    let mut k = 0;
    for s in &dev {
        for d in &s.documents {
            let env = Env::new(s, d, &EXTRACTOR, options);
            let mut rng = seeds.fork_indexed("pair", k);
            k += 1;
            acc.entry("randomwalk")
                .or_default()
                .push(NavOutcome::from_episode(&baselines::random_walk(
                    &env, &mut rng,
                )));
            acc.entry("randompara")
                .or_default()
                .push(NavOutcome::from_selection(
                    &env,
                    baselines::random_para(d, &mut rng),
                ));
            let g = baselines::global_tfidf_select(&s.question_tokens, d, &corpus).unwrap();
            acc.entry("tfidf")
                .or_default()
                .push(NavOutcome::from_selection(&env, g.node));
            let l = baselines::doc_tfidf_select(&s.question_tokens, d).unwrap();
            acc.entry("doctfidf")
                .or_default()
                .push(NavOutcome::from_selection(&env, l.node));
        }
    }
    let a = |k: &str| 100.0 * eval::navigation_accuracy(&acc[k]).unwrap();
    let (rw, rp, tf, dt) = (a("randomwalk"), a("randompara"), a("tfidf"), a("doctfidf"));
    let pass = rp - rw > 2.0 && tf - rp > 2.0 && dt >= tf;
    outcome(
        pass,
        format!("{} dev pairs: randomwalk {rw:.1} < randompara {rp:.1} < tfidf {tf:.1} <= doctfidf {dt:.1}", acc["tfidf"].len()),
    )
}

/// Steps for the ensemble agents; three trainings must fit the five-minute budget.
const ENSEMBLE_AGENT_STEPS: u64 = 20_000;

fn c11_ensemble() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for corpus_seed in 1..=3 {
        let ds = dataset(corpus_seed);
        let dev = ds.split_owned(Split::Dev);
        let cfg = TrainConfig {
            seed: corpus_seed,
            mode: Mode::Docqn,
            steps: ENSEMBLE_AGENT_STEPS,
            ..TrainConfig::desk()
        };
        let net = train::train(&cfg, &ds.split_owned(Split::Train), &EXTRACTOR, None)
            .unwrap()
            .network;
        let agent = greedy_outcomes(&net, &dev);
        let mut tfidf = Vec::new();
        for s in &dev {
            for d in &s.documents {
                let env = Env::new(s, d, &EXTRACTOR, EnvOptions::default());
                tfidf.push(NavOutcome::from_selection(
                    &env,
                    baselines::doc_tfidf_select(&s.question_tokens, d)
                        .unwrap()
                        .node,
                ));
            }
        }
        let max_index = agent.iter().map(|o| o.stop_index).max().unwrap_or(0);
        let (l, ens) = baselines::tune_threshold(&agent, &tfidf, 0..=max_index).unwrap();
        let a = eval::navigation_accuracy(&agent).unwrap();
        let t = eval::navigation_accuracy(&tfidf).unwrap();
        let ok = ens - a.max(t) >= 0.01 - 1e-12;
        wins += usize::from(ok);
        lines.push(format!(
            "corpus {corpus_seed}: agent {:.1}, doctfidf {:.1}, ensemble(l={l}) {:.1}",
            100.0 * a,
            100.0 * t,
            100.0 * ens
        ));
    }
    outcome(
        wins >= 2,
        format!("{wins}/3 corpora gain >= 1 point; {}", lines.join("; ")),
    )
}

fn c13_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut csvs = Vec::new();
    for dir in &dirs {
        let ds = dataset(1);
        let cfg = TrainConfig {
            seed: 1,
            mode: Mode::Docqn,
            ..TrainConfig::desk()
        };
        train::train(
            &cfg,
            &ds.split_owned(Split::Train),
            &EXTRACTOR,
            Some(dir.path()),
        )
        .unwrap();
        csvs.push(std::fs::read(dir.path().join(METRICS_FILE)).unwrap());
    }
    let rows = csvs[0].iter().filter(|b| **b == b'\n').count();
    outcome(
        csvs[0] == csvs[1],
        format!(
            "two desk docqn runs, {rows} csv lines, identical: {}",
            csvs[0] == csvs[1]
        ),
    )
}

// ---------------------------------------------------------------- 12

fn normalize(s: &str) -> Vec<String> {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !["a", "an", "the"].contains(w))
        .map(String::from)
        .collect()
}

fn em_f1(pred: &str, golds: &[String]) -> (f64, f64) {
    let p = normalize(pred);
    if p.is_empty() {
        return (0.0, 0.0);
    }
    let mut best = (0.0f64, 0.0f64);
    for g in golds {
        let g = normalize(g);
        let em = if p == g { 1.0 } else { 0.0 };
        let mut pool = g.clone();
        let mut common = 0;
        for t in &p {
            if let Some(i) = pool.iter().position(|x| x == t) {
                pool.swap_remove(i);
                common += 1;
            }
        }
        let f1 = if common == 0 {
            0.0
        } else {
            let pr = common as f64 / p.len() as f64;
            let rc = common as f64 / g.len() as f64;
            2.0 * pr * rc / (pr + rc)
        };
        best = (best.0.max(em), best.1.max(f1));
    }
    best
}

fn c12_metrics() -> Outcome {
    let mut rng = SeedSource::new(12).fork("acceptance/metrics");
    let answers = [
        "Thailand",
        "the Thailand",
        "thailand!",
        "Bangkok city",
        "a Phuket",
        "Phuket town",
        "the",
        "Malay",
    ];
    let kinds = [
        NodeKind::Paragraph,
        NodeKind::Sentence,
        NodeKind::Section,
        NodeKind::Title,
    ];
    let mut outcomes = Vec::new();
    for i in 0..300 {
        let qid = format!("q{:02}", rng.gen_range(0..60));
        let answered = rng.gen_bool(0.8);
        outcomes.push(NavOutcome {
            qid,
            doc_id: format!("d{i}"),
            stop_node: rng.gen_range(0..40),
            stop_index: rng.gen_range(0..40),
            stop_kind: kinds[rng.gen_range(0..kinds.len())],
            stop_has_answer: rng.gen_bool(0.3),
            fao: Some(rng.gen_range(0..40)),
            path_length: rng.gen_range(1..=100),
            answer_actions: rng.gen_range(0..5),
            tokens_consumed: rng.gen_range(0..500),
            doc_tokens: rng.gen_range(0..400),
            final_answer: answered.then(|| answers[rng.gen_range(0..answers.len())].to_string()),
            answer_probability: answered.then(|| (rng.gen_range(1..=8) as f64) / 8.0),
        });
    }
    let aliases: BTreeMap<String, Vec<String>> = (0..60)
        .map(|q| {
            let gold = if q % 3 == 0 {
                vec!["Thailand".to_string(), "Kingdom of Thailand".into()]
            } else {
                vec!["Phuket".to_string()]
            };
            (format!("q{q:02}"), gold)
        })
        .collect();

    // recount
    let n = outcomes.len() as f64;
    let nav = outcomes.iter().filter(|o| o.stop_has_answer).count() as f64 / n;
    let mut groups: BTreeMap<&str, Vec<&NavOutcome>> = BTreeMap::new();
    for o in &outcomes {
        groups.entry(o.qid.as_str()).or_default().push(o);
    }
    let agg = groups
        .values()
        .filter(|g| g.iter().any(|o| o.stop_has_answer))
        .count() as f64
        / groups.len() as f64;
    let (mut em, mut f1) = (0.0, 0.0);
    for (qid, gold) in &aliases {
        let mut sums: BTreeMap<String, (f64, String)> = BTreeMap::new();
        for o in groups.get(qid.as_str()).into_iter().flatten() {
            if let Some(a) = &o.final_answer {
                let e = sums
                    .entry(normalize(a).join(" "))
                    .or_insert((0.0, a.clone()));
                e.0 += o.answer_probability.unwrap_or(0.0);
            }
        }
        let mut best: Option<(f64, &str)> = None;
        for (sum, surface) in sums.values() {
            if best.is_none_or(|(b, _)| *sum > b) {
                best = Some((*sum, surface));
            }
        }
        if let Some((_, answer)) = best {
            let (e, f) = em_f1(answer, gold);
            em += e;
            f1 += f;
        }
    }
    em /= aliases.len() as f64;
    f1 /= aliases.len() as f64;
    let path_mean = outcomes
        .iter()
        .map(|o| f64::from(o.path_length))
        .sum::<f64>()
        / n;
    let tokens_pct = 100.0
        * outcomes
            .iter()
            .map(|o| {
                if o.doc_tokens == 0 {
                    0.0
                } else {
                    (o.tokens_consumed as f64 / o.doc_tokens as f64).min(1.0)
                }
            })
            .sum::<f64>()
        / n;
    let answers_mean = outcomes
        .iter()
        .map(|o| f64::from(o.answer_actions))
        .sum::<f64>()
        / n;

    let got_nav = eval::navigation_accuracy(&outcomes).unwrap();
    let got_agg = eval::aggregated_accuracy(&outcomes).unwrap();
    let (got_em, got_f1) = eval::qa_metrics(&outcomes, &aliases);
    let ps = eval::path_stats(&outcomes).unwrap();
    let checks = [
        ("navigation", nav, got_nav),
        ("aggregated", agg, got_agg),
        ("em", em, got_em),
        ("f1", f1, got_f1),
        ("path mean", path_mean, ps.path_length_mean),
        ("answers mean", answers_mean, ps.answer_actions_mean),
        ("tokens pct", tokens_pct, ps.tokens_consumed_pct),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(k, a, b)| format!("{k}: {a} vs {b}"))
        .collect();
    let minmax_ok = ps.path_length_min == outcomes.iter().map(|o| o.path_length).min().unwrap()
        && ps.path_length_max == outcomes.iter().map(|o| o.path_length).max().unwrap();
    outcome(
        bad.is_empty() && minmax_ok && em <= f1,
        format!("300 outcomes / 60 questions: nav {nav:.4}, agg {agg:.4}, EM {em:.4}, F1 {f1:.4}; mismatches {bad:?}"),
    )
}
