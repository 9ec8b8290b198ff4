#![allow(dead_code)]

use std::path::Path;

use treenav::doctree::{annotate_answers, ingest_document, DocumentRecord, QASample};
use treenav::env::{Action, Env, EnvOptions};
use treenav::qnet::{td_loss, td_loss_value, Lexicon, QNet, QNetConfig, TdOptions};
use treenav::reader::OverlapExtractor;
use treenav::replay::Transition;
use treenav::seed::SeedSource;

pub const EXTRACTOR: OverlapExtractor = OverlapExtractor { max_span_len: 8 };

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name),
    )
    .unwrap()
}

pub fn phuket_sample(question: &str) -> QASample {
    let rec = DocumentRecord::from_json(&fixture("phuket.json")).unwrap();
    let tree = annotate_answers(ingest_document(&rec).unwrap(), &["Thailand".into()]);
    QASample::new("q", question, vec!["Thailand".into()], vec![tree])
}

pub fn desk_net(sample: &QASample, seed: u64) -> QNet {
    let lex = Lexicon::from_samples(std::slice::from_ref(sample), 1000, 1);
    QNet::new(
        QNetConfig::desk(),
        lex,
        &mut SeedSource::new(seed).fork("qnet"),
    )
    .unwrap()
}

/// Three transitions from the root: Down, Answer, Stop.
pub fn three_transitions(sample: &QASample) -> Vec<Transition> {
    let env = Env::new(
        sample,
        &sample.documents[0],
        &EXTRACTOR,
        EnvOptions::default(),
    );
    let mut state = env.reset();
    let mut out = Vec::new();
    for a in [Action::Down, Action::Answer, Action::Stop] {
        let r = env.transition(&state, a);
        out.push(Transition {
            state: state.clone(),
            action: r.action,
            reward: r.reward,
            next_state: r.next_state.clone(),
            terminal: r.terminal,
        });
        state = r.next_state;
    }
    out
}

pub struct GradCheck {
    pub checked: usize,
    pub worst_tensor: String,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

/// Relative error with a floor on the denominator, so entries whose
/// gradient is at rounding level are compared absolutely.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences on every parameter of every tensor.
pub fn gradient_check(
    online: &QNet,
    target: &QNet,
    batch: &[Transition],
    h: f64,
    tol: f64,
    floor: f64,
) -> GradCheck {
    let refs: Vec<&Transition> = batch.iter().collect();
    let weights = vec![1.0; batch.len()];
    let opts = TdOptions {
        gamma: 0.9,
        ..Default::default()
    };
    let analytic = td_loss(online, target, &refs, &weights, &opts)
        .unwrap()
        .grads;
    let mut net = online.clone();
    let mut report = GradCheck {
        checked: 0,
        worst_tensor: String::new(),
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    for (name, t) in online.layout.names.iter() {
        for k in t.offset..t.offset + t.len() {
            let orig = net.params[k];
            net.params[k] = orig + h;
            let up = td_loss_value(&net, target, &refs, &weights, &opts)
                .unwrap()
                .loss;
            net.params[k] = orig - h;
            let down = td_loss_value(&net, target, &refs, &weights, &opts)
                .unwrap()
                .loss;
            net.params[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = rel_err(analytic[k], numeric, floor);
            report.checked += 1;
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_tensor = name.clone();
            }
            if rel >= tol {
                report.failures.push(format!(
                    "{name}[{}]: analytic {} numeric {numeric}",
                    k - t.offset,
                    analytic[k]
                ));
            }
        }
    }
    report
}
