use super::*;
use crate::doctree::fixtures::phuket;
use crate::doctree::{annotate_answers, QASample};
use crate::env::EnvOptions;
use crate::reader::OverlapExtractor;
use approx::assert_abs_diff_eq;

#[allow(clippy::too_many_arguments)]
fn o(
    qid: &str,
    doc: &str,
    index: u32,
    kind: NodeKind,
    ok: bool,
    fao: u32,
    path: u32,
    answers: u32,
    tokens: (usize, usize),
    ans: Option<(&str, f64)>,
) -> NavOutcome {
    NavOutcome {
        qid: qid.into(),
        doc_id: doc.into(),
        stop_node: index,
        stop_index: index,
        stop_kind: kind,
        stop_has_answer: ok,
        fao: Some(fao),
        path_length: path,
        answer_actions: answers,
        tokens_consumed: tokens.0,
        doc_tokens: tokens.1,
        final_answer: ans.map(|a| a.0.to_string()),
        answer_probability: ans.map(|a| a.1),
    }
}

fn fixture() -> Vec<NavOutcome> {
    use NodeKind::*;
    vec![
        o(
            "q1",
            "d1",
            3,
            Paragraph,
            true,
            3,
            5,
            1,
            (20, 200),
            Some(("Paris", 0.8)),
        ),
        o(
            "q1",
            "d2",
            9,
            Sentence,
            false,
            9,
            12,
            0,
            (30, 100),
            Some(("Lyon", 0.5)),
        ),
        o("q2", "d3", 0, Title, false, 1, 1, 0, (5, 50), None),
        o(
            "q3",
            "d4",
            14,
            Paragraph,
            true,
            14,
            30,
            2,
            (60, 300),
            Some(("blue whale", 0.9)),
        ),
        o(
            "q3",
            "d5",
            2,
            Paragraph,
            true,
            2,
            3,
            0,
            (10, 100),
            Some(("whale", 0.3)),
        ),
        o(
            "q4",
            "d6",
            7,
            Section,
            true,
            25,
            8,
            0,
            (16, 160),
            Some(("y w", 1.0)),
        ),
    ]
}

fn aliases() -> BTreeMap<String, Vec<String>> {
    [
        ("q1", vec!["Paris"]),
        ("q2", vec!["Rome"]),
        ("q3", vec!["blue whale", "Balaenoptera"]),
        ("q4", vec!["y z"]),
        ("q5", vec!["missing"]),
    ]
    .into_iter()
    .map(|(q, a)| (q.to_string(), a.into_iter().map(String::from).collect()))
    .collect()
}

#[test]
fn accuracies() {
    let f = fixture();
    assert_eq!(navigation_accuracy(&f).unwrap(), 4.0 / 6.0);
    assert_eq!(aggregated_accuracy(&f).unwrap(), 3.0 / 4.0);
    assert!(navigation_accuracy(&[]).is_err());
    assert!(aggregated_accuracy(&[]).is_err());
    let all: Vec<NavOutcome> = f
        .iter()
        .cloned()
        .map(|mut x| {
            x.stop_has_answer = true;
            x
        })
        .collect();
    assert_eq!(navigation_accuracy(&all).unwrap(), 1.0);
    // single-document questions: both metrics agree
    let single: Vec<NavOutcome> = f
        .iter()
        .filter(|x| x.qid == "q2" || x.qid == "q4")
        .cloned()
        .collect();
    assert_eq!(
        navigation_accuracy(&single).unwrap(),
        aggregated_accuracy(&single).unwrap()
    );
}

#[test]
fn em_f1() {
    let (em, f1) = qa_metrics(&fixture(), &aliases());
    assert_abs_diff_eq!(em, 2.0 / 5.0, epsilon = 1e-15);
    assert_abs_diff_eq!(f1, 2.5 / 5.0, epsilon = 1e-15);
    assert!(em <= f1);
    let perfect = vec![o(
        "q1",
        "d1",
        3,
        NodeKind::Paragraph,
        true,
        3,
        1,
        0,
        (1, 1),
        Some(("Paris", 0.1)),
    )];
    let one: BTreeMap<_, _> = aliases().into_iter().take(1).collect();
    assert_eq!(qa_metrics(&perfect, &one), (1.0, 1.0));
    assert_eq!(qa_metrics(&[], &one), (0.0, 0.0));
}

#[test]
fn path_statistics() {
    let s = path_stats(&fixture()).unwrap();
    assert_eq!(s.count, 6);
    assert_abs_diff_eq!(s.path_length_mean, 59.0 / 6.0, epsilon = 1e-12);
    assert_eq!((s.path_length_min, s.path_length_max), (1, 30));
    assert_abs_diff_eq!(s.answer_actions_mean, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(s.tokens_consumed_pct, 15.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.stop_kinds_pct["paragraph"], 50.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.stop_kinds_pct["sentence"], 100.0 / 6.0, epsilon = 1e-12);
    assert_abs_diff_eq!(
        s.stop_kinds_pct.values().sum::<f64>(),
        100.0,
        epsilon = 1e-9
    );
    let one = path_stats(&fixture()[..1]).unwrap();
    assert_eq!((one.path_length_min, one.path_length_max), (5, 5));
    assert!(path_stats(&[]).is_err());
}

#[test]
fn stop_histogram() {
    let h = stop_index_histogram(&fixture());
    assert_eq!(h.total, 6);
    assert_eq!(h.median, Some(5.0));
    assert_eq!(h.counts.len(), 6);
    assert_eq!(stop_index_histogram(&[]).median, None);
}

#[test]
fn fao_buckets() {
    let f = fixture();
    let b = accuracy_by_fao(&f, &[0, 5, 20]).unwrap();
    assert_eq!(b.iter().map(|x| x.count).collect::<Vec<_>>(), vec![3, 2, 1]);
    assert_eq!(b[0].accuracy, Some(2.0 / 3.0));
    assert_eq!(b[1].accuracy, Some(0.5));
    assert_eq!(b[2].accuracy, Some(1.0));
    assert_eq!(b[2].hi, None);
    assert_abs_diff_eq!(
        b.iter().map(|x| x.fraction).sum::<f64>(),
        1.0,
        epsilon = 1e-12
    );
    let with_empty = accuracy_by_fao(&f, &[0, 5, 20, 100]).unwrap();
    assert_eq!(with_empty[3].accuracy, None);
    assert_eq!(with_empty[3].count, 0);
    let single = accuracy_by_fao(&f, &[0]).unwrap();
    assert_eq!(single[0].accuracy, Some(navigation_accuracy(&f).unwrap()));
    assert!(accuracy_by_fao(&f, &[5, 5]).is_err());
    assert!(fao_csv(&with_empty).ends_with("100,,0,,0\n"));
}

#[test]
fn navigate_records_a_trace() {
    let tree = annotate_answers(phuket(), &["Thailand".into()]);
    let sample = QASample::new("q", "which country ?", vec!["Thailand".into()], vec![tree]);
    let ex = OverlapExtractor { max_span_len: 8 };
    let env = Env::new(&sample, &sample.documents[0], &ex, EnvOptions::default());
    let mut it = [Action::Down, Action::Answer, Action::Stop].into_iter();
    let rec = navigate(&env, "scripted", |_| Ok(it.next().unwrap())).unwrap();
    assert_eq!(rec.steps.len(), 3);
    assert_eq!(rec.steps[0].action, Action::Down);
    assert_eq!(rec.steps[0].observation, "Phuket Province");
    assert!(rec.steps[0].answer.is_none());
    assert!(rec.steps[1].answer.is_some());
    assert_eq!(rec.steps[2].answer, rec.outcome.final_answer);
    assert_eq!(rec.outcome.path_length, 3);
    assert_eq!(rec.outcome.answer_actions, 1);
    assert_eq!(rec.outcome.stop_index, 1);

    let dir = tempfile::tempdir().unwrap();
    write_traces(&dir.path().join("a.jsonl"), std::slice::from_ref(&rec)).unwrap();
    let back = read_traces(dir.path()).unwrap();
    assert_eq!(back, vec![rec.clone()]);
    let groups = outcomes_by_policy(&back);
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].0, "scripted");
}
