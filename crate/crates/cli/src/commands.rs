use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use treenav::baselines::{ensemble_threshold, tune_threshold, TfIdfIndex};
use treenav::dataset::{self, BuildOptions, Dataset, QaRecord, Rejection, Split};
use treenav::doctree::{fao_histogram, generate_corpus, CorpusSpec, DocTree, QASample};
use treenav::env::EnvOptions;
use treenav::eval::{self, alias_table, stop_index_histogram, PolicyReport, TraceRecord};
use treenav::reader::ReaderConfig;
use treenav::seed::SeedSource;
use treenav::train::{self, Checkpoint, Mode, TrainConfig};

use crate::manifest::{combined_hash, content_hash, manifest_path, RunManifest};
use crate::policy::{Kind, Policy, Runner};
use crate::{Command, EnsembleArg, ModeArg, PolicyArg, SplitArg};

/// A user mistake detected by the CLI itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// 1 for validation errors, 2 for runtime failures.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(t) = cause.downcast_ref::<treenav::Error>() {
            return if t.is_validation() { 1 } else { 2 };
        }
    }
    2
}

/// Unreadable or malformed inputs are the caller's mistake.
fn input<T>(what: &str, r: treenav::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        treenav::Error::Io { .. } | treenav::Error::Json { .. } => {
            Invalid(format!("{what}: {e}")).into()
        }
        other => other.into(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            docs,
            qa,
            out,
            keep_preface,
        } => ingest(&docs, &qa, &out, keep_preface),
        Command::GenCorpus { spec, out } => gen_corpus(&spec, &out),
        Command::Stats { data, fao_csv } => stats(&data, &fao_csv),
        Command::Train {
            config,
            data,
            out,
            mode,
            coupled,
            seed,
        } => run_train(&config, &data, &out, mode, coupled, seed),
        Command::Navigate {
            data,
            policy,
            trace,
            checkpoint,
            config,
            split,
            seed,
            name,
        } => run_navigate(
            &data,
            policy,
            &trace,
            checkpoint.as_deref(),
            config.as_deref(),
            split,
            seed,
            name,
        ),
        Command::Baseline {
            kind,
            data,
            out,
            ensemble,
            l,
            agent,
            config,
            split,
            seed,
        } => run_baseline(
            kind,
            &data,
            &out,
            ensemble,
            l,
            agent.as_deref(),
            config.as_deref(),
            split,
            seed,
        ),
        Command::Eval {
            traces,
            data,
            report,
        } => run_eval(&traces, &data, &report),
    }
}

fn ingest(docs: &Path, qa: &Path, out: &Path, keep_preface: bool) -> Result<()> {
    let mut manifest = RunManifest::new("ingest");
    let records = input("documents", dataset::read_document_records(docs))?;
    let questions: Vec<QaRecord> = input("questions", dataset::read_jsonl(qa))?;
    let ds = Dataset::build(
        &records,
        &questions,
        BuildOptions {
            remove_preface: !keep_preface,
        },
    )?;
    create_dir(out)?;
    dataset::write_dir(out, &ds.samples, &ds.rejections)?;
    manifest.config = serde_json::json!({ "keep_preface": keep_preface });
    manifest.data_hash = Some(combined_hash(&[("docs", docs), ("qa", qa)])?);
    manifest.finish(&manifest_path(out, true))?;
    log::info!(
        "kept {} of {} questions ({} pairs), {} rejections",
        ds.samples.len(),
        questions.len(),
        ds.pair_count(),
        ds.rejections.len()
    );
    Ok(())
}

fn gen_corpus(spec_path: &Path, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("gen-corpus");
    let spec = input("corpus spec", CorpusSpec::load(spec_path))?;
    let corpus = generate_corpus(&spec)?;
    let ds = corpus.dataset()?;
    create_dir(out)?;
    dataset::write_dir(out, &ds.samples, &ds.rejections)?;
    manifest.seed = Some(spec.seed);
    manifest.config = serde_json::to_value(&spec)?;
    manifest.data_hash = Some(content_hash(spec_path)?);
    manifest.finish(&manifest_path(out, true))?;
    log::info!(
        "generated {} documents, kept {} questions ({} pairs)",
        corpus.documents.len(),
        ds.samples.len(),
        ds.pair_count()
    );
    Ok(())
}

#[derive(Serialize)]
struct SplitCount {
    questions: usize,
    pairs: usize,
}

#[derive(Serialize)]
struct Summary {
    questions: usize,
    pairs: usize,
    documents: usize,
    splits: BTreeMap<&'static str, SplitCount>,
    rejections: BTreeMap<&'static str, usize>,
    fao_median: Option<f64>,
    fao_max: Option<u32>,
    mean_nodes: f64,
    mean_tokens: f64,
}

fn unique_docs(samples: &[QASample]) -> Vec<&DocTree> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .flat_map(|s| &s.documents)
        .filter(|d| seen.insert(d.doc_id.as_str()))
        .collect()
}

fn stats(data: &Path, fao_csv: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("stats");
    let ds = input("data", Dataset::load(data))?;
    let rejected_path = data.join(dataset::REJECTED_FILE);
    let rejected: Vec<Rejection> = if rejected_path.exists() {
        input("rejections", dataset::read_jsonl(&rejected_path))?
    } else {
        Vec::new()
    };
    let hist = fao_histogram(&ds.samples);
    let docs = unique_docs(&ds.samples);
    let n_docs = docs.len().max(1) as f64;
    let mut splits = BTreeMap::new();
    for (name, split) in [
        ("train", Split::Train),
        ("dev", Split::Dev),
        ("test", Split::Test),
    ] {
        let s = ds.split(split);
        splits.insert(
            name,
            SplitCount {
                questions: s.len(),
                pairs: s.iter().map(|q| q.documents.len()).sum(),
            },
        );
    }
    let mut rejections = BTreeMap::new();
    for r in &rejected {
        *rejections.entry(r.reason.code()).or_insert(0) += 1;
    }
    let summary = Summary {
        questions: ds.samples.len(),
        pairs: ds.pair_count(),
        documents: docs.len(),
        splits,
        rejections,
        fao_median: hist.median,
        fao_max: hist.counts.keys().next_back().copied(),
        mean_nodes: docs.iter().map(|d| d.len() as f64).sum::<f64>() / n_docs,
        mean_tokens: docs.iter().map(|d| d.token_count() as f64).sum::<f64>() / n_docs,
    };
    create_parent(fao_csv)?;
    fs::write(fao_csv, hist.to_csv("fao"))
        .with_context(|| format!("cannot write {}", fao_csv.display()))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    manifest.data_hash = Some(content_hash(data)?);
    manifest.finish(&manifest_path(fao_csv, false))?;
    Ok(())
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    if !path.is_file() {
        return Err(Invalid(format!("config file {} does not exist", path.display())).into());
    }
    input("config", TrainConfig::load(path))
}

fn run_train(
    config: &Path,
    data: &Path,
    out: &Path,
    mode: Option<ModeArg>,
    coupled: bool,
    seed: Option<u64>,
) -> Result<()> {
    let mut manifest = RunManifest::new("train");
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Dqn => Mode::Dqn,
            ModeArg::Docqn => Mode::Docqn,
        };
    }
    cfg.coupled |= coupled;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let ds = input("data", Dataset::load(data))?;
    let samples = ds.split_owned(Split::Train);
    let extractor = cfg.reader.build()?;
    create_dir(out)?;
    let manifest_file = manifest_path(out, true);
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::to_value(&cfg)?;
    manifest.data_hash = Some(content_hash(data)?);
    manifest.write(&manifest_file)?;
    let outcome = train::train(&cfg, &samples, extractor.as_ref(), Some(out))?;
    log::info!(
        "{} steps, {} episodes, {} updates",
        outcome.stats.steps,
        outcome.stats.episodes,
        outcome.stats.updates
    );
    manifest.finish(&manifest_file)
}

fn select_split(ds: &Dataset, split: SplitArg) -> Vec<QASample> {
    match split {
        SplitArg::All => ds.samples.clone(),
        SplitArg::Train => ds.split_owned(Split::Train),
        SplitArg::Dev => ds.split_owned(Split::Dev),
        SplitArg::Test => ds.split_owned(Split::Test),
    }
}

/// Reader, budget, and parallelism for evaluation runs.
fn eval_settings(config: Option<&Path>) -> Result<(ReaderConfig, EnvOptions, TrainConfig)> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => TrainConfig::desk(),
    };
    let options = EnvOptions {
        budget: cfg.budget_eval,
        coupled: cfg.coupled,
    };
    Ok((cfg.reader.clone(), options, cfg))
}

fn corpus_index(ds: &Dataset, cfg: &TrainConfig) -> TfIdfIndex {
    TfIdfIndex::corpus(&unique_docs(&ds.samples), cfg.parallelism)
}

fn write_trace_file(path: &Path, records: &[TraceRecord], mut manifest: RunManifest) -> Result<()> {
    create_parent(path)?;
    eval::write_traces(path, records)?;
    manifest.finish(&manifest_path(path, false))
}

#[allow(clippy::too_many_arguments)]
fn run_navigate(
    data: &Path,
    policy: PolicyArg,
    trace: &Path,
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    split: SplitArg,
    seed: u64,
    name: Option<String>,
) -> Result<()> {
    let mut manifest = RunManifest::new("navigate");
    let ds = input("data", Dataset::load(data))?;
    let samples = select_split(&ds, split);
    let ck = match (policy, checkpoint) {
        (PolicyArg::Checkpoint, Some(p)) => Some(input("checkpoint", Checkpoint::load(p))?),
        (PolicyArg::Checkpoint, None) => {
            return Err(Invalid("--policy checkpoint needs --checkpoint".into()).into())
        }
        _ => None,
    };
    let (reader, options, cfg) = match &ck {
        Some(ck) if config.is_none() => {
            let c = &ck.config;
            (
                c.reader.clone(),
                EnvOptions {
                    budget: c.budget_eval,
                    coupled: c.coupled,
                },
                c.clone(),
            )
        }
        _ => eval_settings(config)?,
    };
    let extractor = reader.build()?;
    let (policy_impl, default_name) = match (&ck, policy) {
        (Some(ck), _) => {
            let mut n = ck.config.mode.name().to_string();
            if ck.config.coupled {
                n.push_str("-coupled");
            }
            (Policy::Greedy(&ck.online), n)
        }
        (None, PolicyArg::Random) => (
            Policy::Baseline(Kind::RandomWalk),
            Kind::RandomWalk.name().to_string(),
        ),
        (None, _) => (
            Policy::Baseline(Kind::DocTfIdf),
            Kind::DocTfIdf.name().to_string(),
        ),
    };
    let name = name.unwrap_or(default_name);
    let runner = Runner {
        samples: &samples,
        extractor: extractor.as_ref(),
        options,
        seeds: SeedSource::new(seed),
        parallelism: cfg.parallelism,
        corpus: None,
    };
    let records = runner.run(&policy_impl, &name)?;
    log::info!("navigated {} pairs with {name}", records.len());
    manifest.seed = Some(seed);
    manifest.config = serde_json::json!({
        "policy": name,
        "split": format!("{split:?}").to_lowercase(),
        "budget": options.budget,
        "reader": reader,
        "checkpoint": checkpoint.map(|p| p.display().to_string()),
    });
    manifest.data_hash = Some(content_hash(data)?);
    write_trace_file(trace, &records, manifest)
}

type PairKey = (String, String);

fn key(r: &TraceRecord) -> PairKey {
    (r.outcome.qid.clone(), r.outcome.doc_id.clone())
}

#[allow(clippy::too_many_arguments)]
fn run_baseline(
    kind: Kind,
    data: &Path,
    out: &Path,
    ensemble: Option<EnsembleArg>,
    l: Option<u32>,
    agent: Option<&Path>,
    config: Option<&Path>,
    split: SplitArg,
    seed: u64,
) -> Result<()> {
    let mut manifest = RunManifest::new("baseline");
    let ds = input("data", Dataset::load(data))?;
    let samples = select_split(&ds, split);
    let (reader, options, cfg) = eval_settings(config)?;
    let extractor = reader.build()?;
    let runner = Runner {
        samples: &samples,
        extractor: extractor.as_ref(),
        options,
        seeds: SeedSource::new(seed),
        parallelism: cfg.parallelism,
        corpus: (kind == Kind::TfIdf).then(|| corpus_index(&ds, &cfg)),
    };
    let records = runner.run(&Policy::Baseline(kind), kind.name())?;
    let mut ensemble_note = serde_json::Value::Null;
    let records = match (ensemble, agent) {
        (None, _) => records,
        (Some(_), None) => return Err(Invalid("--ensemble needs --agent".into()).into()),
        (Some(mode), Some(agent_path)) => {
            let agent_records = input("agent traces", eval::read_traces(agent_path))?;
            let mut by_pair: HashMap<PairKey, TraceRecord> =
                agent_records.into_iter().map(|r| (key(&r), r)).collect();
            let mut paired = Vec::with_capacity(records.len());
            for r in records {
                let a = by_pair.remove(&key(&r)).ok_or_else(|| {
                    Invalid(format!(
                        "agent trace has no pair ({}, {})",
                        r.outcome.qid, r.outcome.doc_id
                    ))
                })?;
                paired.push((a, r));
            }
            match mode {
                EnsembleArg::Threshold => {
                    let agent_outcomes: Vec<_> =
                        paired.iter().map(|(a, _)| a.outcome.clone()).collect();
                    let base_outcomes: Vec<_> =
                        paired.iter().map(|(_, b)| b.outcome.clone()).collect();
                    let l = match l {
                        Some(l) => l,
                        None => {
                            let max = agent_outcomes
                                .iter()
                                .map(|o| o.stop_index)
                                .max()
                                .unwrap_or(0);
                            let (l, acc) = tune_threshold(&agent_outcomes, &base_outcomes, 0..=max)
                                .ok_or_else(|| {
                                    Invalid("no pairs to tune the threshold on".into())
                                })?;
                            log::info!("tuned threshold l = {l} (navigation accuracy {acc:.4})");
                            l
                        }
                    };
                    ensemble_note = serde_json::json!({ "mode": "threshold", "l": l });
                    let name = format!("ensemble-threshold-l{l}");
                    paired
                        .into_iter()
                        .map(|(a, b)| {
                            let chosen = ensemble_threshold(&a.outcome, &b.outcome, Some(l));
                            let steps = if std::ptr::eq(chosen, &a.outcome) {
                                a.steps.clone()
                            } else {
                                b.steps.clone()
                            };
                            TraceRecord {
                                policy: name.clone(),
                                outcome: chosen.clone(),
                                steps,
                            }
                        })
                        .collect()
                }
                EnsembleArg::Answer => {
                    // both components' per-document predictions, aggregated per question by eval
                    ensemble_note = serde_json::json!({ "mode": "answer" });
                    paired
                        .into_iter()
                        .flat_map(|(a, b)| [a, b])
                        .map(|r| TraceRecord {
                            policy: "ensemble-answer".into(),
                            ..r
                        })
                        .collect()
                }
            }
        }
    };
    manifest.seed = Some(seed);
    manifest.config = serde_json::json!({
        "kind": kind.name(),
        "split": format!("{split:?}").to_lowercase(),
        "budget": options.budget,
        "reader": reader,
        "ensemble": ensemble_note,
        "agent": agent.map(|p| p.display().to_string()),
    });
    manifest.data_hash = Some(content_hash(data)?);
    write_trace_file(out, &records, manifest)
}

#[derive(Serialize)]
struct Report {
    traces: String,
    policies: Vec<PolicyReport>,
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run_eval(traces: &Path, data: &Path, report_path: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("eval");
    let records = input("traces", eval::read_traces(traces))?;
    if records.is_empty() {
        return Err(Invalid(format!("no trace records in {}", traces.display())).into());
    }
    let ds = input("data", Dataset::load(data))?;
    let aliases = alias_table(&ds.samples);
    create_parent(report_path)?;
    let dir = report_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let stem = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    let mut policies = Vec::new();
    let mut csvs: Vec<PathBuf> = Vec::new();
    for (policy, outcomes) in eval::outcomes_by_policy(&records) {
        let mut own = BTreeMap::new();
        for o in &outcomes {
            let a = aliases.get(&o.qid).ok_or_else(|| {
                Invalid(format!(
                    "trace question {} is not in the data directory",
                    o.qid
                ))
            })?;
            own.insert(o.qid.clone(), a.clone());
        }
        let rep = eval::report(&policy, &outcomes, &own)?;
        let base = dir.join(format!("{stem}.{}", file_safe(&policy)));
        let fao = PathBuf::from(format!("{}.fao.csv", base.display()));
        let stops = PathBuf::from(format!("{}.stop_index.csv", base.display()));
        fs::write(&fao, eval::fao_csv(&rep.accuracy_by_fao))
            .with_context(|| format!("cannot write {}", fao.display()))?;
        fs::write(&stops, stop_index_histogram(&outcomes).to_csv("stop_index"))
            .with_context(|| format!("cannot write {}", stops.display()))?;
        csvs.extend([fao, stops]);
        log::info!(
            "{policy}: navigation {:.4}, aggregated {:.4}, EM {:.4}, F1 {:.4}",
            rep.navigation_accuracy,
            rep.aggregated_accuracy,
            rep.exact_match,
            rep.f1
        );
        policies.push(rep);
    }
    let report = Report {
        traces: traces.display().to_string(),
        policies,
    };
    fs::write(report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    manifest.config = serde_json::json!({
        "traces_hash": content_hash(traces)?,
        "csv": csvs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    manifest.data_hash = Some(content_hash(data)?);
    manifest.finish(&manifest_path(report_path, false))
}
