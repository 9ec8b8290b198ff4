//! Data directories: `docs.jsonl` (one document record per line) and
//! `qa.jsonl` (one `{"qid","question","answers","doc_ids"}` record per line).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doctree::{
    annotate_answers, filter_sample, ingest_document, remove_preface, DocTree, DocumentRecord,
    QASample, RejectReason,
};
use crate::error::{Error, Result};
use crate::seed::stable_hash;

pub const DOCS_FILE: &str = "docs.jsonl";
pub const QA_FILE: &str = "qa.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub doc_ids: Vec<String>,
}

/// One rejected document or question, with its reason code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub qid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// 80/10/10 assignment by a stable hash of the question id.
    pub fn of(qid: &str) -> Split {
        match stable_hash(qid) % 10 {
            8 => Split::Dev,
            9 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<QASample>,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub remove_preface: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            remove_preface: true,
        }
    }
}

impl Dataset {
    /// Ingests, annotates, and filters raw records.
    pub fn build(docs: &[DocumentRecord], qa: &[QaRecord], opts: BuildOptions) -> Result<Dataset> {
        let mut by_id: HashMap<&str, &DocumentRecord> = HashMap::with_capacity(docs.len());
        for d in docs {
            by_id.insert(d.doc_id.as_str(), d);
        }
        let mut trees: HashMap<&str, DocTree> = HashMap::new();
        let mut out = Dataset::default();
        for q in qa {
            let mut documents = Vec::with_capacity(q.doc_ids.len());
            for id in &q.doc_ids {
                let tree = match trees.get(id.as_str()) {
                    Some(t) => t.clone(),
                    None => {
                        let rec = by_id.get(id.as_str()).ok_or_else(|| {
                            Error::Invalid(format!(
                                "question {} references unknown document {id}",
                                q.qid
                            ))
                        })?;
                        let mut t = ingest_document(rec)?;
                        if opts.remove_preface {
                            t = remove_preface(&t);
                        }
                        trees.insert(rec.doc_id.as_str(), t.clone());
                        t
                    }
                };
                documents.push(annotate_answers(tree, &q.answers));
            }
            let sample = QASample::new(
                q.qid.clone(),
                q.question.clone(),
                q.answers.clone(),
                documents,
            );
            let outcome = filter_sample(sample);
            for (doc_id, reason) in outcome.dropped_documents {
                out.rejections.push(Rejection {
                    qid: q.qid.clone(),
                    doc_id: Some(doc_id),
                    reason,
                });
            }
            if let Some(reason) = outcome.rejection {
                log::debug!("rejected question {}: {}", q.qid, reason.code());
                out.rejections.push(Rejection {
                    qid: q.qid.clone(),
                    doc_id: None,
                    reason,
                });
            }
            if let Some(s) = outcome.sample {
                out.samples.push(s);
            }
        }
        Ok(out)
    }

    /// Loads an already-processed data directory (no further preface removal).
    pub fn load(dir: &Path) -> Result<Dataset> {
        let (docs, qa) = read_dir_records(dir)?;
        Dataset::build(
            &docs,
            &qa,
            BuildOptions {
                remove_preface: false,
            },
        )
    }

    pub fn split(&self, split: Split) -> Vec<&QASample> {
        self.samples
            .iter()
            .filter(|s| Split::of(&s.question_id) == split)
            .collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<QASample> {
        self.split(split).into_iter().cloned().collect()
    }

    pub fn pair_count(&self) -> usize {
        self.samples.iter().map(|s| s.documents.len()).sum()
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Document records from a JSON-lines file, parsed with node-path error reporting.
pub fn read_document_records(path: &Path) -> Result<Vec<DocumentRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DocumentRecord::from_json(l).map_err(|e| match e {
                Error::Parse { path: p, message } => Error::Parse {
                    path: format!("{}:{}:{p}", path.display(), i + 1),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

pub fn read_dir_records(dir: &Path) -> Result<(Vec<DocumentRecord>, Vec<QaRecord>)> {
    let docs = read_document_records(&dir.join(DOCS_FILE))?;
    let qa = read_jsonl(&dir.join(QA_FILE))?;
    Ok((docs, qa))
}

/// Writes a processed data directory from samples.
pub fn write_dir(dir: &Path, samples: &[QASample], rejections: &[Rejection]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut qa = Vec::with_capacity(samples.len());
    for s in samples {
        for d in &s.documents {
            if seen.insert(d.doc_id.clone()) {
                docs.push(DocumentRecord::from_tree(d));
            }
        }
        qa.push(QaRecord {
            qid: s.question_id.clone(),
            question: s.question.clone(),
            answers: s.answer_aliases.clone(),
            doc_ids: s.documents.iter().map(|d| d.doc_id.clone()).collect(),
        });
    }
    write_jsonl(&dir.join(DOCS_FILE), &docs)?;
    write_jsonl(&dir.join(QA_FILE), &qa)?;
    write_jsonl(&dir.join(REJECTED_FILE), rejections)
}
