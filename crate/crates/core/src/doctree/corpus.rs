//! Synthetic question-document corpora with a controllable answer-position bias.
//!
//! Documents are titled after a subject, split into topical sections and
//! subsections, and filled with pseudo-words drawn from a Zipf-like
//! vocabulary. Each question names the subject, the topics on the path to the
//! answer paragraph, and two rare keywords planted next to the answer, so both
//! lexical retrieval and structure-guided navigation have something to use.
//! The first answer occurrence is placed in the paragraph whose ordinal is
//! drawn from a geometric distribution with success probability `fao_bias`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DocumentRecord, NodeKind, NodeRecord};
use crate::dataset::{BuildOptions, Dataset, QaRecord};
use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use crate::seed::{Rng, SeedSource};

const SECTION_TOPICS: [&str; 24] = [
    "history",
    "geography",
    "economy",
    "culture",
    "climate",
    "demographics",
    "politics",
    "education",
    "transport",
    "sports",
    "religion",
    "etymology",
    "architecture",
    "cuisine",
    "tourism",
    "media",
    "health",
    "military",
    "science",
    "arts",
    "legacy",
    "career",
    "reception",
    "production",
];

const SUBSECTION_TOPICS: [&str; 16] = [
    "early",
    "modern",
    "overview",
    "background",
    "origins",
    "development",
    "recent",
    "notable",
    "regional",
    "local",
    "national",
    "international",
    "traditional",
    "contemporary",
    "industry",
    "heritage",
];

const TITLE_NOUNS: [&str; 10] = [
    "Province", "River", "Empire", "Company", "Festival", "Island", "Dynasty", "Valley", "Museum",
    "Treaty",
];

const FUNCTION_WORDS: [&str; 10] = [
    "the", "of", "and", "in", "a", "was", "is", "to", "for", "with",
];

const CONSONANTS: [char; 15] = [
    'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z', 'h',
];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    /// Total number of documents across all questions.
    pub num_docs: usize,
    /// Heading levels below the title: 1 = sections only, 2 = sections and subsections.
    pub depth_range: [u32; 2],
    /// Children per heading node.
    pub branching_range: [u32; 2],
    /// Success probability of the geometric distribution over the answer paragraph ordinal.
    pub fao_bias: f64,
    pub vocab_size: usize,
    pub seed: u64,
    pub docs_per_question: [u32; 2],
    pub sentences_per_paragraph: [u32; 2],
    pub sentence_len: [u32; 2],
    /// Per-paragraph chance of a further answer mention after the first one.
    pub extra_answer_rate: f64,
    /// Per-document chance that the question keywords also appear in a decoy paragraph.
    pub decoy_rate: f64,
    /// Per-paragraph chance that the subject name is mentioned.
    pub subject_rate: f64,
    /// Chance that a section opens with a paragraph before its subsections.
    pub lead_paragraph_rate: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_docs: 200,
            depth_range: [2, 2],
            branching_range: [2, 5],
            fao_bias: 0.07,
            vocab_size: 2000,
            seed: 1,
            docs_per_question: [1, 3],
            sentences_per_paragraph: [1, 3],
            sentence_len: [5, 9],
            extra_answer_rate: 0.08,
            decoy_rate: 0.35,
            subject_rate: 0.5,
            lead_paragraph_rate: 0.5,
        }
    }
}

impl CorpusSpec {
    /// Parses TOML; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<CorpusSpec> {
        let spec: CorpusSpec = toml::from_str(text)
            .map_err(|e| Error::Config(crate::train::config::describe(text, &e)))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<CorpusSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [u32; 2], min: u32| -> Result<()> {
            if r[0] < min || r[0] > r[1] {
                Err(Error::Config(format!(
                    "{name} must satisfy {min} <= min <= max, got {r:?}"
                )))
            } else {
                Ok(())
            }
        };
        range("depth_range", self.depth_range, 1)?;
        if self.depth_range[1] > 2 {
            return Err(Error::Config(
                "depth_range supports at most 2 heading levels".into(),
            ));
        }
        range("branching_range", self.branching_range, 1)?;
        range("docs_per_question", self.docs_per_question, 1)?;
        range("sentences_per_paragraph", self.sentences_per_paragraph, 1)?;
        range("sentence_len", self.sentence_len, 1)?;
        if !(self.fao_bias > 0.0 && self.fao_bias <= 1.0) {
            return Err(Error::Config(format!(
                "fao_bias must be in (0, 1], got {}",
                self.fao_bias
            )));
        }
        if self.num_docs == 0 {
            return Err(Error::Config("num_docs must be positive".into()));
        }
        if self.vocab_size < 50 {
            return Err(Error::Config("vocab_size must be at least 50".into()));
        }
        for (name, p) in [
            ("extra_answer_rate", self.extra_answer_rate),
            ("decoy_rate", self.decoy_rate),
            ("subject_rate", self.subject_rate),
            ("lead_paragraph_rate", self.lead_paragraph_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCorpus {
    pub documents: Vec<DocumentRecord>,
    pub questions: Vec<QaRecord>,
}

impl GeneratedCorpus {
    /// Annotated and filtered samples.
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::build(
            &self.documents,
            &self.questions,
            BuildOptions {
                remove_preface: false,
            },
        )
    }
}

/// Pseudo-word for vocabulary rank `i`; distinct ranks give distinct words.
fn pseudo_word(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let syl = |k: usize| -> [char; 2] {
        [
            CONSONANTS[k % CONSONANTS.len()],
            VOWELS[k / CONSONANTS.len() % VOWELS.len()],
        ]
    };
    let mut w = String::new();
    w.extend(syl(i % n));
    w.extend(syl(i / n % n));
    let hi = i / (n * n);
    if i.is_multiple_of(3) || hi > 0 {
        w.extend(syl((i * 7 + hi) % n));
        if hi > 0 {
            w.push_str(&hi.to_string());
        }
    }
    w
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Vocabulary {
    words: Vec<String>,
    cumulative: Vec<f64>,
}

impl Vocabulary {
    fn new(size: usize) -> Self {
        let words: Vec<String> = (0..size).map(pseudo_word).collect();
        let mut acc = 0.0;
        let cumulative = (0..size)
            .map(|r| {
                acc += 1.0 / (r as f64 + 1.0);
                acc
            })
            .collect();
        Self { words, cumulative }
    }

    /// Zipf-distributed filler word.
    fn filler(&self, rng: &mut Rng) -> &str {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        let i = self
            .cumulative
            .partition_point(|c| *c < u)
            .min(self.words.len() - 1);
        &self.words[i]
    }

    /// Uniform draw from the rare half of the vocabulary.
    fn rare(&self, rng: &mut Rng) -> &str {
        let half = self.words.len() / 2;
        &self.words[rng.gen_range(half..self.words.len())]
    }
}

struct Para {
    sentences: Vec<Vec<String>>,
}

struct Sub {
    topic: String,
    paras: Vec<Para>,
}

struct Section {
    topic: String,
    lead: Vec<Para>,
    subs: Vec<Sub>,
}

struct Doc {
    title: String,
    sections: Vec<Section>,
}

/// Where a paragraph sits: (section, Some(subsection) or None for a lead paragraph, paragraph).
type ParaPath = (usize, Option<usize>, usize);

impl Doc {
    /// Paragraphs in pre-order with their node indices.
    fn paragraph_index(&self) -> (Vec<(u32, ParaPath)>, u32) {
        let mut out = Vec::new();
        let mut next = 1u32;
        for (si, s) in self.sections.iter().enumerate() {
            next += 1;
            for pi in 0..s.lead.len() {
                out.push((next, (si, None, pi)));
                next += 1;
            }
            for (ui, sub) in s.subs.iter().enumerate() {
                next += 1;
                for pi in 0..sub.paras.len() {
                    out.push((next, (si, Some(ui), pi)));
                    next += 1;
                }
            }
        }
        (out, next - 1)
    }

    fn para_mut(&mut self, path: ParaPath) -> &mut Para {
        let (si, sub, pi) = path;
        match sub {
            None => &mut self.sections[si].lead[pi],
            Some(ui) => &mut self.sections[si].subs[ui].paras[pi],
        }
    }

    fn record(&self, doc_id: String) -> DocumentRecord {
        let para = |p: &Para| NodeRecord {
            kind: NodeKind::Paragraph,
            text: p
                .sentences
                .iter()
                .map(|s| s.join(" "))
                .collect::<Vec<_>>()
                .join(" "),
            children: p
                .sentences
                .iter()
                .map(|s| NodeRecord {
                    kind: NodeKind::Sentence,
                    text: s.join(" "),
                    children: Vec::new(),
                })
                .collect(),
        };
        let nodes = self
            .sections
            .iter()
            .map(|s| {
                let mut children: Vec<NodeRecord> = s.lead.iter().map(para).collect();
                children.extend(s.subs.iter().map(|u| NodeRecord {
                    kind: NodeKind::Subsection,
                    text: capitalize(&u.topic),
                    children: u.paras.iter().map(para).collect(),
                }));
                NodeRecord {
                    kind: NodeKind::Section,
                    text: capitalize(&s.topic),
                    children,
                }
            })
            .collect();
        DocumentRecord {
            doc_id,
            title: self.title.clone(),
            nodes,
        }
    }
}

struct Generator<'a> {
    spec: &'a CorpusSpec,
    vocab: &'a Vocabulary,
}

impl Generator<'_> {
    fn range(&self, rng: &mut Rng, r: [u32; 2]) -> u32 {
        rng.gen_range(r[0]..=r[1])
    }

    fn sentence(&self, rng: &mut Rng) -> Vec<String> {
        let len = self.range(rng, self.spec.sentence_len);
        let mut s: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())].to_string()
                } else {
                    self.vocab.filler(rng).to_string()
                }
            })
            .collect();
        s.push(".".into());
        s
    }

    fn paragraph(&self, rng: &mut Rng, subject: &str) -> Para {
        let n = self.range(rng, self.spec.sentences_per_paragraph);
        let mut sentences: Vec<Vec<String>> = (0..n).map(|_| self.sentence(rng)).collect();
        if rng.gen_bool(self.spec.subject_rate) {
            let si = rng.gen_range(0..sentences.len());
            insert_random(rng, &mut sentences[si], subject.to_string());
        }
        Para { sentences }
    }

    fn document(&self, rng: &mut Rng, subject: &str) -> Doc {
        let depth = self.range(rng, self.spec.depth_range);
        let n_sections = self.range(rng, self.spec.branching_range) as usize;
        let mut topics: Vec<&str> = SECTION_TOPICS.to_vec();
        topics.shuffle(rng);
        let sections = topics
            .into_iter()
            .take(n_sections.min(SECTION_TOPICS.len()))
            .map(|topic| {
                if depth == 1 {
                    let n = self.range(rng, self.spec.branching_range);
                    Section {
                        topic: topic.to_string(),
                        lead: (0..n).map(|_| self.paragraph(rng, subject)).collect(),
                        subs: Vec::new(),
                    }
                } else {
                    let lead = if rng.gen_bool(self.spec.lead_paragraph_rate) {
                        vec![self.paragraph(rng, subject)]
                    } else {
                        Vec::new()
                    };
                    let n_subs = self.range(rng, self.spec.branching_range) as usize;
                    let mut sub_topics: Vec<&str> = SUBSECTION_TOPICS.to_vec();
                    sub_topics.shuffle(rng);
                    let subs = sub_topics
                        .into_iter()
                        .take(n_subs.min(SUBSECTION_TOPICS.len()))
                        .map(|t| {
                            let n = self.range(rng, self.spec.branching_range);
                            Sub {
                                topic: t.to_string(),
                                paras: (0..n).map(|_| self.paragraph(rng, subject)).collect(),
                            }
                        })
                        .collect();
                    Section {
                        topic: topic.to_string(),
                        lead,
                        subs,
                    }
                }
            })
            .collect();
        let noun = TITLE_NOUNS[rng.gen_range(0..TITLE_NOUNS.len())];
        Doc {
            title: format!("{} {noun}", capitalize(subject)),
            sections,
        }
    }

    /// Paragraph ordinal (1-based) from the geometric answer-position distribution.
    fn answer_ordinal(&self, rng: &mut Rng, n_paragraphs: u32) -> u32 {
        let p = self.spec.fao_bias;
        for _ in 0..100 {
            let t = if p >= 1.0 {
                1
            } else {
                let u: f64 = 1.0 - rng.gen::<f64>();
                1 + (u.ln() / (1.0 - p).ln()).floor() as u32
            };
            if t <= n_paragraphs {
                return t;
            }
        }
        n_paragraphs
    }

    fn question(&self, qi: usize, n_docs: usize, rng: &mut Rng) -> (QaRecord, Vec<DocumentRecord>) {
        let subject = format!("{}ia", self.vocab.rare(rng));
        let answer = capitalize(&format!("{}or", pseudo_word(qi + self.vocab.words.len())));
        let k1 = self.vocab.rare(rng).to_string();
        let k2 = self.vocab.rare(rng).to_string();
        let mut path_topics: Option<(String, Option<String>)> = None;
        let mut records = Vec::with_capacity(n_docs);
        let mut doc_ids = Vec::with_capacity(n_docs);
        for di in 0..n_docs {
            let mut doc = self.document(rng, &subject);
            let (paras, _) = doc.paragraph_index();
            let pos = self.answer_ordinal(rng, paras.len() as u32) as usize - 1;
            let (fao_index, path) = paras[pos];
            let (si, sub, _) = path;

            // align the answer path with the question's topics
            match &path_topics {
                None => {
                    let sub_topic = sub.map(|u| doc.sections[si].subs[u].topic.clone());
                    path_topics = Some((doc.sections[si].topic.clone(), sub_topic));
                }
                Some((sec_topic, sub_topic)) => {
                    retitle(&mut doc.sections, si, sec_topic, |s| &mut s.topic);
                    if let (Some(u), Some(t)) = (sub, sub_topic) {
                        retitle(&mut doc.sections[si].subs, u, t, |s| &mut s.topic);
                    }
                }
            }

            let para = doc.para_mut(path);
            let s = rng.gen_range(0..para.sentences.len());
            for tok in [answer.clone(), k1.clone(), k2.clone()] {
                insert_random(rng, &mut para.sentences[s], tok);
            }
            for (idx, p) in &paras {
                if *idx > fao_index && rng.gen_bool(self.spec.extra_answer_rate) {
                    let para = doc.para_mut(*p);
                    let s = rng.gen_range(0..para.sentences.len());
                    insert_random(rng, &mut para.sentences[s], answer.clone());
                }
            }
            if paras.len() > 1 && rng.gen_bool(self.spec.decoy_rate) {
                let mut d = rng.gen_range(0..paras.len() - 1);
                if d >= pos {
                    d += 1;
                }
                let para = doc.para_mut(paras[d].1);
                let s = rng.gen_range(0..para.sentences.len());
                for tok in [k1.clone(), k2.clone(), k1.clone()] {
                    insert_random(rng, &mut para.sentences[s], tok);
                }
            }
            let doc_id = format!("q{qi}-d{di}");
            doc_ids.push(doc_id.clone());
            records.push(doc.record(doc_id));
        }
        let (sec_topic, sub_topic) = path_topics.expect("at least one document");
        let lead = self.vocab.filler(rng).to_string();
        let mut q = vec![
            "which".to_string(),
            lead,
            "of".into(),
            capitalize(&subject),
            "in".into(),
            sec_topic,
        ];
        if let Some(t) = sub_topic {
            q.push(t);
        }
        q.extend(["is".to_string(), k1, k2, "?".into()]);
        (
            QaRecord {
                qid: format!("q{qi}"),
                question: q.join(" "),
                answers: vec![answer],
                doc_ids,
            },
            records,
        )
    }
}

fn insert_random(rng: &mut Rng, sentence: &mut Vec<String>, token: String) {
    // keep the trailing period last
    let end = sentence.len().saturating_sub(1);
    let at = rng.gen_range(0..=end);
    sentence.insert(at, token);
}

/// Gives element `i` the topic `topic`, swapping with any sibling that already has it.
fn retitle<T>(items: &mut [T], i: usize, topic: &str, field: impl Fn(&mut T) -> &mut String) {
    if let Some(j) = items.iter_mut().position(|x| field(x) == topic) {
        let old = field(&mut items[i]).clone();
        *field(&mut items[j]) = old;
    }
    *field(&mut items[i]) = topic.to_string();
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<GeneratedCorpus> {
    generate_corpus_with(spec, Parallelism::default())
}

/// Generates a corpus; questions are produced independently from per-question seeds.
pub fn generate_corpus_with(spec: &CorpusSpec, par: Parallelism) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let seeds = SeedSource::new(spec.seed);
    let mut layout_rng = seeds.fork("corpus-layout");
    let mut counts = Vec::new();
    let mut remaining = spec.num_docs;
    while remaining > 0 {
        let n = (layout_rng.gen_range(spec.docs_per_question[0]..=spec.docs_per_question[1])
            as usize)
            .min(remaining);
        counts.push(n);
        remaining -= n;
    }
    let vocab = Vocabulary::new(spec.vocab_size);
    let gen = Generator {
        spec,
        vocab: &vocab,
    };
    let parts = parallel::map_range(par, counts.len(), |qi| {
        let mut rng = seeds.fork_indexed("corpus-question", qi as u64);
        gen.question(qi, counts[qi], &mut rng)
    });
    let mut documents = Vec::with_capacity(spec.num_docs);
    let mut questions = Vec::with_capacity(parts.len());
    for (q, docs) in parts {
        questions.push(q);
        documents.extend(docs);
    }
    Ok(GeneratedCorpus {
        documents,
        questions,
    })
}
