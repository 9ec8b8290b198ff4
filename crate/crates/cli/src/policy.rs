//! Runs a navigation or selection policy over every (question, document) pair.

use rand::seq::SliceRandom;
use treenav::baselines::{self, TfIdfIndex, READ_TOP_TOKENS};
use treenav::doctree::{DocTree, QASample};
use treenav::env::{Action, Env, EnvOptions};
use treenav::eval::{navigate, NavOutcome, TraceRecord};
use treenav::parallel::{self, Parallelism};
use treenav::qnet::{QNet, QuestionCache};
use treenav::reader::Extractor;
use treenav::seed::SeedSource;
use treenav::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    #[value(name = "randomwalk")]
    RandomWalk,
    #[value(name = "randompara")]
    RandomPara,
    #[value(name = "tfidf")]
    TfIdf,
    #[value(name = "doctfidf")]
    DocTfIdf,
    #[value(name = "readtop")]
    ReadTop,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::RandomWalk => "randomwalk",
            Kind::RandomPara => "randompara",
            Kind::TfIdf => "tfidf",
            Kind::DocTfIdf => "doctfidf",
            Kind::ReadTop => "readtop",
        }
    }
}

pub enum Policy<'a> {
    Greedy(&'a QNet),
    Baseline(Kind),
}

pub struct Runner<'a> {
    pub samples: &'a [QASample],
    pub extractor: &'a dyn Extractor,
    pub options: EnvOptions,
    pub seeds: SeedSource,
    pub parallelism: Parallelism,
    /// Corpus index for global tf-idf; built over `corpus_docs`.
    pub corpus: Option<TfIdfIndex>,
}

impl<'a> Runner<'a> {
    pub fn pairs(&self) -> Vec<(&'a QASample, &'a DocTree)> {
        self.samples
            .iter()
            .flat_map(|s| s.documents.iter().map(move |d| (s, d)))
            .collect()
    }

    /// One trace record per pair, in pair order.
    pub fn run(&self, policy: &Policy<'_>, name: &str) -> Result<Vec<TraceRecord>> {
        let pairs = self.pairs();
        let label = format!("policy/{name}");
        let out = parallel::map_range(self.parallelism, pairs.len(), |i| {
            let (sample, doc) = pairs[i];
            let env = Env::new(sample, doc, self.extractor, self.options);
            let mut rng = self.seeds.fork_indexed(&label, i as u64);
            match policy {
                Policy::Greedy(net) => {
                    let mask = env.action_mask();
                    let mut cache = QuestionCache::new();
                    navigate(&env, name, |st| {
                        Ok(net.q_values_cached(st, &mut cache)?.greedy(&mask))
                    })
                }
                Policy::Baseline(Kind::RandomWalk) => {
                    let legal: Vec<Action> = Action::ALL
                        .into_iter()
                        .filter(|a| env.is_legal(*a))
                        .collect();
                    navigate(&env, name, |_| {
                        Ok(*legal.choose(&mut rng).expect("Stop is always legal"))
                    })
                }
                Policy::Baseline(kind) => Ok(TraceRecord {
                    policy: name.to_string(),
                    outcome: self.select(&env, *kind, &mut rng)?,
                    steps: Vec::new(),
                }),
            }
        });
        out.into_iter().collect()
    }

    fn select(
        &self,
        env: &Env<'_>,
        kind: Kind,
        rng: &mut treenav::seed::Rng,
    ) -> Result<NavOutcome> {
        let q = &env.sample.question_tokens;
        Ok(match kind {
            Kind::RandomPara => {
                NavOutcome::from_selection(env, baselines::random_para(env.doc, rng))
            }
            Kind::DocTfIdf => {
                NavOutcome::from_selection(env, baselines::doc_tfidf_select(q, env.doc)?.node)
            }
            Kind::TfIdf => {
                let corpus = self
                    .corpus
                    .as_ref()
                    .expect("corpus index built for global tf-idf");
                NavOutcome::from_selection(
                    env,
                    baselines::global_tfidf_select(q, env.doc, corpus)?.node,
                )
            }
            Kind::ReadTop => baselines::read_top_outcome(env, READ_TOP_TOKENS, self.extractor)?,
            Kind::RandomWalk => unreachable!("random walk navigates"),
        })
    }
}
