use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::episode::{run_episode_sampled, run_episode_sequential};
use super::sampler::SamplingDistribution;
use crate::doctree::{median_sorted, QASample};
use crate::env::{Action, Env, EnvOptions};
use crate::error::{Error, Result};
use crate::qnet::{td_loss, Lexicon, QNet, QuestionCache, RmsProp, TdOptions};
use crate::reader::Extractor;
use crate::replay::{PrioritizedBuffer, ReplayStats, Transition};
use crate::seed::{Rng, SeedSource};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

/// One line of the metrics stream. Window statistics cover the episodes since the previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    /// Mean TD loss over the window's updates.
    pub loss: Option<f64>,
    /// Mean return of the window's sequential episodes.
    pub mean_return: Option<f64>,
    pub epsilon: f64,
    pub epsilon_s: f64,
    pub beta: f64,
    /// Median stopping node index of the window's sequential episodes.
    pub stop_index_median: Option<f64>,
    /// Tree-sampled episodes over all episodes so far.
    pub sampled_episode_frac: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "step,episode,loss,mean_return,epsilon,epsilon_s,beta,stop_index_median,sampled_episode_frac";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            opt(self.loss),
            opt(self.mean_return),
            self.epsilon,
            self.epsilon_s,
            self.beta,
            opt(self.stop_index_median),
            self.sampled_episode_frac
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: u64,
    pub episodes: u64,
    pub sampled_episodes: u64,
    pub updates: u64,
    /// Buffer size when the first update ran.
    pub first_update_buffer: Option<usize>,
    /// Steps at which the target network was refreshed.
    pub target_syncs: Vec<u64>,
    pub replay: ReplayStats,
}

/// Everything needed to evaluate or inspect a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub step: u64,
    pub episode: u64,
    pub online: QNet,
    pub target: QNet,
    pub optimizer: RmsProp,
    pub episode_rng: Rng,
    pub replay_rng: Rng,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::json(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::json(path, e))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!(
                "{}: unsupported checkpoint format {}",
                path.display(),
                ck.format
            )));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNet,
    pub metrics: Vec<MetricsRow>,
    pub stats: TrainStats,
}

#[derive(Default)]
struct Window {
    loss_sum: f64,
    loss_n: u64,
    returns: Vec<f64>,
    stops: Vec<u32>,
}

struct MetricsSink {
    file: Option<(PathBuf, BufWriter<File>)>,
    rows: Vec<MetricsRow>,
}

impl MetricsSink {
    fn new(out: Option<&Path>) -> Result<Self> {
        let file = match out {
            Some(dir) => {
                let path = dir.join(METRICS_FILE);
                let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{}", MetricsRow::HEADER).map_err(|e| Error::io(&path, e))?;
                Some((path, w))
            }
            None => None,
        };
        Ok(Self {
            file,
            rows: Vec::new(),
        })
    }

    fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some((path, w)) = &mut self.file {
            writeln!(w, "{}", row.to_csv())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.rows.push(row);
        Ok(())
    }
}

struct Run<'a> {
    config: &'a TrainConfig,
    seeds: SeedSource,
    online: QNet,
    target: QNet,
    optimizer: RmsProp,
    buffer: PrioritizedBuffer<Transition>,
    episode_rng: Rng,
    replay_rng: Rng,
    step: u64,
    episode: u64,
    stats: TrainStats,
    out: Option<PathBuf>,
}

impl Run<'_> {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            step: self.step,
            episode: self.episode,
            online: self.online.clone(),
            target: self.target.clone(),
            optimizer: self.optimizer.clone(),
            episode_rng: self.episode_rng.clone(),
            replay_rng: self.replay_rng.clone(),
        }
    }

    fn save(&self) -> Result<()> {
        match &self.out {
            Some(dir) => self.checkpoint().save(&dir.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    }

    fn diverged(&self, reason: String) -> Error {
        log::error!("training diverged at step {}: {reason}", self.step);
        if let Err(e) = self.save() {
            log::error!("could not write the last finite checkpoint: {e}");
        }
        Error::Diverged {
            step: self.step,
            reason,
        }
    }

    /// One prioritized minibatch step. Returns the batch loss.
    fn update(&mut self, mask: [bool; Action::COUNT]) -> Result<f64> {
        let beta = self.config.beta.value(self.step);
        let opts = TdOptions {
            gamma: self.config.gamma,
            double_q: self.config.double_q,
            action_mask: mask,
            dropout_seed: self.seeds.derive_indexed("dropout", self.stats.updates),
            parallelism: self.config.parallelism,
        };
        let batch = self
            .buffer
            .sample(self.config.batch_size, beta, &mut self.replay_rng)?;
        let out = match td_loss(
            &self.online,
            &self.target,
            &batch.items,
            &batch.weights,
            &opts,
        ) {
            Ok(o) => o,
            Err(Error::NonFinite(m)) => return Err(self.diverged(m)),
            Err(e) => return Err(e),
        };
        let indices = batch.indices;
        if !out.loss.is_finite() {
            return Err(self.diverged(format!("loss is {}", out.loss)));
        }
        match self.optimizer.apply(&mut self.online.params, &out.grads) {
            Ok(_) => {}
            Err(Error::NonFinite(m)) => return Err(self.diverged(m)),
            Err(e) => return Err(e),
        }
        self.buffer.update_priorities(&indices, &out.td_errors);
        if self.stats.updates == 0 {
            self.stats.first_update_buffer = Some(self.buffer.len());
        }
        self.stats.updates += 1;
        Ok(out.loss)
    }
}

/// Trains on every (question, document) pair of `samples`. With `out`, the
/// metrics CSV and checkpoints are written there as training proceeds.
pub fn train(
    config: &TrainConfig,
    samples: &[QASample],
    extractor: &dyn Extractor,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let pairs: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.documents.len()).map(move |d| (i, d)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    let seeds = SeedSource::new(config.seed);
    let lexicon = Lexicon::from_samples(samples, config.qnet.max_words, config.qnet.min_word_count);
    let online = QNet::new(config.qnet.clone(), lexicon, &mut seeds.fork("qnet"))?;
    log::info!(
        "training {} on {} pairs, {} parameters",
        config.mode.name(),
        pairs.len(),
        online.n_params()
    );
    let mut run = Run {
        config,
        seeds,
        target: online.sync_target(),
        optimizer: RmsProp::new(config.optimizer.clone(), online.n_params()),
        online,
        buffer: PrioritizedBuffer::new(config.memory_size, config.alpha),
        episode_rng: seeds.fork("episodes"),
        replay_rng: seeds.fork("replay"),
        step: 0,
        episode: 0,
        stats: TrainStats::default(),
        out: out.map(Path::to_path_buf),
    };
    let env_options = EnvOptions {
        budget: config.budget_train,
        coupled: config.coupled,
    };
    let mask = Action::ALL.map(|a| !(config.coupled && a == Action::Answer));
    let dist = SamplingDistribution::from_kind(config.sampler, config.mixture_lambda);
    let warmup = config.memory_init.max(config.batch_size);
    let mut sink = MetricsSink::new(out)?;
    let mut window = Window::default();
    let mut cache = QuestionCache::new();
    let mut next_sync = config.target_period;
    let mut next_checkpoint = config.checkpoint_interval;

    while run.step < config.steps && config.episodes.is_none_or(|m| run.episode < m) {
        let (si, di) = pairs[run.episode_rng.gen_range(0..pairs.len())];
        let sample = &samples[si];
        let env = Env::new(sample, &sample.documents[di], extractor, env_options);
        let epsilon = config.epsilon.value(run.step);
        let sampled = run.episode_rng.gen::<f64>() < config.epsilon_s_at(run.step);
        let transitions = if sampled {
            let k = config.samples_per_episode;
            run_episode_sampled(
                &env,
                &run.online,
                &mut cache,
                dist,
                k,
                epsilon,
                &mut run.episode_rng,
            )?
        } else {
            run_episode_sequential(&env, &run.online, &mut cache, epsilon, &mut run.episode_rng)?
        };
        if sampled {
            run.stats.sampled_episodes += 1;
        } else if let Some(last) = transitions.last() {
            window
                .returns
                .push(transitions.iter().map(|t| t.reward).sum());
            window.stops.push(env.doc.index(last.next_state.node));
        }
        run.step += transitions.len() as u64;
        run.episode += 1;
        for t in transitions {
            run.buffer.push(t);
        }

        if run.buffer.len() >= warmup {
            for _ in 0..config.updates_per_episode {
                let loss = run.update(mask)?;
                window.loss_sum += loss;
                window.loss_n += 1;
            }
            cache.clear();
        }
        while run.step >= next_sync {
            run.target = run.online.sync_target();
            run.stats.target_syncs.push(run.step);
            next_sync += config.target_period;
        }
        if config.checkpoint_interval > 0 && run.step >= next_checkpoint {
            run.save()?;
            while next_checkpoint <= run.step {
                next_checkpoint += config.checkpoint_interval;
            }
        }
        if run.episode.is_multiple_of(config.log_interval) {
            sink.push(row(&run, std::mem::take(&mut window)))?;
        }
    }
    if sink.rows.last().is_none_or(|r| r.episode != run.episode) {
        sink.push(row(&run, window))?;
    }
    run.save()?;
    run.stats.steps = run.step;
    run.stats.episodes = run.episode;
    run.stats.replay = run.buffer.stats();
    Ok(TrainOutcome {
        network: run.online,
        metrics: sink.rows,
        stats: run.stats,
    })
}

fn row(run: &Run<'_>, mut w: Window) -> MetricsRow {
    let c = run.config;
    w.stops.sort_unstable();
    MetricsRow {
        step: run.step,
        episode: run.episode,
        loss: (w.loss_n > 0).then(|| w.loss_sum / w.loss_n as f64),
        mean_return: (!w.returns.is_empty())
            .then(|| w.returns.iter().sum::<f64>() / w.returns.len() as f64),
        epsilon: c.epsilon.value(run.step),
        epsilon_s: c.epsilon_s_at(run.step),
        beta: c.beta.value(run.step),
        stop_index_median: median_sorted(&w.stops),
        sampled_episode_frac: run.stats.sampled_episodes as f64 / run.episode.max(1) as f64,
    }
}
