use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EVAL_BUDGET, TRAIN_BUDGET};
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::qnet::{QNetConfig, RmsPropConfig};
use crate::reader::ReaderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Paper,
    Desk,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "paper" => Some(Preset::Paper),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sequential rollouts only.
    Dqn,
    /// Tree-sampled episodes with probability epsilon_s.
    #[default]
    Docqn,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "dqn" => Some(Mode::Dqn),
            "docqn" => Some(Mode::Docqn),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dqn => "dqn",
            Mode::Docqn => "docqn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Sequential,
    Uniform,
    Backward,
    #[default]
    Mixture,
}

/// Linear interpolation from `start` to `end` over `steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, steps: u64) -> Self {
        Self { start, end, steps }
    }

    pub fn value(&self, step: u64) -> f64 {
        if step >= self.steps {
            return self.end;
        }
        let frac = step as f64 / self.steps as f64;
        self.start + (self.end - self.start) * frac
    }

    /// Average value over steps `0..n`.
    pub fn mean(&self, n: u64) -> f64 {
        if n == 0 {
            return self.start;
        }
        let ramp = n.min(self.steps);
        let ramp_sum = if self.steps == 0 {
            0.0
        } else {
            // sum of start + (end-start) * t/steps for t in 0..ramp
            let r = ramp as f64;
            r * self.start + (self.end - self.start) * (r * (r - 1.0) / 2.0) / self.steps as f64
        };
        (ramp_sum + (n - ramp) as f64 * self.end) / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub mode: Mode,
    /// Answer and Stop merged into a single Stop action.
    pub coupled: bool,
    pub seed: u64,
    /// Environment transitions to collect.
    pub steps: u64,
    /// Optional cap on episodes, whichever limit comes first.
    pub episodes: Option<u64>,
    pub budget_train: u32,
    pub budget_eval: u32,
    pub gamma: f64,
    pub batch_size: usize,
    pub double_q: bool,
    /// Target network copy period, in environment steps.
    pub target_period: u64,
    /// Buffer fill required before the first update.
    pub memory_init: usize,
    pub memory_size: usize,
    pub alpha: f64,
    pub beta: Schedule,
    pub epsilon: Schedule,
    pub epsilon_s: Schedule,
    pub sampler: SamplerKind,
    pub mixture_lambda: f64,
    /// Node draws per tree-sampled episode.
    pub samples_per_episode: usize,
    pub updates_per_episode: u32,
    /// Metrics row every this many episodes.
    pub log_interval: u64,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub parallelism: Parallelism,
    pub qnet: QNetConfig,
    pub optimizer: RmsPropConfig,
    pub reader: ReaderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        let anneal = 1_200_000;
        Self {
            preset: Preset::Paper,
            mode: Mode::Docqn,
            coupled: false,
            seed: 1,
            steps: 5_000_000,
            episodes: None,
            budget_train: TRAIN_BUDGET,
            budget_eval: EVAL_BUDGET,
            gamma: 0.996,
            batch_size: 64,
            double_q: true,
            target_period: 10_000,
            memory_init: 50_000,
            memory_size: 300_000,
            alpha: 0.6,
            beta: Schedule::new(0.4, 1.0, anneal),
            epsilon: Schedule::new(1.0, 0.1, anneal),
            epsilon_s: Schedule::new(1.0, 0.5, anneal),
            sampler: SamplerKind::Mixture,
            mixture_lambda: 0.5,
            samples_per_episode: 5,
            updates_per_episode: 1,
            log_interval: 1000,
            checkpoint_interval: 100_000,
            parallelism: Parallelism::default(),
            qnet: QNetConfig::paper(),
            optimizer: RmsPropConfig::default(),
            reader: ReaderConfig::default(),
        }
    }

    /// The `paper` preset with every horizon divided by 100 and a small network.
    pub fn desk() -> Self {
        let paper = Self::paper();
        let anneal = 12_000;
        Self {
            preset: Preset::Desk,
            steps: 50_000,
            target_period: paper.target_period / 100,
            memory_init: paper.memory_init / 100,
            memory_size: paper.memory_size / 100,
            beta: Schedule::new(0.4, 1.0, anneal),
            epsilon: Schedule::new(1.0, 0.1, anneal),
            epsilon_s: Schedule::new(1.0, 0.5, anneal),
            log_interval: 100,
            checkpoint_interval: 0,
            qnet: QNetConfig::desk(),
            ..paper
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return cfg(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.steps == 0 && self.episodes.is_none() {
            return cfg("steps must be positive".into());
        }
        if self.budget_train == 0 || self.budget_eval == 0 {
            return cfg("budget_train and budget_eval must be positive".into());
        }
        if self.batch_size == 0 {
            return cfg("batch_size must be positive".into());
        }
        if self.memory_size < self.batch_size {
            return cfg(format!(
                "memory_size ({}) must be at least batch_size ({})",
                self.memory_size, self.batch_size
            ));
        }
        if self.memory_init > self.memory_size {
            return cfg(format!(
                "memory_init ({}) exceeds memory_size ({})",
                self.memory_init, self.memory_size
            ));
        }
        if self.target_period == 0 {
            return cfg("target_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return cfg(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        for (name, s) in [
            ("beta", self.beta),
            ("epsilon", self.epsilon),
            ("epsilon_s", self.epsilon_s),
        ] {
            if !((0.0..=1.0).contains(&s.start) && (0.0..=1.0).contains(&s.end)) {
                return cfg(format!("{name}.start and {name}.end must be in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.mixture_lambda) {
            return cfg(format!(
                "mixture_lambda must be in [0, 1], got {}",
                self.mixture_lambda
            ));
        }
        if self.mode == Mode::Docqn && self.sampler == SamplerKind::Sequential {
            return cfg("sampler = \"sequential\" is not a node distribution; use mode = \"dqn\" for sequential-only training".into());
        }
        if self.log_interval == 0 {
            return cfg("log_interval must be positive".into());
        }
        self.qnet.validate()?;
        self.optimizer.validate()?;
        self.reader.validate()?;
        Ok(())
    }

    /// Effective tree-sampling probability at `step`.
    pub fn epsilon_s_at(&self, step: u64) -> f64 {
        match self.mode {
            Mode::Dqn => 0.0,
            Mode::Docqn => self.epsilon_s.value(step),
        }
    }

    /// Parses TOML over the preset named by its `preset` key (paper when absent).
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let preset = match user.get("preset") {
            None => Preset::Paper,
            Some(toml::Value::String(s)) => Preset::parse(s)
                .ok_or_else(|| Error::Config(format!("preset: unknown preset {s:?}")))?,
            Some(_) => return Err(Error::Config("preset: expected a string".into())),
        };
        let mut base = toml::Table::try_from(TrainConfig::preset(preset))
            .map_err(|e| Error::Config(format!("cannot encode preset: {e}")))?;
        merge(&mut base, user);
        let merged = base.to_string();
        let cfg: TrainConfig =
            toml::from_str(&merged).map_err(|e| Error::Config(describe(&merged, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
    }
}

/// Prefixes a deserialization message with the dotted key it refers to.
pub(crate) fn describe(text: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else {
        return e.message().to_string();
    };
    let mut table = String::new();
    let mut key = None;
    for (start, line) in line_starts(text) {
        if start > span.start {
            break;
        }
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').to_string();
            key = None;
        } else if let Some((k, _)) = t.split_once('=') {
            key = Some(k.trim().trim_matches('"').to_string());
        }
    }
    match key {
        Some(k) if table.is_empty() => format!("{k}: {}", e.message()),
        Some(k) => format!("{table}.{k}: {}", e.message()),
        None => e.message().to_string(),
    }
}

fn line_starts(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |line| {
        let start = offset;
        offset += line.len();
        (start, line)
    })
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
