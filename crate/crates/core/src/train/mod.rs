//! Training loop: epsilon-greedy rollouts from the root mixed with one-step
//! transitions from tree-sampled nodes, prioritized replay, and double-Q updates.

pub(crate) mod config;
mod episode;
mod sampler;
mod trainer;

pub use config::{Mode, Preset, SamplerKind, Schedule, TrainConfig};
pub use episode::{run_episode_sampled, run_episode_sequential, run_greedy, select_action};
pub use sampler::{
    sample_f_b, sample_f_u, SamplingDistribution, LEAF_PROBABILITY, MAX_BACKWARD_MOVES,
};
pub use trainer::{
    train, Checkpoint, MetricsRow, TrainOutcome, TrainStats, CHECKPOINT_FILE, CHECKPOINT_FORMAT,
    METRICS_FILE,
};
