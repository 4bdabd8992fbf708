//! Meta-training, the standard seq2seq baseline, evaluation and the
//! multi-seed experiment runner.

mod batches;
mod eval;
mod runner;

pub use batches::{BatchSource, Seq2SeqBatches};
pub use eval::{evaluate, evaluate_pairs, EvalReport, EvalResult, QueryError};
pub use runner::{
    baseline_pool, render_table, reproduce_table, run_experiment, table_cells, RunSpec, Scale, SeedResult, TableCell,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::Experiment;
use crate::model::{MetaSeq2Seq, ModelConfig, ModelError, Variant, Vocab};
use crate::numerics::{adam_step, clip_grad_norm, AdamState, Graph};

/// RNG stream used for dropout masks.
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer steps: episodes for meta-training, batches for the baseline.
    pub episodes: usize,
    pub lr: f64,
    /// Learning rate from the halfway step on.
    pub lr_late: f64,
    pub clip_norm: f64,
    pub support_loss: bool,
    pub seq2seq_batch_size: usize,
    /// Bare `jump` pairs placed in every add-jump baseline batch.
    pub jump_per_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            lr: 0.001,
            lr_late: 0.0001,
            clip_norm: 50.0,
            support_loss: true,
            seq2seq_batch_size: 40,
            jump_per_batch: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.episodes == 0 || self.lr <= 0.0 || self.lr_late <= 0.0 || self.seq2seq_batch_size == 0 {
            return Err(TrainError::Config("episodes, learning rates and batch size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for the 0-based step `episode`.
    pub fn learning_rate(&self, episode: usize) -> f64 {
        if episode < self.episodes / 2 {
            self.lr
        } else {
            self.lr_late
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("seed {seed} diverged at episode {episode} (non-finite loss)")]
    Divergence { seed: u64, episode: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl TrainError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.as_ref().display().to_string(), source }
    }
}

/// Model vocabularies covering every episode an experiment can produce.
pub fn experiment_vocabs(experiment: Experiment) -> (Vocab, Vocab) {
    (Vocab::new(experiment.input_symbols()), Vocab::new(experiment.output_symbols()))
}

/// Complete training state; serializes to a resumable checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub experiment: Experiment,
    pub seed: u64,
    pub config: TrainConfig,
    model: MetaSeq2Seq<f32>,
    adam: AdamState<f32>,
    source: BatchSource,
    rng: ChaCha8Rng,
    episode: usize,
    loss_curve: Vec<(usize, f64)>,
}

impl Trainer {
    /// Fresh model and optimizer. The standard seq2seq variant trains on the
    /// experiment's SCAN split; every other variant is meta-trained.
    pub fn new(experiment: Experiment, model_config: ModelConfig, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let (iv, ov) = experiment_vocabs(experiment);
        let model = MetaSeq2Seq::new(model_config, iv, ov, seed)?;
        let source = BatchSource::for_experiment(experiment, model.config().variant, &config, seed)?;
        let adam = AdamState::new(model.params(), config.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DROPOUT_STREAM);
        Ok(Self { experiment, seed, config, model, adam, source, rng, episode: 0, loss_curve: Vec::new() })
    }

    pub fn model(&self) -> &MetaSeq2Seq<f32> {
        &self.model
    }

    pub fn into_model(self) -> MetaSeq2Seq<f32> {
        self.model
    }

    /// Optimizer steps taken so far (equals episodes consumed).
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.step
    }

    pub fn current_lr(&self) -> f64 {
        self.adam.lr
    }

    pub fn loss_curve(&self) -> &[(usize, f64)] {
        &self.loss_curve
    }

    pub fn is_done(&self) -> bool {
        self.episode >= self.config.episodes
    }

    /// One episode: forward, backward, clip, Adam. Returns the query loss.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let (support, query) = self.source.next_batch();
        self.adam.lr = self.config.learning_rate(self.episode);
        let support_loss = self.config.support_loss && self.model.config().variant.uses_memory();
        let (loss, query_loss, grads) = {
            let mut g = Graph::new(self.model.params(), true);
            let out = self.model.episode_loss(&mut g, &support, &query, support_loss, &mut self.rng)?;
            let loss = f64::from(g.scalar(out.loss));
            if !loss.is_finite() {
                return Err(TrainError::Divergence { seed: self.seed, episode: self.episode });
            }
            (loss, out.query_loss, g.backward(out.loss))
        };
        let params = self.model.params_mut();
        params.zero_grad();
        grads.accumulate_into(params);
        if !params.grad_norm().is_finite() {
            return Err(TrainError::Divergence { seed: self.seed, episode: self.episode });
        }
        clip_grad_norm(params, self.config.clip_norm);
        adam_step(params, &mut self.adam);
        self.loss_curve.push((self.episode, loss));
        self.episode += 1;
        Ok(query_loss)
    }

    /// Runs to completion, calling `progress(episode, query_loss)` after
    /// every step.
    pub fn run(&mut self, mut progress: impl FnMut(usize, f64)) -> Result<(), TrainError> {
        while !self.is_done() {
            let ql = self.step()?;
            progress(self.episode, ql);
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), TrainError> {
        let file = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrainError> {
        let file = std::fs::File::open(path).map_err(|e| TrainError::io(path, e))?;
        let mut t: Trainer = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        t.model.restore_derived();
        t.source.restore_derived();
        Ok(t)
    }
}

/// Convenience wrapper: train a fresh model to completion.
pub fn meta_train(
    experiment: Experiment,
    model_config: ModelConfig,
    config: TrainConfig,
    seed: u64,
) -> Result<Trainer, TrainError> {
    if model_config.variant == Variant::StandardSeq2Seq {
        return Err(TrainError::Config("the standard seq2seq variant is not meta-trained".into()));
    }
    let mut t = Trainer::new(experiment, model_config, config, seed)?;
    t.run(|_, _| {})?;
    Ok(t)
}

/// Trains the standard seq2seq baseline on the experiment's split.
pub fn train_seq2seq_baseline(
    experiment: Experiment,
    model_config: ModelConfig,
    config: TrainConfig,
    seed: u64,
) -> Result<Trainer, TrainError> {
    if model_config.variant != Variant::StandardSeq2Seq {
        return Err(TrainError::Config("the baseline must use the standard seq2seq variant".into()));
    }
    let mut t = Trainer::new(experiment, model_config, config, seed)?;
    t.run(|_, _| {})?;
    Ok(t)
}
