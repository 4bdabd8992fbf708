use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::episodes::{EpisodeSampler, Experiment};
use crate::model::Variant;
use crate::scan::{all_primitives, canonical_corpus, execute, make_split, substitute, Grammar, Pair};

/// Where training batches come from: a meta-training episode stream, or
/// plain batches of a SCAN split for the baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BatchSource {
    Meta(EpisodeSampler),
    Seq2Seq(Seq2SeqBatches),
}

impl BatchSource {
    pub fn for_experiment(experiment: Experiment, variant: Variant, config: &TrainConfig, seed: u64) -> Result<Self, TrainError> {
        if variant.uses_memory() {
            return Ok(BatchSource::Meta(EpisodeSampler::new(experiment, seed)));
        }
        Seq2SeqBatches::new(experiment, config.seq2seq_batch_size, config.jump_per_batch, seed).map(BatchSource::Seq2Seq)
    }

    /// Next `(support, query)` pair of item lists. Baseline batches have no
    /// support items.
    pub fn next_batch(&mut self) -> (Vec<Pair>, Vec<Pair>) {
        match self {
            BatchSource::Meta(s) => {
                let ep = s.next_episode();
                (ep.support, ep.query)
            }
            BatchSource::Seq2Seq(b) => (Vec::new(), b.next_batch()),
        }
    }

    pub(crate) fn restore_derived(&mut self) {
        if let BatchSource::Seq2Seq(b) = self {
            b.pool = baseline_templates(b.experiment);
        }
    }
}

/// Training templates of an experiment's standard split. On the add-jump
/// split the bare `jump` pair is removed, since batches inject it
/// separately.
pub(crate) fn baseline_templates(experiment: Experiment) -> Vec<Pair> {
    let split = experiment.split().expect("SCAN experiment");
    let (train, _) = make_split(canonical_corpus(), &split);
    if is_add_jump(experiment) {
        train.into_iter().filter(|p| p.instruction.to_string() != "jump").collect()
    } else {
        train
    }
}

fn is_add_jump(e: Experiment) -> bool {
    matches!(e, Experiment::AddJumpPerm | Experiment::AddJumpAug)
}

/// Shuffled epochs over a split's training set. For the augmented add-jump
/// baseline each template's primitives are rewritten to random augmented
/// primitives with their fixed meanings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Seq2SeqBatches {
    experiment: Experiment,
    batch_size: usize,
    jump_per_batch: usize,
    order: Vec<u32>,
    cursor: usize,
    rng: ChaCha8Rng,
    #[serde(skip)]
    pool: Vec<Pair>,
}

impl Seq2SeqBatches {
    pub fn new(experiment: Experiment, batch_size: usize, jump_per_batch: usize, seed: u64) -> Result<Self, TrainError> {
        if experiment == Experiment::Me {
            return Err(TrainError::Config("the ME experiment has no standard seq2seq baseline".into()));
        }
        let jump_per_batch = if is_add_jump(experiment) { jump_per_batch } else { 0 };
        if jump_per_batch >= batch_size {
            return Err(TrainError::Config("batch must have room beyond the injected jump pairs".into()));
        }
        let pool = baseline_templates(experiment);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut order: Vec<u32> = (0..pool.len() as u32).collect();
        order.shuffle(&mut rng);
        Ok(Self { experiment, batch_size, jump_per_batch, order, cursor: 0, rng, pool })
    }

    pub fn next_batch(&mut self) -> Vec<Pair> {
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..self.jump_per_batch {
            batch.push(Pair::from_strs("jump", "JUMP"));
        }
        while batch.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let template = &self.pool[self.order[self.cursor] as usize];
            self.cursor += 1;
            let item = if self.experiment == Experiment::AddJumpAug {
                augment(template, &mut self.rng)
            } else {
                template.clone()
            };
            batch.push(item);
        }
        batch
    }
}

/// Rewrites `run`, `walk` and `look` to distinct primitives drawn from the
/// 23 non-`jump` primitives; outputs follow the fixed augmented meanings.
fn augment(template: &Pair, rng: &mut ChaCha8Rng) -> Pair {
    let candidates: Vec<String> = all_primitives().into_iter().filter(|p| p != "jump").collect();
    let picks = index::sample(rng, candidates.len(), 3).into_vec();
    let words: BTreeMap<String, String> =
        ["run", "walk", "look"].iter().map(|s| s.to_string()).zip(picks.iter().map(|&i| candidates[i].clone())).collect();
    let instruction = substitute(&template.instruction, &words);
    let actions = execute(&instruction, &Grammar::augmented()).expect("augmented templates parse");
    Pair::new(instruction, actions)
}
