//! Episode generators for the five experiments.
//!
//! Every generator is a pure function of its RNG, so an episode stream is
//! reproducible from a seed.

mod dump;

pub use dump::{read_episode, write_episode, GeneratorConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::scan::{
    self, all_actions, all_directions, all_primitives, all_turns, canonical_corpus, make_split, remap_with, substitute,
    Assignment, Grammar, Instruction, Pair, SplitSpec, CANONICAL_ACTIONS, CANONICAL_DIRECTIONS, CANONICAL_PRIMITIVES,
};

pub const ME_WORDS: [&str; 4] = ["dax", "wif", "lug", "zup"];
pub const ME_COLORS: [&str; 4] = ["red", "yellow", "green", "blue"];
pub const ME_QUERIES: usize = 20;
pub const ME_MIN_QUERY_LEN: usize = 2;
pub const ME_MAX_QUERY_LEN: usize = 6;
pub const ME_TRAIN_PERMS: usize = 19;
/// Test episodes generated per held-out ME permutation.
pub const ME_TEST_EPISODES_PER_PERM: usize = 10;

pub const SCAN_SUPPORT: usize = 20;
pub const SCAN_QUERY: usize = 20;
pub const LENGTH_SUPPORT: usize = 100;
pub const LENGTH_QUERY: usize = 20;
/// Length-episode support items have fewer output actions than this.
pub const LENGTH_SUPPORT_BELOW: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    Me,
    AddJumpPerm,
    AddJumpAug,
    AroundRight,
    Length,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Me, Experiment::AddJumpPerm, Experiment::AddJumpAug, Experiment::AroundRight, Experiment::Length];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Me => "me",
            Experiment::AddJumpPerm => "add-jump-perm",
            Experiment::AddJumpAug => "add-jump-aug",
            Experiment::AroundRight => "around-right",
            Experiment::Length => "length",
        }
    }

    /// The SCAN split evaluated at test time, if any.
    pub fn split(self) -> Option<SplitSpec> {
        match self {
            Experiment::Me => None,
            Experiment::AddJumpPerm | Experiment::AddJumpAug => Some(SplitSpec::AddJump),
            Experiment::AroundRight => Some(SplitSpec::AroundRight),
            Experiment::Length => Some(SplitSpec::Length { train_max: SplitSpec::LENGTH_TRAIN_MAX }),
        }
    }

    /// Grammar covering every word/meaning any episode of this experiment uses.
    pub fn grammar(self) -> Option<Grammar> {
        match self {
            Experiment::Me => None,
            Experiment::AddJumpPerm => Some(Grammar::canonical()),
            Experiment::AddJumpAug | Experiment::Length => Some(Grammar::augmented()),
            Experiment::AroundRight => Some(Grammar::with_extra_directions()),
        }
    }

    /// Input symbols of the experiment-wide vocabulary.
    pub fn input_symbols(self) -> Vec<String> {
        match self.grammar() {
            Some(g) => g.input_vocab(),
            None => ME_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn output_symbols(self) -> Vec<String> {
        match self.grammar() {
            Some(g) => g.output_vocab(),
            None => ME_COLORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub experiment: Option<Experiment>,
    pub assignment: Option<Assignment>,
}

/// A support set plus queries. Query targets are for scoring only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub support: Vec<Pair>,
    pub query: Vec<Pair>,
    pub input_vocab: Vec<String>,
    pub output_vocab: Vec<String>,
    pub meta: EpisodeMeta,
}

impl Episode {
    /// Builds an episode whose vocabularies are exactly the symbols used.
    pub fn from_pairs(support: Vec<Pair>, query: Vec<Pair>, meta: EpisodeMeta) -> Self {
        let mut input_vocab = Vec::new();
        let mut output_vocab = Vec::new();
        for p in support.iter().chain(&query) {
            for t in p.instruction.tokens() {
                if !input_vocab.contains(t) {
                    input_vocab.push(t.clone());
                }
            }
            for a in p.actions.actions() {
                if !output_vocab.contains(a) {
                    output_vocab.push(a.clone());
                }
            }
        }
        Self { support, query, input_vocab, output_vocab, meta }
    }

    fn with_vocab(support: Vec<Pair>, query: Vec<Pair>, grammar: &Grammar, meta: EpisodeMeta) -> Self {
        Self { support, query, input_vocab: grammar.input_vocab(), output_vocab: grammar.output_vocab(), meta }
    }
}

/// Disjoint train/test sets of permutations of the four ME meanings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPool {
    pub train_perms: Vec<[usize; 4]>,
    pub test_perms: Vec<[usize; 4]>,
}

/// All 24 permutations of `0..4` in lexicographic order.
pub fn all_permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let mut seen = [false; 4];
                    p.iter().for_each(|&i| seen[i] = true);
                    if seen.iter().all(|&s| s) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Uniform 19/5 partition of the 24 permutations.
pub fn split_me_permutations(seed: u64) -> PermutationPool {
    let mut perms = all_permutations();
    perms.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_perms = perms.split_off(ME_TRAIN_PERMS);
    PermutationPool { train_perms: perms, test_perms }
}

/// One ME episode: three of the four word→color mappings as support, 20
/// concatenation queries (at least one using the withheld word).
pub fn gen_me_episode<R: Rng>(perm: &[usize; 4], rng: &mut R) -> Episode {
    let meaning = |w: usize| ME_COLORS[perm[w]].to_string();
    let withheld = rng.gen_range(0..4);
    let mut shown: Vec<usize> = (0..4).filter(|&w| w != withheld).collect();
    shown.shuffle(rng);
    let support =
        shown.iter().map(|&w| Pair::from_strs(ME_WORDS[w], &meaning(w))).collect();
    let query = loop {
        let q: Vec<Vec<usize>> = (0..ME_QUERIES)
            .map(|_| {
                let len = rng.gen_range(ME_MIN_QUERY_LEN..=ME_MAX_QUERY_LEN);
                (0..len).map(|_| rng.gen_range(0..4)).collect()
            })
            .collect();
        if q.iter().flatten().any(|&w| w == withheld) {
            break q;
        }
    };
    let query = query
        .into_iter()
        .map(|ws| {
            Pair::new(
                Instruction(ws.iter().map(|&w| ME_WORDS[w].to_string()).collect()),
                scan::ActionSequence(ws.iter().map(|&w| meaning(w)).collect()),
            )
        })
        .collect();
    let assignment = Assignment {
        primitive_map: (0..4).map(|w| (ME_WORDS[w].to_string(), meaning(w))).collect(),
        direction_map: BTreeMap::new(),
    };
    Episode {
        support,
        query,
        input_vocab: ME_WORDS.iter().map(|s| s.to_string()).collect(),
        output_vocab: ME_COLORS.iter().map(|s| s.to_string()).collect(),
        meta: EpisodeMeta { experiment: Some(Experiment::Me), assignment: Some(assignment) },
    }
}

/// Samples `n_s + n_q` distinct templates, rewrites their words and
/// re-derives outputs under `assignment`.
#[allow(clippy::too_many_arguments)]
fn scan_episode<R: Rng>(
    support_pool: &[Pair],
    query_pool: Option<&[Pair]>,
    n_s: usize,
    n_q: usize,
    words: &BTreeMap<String, String>,
    assignment: Assignment,
    experiment: Experiment,
    rng: &mut R,
) -> Episode {
    let grammar = assignment.grammar().expect("sampled assignments are bijective");
    let instantiate = |p: &Pair| {
        let instr = Pair::new(substitute(&p.instruction, words), p.actions.clone());
        remap_with(&instr, &assignment, &grammar).expect("templates only use assigned words")
    };
    let (support, query) = match query_pool {
        None => {
            let picks = index::sample(rng, support_pool.len(), n_s + n_q).into_vec();
            let items: Vec<Pair> = picks.iter().map(|&i| instantiate(&support_pool[i])).collect();
            let (s, q) = items.split_at(n_s);
            (s.to_vec(), q.to_vec())
        }
        Some(qp) => {
            let s = index::sample(rng, support_pool.len(), n_s).into_iter().map(|i| instantiate(&support_pool[i]));
            let s = s.collect();
            let q = index::sample(rng, qp.len(), n_q).into_iter().map(|i| instantiate(&qp[i])).collect();
            (s, q)
        }
    };
    Episode::with_vocab(
        support,
        query,
        &grammar,
        EpisodeMeta { experiment: Some(experiment), assignment: Some(assignment) },
    )
}

fn canonical_words() -> Vec<String> {
    CANONICAL_PRIMITIVES.iter().map(|s| s.to_string()).collect()
}

/// Permutation meta-training: a random non-identity reassignment of the four
/// canonical primitives, 20 support and 20 query items from the full corpus.
pub fn gen_perm_episode<R: Rng>(rng: &mut R) -> Episode {
    let perms: Vec<[usize; 4]> = all_permutations().into_iter().filter(|p| *p != [0, 1, 2, 3]).collect();
    let perm = perms[rng.gen_range(0..perms.len())];
    let assignment =
        Assignment::primitives(canonical_words().into_iter().zip(perm.iter().map(|&i| CANONICAL_ACTIONS[i].to_string())));
    scan_episode(canonical_corpus(), None, SCAN_SUPPORT, SCAN_QUERY, &BTreeMap::new(), assignment, Experiment::AddJumpPerm, rng)
}

/// Samples 4 of 24 primitives and 4 of 24 actions, paired at random, never
/// pairing `jump` with `JUMP`. Returns the template-word rewrite and the
/// assignment.
fn sample_augmented_assignment<R: Rng>(rng: &mut R) -> (BTreeMap<String, String>, Assignment) {
    let prims = all_primitives();
    let acts = all_actions();
    loop {
        let p = index::sample(rng, prims.len(), 4).into_vec();
        let a = index::sample(rng, acts.len(), 4).into_vec();
        // Index 0 is jump/JUMP in both lists.
        if p.iter().zip(&a).any(|(&pi, &ai)| pi == 0 && ai == 0) {
            continue;
        }
        let words = canonical_words().into_iter().zip(p.iter().map(|&i| prims[i].clone())).collect();
        let assignment = Assignment::primitives(p.iter().map(|&i| prims[i].clone()).zip(a.iter().map(|&i| acts[i].clone())));
        return (words, assignment);
    }
}

/// Augmentation meta-training over 24 primitives and 24 actions.
pub fn gen_aug_episode<R: Rng>(rng: &mut R) -> Episode {
    let (words, assignment) = sample_augmented_assignment(rng);
    scan_episode(canonical_corpus(), None, SCAN_SUPPORT, SCAN_QUERY, &words, assignment, Experiment::AddJumpAug, rng)
}

/// Direction meta-training: two of four direction words mapped to two of
/// four turn meanings, never `right`→`RTURN`.
pub fn gen_dir_episode<R: Rng>(rng: &mut R) -> Episode {
    let dirs = all_directions();
    let turns = all_turns();
    let (d, t) = loop {
        let d = index::sample(rng, 4, 2).into_vec();
        let t = index::sample(rng, 4, 2).into_vec();
        // Index 1 is right/RTURN in both lists.
        if !d.iter().zip(&t).any(|(&di, &ti)| di == 1 && ti == 1) {
            break (d, t);
        }
    };
    let words: BTreeMap<String, String> =
        CANONICAL_DIRECTIONS.iter().map(|s| s.to_string()).zip(d.iter().map(|&i| dirs[i].clone())).collect();
    let assignment = Assignment::primitives(canonical_words().into_iter().zip(CANONICAL_ACTIONS.iter().map(|s| s.to_string())))
        .with_directions(d.iter().map(|&i| dirs[i].clone()).zip(t.iter().map(|&i| turns[i].clone())));
    scan_episode(canonical_corpus(), None, SCAN_SUPPORT, SCAN_QUERY, &words, assignment, Experiment::AroundRight, rng)
}

struct LengthPools {
    train: Vec<Pair>,
    test: Vec<Pair>,
    short: Vec<Pair>,
    medium: Vec<Pair>,
}

fn length_pools() -> &'static LengthPools {
    static POOLS: OnceLock<LengthPools> = OnceLock::new();
    POOLS.get_or_init(|| {
        let (train, test) = make_split(canonical_corpus(), &SplitSpec::Length { train_max: SplitSpec::LENGTH_TRAIN_MAX });
        let (short, medium) = train.iter().cloned().partition(|p| p.actions.len() < LENGTH_SUPPORT_BELOW);
        LengthPools { train, test, short, medium }
    })
}

/// Length meta-training: 100 short support items (< 12 actions) and 20
/// longer queries (12-22 actions) from the length-split training set, with
/// primitive augmentation.
pub fn gen_length_episode<R: Rng>(rng: &mut R) -> Episode {
    let pools = length_pools();
    let (words, assignment) = sample_augmented_assignment(rng);
    scan_episode(&pools.short, Some(&pools.medium), LENGTH_SUPPORT, LENGTH_QUERY, &words, assignment, Experiment::Length, rng)
}

fn canonical_support(instructions: &[&str]) -> Vec<Pair> {
    let g = Grammar::canonical();
    instructions
        .iter()
        .map(|s| {
            let i = Instruction::parse_str(s);
            let a = scan::execute(&i, &g).expect("canonical instruction");
            Pair::new(i, a)
        })
        .collect()
}

/// Test episodes. The SCAN experiments yield one episode holding the whole
/// test split; ME yields several episodes per held-out permutation.
pub fn test_episodes(experiment: Experiment, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TEST_STREAM);
    let canonical = Assignment::identity(&Grammar::canonical());
    let meta = EpisodeMeta { experiment: Some(experiment), assignment: Some(canonical.clone()) };
    match experiment {
        Experiment::Me => {
            let pool = split_me_permutations(seed);
            pool.test_perms
                .iter()
                .flat_map(|p| (0..ME_TEST_EPISODES_PER_PERM).map(|_| gen_me_episode(p, &mut rng)).collect::<Vec<_>>())
                .collect()
        }
        Experiment::AddJumpPerm | Experiment::AddJumpAug => {
            let (_, test) = make_split(canonical_corpus(), &SplitSpec::AddJump);
            vec![Episode::from_pairs(canonical_support(&CANONICAL_PRIMITIVES), test, meta)]
        }
        Experiment::AroundRight => {
            let (_, test) = make_split(canonical_corpus(), &SplitSpec::AroundRight);
            vec![Episode::from_pairs(canonical_support(&["turn left", "turn right"]), test, meta)]
        }
        Experiment::Length => {
            let pools = length_pools();
            let support = index::sample(&mut rng, pools.train.len(), LENGTH_SUPPORT)
                .into_iter()
                .map(|i| pools.train[i].clone())
                .collect();
            vec![Episode::from_pairs(support, pools.test.clone(), meta)]
        }
    }
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

/// Seeded stream of meta-training episodes for one experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeSampler {
    experiment: Experiment,
    rng: ChaCha8Rng,
    me_pool: PermutationPool,
}

impl EpisodeSampler {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRAIN_STREAM);
        Self { experiment, rng, me_pool: split_me_permutations(seed) }
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment
    }

    pub fn me_pool(&self) -> &PermutationPool {
        &self.me_pool
    }

    pub fn next_episode(&mut self) -> Episode {
        let rng = &mut self.rng;
        match self.experiment {
            Experiment::Me => {
                let perm = *self.me_pool.train_perms.choose(rng).expect("non-empty pool");
                gen_me_episode(&perm, rng)
            }
            Experiment::AddJumpPerm => gen_perm_episode(rng),
            Experiment::AddJumpAug => gen_aug_episode(rng),
            Experiment::AroundRight => gen_dir_episode(rng),
            Experiment::Length => gen_length_episode(rng),
        }
    }
}

impl Iterator for EpisodeSampler {
    type Item = Episode;
    fn next(&mut self) -> Option<Episode> {
        Some(self.next_episode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("scan".parse::<Experiment>().is_err());
    }

    #[test]
    fn canonical_test_supports() {
        let aj = test_episodes(Experiment::AddJumpPerm, 0);
        assert_eq!(aj.len(), 1);
        assert_eq!(aj[0].support.len(), 4);
        assert_eq!(aj[0].support[0].to_string(), "IN: jump OUT: JUMP");
        assert_eq!(aj[0].query.len(), 7_706);
        let ar = test_episodes(Experiment::AroundRight, 0);
        assert_eq!(ar[0].support.len(), 2);
        assert_eq!(ar[0].support[1].to_string(), "IN: turn right OUT: RTURN");
        let len = test_episodes(Experiment::Length, 0);
        assert_eq!(len[0].support.len(), 100);
        assert!(len[0].support.iter().all(|p| p.actions.len() <= 22));
        assert!(len[0].query.iter().all(|p| (24..=48).contains(&p.actions.len())));
    }
}
