use std::collections::{HashMap, HashSet};

use metaseq::episodes::*;
use metaseq::scan::{execute, Grammar, Pair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn me_pool_partitions_all_permutations() {
    for seed in 0..20 {
        let pool = split_me_permutations(seed);
        assert_eq!(pool.train_perms.len(), 19);
        assert_eq!(pool.test_perms.len(), 5);
        let all: HashSet<_> = pool.train_perms.iter().chain(&pool.test_perms).collect();
        assert_eq!(all.len(), 24);
        let identity_hits =
            pool.train_perms.iter().chain(&pool.test_perms).filter(|p| **p == [0, 1, 2, 3]).count();
        assert_eq!(identity_hits, 1);
        assert_eq!(pool, split_me_permutations(seed));
    }
    assert_ne!(split_me_permutations(1), split_me_permutations(2));
}

#[test]
fn me_episode_structure() {
    let perm = [3, 2, 0, 1]; // dax→blue, wif→green, lug→red, zup→yellow
    let mut r = rng(5);
    for _ in 0..200 {
        let ep = gen_me_episode(&perm, &mut r);
        assert_eq!(ep.support.len(), 3);
        assert_eq!(ep.query.len(), 20);
        let shown: HashSet<_> = ep.support.iter().map(|p| p.instruction.to_string()).collect();
        let withheld: Vec<_> = ME_WORDS.iter().filter(|w| !shown.contains(**w)).collect();
        assert_eq!(withheld.len(), 1);
        assert!(ep.query.iter().any(|q| q.instruction.contains(withheld[0])));
        for q in &ep.query {
            assert!((2..=6).contains(&q.instruction.len()));
            for (w, c) in q.instruction.tokens().iter().zip(q.actions.actions()) {
                let wi = ME_WORDS.iter().position(|x| x == w).unwrap();
                assert_eq!(c, ME_COLORS[perm[wi]]);
            }
        }
    }
}

#[test]
fn me_query_lengths_are_uniform() {
    let mut r = rng(11);
    let mut counts = HashMap::new();
    let mut total = 0usize;
    while total < 10_000 {
        for q in gen_me_episode(&[0, 1, 2, 3], &mut r).query {
            *counts.entry(q.instruction.len()).or_insert(0usize) += 1;
            total += 1;
        }
    }
    for len in 2..=6 {
        let frac = counts[&len] as f64 / total as f64;
        assert!((frac - 0.2).abs() < 0.02, "length {len}: {frac}");
    }
}

#[test]
fn perm_episodes_never_use_identity_and_are_uniform() {
    let mut r = rng(1);
    let mut counts: HashMap<Vec<(String, String)>, usize> = HashMap::new();
    let draws = 23_000;
    for _ in 0..draws {
        let ep = gen_perm_episode(&mut r);
        let a = ep.meta.assignment.unwrap();
        let key: Vec<_> = a.primitive_map.into_iter().collect();
        assert!(key.iter().any(|(w, m)| w.to_uppercase() != *m), "identity permutation drawn");
        *counts.entry(key).or_default() += 1;
    }
    assert_eq!(counts.len(), 23);
    for c in counts.values() {
        // Binomial(23000, 1/23): sd ≈ 31; allow ±5 sd.
        assert!((*c as i64 - 1000).abs() < 160, "{c}");
    }
}

#[test]
fn perm_episode_swap_example() {
    // Find an episode whose permutation swaps jump and run; bare "run" must mean JUMP there.
    let mut r = rng(2);
    for _ in 0..5_000 {
        let ep = gen_perm_episode(&mut r);
        let a = ep.meta.assignment.as_ref().unwrap();
        if a.primitive_map["run"] == "JUMP" {
            for p in ep.support.iter().chain(&ep.query) {
                if p.instruction.to_string() == "run" {
                    assert_eq!(p.actions.to_string(), "JUMP");
                }
            }
            for p in ep.support.iter().chain(&ep.query) {
                let g = a.grammar().unwrap();
                assert_eq!(execute(&p.instruction, &g).unwrap(), p.actions);
            }
            return;
        }
    }
    panic!("no jump↔run episode drawn");
}

fn check_pairs_consistent(ep: &Episode) {
    let a = ep.meta.assignment.as_ref().unwrap();
    let g = a.grammar().unwrap();
    let mut seen = HashSet::new();
    for p in ep.support.iter().chain(&ep.query) {
        assert_eq!(execute(&p.instruction, &g).unwrap(), p.actions, "{p}");
        assert!(seen.insert(p.instruction.clone()), "support/query overlap: {p}");
        for t in p.instruction.tokens() {
            assert!(ep.input_vocab.contains(t));
        }
        for s in p.actions.actions() {
            assert!(ep.output_vocab.contains(s));
        }
    }
}

#[test]
fn aug_episode_constraints() {
    let mut r = rng(3);
    let mut rejected_pairs = 0;
    for _ in 0..5_000 {
        let ep = gen_aug_episode(&mut r);
        assert_eq!((ep.support.len(), ep.query.len()), (20, 20));
        let a = ep.meta.assignment.as_ref().unwrap();
        assert_eq!(a.primitive_map.len(), 4);
        let meanings: HashSet<_> = a.primitive_map.values().collect();
        assert_eq!(meanings.len(), 4);
        assert_ne!(a.primitive_map.get("jump").map(String::as_str), Some("JUMP"));
        check_pairs_consistent(&ep);
        rejected_pairs += ep.support.iter().chain(&ep.query).filter(|p| p == &&Pair::from_strs("jump", "JUMP")).count();
    }
    assert_eq!(rejected_pairs, 0);
}

#[test]
fn aug_example_assignment_is_reachable() {
    // {Primitive16→Action3, run→Action20, Primitive2→JUMP, Primitive12→Action11}
    let a = metaseq::scan::Assignment::primitives([
        ("Primitive16", "Action3"),
        ("run", "Action20"),
        ("Primitive2", "JUMP"),
        ("Primitive12", "Action11"),
    ]);
    let g = a.grammar().unwrap();
    let out = execute(&metaseq::scan::Instruction::parse_str("Primitive2 twice after run left"), &g).unwrap();
    assert_eq!(out.to_string(), "LTURN Action20 JUMP JUMP");
}

#[test]
fn dir_episode_constraints() {
    let mut r = rng(4);
    let mut left_to_rturn = false;
    for _ in 0..5_000 {
        let ep = gen_dir_episode(&mut r);
        assert_eq!((ep.support.len(), ep.query.len()), (20, 20));
        let a = ep.meta.assignment.as_ref().unwrap();
        assert_eq!(a.direction_map.len(), 2);
        assert_ne!(a.direction_map.get("right").map(String::as_str), Some("RTURN"));
        left_to_rturn |= a.direction_map.get("left").map(String::as_str) == Some("RTURN");
        check_pairs_consistent(&ep);
        assert!(!ep.support.iter().chain(&ep.query).any(|p| p == &Pair::from_strs("turn right", "RTURN")));
    }
    assert!(left_to_rturn, "left→RTURN is legal and should occur");
}

#[test]
fn length_episode_pools() {
    let mut r = rng(6);
    for _ in 0..300 {
        let ep = gen_length_episode(&mut r);
        assert_eq!((ep.support.len(), ep.query.len()), (100, 20));
        assert!(ep.support.iter().all(|p| p.actions.len() <= 11));
        assert!(ep.query.iter().all(|p| (12..=22).contains(&p.actions.len())));
        check_pairs_consistent(&ep);
    }
}

#[test]
fn generators_are_deterministic() {
    for e in Experiment::ALL {
        let a: Vec<_> = EpisodeSampler::new(e, 77).take(5).collect();
        let b: Vec<_> = EpisodeSampler::new(e, 77).take(5).collect();
        assert_eq!(a, b, "{e}");
        let c: Vec<_> = EpisodeSampler::new(e, 78).take(5).collect();
        assert_ne!(a, c, "{e}");
    }
}

#[test]
fn me_test_episodes_use_held_out_permutations() {
    let pool = split_me_permutations(9);
    let eps = test_episodes(Experiment::Me, 9);
    assert_eq!(eps.len(), 5 * ME_TEST_EPISODES_PER_PERM);
    for ep in eps {
        let a = ep.meta.assignment.unwrap();
        let perm: Vec<usize> = ME_WORDS
            .iter()
            .map(|w| ME_COLORS.iter().position(|c| *c == a.primitive_map[*w]).unwrap())
            .collect();
        assert!(pool.test_perms.iter().any(|p| p.as_slice() == perm.as_slice()));
    }
    let mut sampler = EpisodeSampler::new(Experiment::Me, 9);
    for _ in 0..500 {
        let a = sampler.next_episode().meta.assignment.unwrap();
        let perm: Vec<usize> = ME_WORDS
            .iter()
            .map(|w| ME_COLORS.iter().position(|c| *c == a.primitive_map[*w]).unwrap())
            .collect();
        assert!(pool.train_perms.iter().any(|p| p.as_slice() == perm.as_slice()));
    }
}

#[test]
fn experiment_vocabularies_cover_their_episodes() {
    for e in Experiment::ALL {
        let inputs = e.input_symbols();
        let outputs = e.output_symbols();
        let mut sampler = EpisodeSampler::new(e, 1);
        for ep in (0..50).map(|_| sampler.next_episode()).chain(test_episodes(e, 1)) {
            for p in ep.support.iter().chain(&ep.query) {
                assert!(p.instruction.tokens().iter().all(|t| inputs.contains(t)), "{e}: {p}");
                assert!(p.actions.actions().iter().all(|t| outputs.contains(t)), "{e}: {p}");
            }
        }
    }
    assert_eq!(Experiment::AddJumpPerm.input_symbols().len(), Grammar::canonical().input_vocab().len());
}
