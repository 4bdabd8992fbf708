use std::collections::{BTreeMap, HashSet};

use metaseq::scan::*;
use proptest::prelude::*;

const TABLE_1: [(&str, &str); 7] = [
    ("jump", "JUMP"),
    ("jump left", "LTURN JUMP"),
    ("jump around right", "RTURN JUMP RTURN JUMP RTURN JUMP RTURN JUMP"),
    ("turn left twice", "LTURN LTURN"),
    ("jump thrice", "JUMP JUMP JUMP"),
    ("jump opposite left and walk thrice", "LTURN LTURN JUMP WALK WALK WALK"),
    ("jump opposite left after walk around left", "LTURN WALK LTURN WALK LTURN WALK LTURN WALK LTURN LTURN JUMP"),
];

#[test]
fn table_one_rows_reproduce() {
    let g = Grammar::canonical();
    for (input, output) in TABLE_1 {
        let got = execute(&Instruction::parse_str(input), &g).unwrap();
        assert_eq!(got.to_string(), output, "{input}");
    }
}

/// Phrase output lengths, derived by hand from the rule table rather than
/// from the enumerator: (count of phrases, action length, uses jump, has
/// `around right`).
fn phrase_census() -> Vec<(usize, bool, bool)> {
    let mut out = Vec::new();
    // (verb is a primitive?, is jump?)
    let verbs = [(false, false), (true, true), (true, false), (true, false), (true, false)];
    for &(prim, jump) in &verbs {
        let v = usize::from(prim);
        // (length of one repetition, around right?)
        let mut mods = Vec::new();
        if prim {
            mods.push((v, false));
        }
        for right in [false, true] {
            mods.push((1 + v, false));
            mods.push((2 + v, false));
            mods.push((4 * (1 + v), right));
        }
        for (len, ar) in mods {
            for rep in 1..=3 {
                out.push((len * rep, jump, ar));
            }
        }
    }
    out
}

#[test]
fn corpus_size_matches_counting_oracle() {
    let census = phrase_census();
    assert_eq!(census.len(), 102);
    let n = census.len();
    assert_eq!(canonical_corpus().len(), n + 2 * n * n);
    assert_eq!(canonical_corpus().len(), 20_910);
}

#[test]
fn enumeration_is_sorted_and_duplicate_free() {
    let corpus = canonical_corpus();
    let unique: HashSet<_> = corpus.iter().map(|p| &p.instruction).collect();
    assert_eq!(unique.len(), corpus.len());
    assert!(corpus.windows(2).all(|w| w[0].instruction < w[1].instruction));
    assert_eq!(corpus.iter().map(|p| p.actions.len()).max(), Some(48));
}

#[test]
fn split_sizes_match_counting_oracle() {
    let census = phrase_census();
    let mut jump_test = 0;
    let mut around_right = 0;
    let mut length_train = 0;
    for &(la, ja, ra) in &census {
        if ja && la > 1 {
            jump_test += 1;
        }
        around_right += usize::from(ra);
        length_train += usize::from(la <= 22);
        for &(lb, jb, rb) in &census {
            jump_test += 2 * usize::from(ja || jb);
            around_right += 2 * usize::from(ra || rb);
            length_train += 2 * usize::from(la + lb <= 22);
        }
    }
    // Bare "jump" is the only single-jump phrase with length 1.
    let corpus = canonical_corpus();

    let (train, test) = make_split(corpus, &SplitSpec::AddJump);
    assert_eq!(test.len(), jump_test);
    assert_eq!((train.len(), test.len()), (13_204, 7_706));
    assert!(train.iter().any(|p| p.instruction.to_string() == "jump"));

    let (train, test) = make_split(corpus, &SplitSpec::by_name("around-right").unwrap());
    assert_eq!(test.len(), around_right);
    assert_eq!((train.len(), test.len()), (15_225, 5_685));
    assert!(test.iter().any(|p| p.instruction.to_string() == "walk around right"));
    assert!(train.iter().any(|p| p.instruction.to_string() == "walk around left"));

    let (train, test) = make_split(corpus, &SplitSpec::by_name("length").unwrap());
    assert_eq!(train.len(), length_train);
    assert_eq!((train.len(), test.len()), (16_990, 3_920));
    assert_eq!(test.iter().map(|p| p.actions.len()).min(), Some(24));
    assert_eq!(test.iter().map(|p| p.actions.len()).max(), Some(48));
}

#[test]
fn splits_partition_the_corpus() {
    let corpus = canonical_corpus();
    for name in ["add-jump", "around-right", "length"] {
        let (train, test) = make_split(corpus, &SplitSpec::by_name(name).unwrap());
        assert_eq!(train.len() + test.len(), corpus.len());
        let a: HashSet<_> = train.iter().map(|p| &p.instruction).collect();
        assert!(test.iter().all(|p| !a.contains(&p.instruction)), "{name}");
    }
}

fn any_phrase() -> impl Strategy<Value = String> {
    let verb = prop::sample::select(vec!["jump", "run", "walk", "look", "turn"]);
    let modifier = prop::sample::select(vec!["", " left", " right", " opposite left", " around right"]);
    let repeat = prop::sample::select(vec!["", " twice", " thrice"]);
    (verb, modifier, repeat).prop_map(|(v, m, r)| {
        let m = if v == "turn" && m.is_empty() { " left" } else { m };
        format!("{v}{m}{r}")
    })
}

fn run(s: &str) -> ActionSequence {
    execute(&Instruction::parse_str(s), &Grammar::canonical()).unwrap()
}

proptest! {
    #[test]
    fn after_reverses_and_preserves(x in any_phrase(), y in any_phrase()) {
        let (ox, oy) = (run(&x).0, run(&y).0);
        let after = run(&format!("{x} after {y}")).0;
        prop_assert_eq!(after, [oy.clone(), ox.clone()].concat());
        let and = run(&format!("{x} and {y}")).0;
        prop_assert_eq!(and, [ox, oy].concat());
    }

    #[test]
    fn repetition_scales_length(v in prop::sample::select(vec!["jump", "walk left", "turn around right", "look opposite left"])) {
        let once = run(v).len();
        prop_assert_eq!(run(&format!("{v} twice")).len(), 2 * once);
        prop_assert_eq!(run(&format!("{v} thrice")).len(), 3 * once);
    }

    #[test]
    fn remap_commutes_with_interpretation(idx in 0usize..20_910, perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let pair = &canonical_corpus()[idx];
        let actions: Vec<String> = perm.iter().map(|&i| CANONICAL_ACTIONS[i].to_string()).collect();
        let assignment = Assignment::primitives(CANONICAL_PRIMITIVES.iter().map(|s| s.to_string()).zip(actions.clone()));
        let remapped = remap(pair, &assignment).unwrap();
        prop_assert_eq!(&remapped.instruction, &pair.instruction);
        let g = Grammar::new(
            CANONICAL_PRIMITIVES.iter().map(|s| s.to_string()).collect(),
            actions,
            vec!["left".into(), "right".into()],
            vec!["LTURN".into(), "RTURN".into()],
        ).unwrap();
        prop_assert_eq!(remapped.actions, execute(&pair.instruction, &g).unwrap());
    }

    #[test]
    fn identity_remap_is_identity(idx in 0usize..20_910) {
        let pair = &canonical_corpus()[idx];
        prop_assert_eq!(&remap(pair, &Assignment::identity(&Grammar::canonical())).unwrap(), pair);
    }
}

#[test]
fn substitution_keeps_structure() {
    let words: BTreeMap<String, String> = [("jump".to_string(), "Primitive7".to_string())].into();
    let i = substitute(&Instruction::parse_str("jump twice after run"), &words);
    assert_eq!(i.to_string(), "Primitive7 twice after run");
    let out = execute(&i, &Grammar::augmented()).unwrap();
    assert_eq!(out.to_string(), "RUN Action7 Action7");
}
