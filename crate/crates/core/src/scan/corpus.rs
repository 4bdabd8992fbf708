use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::grammar::{
    ActionSequence, Grammar, Instruction, Pair, AFTER, AND, AROUND, CANONICAL_DIRECTIONS, CANONICAL_TURNS, KEYWORDS,
    OPPOSITE, THRICE, TURN, TWICE,
};
use super::parse::{execute, Modifier, Phrase, Repeat, Verb};
use super::ScanError;

/// Every `(instruction, actions)` pair derivable from `grammar`, sorted
/// lexicographically by instruction tokens.
pub fn enumerate_corpus(grammar: &Grammar) -> Vec<Pair> {
    let mut phrases = Vec::new();
    let verbs = std::iter::once(Verb::Turn).chain((0..grammar.primitives().len()).map(Verb::Primitive));
    for verb in verbs {
        let mut modifiers = Vec::new();
        if verb != Verb::Turn {
            modifiers.push(Modifier::Plain);
        }
        for d in 0..grammar.directions().len() {
            modifiers.extend([Modifier::Toward(d), Modifier::Opposite(d), Modifier::Around(d)]);
        }
        for modifier in modifiers {
            for repeat in [Repeat::Once, Repeat::Twice, Repeat::Thrice] {
                phrases.push(Phrase { verb, modifier, repeat });
            }
        }
    }
    let words: Vec<Vec<String>> = phrases.iter().map(|p| phrase_tokens(p, grammar)).collect();

    let mut corpus = Vec::with_capacity(phrases.len() * (1 + 2 * phrases.len()));
    let mut push = |tokens: Vec<String>| {
        let instruction = Instruction(tokens);
        let actions = execute(&instruction, grammar).expect("enumerated instructions parse");
        corpus.push(Pair::new(instruction, actions));
    };
    for w in &words {
        push(w.clone());
    }
    for a in &words {
        for b in &words {
            for conj in [AND, AFTER] {
                let mut t = a.clone();
                t.push(conj.to_string());
                t.extend(b.iter().cloned());
                push(t);
            }
        }
    }
    corpus.sort_by(|x, y| x.instruction.cmp(&y.instruction));
    corpus
}

fn phrase_tokens(p: &Phrase, g: &Grammar) -> Vec<String> {
    let mut t = vec![match p.verb {
        Verb::Turn => TURN.to_string(),
        Verb::Primitive(i) => g.primitives()[i].clone(),
    }];
    let dir = |d: usize| g.directions()[d].clone();
    match p.modifier {
        Modifier::Plain => {}
        Modifier::Toward(d) => t.push(dir(d)),
        Modifier::Opposite(d) => t.extend([OPPOSITE.to_string(), dir(d)]),
        Modifier::Around(d) => t.extend([AROUND.to_string(), dir(d)]),
    }
    match p.repeat {
        Repeat::Once => {}
        Repeat::Twice => t.push(TWICE.to_string()),
        Repeat::Thrice => t.push(THRICE.to_string()),
    }
    t
}

/// The canonical 4-primitive corpus, enumerated once per process.
pub fn canonical_corpus() -> &'static [Pair] {
    static CORPUS: OnceLock<Vec<Pair>> = OnceLock::new();
    CORPUS.get_or_init(|| enumerate_corpus(&Grammar::canonical()))
}

/// Named train/test partitions of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Test: every composed instruction that uses `jump`.
    AddJump,
    /// Test: every instruction containing the bigram `around right`.
    AroundRight,
    /// Train: output length at most `train_max`; test: everything longer.
    Length { train_max: usize },
}

impl SplitSpec {
    pub const LENGTH_TRAIN_MAX: usize = 22;

    pub fn by_name(name: &str) -> Result<Self, ScanError> {
        match name {
            "add-jump" => Ok(Self::AddJump),
            "around-right" => Ok(Self::AroundRight),
            "length" => Ok(Self::Length { train_max: Self::LENGTH_TRAIN_MAX }),
            other => Err(ScanError::UnknownSplit(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AddJump => "add-jump",
            Self::AroundRight => "around-right",
            Self::Length { .. } => "length",
        }
    }

    pub fn is_test(&self, pair: &Pair) -> bool {
        match self {
            Self::AddJump => pair.instruction.contains("jump") && pair.instruction.len() > 1,
            Self::AroundRight => pair.instruction.tokens().windows(2).any(|w| w[0] == AROUND && w[1] == "right"),
            Self::Length { train_max } => pair.actions.len() > *train_max,
        }
    }
}

/// Partitions `corpus` into `(train, test)`, preserving order.
pub fn make_split(corpus: &[Pair], spec: &SplitSpec) -> (Vec<Pair>, Vec<Pair>) {
    corpus.iter().cloned().partition(|p| !spec.is_test(p))
}

/// A mapping of primitive words to actions and direction words to turns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub primitive_map: BTreeMap<String, String>,
    pub direction_map: BTreeMap<String, String>,
}

impl Assignment {
    /// Primitive meanings as given, with the canonical left/right turns.
    pub fn primitives<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self {
            primitive_map: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
            direction_map: CANONICAL_DIRECTIONS
                .iter()
                .zip(CANONICAL_TURNS)
                .map(|(d, t)| (d.to_string(), t.to_string()))
                .collect(),
        }
    }

    pub fn with_directions<I, A, B>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        self.direction_map = pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        self
    }

    pub fn identity(grammar: &Grammar) -> Self {
        Self::primitives(grammar.primitives().iter().cloned().zip(grammar.primitive_meanings().iter().cloned()))
            .with_directions(grammar.directions().iter().cloned().zip(grammar.direction_meanings().iter().cloned()))
    }

    pub fn grammar(&self) -> Result<Grammar, ScanError> {
        Grammar::new(
            self.primitive_map.keys().cloned().collect(),
            self.primitive_map.values().cloned().collect(),
            self.direction_map.keys().cloned().collect(),
            self.direction_map.values().cloned().collect(),
        )
    }
}

/// Recomputes a pair's output under a different assignment of meanings.
pub fn remap(pair: &Pair, assignment: &Assignment) -> Result<Pair, ScanError> {
    remap_with(pair, assignment, &assignment.grammar()?)
}

/// [`remap`] with the assignment's grammar already built.
pub(crate) fn remap_with(pair: &Pair, assignment: &Assignment, grammar: &Grammar) -> Result<Pair, ScanError> {
    for t in pair.instruction.tokens() {
        let known = KEYWORDS.contains(&t.as_str())
            || assignment.primitive_map.contains_key(t)
            || assignment.direction_map.contains_key(t);
        if !known {
            return Err(ScanError::UnmappedSymbol(t.clone()));
        }
    }
    let actions = execute(&pair.instruction, grammar)?;
    Ok(Pair::new(pair.instruction.clone(), actions))
}

/// Replaces input words token-by-token (simultaneously).
pub fn substitute(instruction: &Instruction, words: &BTreeMap<String, String>) -> Instruction {
    Instruction(instruction.tokens().iter().map(|t| words.get(t).cloned().unwrap_or_else(|| t.clone())).collect())
}

/// Writes pairs as `IN: <instruction> OUT: <actions>` lines.
pub fn write_pairs<W: Write>(mut w: W, pairs: &[Pair]) -> std::io::Result<()> {
    for p in pairs {
        writeln!(w, "{p}")?;
    }
    Ok(())
}

pub fn parse_pair_line(line: &str, line_no: usize) -> Result<Pair, ScanError> {
    let bad = |why: &str| ScanError::Format { line: line_no, message: why.to_string() };
    let rest = line.trim_end().strip_prefix("IN: ").ok_or_else(|| bad("missing `IN: ` prefix"))?;
    let (input, output) = rest.split_once(" OUT: ").ok_or_else(|| bad("missing ` OUT: ` separator"))?;
    let instruction = Instruction::parse_str(input);
    if instruction.is_empty() {
        return Err(bad("empty instruction"));
    }
    Ok(Pair::new(instruction, ActionSequence::parse_str(output)))
}

/// Reads `IN:/OUT:` lines, skipping blank lines.
pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<Pair>, ScanError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| ScanError::Format { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_pair_line(&line, i + 1)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_primitive_grammar_closure() {
        let g = Grammar::new(vec!["blick".into()], vec!["BLICK".into()], vec!["up".into(), "down".into()], vec![
            "UTURN".into(),
            "DTURN".into(),
        ])
        .unwrap();
        let corpus = enumerate_corpus(&g);
        // 1 primitive: V = 1 + 3·2 (prim) + 3·2 (turn) = 13, S = 39, C = 39 + 2·39².
        assert_eq!(corpus.len(), 39 + 2 * 39 * 39);
        for p in &corpus {
            assert!(p.instruction.contains("blick") || p.instruction.contains("turn"));
            assert!(p.actions.actions().iter().all(|a| ["BLICK", "UTURN", "DTURN"].contains(&a.as_str())));
        }
    }

    #[test]
    fn remap_examples() {
        let a = Assignment::primitives([("run", "JUMP")]);
        let p = remap(&Pair::from_strs("run twice", "RUN RUN"), &a).unwrap();
        assert_eq!(p.actions.to_string(), "JUMP JUMP");

        let id = Assignment::identity(&Grammar::canonical());
        let p = remap(&Pair::from_strs("walk", "WALK"), &id).unwrap();
        assert_eq!(p.actions.to_string(), "WALK");

        let a = Assignment::primitives([("jump", "JUMP")]);
        assert!(matches!(remap(&Pair::from_strs("walk", "WALK"), &a), Err(ScanError::UnmappedSymbol(w)) if w == "walk"));
    }

    #[test]
    fn remap_with_direction_assignment() {
        let a = Assignment::primitives([("look", "Action3")]).with_directions([("right", "BACKWARD"), ("left", "LTURN")]);
        let p = remap(&Pair::from_strs("look around right", ""), &a).unwrap();
        assert_eq!(p.actions.len(), 8);
        for (i, s) in p.actions.actions().iter().enumerate() {
            assert_eq!(s, if i % 2 == 0 { "BACKWARD" } else { "Action3" });
        }
    }

    #[test]
    fn pair_lines_round_trip_and_reject_garbage() {
        let pairs = vec![Pair::from_strs("jump left", "LTURN JUMP"), Pair::from_strs("walk", "WALK")];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "IN: jump left OUT: LTURN JUMP\nIN: walk OUT: WALK\n");
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
        assert!(matches!(read_pairs("jump => JUMP\n".as_bytes()), Err(ScanError::Format { line: 1, .. })));
    }

    #[test]
    fn unknown_split_name() {
        assert!(matches!(SplitSpec::by_name("mcd1"), Err(ScanError::UnknownSplit(_))));
    }
}
