use std::fmt;

use serde::{Deserialize, Serialize};

pub const TURN: &str = "turn";
pub const OPPOSITE: &str = "opposite";
pub const AROUND: &str = "around";
pub const TWICE: &str = "twice";
pub const THRICE: &str = "thrice";
pub const AND: &str = "and";
pub const AFTER: &str = "after";

/// Function words shared by every grammar variant.
pub const KEYWORDS: [&str; 7] = [TURN, OPPOSITE, AROUND, TWICE, THRICE, AND, AFTER];

pub const CANONICAL_PRIMITIVES: [&str; 4] = ["jump", "run", "walk", "look"];
pub const CANONICAL_ACTIONS: [&str; 4] = ["JUMP", "RUN", "WALK", "LOOK"];
pub const CANONICAL_DIRECTIONS: [&str; 2] = ["left", "right"];
pub const CANONICAL_TURNS: [&str; 2] = ["LTURN", "RTURN"];
pub const EXTRA_DIRECTIONS: [&str; 2] = ["forward", "backward"];
pub const EXTRA_TURNS: [&str; 2] = ["FORWARD", "BACKWARD"];
pub const AUGMENTED_COUNT: usize = 20;

pub fn augmented_primitive(i: usize) -> String {
    format!("Primitive{i}")
}

pub fn augmented_action(i: usize) -> String {
    format!("Action{i}")
}

/// All 24 input primitives: the canonical four followed by `Primitive1..20`.
pub fn all_primitives() -> Vec<String> {
    CANONICAL_PRIMITIVES
        .iter()
        .map(|s| s.to_string())
        .chain((1..=AUGMENTED_COUNT).map(augmented_primitive))
        .collect()
}

/// All 24 actions, aligned with [`all_primitives`].
pub fn all_actions() -> Vec<String> {
    CANONICAL_ACTIONS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=AUGMENTED_COUNT).map(augmented_action))
        .collect()
}

pub fn all_directions() -> Vec<String> {
    CANONICAL_DIRECTIONS.iter().chain(&EXTRA_DIRECTIONS).map(|s| s.to_string()).collect()
}

pub fn all_turns() -> Vec<String> {
    CANONICAL_TURNS.iter().chain(&EXTRA_TURNS).map(|s| s.to_string()).collect()
}

/// Input words with their meanings. Keywords are fixed; primitives and
/// directions vary between experiments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    primitives: Vec<String>,
    primitive_meanings: Vec<String>,
    directions: Vec<String>,
    direction_meanings: Vec<String>,
}

impl Grammar {
    pub fn new(
        primitives: Vec<String>,
        primitive_meanings: Vec<String>,
        directions: Vec<String>,
        direction_meanings: Vec<String>,
    ) -> Result<Self, super::ScanError> {
        use super::ScanError::InvalidGrammar;
        if primitives.len() != primitive_meanings.len() {
            return Err(InvalidGrammar("primitive and meaning counts differ".into()));
        }
        if directions.len() != direction_meanings.len() {
            return Err(InvalidGrammar("direction and turn counts differ".into()));
        }
        if primitives.is_empty() {
            return Err(InvalidGrammar("no primitives".into()));
        }
        let mut inputs: Vec<&String> = primitives.iter().chain(&directions).collect();
        inputs.sort();
        inputs.dedup();
        if inputs.len() != primitives.len() + directions.len() {
            return Err(InvalidGrammar("input words are not distinct".into()));
        }
        if let Some(k) = inputs.iter().find(|w| KEYWORDS.contains(&w.as_str())) {
            return Err(InvalidGrammar(format!("`{k}` is a reserved word")));
        }
        let mut outputs: Vec<&String> = primitive_meanings.iter().chain(&direction_meanings).collect();
        outputs.sort();
        outputs.dedup();
        if outputs.len() != primitive_meanings.len() + direction_meanings.len() {
            return Err(InvalidGrammar("output symbols are not distinct".into()));
        }
        Ok(Self { primitives, primitive_meanings, directions, direction_meanings })
    }

    /// jump/run/walk/look with left/right.
    pub fn canonical() -> Self {
        Self::from_strs(&CANONICAL_PRIMITIVES, &CANONICAL_ACTIONS, &CANONICAL_DIRECTIONS, &CANONICAL_TURNS)
    }

    /// The canonical grammar plus `Primitive1..20 ↦ Action1..20`.
    pub fn augmented() -> Self {
        Self::new(all_primitives(), all_actions(), to_strings(&CANONICAL_DIRECTIONS), to_strings(&CANONICAL_TURNS))
            .expect("augmented grammar is well formed")
    }

    /// The canonical grammar plus the forward/backward directions.
    pub fn with_extra_directions() -> Self {
        Self::new(to_strings(&CANONICAL_PRIMITIVES), to_strings(&CANONICAL_ACTIONS), all_directions(), all_turns())
            .expect("direction grammar is well formed")
    }

    fn from_strs(p: &[&str], pm: &[&str], d: &[&str], dm: &[&str]) -> Self {
        Self::new(to_strings(p), to_strings(pm), to_strings(d), to_strings(dm)).expect("static grammar is well formed")
    }

    pub fn primitives(&self) -> &[String] {
        &self.primitives
    }

    pub fn primitive_meanings(&self) -> &[String] {
        &self.primitive_meanings
    }

    pub fn directions(&self) -> &[String] {
        &self.directions
    }

    pub fn direction_meanings(&self) -> &[String] {
        &self.direction_meanings
    }

    pub fn primitive_index(&self, word: &str) -> Option<usize> {
        self.primitives.iter().position(|p| p == word)
    }

    pub fn direction_index(&self, word: &str) -> Option<usize> {
        self.directions.iter().position(|d| d == word)
    }

    /// Every input word this grammar accepts.
    pub fn input_vocab(&self) -> Vec<String> {
        let mut v: Vec<String> = self.primitives.clone();
        v.extend(self.directions.iter().cloned());
        v.extend(KEYWORDS.iter().map(|s| s.to_string()));
        v
    }

    /// Every output symbol this grammar can produce.
    pub fn output_vocab(&self) -> Vec<String> {
        let mut v = self.primitive_meanings.clone();
        v.extend(self.direction_meanings.iter().cloned());
        v
    }
}

fn to_strings(s: &[&str]) -> Vec<String> {
    s.iter().map(|x| x.to_string()).collect()
}

/// A command: a non-empty sequence of input words.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Instruction(pub Vec<String>);

impl Instruction {
    pub fn parse_str(s: &str) -> Self {
        Self(s.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.iter().any(|t| t == word)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// The output of a command: a sequence of action symbols.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionSequence(pub Vec<String>);

impl ActionSequence {
    pub fn parse_str(s: &str) -> Self {
        Self(s.split_whitespace().map(str::to_string).collect())
    }

    pub fn actions(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// An instruction with its action sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub instruction: Instruction,
    pub actions: ActionSequence,
}

impl Pair {
    pub fn new(instruction: Instruction, actions: ActionSequence) -> Self {
        Self { instruction, actions }
    }

    pub fn from_strs(instruction: &str, actions: &str) -> Self {
        Self::new(Instruction::parse_str(instruction), ActionSequence::parse_str(actions))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IN: {} OUT: {}", self.instruction, self.actions)
    }
}
