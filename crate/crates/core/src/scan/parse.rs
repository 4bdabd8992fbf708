use serde::{Deserialize, Serialize};

use super::grammar::{Grammar, Instruction, ActionSequence, AFTER, AND, AROUND, OPPOSITE, THRICE, TURN, TWICE};
use super::ScanError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Turn,
    /// Index into the grammar's primitive list.
    Primitive(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modifier {
    Plain,
    Toward(usize),
    Opposite(usize),
    Around(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Repeat {
    Once,
    Twice,
    Thrice,
}

impl Repeat {
    pub fn count(self) -> usize {
        match self {
            Repeat::Once => 1,
            Repeat::Twice => 2,
            Repeat::Thrice => 3,
        }
    }
}

/// `S → V [twice|thrice]` where `V` is a verb with an optional direction
/// modifier. `turn` always carries a direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phrase {
    pub verb: Verb,
    pub modifier: Modifier,
    pub repeat: Repeat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseTree {
    Single(Phrase),
    And(Phrase, Phrase),
    After(Phrase, Phrase),
}

/// Parses a token sequence into its unique derivation.
///
/// Error positions are 0-based token indices; running out of input reports
/// the position one past the last token.
pub fn parse(tokens: &Instruction, grammar: &Grammar) -> Result<ParseTree, ScanError> {
    let toks = tokens.tokens();
    if toks.is_empty() {
        return Err(ScanError::Parse { position: 0, message: "empty instruction".into() });
    }
    let (first, pos) = parse_phrase(toks, 0, grammar)?;
    if pos == toks.len() {
        return Ok(ParseTree::Single(first));
    }
    let conj = toks[pos].as_str();
    if conj != AND && conj != AFTER {
        return Err(err(pos, format!("expected `and`, `after` or end of input, found `{conj}`")));
    }
    let (second, end) = parse_phrase(toks, pos + 1, grammar)?;
    if end != toks.len() {
        return Err(err(end, format!("unexpected `{}` after a complete command", toks[end])));
    }
    Ok(if conj == AND { ParseTree::And(first, second) } else { ParseTree::After(first, second) })
}

fn err(position: usize, message: String) -> ScanError {
    ScanError::Parse { position, message }
}

fn parse_phrase(toks: &[String], mut pos: usize, grammar: &Grammar) -> Result<(Phrase, usize), ScanError> {
    let word = toks.get(pos).ok_or_else(|| err(pos, "expected a verb, found end of input".into()))?;
    let verb = if word == TURN {
        Verb::Turn
    } else if let Some(i) = grammar.primitive_index(word) {
        Verb::Primitive(i)
    } else {
        return Err(err(pos, format!("expected a verb, found `{word}`")));
    };
    pos += 1;

    let direction_at = |p: usize| -> Result<usize, ScanError> {
        match toks.get(p) {
            Some(w) => grammar.direction_index(w).ok_or_else(|| err(p, format!("expected a direction, found `{w}`"))),
            None => Err(err(p, "expected a direction, found end of input".into())),
        }
    };

    let modifier = match toks.get(pos).map(String::as_str) {
        Some(OPPOSITE) => {
            let d = direction_at(pos + 1)?;
            pos += 2;
            Modifier::Opposite(d)
        }
        Some(AROUND) => {
            let d = direction_at(pos + 1)?;
            pos += 2;
            Modifier::Around(d)
        }
        Some(w) if grammar.direction_index(w).is_some() => {
            pos += 1;
            Modifier::Toward(grammar.direction_index(w).unwrap_or_default())
        }
        _ => Modifier::Plain,
    };
    if verb == Verb::Turn && modifier == Modifier::Plain {
        return Err(match toks.get(pos) {
            Some(w) => err(pos, format!("`turn` needs a direction, found `{w}`")),
            None => err(pos, "`turn` needs a direction, found end of input".into()),
        });
    }

    let repeat = match toks.get(pos).map(String::as_str) {
        Some(TWICE) => {
            pos += 1;
            Repeat::Twice
        }
        Some(THRICE) => {
            pos += 1;
            Repeat::Thrice
        }
        _ => Repeat::Once,
    };
    Ok((Phrase { verb, modifier, repeat }, pos))
}

/// Compositional semantics of a parse tree under the grammar's meanings.
pub fn interpret(tree: &ParseTree, grammar: &Grammar) -> ActionSequence {
    let mut out = Vec::new();
    match tree {
        ParseTree::Single(p) => emit_phrase(p, grammar, &mut out),
        ParseTree::And(a, b) => {
            emit_phrase(a, grammar, &mut out);
            emit_phrase(b, grammar, &mut out);
        }
        ParseTree::After(a, b) => {
            emit_phrase(b, grammar, &mut out);
            emit_phrase(a, grammar, &mut out);
        }
    }
    ActionSequence(out)
}

fn emit_phrase(p: &Phrase, grammar: &Grammar, out: &mut Vec<String>) {
    let mut once = Vec::new();
    let verb: &[String] = match p.verb {
        Verb::Turn => &[],
        Verb::Primitive(i) => std::slice::from_ref(&grammar.primitive_meanings()[i]),
    };
    let turn = |d: usize| grammar.direction_meanings()[d].clone();
    match p.modifier {
        Modifier::Plain => once.extend_from_slice(verb),
        Modifier::Toward(d) => {
            once.push(turn(d));
            once.extend_from_slice(verb);
        }
        Modifier::Opposite(d) => {
            once.push(turn(d));
            once.push(turn(d));
            once.extend_from_slice(verb);
        }
        Modifier::Around(d) => {
            for _ in 0..4 {
                once.push(turn(d));
                once.extend_from_slice(verb);
            }
        }
    }
    for _ in 0..p.repeat.count() {
        out.extend_from_slice(&once);
    }
}

/// Parse then interpret.
pub fn execute(instruction: &Instruction, grammar: &Grammar) -> Result<ActionSequence, ScanError> {
    Ok(interpret(&parse(instruction, grammar)?, grammar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(s: &str) -> String {
        execute(&Instruction::parse_str(s), &Grammar::canonical()).unwrap().to_string()
    }

    #[test]
    fn bare_primitive_is_single_node() {
        let tree = parse(&Instruction::parse_str("jump"), &Grammar::canonical()).unwrap();
        assert_eq!(
            tree,
            ParseTree::Single(Phrase { verb: Verb::Primitive(0), modifier: Modifier::Plain, repeat: Repeat::Once })
        );
    }

    #[test]
    fn conjunction_tree_shape() {
        let tree = parse(&Instruction::parse_str("jump opposite left and walk thrice"), &Grammar::canonical()).unwrap();
        assert_eq!(
            tree,
            ParseTree::And(
                Phrase { verb: Verb::Primitive(0), modifier: Modifier::Opposite(0), repeat: Repeat::Once },
                Phrase { verb: Verb::Primitive(2), modifier: Modifier::Plain, repeat: Repeat::Thrice },
            )
        );
    }

    #[test]
    fn dangling_conjunction_reports_position() {
        let e = parse(&Instruction::parse_str("jump and"), &Grammar::canonical()).unwrap_err();
        assert!(matches!(e, ScanError::Parse { position: 2, .. }), "{e:?}");
    }

    #[test]
    fn malformed_inputs_rejected() {
        let g = Grammar::canonical();
        for (s, pos) in [
            ("turn", 1),
            ("turn twice", 1),
            ("jump around", 2),
            ("jump opposite twice", 2),
            ("left", 0),
            ("jump twice twice", 2),
            ("jump and walk and run", 3),
            ("walk after", 2),
            ("fly", 0),
        ] {
            match parse(&Instruction::parse_str(s), &g) {
                Err(ScanError::Parse { position, .. }) => assert_eq!(position, pos, "{s}"),
                other => panic!("{s}: {other:?}"),
            }
        }
        assert!(parse(&Instruction(vec![]), &g).is_err());
    }

    #[test]
    fn semantics_of_each_rule_family() {
        assert_eq!(run("walk"), "WALK");
        assert_eq!(run("turn left twice"), "LTURN LTURN");
        assert_eq!(run("turn right"), "RTURN");
        assert_eq!(run("turn opposite right"), "RTURN RTURN");
        assert_eq!(run("turn around left"), "LTURN LTURN LTURN LTURN");
        assert_eq!(run("look right thrice"), "RTURN LOOK RTURN LOOK RTURN LOOK");
        assert_eq!(run("run twice after jump"), "JUMP RUN RUN");
        assert_eq!(run("walk twice and look right"), "WALK WALK RTURN LOOK");
    }
}
