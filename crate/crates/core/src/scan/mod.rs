//! The SCAN instruction language: grammar, parser, interpreter, corpus
//! enumeration and the standard train/test splits.

mod corpus;
mod grammar;
mod parse;

pub use corpus::{
    canonical_corpus, enumerate_corpus, make_split, parse_pair_line, read_pairs, remap, substitute, write_pairs,
    Assignment, SplitSpec,
};
pub(crate) use corpus::remap_with;
pub use grammar::*;
pub use parse::{execute, interpret, parse, Modifier, ParseTree, Phrase, Repeat, Verb};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScanError {
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown split `{0}` (expected add-jump, around-right or length)")]
    UnknownSplit(String),
    #[error("symbol `{0}` has no meaning in the assignment")]
    UnmappedSymbol(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}
