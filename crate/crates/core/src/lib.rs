//! Meta sequence-to-sequence learning.
//!
//! A seq2seq learner whose encoder messages are routed through a key-value
//! memory built from a support set of example pairs, meta-trained across
//! episodes of freshly re-assigned SCAN-style problems.

pub mod episodes;
pub mod model;
pub mod numerics;
pub mod scan;
pub mod training;
pub mod cli;
