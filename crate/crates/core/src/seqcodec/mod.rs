//! Tokenization, per-passage input assembly with node-span tracking, and
//! reasoning-path linearization and parsing.

mod assemble;
mod path;
mod tokenize;
mod vocab;

pub use assemble::{assemble_all, assemble_input, EncodedSequence, TokenSpan};
pub use path::{
    linearize_path, parse_path, Diagnostic, Hop, ParsedPath, PathVariant, ReasoningPath,
};
pub use tokenize::{token_form, tokenize, words, Token};
pub use vocab::{
    fact_marker, hop_answer_marker, hop_facts_marker, hop_question_marker, hop_title_marker,
    VocabConfig, Vocabulary, ANSWER, BOS, CONTENT, EOS, PAD, QUESTION, TITLE, UNK,
};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("header of {header} tokens does not fit max_len {max_len}")]
    HeaderTooLong { header: usize, max_len: usize },
    #[error("passage {0} does not exist")]
    NoSuchPassage(usize),
    #[error("invalid reasoning path: {0}")]
    InvalidPath(String),
}
