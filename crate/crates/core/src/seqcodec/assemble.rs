use std::collections::BTreeMap;

use serde::Serialize;

use super::tokenize::tokenize;
use super::vocab::{fact_marker, Vocabulary, CONTENT, QUESTION, TITLE};
use super::CodecError;
use crate::corpus::QuestionInstance;
use crate::graphbuild::{LocalGraph, NodeLocation};

/// Inclusive token range `[start, end]` inside one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// Token ids of one passage input plus the token range of every graph node
/// of that passage that survived truncation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EncodedSequence {
    pub passage_idx: usize,
    pub token_ids: Vec<usize>,
    pub spans: BTreeMap<usize, TokenSpan>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Builds `[Question] q [Title] t [Content] [f1] s1 [f2] s2 ...`, cut at
/// `max_len` tokens. Sentences past the vocabulary's fact cap are dropped.
pub fn assemble_input(
    inst: &QuestionInstance,
    passage_idx: usize,
    graph: &LocalGraph,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedSequence, CodecError> {
    let passage = inst
        .passages
        .get(passage_idx)
        .ok_or(CodecError::NoSuchPassage(passage_idx))?;
    let mut ids = vec![vocab.id(QUESTION)];
    ids.extend(vocab.encode(&inst.question));
    ids.push(vocab.id(TITLE));
    let title_start = ids.len();
    ids.extend(vocab.encode(&passage.title));
    // an empty title maps onto its marker
    let title_span = if ids.len() > title_start {
        TokenSpan {
            start: title_start,
            end: ids.len() - 1,
        }
    } else {
        TokenSpan {
            start: title_start - 1,
            end: title_start - 1,
        }
    };
    ids.push(vocab.id(CONTENT));
    if ids.len() > max_len {
        return Err(CodecError::HeaderTooLong {
            header: ids.len(),
            max_len,
        });
    }

    // token index range of each sentence's tokens, with char offsets
    let mut sentence_tokens = Vec::with_capacity(passage.sentences.len());
    for (k, sentence) in passage.sentences.iter().enumerate().take(vocab.fact_cap()) {
        ids.push(vocab.id(&fact_marker(k + 1)));
        let toks = tokenize(sentence);
        let first = ids.len();
        ids.extend(toks.iter().map(|t| vocab.id(&t.text)));
        sentence_tokens.push((first, toks));
    }
    ids.truncate(max_len);

    let mut spans = BTreeMap::new();
    for node in graph.nodes_of(passage_idx) {
        let span = match graph.nodes[node].location {
            NodeLocation::Title => Some(title_span),
            NodeLocation::Entity {
                sentence,
                start,
                end,
                ..
            } => sentence_tokens.get(sentence).and_then(|(first, toks)| {
                let hit: Vec<usize> = toks
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.start < end && t.end > start)
                    .map(|(i, _)| first + i)
                    .collect();
                Some(TokenSpan {
                    start: *hit.first()?,
                    end: *hit.last()?,
                })
            }),
        };
        if let Some(s) = span.filter(|s| s.end < ids.len()) {
            spans.insert(node, s);
        }
    }
    Ok(EncodedSequence {
        passage_idx,
        token_ids: ids,
        spans,
    })
}

/// All passages of an instance, in passage order.
pub fn assemble_all(
    inst: &QuestionInstance,
    graph: &LocalGraph,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<EncodedSequence>, CodecError> {
    (0..inst.passages.len())
        .map(|i| assemble_input(inst, i, graph, vocab, max_len))
        .collect()
}
