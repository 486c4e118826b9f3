use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::words;
use crate::corpus::QuestionInstance;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const QUESTION: &str = "[Question]";
pub const TITLE: &str = "[Title]";
pub const CONTENT: &str = "[Content]";
pub const ANSWER: &str = "[answer]";

pub fn fact_marker(k: usize) -> String {
    format!("[f{k}]")
}

pub fn hop_title_marker(h: usize) -> String {
    format!("[title-{h}]")
}

pub fn hop_facts_marker(h: usize) -> String {
    format!("[facts-{h}]")
}

pub fn hop_question_marker(h: usize) -> String {
    format!("[question-{h}]")
}

pub fn hop_answer_marker(h: usize) -> String {
    format!("[answer-{h}]")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Cap on content (non-marker) tokens.
    pub max_content_tokens: usize,
    /// Content tokens seen fewer times are left out.
    pub min_count: usize,
    /// Fact markers `[f1]..[fK]`.
    pub fact_cap: usize,
    /// Hop markers `[title-1]..[title-H]` and friends.
    pub hop_cap: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            max_content_tokens: 8000,
            min_count: 1,
            fact_cap: 16,
            hop_cap: 4,
        }
    }
}

/// Token <-> id table. Ids `0..4` are PAD, UNK, BOS, EOS; markers follow;
/// content tokens come last, by descending frequency then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    markers: usize,
    fact_cap: usize,
    hop_cap: usize,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const BOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;

    fn marker_list(fact_cap: usize, hop_cap: usize) -> Vec<String> {
        let mut m: Vec<String> = [PAD, UNK, BOS, EOS, QUESTION, TITLE, CONTENT, ANSWER]
            .iter()
            .map(|s| s.to_string())
            .collect();
        m.extend((1..=fact_cap).map(fact_marker));
        for h in 1..=hop_cap {
            m.push(hop_title_marker(h));
            m.push(hop_facts_marker(h));
            m.push(hop_question_marker(h));
            m.push(hop_answer_marker(h));
        }
        m
    }

    /// Builds from raw texts. Bracketed markers found in the texts are not
    /// counted as content.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, cfg: &VocabConfig) -> Self {
        let markers = Self::marker_list(cfg.fact_cap, cfg.hop_cap);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut content: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= cfg.min_count && !markers.contains(w))
            .collect();
        // BTreeMap order is lexicographic and the sort is stable
        content.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        content.truncate(cfg.max_content_tokens);
        let n_markers = markers.len();
        let tokens: Vec<String> = markers
            .into_iter()
            .chain(content.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens_parts(tokens, n_markers, cfg.fact_cap, cfg.hop_cap)
    }

    /// Every text a model reads or writes for these instances.
    pub fn from_instances(instances: &[QuestionInstance], cfg: &VocabConfig) -> Self {
        let mut texts: Vec<&str> = Vec::new();
        for inst in instances {
            texts.push(&inst.question);
            texts.push(&inst.answer);
            for p in &inst.passages {
                texts.push(&p.title);
                texts.extend(p.sentences.iter().map(String::as_str));
            }
            for d in inst.decomposition.iter().flatten() {
                texts.push(&d.question);
                texts.push(&d.answer);
            }
        }
        Self::build(texts, cfg)
    }

    fn from_tokens_parts(tokens: Vec<String>, markers: usize, fact_cap: usize, hop_cap: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            markers,
            fact_cap,
            hop_cap,
        }
    }

    /// Rebuilds from a stored token list (checkpoint round trip).
    pub fn from_tokens(tokens: Vec<String>, fact_cap: usize, hop_cap: usize) -> Option<Self> {
        let markers = Self::marker_list(fact_cap, hop_cap);
        if tokens.len() < markers.len() || tokens[..markers.len()] != markers[..] {
            return None;
        }
        let n = markers.len();
        Some(Self::from_tokens_parts(tokens, n, fact_cap, hop_cap))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn fact_cap(&self) -> usize {
        self.fact_cap
    }

    pub fn hop_cap(&self) -> usize {
        self.hop_cap
    }

    pub fn is_marker(&self, id: usize) -> bool {
        id < self.markers
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text).iter().map(|w| self.id(w)).collect()
    }

    /// Whitespace-joins tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != Self::EOS_ID)
            .filter(|&&i| i != Self::PAD_ID && i != Self::BOS_ID)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Fraction of corpus tokens that map to a known id.
    pub fn coverage<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> f64 {
        let (mut known, mut total) = (0usize, 0usize);
        for t in texts {
            for w in words(t) {
                total += 1;
                known += usize::from(self.index.contains_key(&w));
            }
        }
        if total == 0 {
            1.0
        } else {
            known as f64 / total as f64
        }
    }
}
