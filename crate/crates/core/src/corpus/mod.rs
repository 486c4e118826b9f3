//! Question instances, dataset files and the synthetic multi-hop generator.

mod io;
mod synthetic;
mod validate;

use serde::{Deserialize, Serialize};

use crate::graphbuild::normalize_title;

pub use io::{
    load_dataset, load_dataset_with_sidecar, save_dataset, sidecar_path, DatasetFormat,
};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use validate::{validate, ValidationReport, Violation};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("instance {id}: {report}")]
    Validation { id: String, report: ValidationReport },
    #[error("entity sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
    #[error("synthetic config: {0}")]
    Config(String),
}

/// An annotated entity mention inside one sentence of a passage.
///
/// `sentence` is the 0-based sentence position; `start..end` is a half-open
/// range of character (not byte) offsets within that sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub target_title: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub title: String,
    /// Sentence `k` (0-based) carries fact index `k + 1`.
    pub sentences: Vec<String>,
    pub entity_spans: Vec<EntitySpan>,
}

impl Passage {
    pub fn new(title: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            title: title.into(),
            sentences,
            entity_spans: Vec::new(),
        }
    }

    /// Sentence for a 1-based fact index.
    pub fn fact(&self, fact: usize) -> Option<&str> {
        fact.checked_sub(1)
            .and_then(|i| self.sentences.get(i))
            .map(String::as_str)
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    /// Surface string of an annotated span.
    pub fn span_text(&self, span: &EntitySpan) -> Option<String> {
        let sentence = self.sentences.get(span.sentence)?;
        if span.start > span.end {
            return None;
        }
        let n = sentence.chars().count();
        if span.end > n {
            return None;
        }
        Some(
            sentence
                .chars()
                .skip(span.start)
                .take(span.end - span.start)
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    #[default]
    Bridge,
    Comparison,
}

/// A gold support: a passage title, optionally narrowed to one 1-based fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportRef {
    pub title: String,
    pub fact: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub passages: Vec<Passage>,
    pub gold_supports: Vec<SupportRef>,
    pub decomposition: Option<Vec<DecompositionStep>>,
    pub question_type: QuestionType,
    /// Passages not referenced by any gold support.
    pub num_distractors: usize,
    /// Distinct gold support passages.
    pub hop_count: usize,
}

impl QuestionInstance {
    /// Builds an instance, deriving `hop_count` and `num_distractors` from
    /// the supports.
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
        passages: Vec<Passage>,
        gold_supports: Vec<SupportRef>,
    ) -> Self {
        let mut inst = Self {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            passages,
            gold_supports,
            decomposition: None,
            question_type: QuestionType::Bridge,
            num_distractors: 0,
            hop_count: 0,
        };
        inst.refresh_counts();
        inst
    }

    pub fn with_decomposition(mut self, steps: Vec<DecompositionStep>) -> Self {
        self.decomposition = Some(steps);
        self
    }

    pub fn with_type(mut self, question_type: QuestionType) -> Self {
        self.question_type = question_type;
        self
    }

    /// Recomputes the derived counts after passages or supports change.
    pub fn refresh_counts(&mut self) {
        let titles = self.support_titles();
        self.hop_count = titles.len();
        let keys: Vec<String> = titles.iter().map(|t| normalize_title(t)).collect();
        self.num_distractors = self
            .passages
            .iter()
            .filter(|p| !keys.contains(&normalize_title(&p.title)))
            .count();
    }

    /// Distinct support titles in first-appearance order (the hop order).
    pub fn support_titles(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        let mut out = Vec::new();
        for s in &self.gold_supports {
            let key = normalize_title(&s.title);
            if !seen.contains(&key) {
                seen.push(key);
                out.push(s.title.clone());
            }
        }
        out
    }

    /// Gold facts of one support title, in annotation order.
    pub fn support_facts(&self, title: &str) -> Vec<usize> {
        let key = normalize_title(title);
        self.gold_supports
            .iter()
            .filter(|s| normalize_title(&s.title) == key)
            .filter_map(|s| s.fact)
            .collect()
    }

    /// True when every support carries a fact index.
    pub fn has_fact_supports(&self) -> bool {
        !self.gold_supports.is_empty() && self.gold_supports.iter().all(|s| s.fact.is_some())
    }

    /// Indices of passages whose normalized title equals `title`'s.
    pub fn passages_titled(&self, title: &str) -> Vec<usize> {
        let key = normalize_title(title);
        self.passages
            .iter()
            .enumerate()
            .filter(|(_, p)| normalize_title(&p.title) == key)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_counts_follow_supports() {
        let passages = vec![
            Passage::new("A", vec!["a one.".into()]),
            Passage::new("B", vec!["b one.".into(), "b two.".into()]),
            Passage::new("C", vec!["c one.".into()]),
        ];
        let supports = vec![
            SupportRef { title: "A".into(), fact: Some(1) },
            SupportRef { title: "b".into(), fact: Some(2) },
            SupportRef { title: "B".into(), fact: Some(1) },
        ];
        let inst = QuestionInstance::new("q", "?", "x", passages, supports);
        assert_eq!(inst.hop_count, 2);
        assert_eq!(inst.num_distractors, 1);
        assert_eq!(inst.support_titles(), vec!["A".to_string(), "b".to_string()]);
        assert_eq!(inst.support_facts("B"), vec![2, 1]);
    }

    #[test]
    fn span_text_uses_char_offsets() {
        let mut p = Passage::new("T", vec!["Zoë met David Noughton.".into()]);
        p.entity_spans.push(EntitySpan {
            sentence: 0,
            start: 8,
            end: 22,
            target_title: "David Walsh Noughton".into(),
        });
        assert_eq!(p.span_text(&p.entity_spans[0]).as_deref(), Some("David Noughton"));
    }
}
