use std::fmt;

use serde::Serialize;

use super::QuestionInstance;
use crate::graphbuild::normalize_title;

/// One violated invariant of a [`QuestionInstance`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    NoPassages,
    EmptySentences { passage: usize },
    SpanSentenceOutOfRange { passage: usize, span: usize, sentence: usize },
    SpanOutOfBounds { passage: usize, span: usize, end: usize, sentence_len: usize },
    SpanInverted { passage: usize, span: usize },
    EmptySpanTarget { passage: usize, span: usize },
    UnknownSupportTitle { title: String },
    FactOutOfRange { title: String, fact: usize },
    HopCountMismatch { stored: usize, derived: usize },
    TooFewHops { hops: usize },
    DistractorCountMismatch { stored: usize, derived: usize },
    TooManyDistractors { distractors: usize, passages: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPassages => write!(f, "passage list is empty"),
            Violation::EmptySentences { passage } => {
                write!(f, "passage {passage} has no sentences")
            }
            Violation::SpanSentenceOutOfRange { passage, span, sentence } => write!(
                f,
                "entity span {span} of passage {passage} points at missing sentence {sentence}"
            ),
            Violation::SpanOutOfBounds { passage, span, end, sentence_len } => write!(
                f,
                "entity span {span} of passage {passage} ends at {end} past sentence length {sentence_len}"
            ),
            Violation::SpanInverted { passage, span } => {
                write!(f, "entity span {span} of passage {passage} has start > end")
            }
            Violation::EmptySpanTarget { passage, span } => {
                write!(f, "entity span {span} of passage {passage} has an empty target title")
            }
            Violation::UnknownSupportTitle { title } => {
                write!(f, "gold support title {title:?} matches no passage")
            }
            Violation::FactOutOfRange { title, fact } => {
                write!(f, "gold fact {fact} of {title:?} is out of range")
            }
            Violation::HopCountMismatch { stored, derived } => {
                write!(f, "hop_count {stored} but {derived} distinct support passages")
            }
            Violation::TooFewHops { hops } => write!(f, "hop_count {hops} is below 2"),
            Violation::DistractorCountMismatch { stored, derived } => {
                write!(f, "num_distractors {stored} but {derived} passages are unsupported")
            }
            Violation::TooManyDistractors { distractors, passages } => {
                write!(f, "{distractors} distractors among {passages} passages")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Lists every violated invariant; empty when the instance is valid.
pub fn validate(inst: &QuestionInstance) -> ValidationReport {
    let mut v = Vec::new();
    if inst.passages.is_empty() {
        v.push(Violation::NoPassages);
    }
    for (pi, p) in inst.passages.iter().enumerate() {
        if p.sentences.is_empty() {
            v.push(Violation::EmptySentences { passage: pi });
        }
        for (si, span) in p.entity_spans.iter().enumerate() {
            if span.target_title.trim().is_empty() {
                v.push(Violation::EmptySpanTarget { passage: pi, span: si });
            }
            let Some(sentence) = p.sentences.get(span.sentence) else {
                v.push(Violation::SpanSentenceOutOfRange {
                    passage: pi,
                    span: si,
                    sentence: span.sentence,
                });
                continue;
            };
            if span.start > span.end {
                v.push(Violation::SpanInverted { passage: pi, span: si });
            }
            let len = sentence.chars().count();
            if span.end > len {
                v.push(Violation::SpanOutOfBounds {
                    passage: pi,
                    span: si,
                    end: span.end,
                    sentence_len: len,
                });
            }
        }
    }
    for s in &inst.gold_supports {
        let matches = inst.passages_titled(&s.title);
        if matches.is_empty() {
            v.push(Violation::UnknownSupportTitle {
                title: s.title.clone(),
            });
            continue;
        }
        if let Some(fact) = s.fact {
            let fits = matches
                .iter()
                .any(|&i| fact >= 1 && fact <= inst.passages[i].sentences.len());
            if !fits {
                v.push(Violation::FactOutOfRange {
                    title: s.title.clone(),
                    fact,
                });
            }
        }
    }
    let derived_hops = inst.support_titles().len();
    if inst.hop_count != derived_hops {
        v.push(Violation::HopCountMismatch {
            stored: inst.hop_count,
            derived: derived_hops,
        });
    }
    if inst.hop_count < 2 {
        v.push(Violation::TooFewHops {
            hops: inst.hop_count,
        });
    }
    let keys: Vec<String> = inst
        .support_titles()
        .iter()
        .map(|t| normalize_title(t))
        .collect();
    let derived_m = inst
        .passages
        .iter()
        .filter(|p| !keys.contains(&normalize_title(&p.title)))
        .count();
    if inst.num_distractors != derived_m {
        v.push(Violation::DistractorCountMismatch {
            stored: inst.num_distractors,
            derived: derived_m,
        });
    }
    if !inst.passages.is_empty() && inst.num_distractors >= inst.passages.len() {
        v.push(Violation::TooManyDistractors {
            distractors: inst.num_distractors,
            passages: inst.passages.len(),
        });
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, Passage, SupportRef};

    fn two_hop() -> QuestionInstance {
        let mut a = Passage::new("Alpha", vec!["Alpha knows Beta.".into()]);
        a.entity_spans.push(EntitySpan {
            sentence: 0,
            start: 12,
            end: 16,
            target_title: "Beta".into(),
        });
        let b = Passage::new("Beta", vec!["Beta likes tea.".into()]);
        let c = Passage::new("Gamma", vec!["Gamma is far.".into()]);
        QuestionInstance::new(
            "q1",
            "What does the friend of Alpha like?",
            "tea",
            vec![a, b, c],
            vec![
                SupportRef { title: "Alpha".into(), fact: Some(1) },
                SupportRef { title: "Beta".into(), fact: Some(1) },
            ],
        )
    }

    #[test]
    fn valid_instance_has_empty_report() {
        assert!(validate(&two_hop()).is_valid());
    }

    #[test]
    fn unknown_support_title_is_one_violation() {
        let mut inst = two_hop();
        inst.gold_supports[1].title = "X".into();
        let report = validate(&inst);
        let unknown: Vec<_> = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::UnknownSupportTitle { .. }))
            .collect();
        assert_eq!(unknown.len(), 1);
    }

    #[test]
    fn span_past_sentence_end_is_one_violation() {
        let mut inst = two_hop();
        let len = inst.passages[0].sentences[0].chars().count();
        inst.passages[0].entity_spans[0].end = len + 1;
        let report = validate(&inst);
        assert_eq!(
            report.violations,
            vec![Violation::SpanOutOfBounds {
                passage: 0,
                span: 0,
                end: len + 1,
                sentence_len: len
            }]
        );
    }

    #[test]
    fn empty_passage_list_is_reported() {
        let mut inst = two_hop();
        inst.passages.clear();
        let report = validate(&inst);
        assert!(report.violations.contains(&Violation::NoPassages));
    }
}
