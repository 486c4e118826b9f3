use std::fmt;

use serde::{Deserialize, Serialize};

use super::vocab::{
    fact_marker, hop_answer_marker, hop_facts_marker, hop_question_marker, hop_title_marker, ANSWER,
};
use super::CodecError;
use crate::corpus::QuestionInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathVariant {
    /// Titles and fact indices per hop.
    Hotpot,
    /// Decomposed sub-questions only.
    Da,
    /// Supporting titles only.
    Sa,
    /// Titles with intermediate answers.
    Sia,
    /// Sub-questions, titles and intermediate answers.
    Dsia,
}

impl PathVariant {
    pub const ALL: [PathVariant; 5] = [
        PathVariant::Hotpot,
        PathVariant::Da,
        PathVariant::Sa,
        PathVariant::Sia,
        PathVariant::Dsia,
    ];

    fn has_titles(self) -> bool {
        !matches!(self, PathVariant::Da)
    }

    pub fn has_facts(self) -> bool {
        matches!(self, PathVariant::Hotpot)
    }

    fn has_questions(self) -> bool {
        matches!(self, PathVariant::Da | PathVariant::Dsia)
    }

    fn has_intermediate(self) -> bool {
        matches!(self, PathVariant::Sia | PathVariant::Dsia)
    }
}

impl std::str::FromStr for PathVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpot" => Ok(PathVariant::Hotpot),
            "da" => Ok(PathVariant::Da),
            "sa" => Ok(PathVariant::Sa),
            "sia" => Ok(PathVariant::Sia),
            "dsia" => Ok(PathVariant::Dsia),
            other => Err(format!("unknown path variant {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub title: Option<String>,
    /// 1-based fact indices (HotpotQA variant).
    pub facts: Vec<usize>,
    pub sub_question: Option<String>,
    pub intermediate_answer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub variant: PathVariant,
    pub hops: Vec<Hop>,
    pub final_answer: String,
}

impl ReasoningPath {
    /// Titles of all hops, in order.
    pub fn titles(&self) -> Vec<&str> {
        self.hops.iter().filter_map(|h| h.title.as_deref()).collect()
    }

    /// The gold path of an instance. Intermediate answers come from the
    /// decomposition and are omitted on the last hop, whose answer is the
    /// final one.
    pub fn gold(inst: &QuestionInstance, variant: PathVariant) -> Self {
        let titles = inst.support_titles();
        let steps = inst.decomposition.as_deref().unwrap_or(&[]);
        let n = if variant == PathVariant::Da {
            steps.len()
        } else {
            titles.len()
        };
        let hops = (0..n)
            .map(|h| {
                let mut hop = Hop::default();
                if variant.has_titles() {
                    hop.title = Some(titles[h].clone());
                }
                if variant.has_facts() {
                    let mut f = inst.support_facts(&titles[h]);
                    f.sort_unstable();
                    f.dedup();
                    hop.facts = f;
                }
                if variant.has_questions() {
                    hop.sub_question = steps.get(h).map(|s| s.question.clone());
                }
                if variant.has_intermediate() && h + 1 < n {
                    hop.intermediate_answer = steps.get(h).map(|s| s.answer.clone());
                }
                hop
            })
            .collect();
        Self {
            variant,
            hops,
            final_answer: inst.answer.clone(),
        }
    }
}

fn is_marker_name(name: &str) -> bool {
    let numbered = |prefix: &str| {
        name.strip_prefix(prefix)
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    };
    matches!(name, "answer" | "Question" | "Title" | "Content")
        || numbered("f")
        || numbered("title-")
        || numbered("facts-")
        || numbered("question-")
        || numbered("answer-")
}

fn check_field(text: &str, what: &str, hop: usize) -> Result<(), CodecError> {
    let bad = |reason: &str| {
        Err(CodecError::InvalidPath(format!(
            "hop {hop} {what} {text:?} {reason}"
        )))
    };
    if text.trim().is_empty() {
        return bad("is empty");
    }
    if text.trim() != text {
        return bad("has surrounding whitespace");
    }
    if !split_markers(text).iter().all(|s| matches!(s, Segment::Text(_))) {
        return bad("contains a marker");
    }
    Ok(())
}

/// Canonical single-space-separated marker string.
pub fn linearize_path(path: &ReasoningPath, fact_cap: usize, hop_cap: usize) -> Result<String, CodecError> {
    let v = path.variant;
    if path.hops.len() > hop_cap {
        return Err(CodecError::InvalidPath(format!(
            "{} hops exceed the cap of {hop_cap}",
            path.hops.len()
        )));
    }
    if v != PathVariant::Da && path.hops.is_empty() {
        return Err(CodecError::InvalidPath("path has no hops".into()));
    }
    check_field(&path.final_answer, "final answer", 0)?;
    let mut parts: Vec<String> = Vec::new();
    for (i, hop) in path.hops.iter().enumerate() {
        let h = i + 1;
        let mismatch = |field: &str| {
            Err(CodecError::InvalidPath(format!(
                "{v:?} path cannot carry {field} (hop {h})"
            )))
        };
        if !v.has_titles() && hop.title.is_some() {
            return mismatch("titles");
        }
        if !v.has_facts() && !hop.facts.is_empty() {
            return mismatch("fact indices");
        }
        if !v.has_questions() && hop.sub_question.is_some() {
            return mismatch("sub-questions");
        }
        if !v.has_intermediate() && hop.intermediate_answer.is_some() {
            return mismatch("intermediate answers");
        }
        if v.has_questions() {
            let q = hop.sub_question.as_deref().ok_or_else(|| {
                CodecError::InvalidPath(format!("hop {h} lacks a sub-question"))
            })?;
            check_field(q, "sub-question", h)?;
            parts.push(hop_question_marker(h));
            parts.push(q.to_string());
        }
        if v.has_titles() {
            let t = hop
                .title
                .as_deref()
                .ok_or_else(|| CodecError::InvalidPath(format!("hop {h} lacks a title")))?;
            check_field(t, "title", h)?;
            parts.push(hop_title_marker(h));
            parts.push(t.to_string());
        }
        if v.has_facts() {
            parts.push(hop_facts_marker(h));
            for &f in &hop.facts {
                if f == 0 || f > fact_cap {
                    return Err(CodecError::InvalidPath(format!(
                        "hop {h} fact {f} outside 1..={fact_cap}"
                    )));
                }
                parts.push(fact_marker(f));
            }
        }
        if let Some(ia) = &hop.intermediate_answer {
            check_field(ia, "intermediate answer", h)?;
            parts.push(hop_answer_marker(h));
            parts.push(ia.clone());
        }
    }
    parts.push(ANSWER.to_string());
    parts.push(path.final_answer.clone());
    Ok(parts.join(" "))
}

/// Something recoverable but wrong about a generated path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    NoAnswerMarker,
    NoHops,
    DuplicateMarker(String),
    OutOfOrder(String),
    MissingHop(usize),
    MissingField { hop: usize, field: &'static str },
    UnexpectedMarker(String),
    StrayText(String),
    TrailingAfterAnswer,
    BadFactMarker(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoAnswerMarker => write!(f, "no [answer] marker"),
            Diagnostic::NoHops => write!(f, "no hops"),
            Diagnostic::DuplicateMarker(m) => write!(f, "duplicate marker {m}"),
            Diagnostic::OutOfOrder(m) => write!(f, "marker {m} out of order"),
            Diagnostic::MissingHop(h) => write!(f, "hop {h} missing"),
            Diagnostic::MissingField { hop, field } => write!(f, "hop {hop} missing {field}"),
            Diagnostic::UnexpectedMarker(m) => write!(f, "unexpected marker {m}"),
            Diagnostic::StrayText(t) => write!(f, "stray text {t:?}"),
            Diagnostic::TrailingAfterAnswer => write!(f, "markers after the final answer"),
            Diagnostic::BadFactMarker(m) => write!(f, "fact marker {m} outside a facts list"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParsedPath {
    pub path: ReasoningPath,
    pub diagnostics: Vec<Diagnostic>,
    /// False when no `[answer]` marker was found; the answer is then empty.
    pub answer_found: bool,
}

#[derive(Debug, PartialEq)]
enum Segment<'a> {
    Marker(&'a str),
    Text(&'a str),
}

/// Splits on recognised markers; text segments are trimmed and dropped when
/// empty.
fn split_markers(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut last = 0;
    fn push_text<'a>(out: &mut Vec<Segment<'a>>, s: &'a str) {
        let t = s.trim();
        if !t.is_empty() {
            out.push(Segment::Text(t));
        }
    }
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(close) = text[i + 1..].find(']') {
                let name = &text[i + 1..i + 1 + close];
                if is_marker_name(name) {
                    push_text(&mut out, &text[last..i]);
                    out.push(Segment::Marker(&text[i..i + close + 2]));
                    i += close + 2;
                    last = i;
                    continue;
                }
            }
        }
        i += 1;
    }
    push_text(&mut out, &text[last..]);
    out
}

enum Field {
    Title,
    Facts,
    Question,
    Answer,
}

fn hop_marker(m: &str) -> Option<(Field, usize)> {
    let inner = &m[1..m.len() - 1];
    let (field, num) = inner.split_once('-')?;
    let field = match field {
        "title" => Field::Title,
        "facts" => Field::Facts,
        "question" => Field::Question,
        "answer" => Field::Answer,
        _ => return None,
    };
    Some((field, num.parse().ok().filter(|&n| n >= 1)?))
}

/// Lenient parser for model output. The final answer is the text after the
/// last `[answer]` up to the next marker; hop structure is recovered as far
/// as possible and every irregularity is reported.
pub fn parse_path(text: &str, variant: PathVariant) -> ParsedPath {
    let segs = split_markers(text);
    let mut diags = Vec::new();
    let answer_at = segs.iter().rposition(|s| *s == Segment::Marker(ANSWER));
    let (body, final_answer) = match answer_at {
        Some(a) => {
            let answer = match segs.get(a + 1) {
                Some(Segment::Text(t)) => t.to_string(),
                _ => String::new(),
            };
            let tail_start = a + 1 + usize::from(!answer.is_empty());
            if tail_start < segs.len() {
                diags.push(Diagnostic::TrailingAfterAnswer);
            }
            (&segs[..a], answer)
        }
        None => {
            diags.push(Diagnostic::NoAnswerMarker);
            (&segs[..], String::new())
        }
    };

    let mut hops: Vec<Hop> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    let mut max_hop = 0;
    // where the next text segment goes: (hop index, field)
    let mut slot: Option<(usize, Field)> = None;
    for seg in body {
        match *seg {
            Segment::Text(t) => {
                let target = slot.take();
                let stored = match target {
                    Some((h, Field::Title)) => set_once(&mut hops[h].title, t),
                    Some((h, Field::Question)) => set_once(&mut hops[h].sub_question, t),
                    Some((h, Field::Answer)) => set_once(&mut hops[h].intermediate_answer, t),
                    Some((_, Field::Facts)) | None => false,
                };
                if !stored {
                    diags.push(Diagnostic::StrayText(t.to_string()));
                }
            }
            Segment::Marker(m) => {
                let fact = m
                    .strip_prefix("[f")
                    .and_then(|r| r.strip_suffix(']'))
                    .and_then(|k| k.parse::<usize>().ok());
                if let Some(k) = fact {
                    match &slot {
                        Some((h, Field::Facts)) if k >= 1 => hops[*h].facts.push(k),
                        _ => diags.push(Diagnostic::BadFactMarker(m.to_string())),
                    }
                    continue;
                }
                slot = None;
                let Some((field, h)) = hop_marker(m) else {
                    diags.push(Diagnostic::UnexpectedMarker(m.to_string()));
                    continue;
                };
                let allowed = match field {
                    Field::Title => variant.has_titles(),
                    Field::Facts => variant.has_facts(),
                    Field::Question => variant.has_questions(),
                    Field::Answer => variant.has_intermediate(),
                };
                if !allowed {
                    diags.push(Diagnostic::UnexpectedMarker(m.to_string()));
                    continue;
                }
                if seen.iter().any(|s| s == m) {
                    diags.push(Diagnostic::DuplicateMarker(m.to_string()));
                    continue;
                }
                seen.push(m.to_string());
                if h < max_hop {
                    diags.push(Diagnostic::OutOfOrder(m.to_string()));
                }
                max_hop = max_hop.max(h);
                if hops.len() < h {
                    hops.resize_with(h, Hop::default);
                }
                slot = Some((h - 1, field));
            }
        }
    }

    if hops.is_empty() {
        diags.push(Diagnostic::NoHops);
    }
    for (i, hop) in hops.iter().enumerate() {
        let h = i + 1;
        let touched = seen.iter().any(|m| {
            hop_marker(m).is_some_and(|(_, n)| n == h)
        });
        if !touched {
            diags.push(Diagnostic::MissingHop(h));
            continue;
        }
        if variant.has_titles() && hop.title.is_none() {
            diags.push(Diagnostic::MissingField { hop: h, field: "title" });
        }
        if variant.has_questions() && hop.sub_question.is_none() {
            diags.push(Diagnostic::MissingField { hop: h, field: "sub-question" });
        }
        if variant.has_facts() && !seen.contains(&hop_facts_marker(h)) {
            diags.push(Diagnostic::MissingField { hop: h, field: "facts" });
        }
    }

    ParsedPath {
        path: ReasoningPath {
            variant,
            hops,
            final_answer,
        },
        diagnostics: diags,
        answer_found: answer_at.is_some(),
    }
}

fn set_once(field: &mut Option<String>, value: &str) -> bool {
    if field.is_some() {
        return false;
    }
    *field = Some(value.to_string());
    true
}
