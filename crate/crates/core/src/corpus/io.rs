//! Dataset files: a JSON array of HotpotQA/Musique-style records plus an
//! optional entity sidecar keyed by instance id.
//!
//! Record `supporting_facts` use the HotpotQA convention of 0-based sentence
//! positions; in memory they become 1-based fact indices.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    validate, CorpusError, DecompositionStep, EntitySpan, Passage, QuestionInstance, QuestionType,
    SupportRef,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Supports are `[title, sentence_idx]` pairs.
    Hotpot,
    /// Supports may be bare titles; decompositions are read when present.
    Musique,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpot" | "hotpotqa" => Ok(DatasetFormat::Hotpot),
            "musique" => Ok(DatasetFormat::Musique),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SupportJson {
    Fact(String, usize),
    Title(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct DecompJson {
    question: String,
    answer: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordJson {
    id: String,
    question: String,
    answer: String,
    context: Vec<(String, Vec<String>)>,
    supporting_facts: Vec<SupportJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decomposition: Option<Vec<DecompJson>>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    question_type: Option<QuestionType>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpanJson {
    passage_idx: usize,
    sentence_idx: usize,
    start: usize,
    end: usize,
    target_title: String,
}

/// `data.json` -> `data.entities.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.entities.json"))
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, e: serde_json::Error) -> CorpusError {
    CorpusError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Loads a dataset and, when `<stem>.entities.json` exists beside it, its
/// entity annotations. Instances keep file order and are validated.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<QuestionInstance>, CorpusError> {
    let side = sidecar_path(path);
    let side = side.exists().then_some(side);
    load_dataset_with_sidecar(path, side.as_deref(), format)
}

pub fn load_dataset_with_sidecar(
    path: &Path,
    sidecar: Option<&Path>,
    format: DatasetFormat,
) -> Result<Vec<QuestionInstance>, CorpusError> {
    let records: Vec<RecordJson> =
        serde_json::from_str(&read(path)?).map_err(|e| parse_err(path, e))?;
    let mut spans: BTreeMap<String, Vec<SpanJson>> = match sidecar {
        Some(sp) => serde_json::from_str(&read(sp)?).map_err(|e| parse_err(sp, e))?,
        None => BTreeMap::new(),
    };
    let side_name = sidecar.map(|p| p.display().to_string()).unwrap_or_default();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let mut passages: Vec<Passage> = rec
            .context
            .into_iter()
            .map(|(title, sentences)| Passage::new(title, sentences))
            .collect();
        for s in spans.remove(&rec.id).unwrap_or_default() {
            let Some(p) = passages.get_mut(s.passage_idx) else {
                return Err(CorpusError::Sidecar {
                    path: side_name,
                    message: format!(
                        "instance {} references missing passage {}",
                        rec.id, s.passage_idx
                    ),
                });
            };
            if s.sentence_idx >= p.sentences.len() {
                return Err(CorpusError::Sidecar {
                    path: side_name,
                    message: format!(
                        "instance {} references missing sentence {} of passage {}",
                        rec.id, s.sentence_idx, s.passage_idx
                    ),
                });
            }
            p.entity_spans.push(EntitySpan {
                sentence: s.sentence_idx,
                start: s.start,
                end: s.end,
                target_title: s.target_title,
            });
        }
        let mut supports = Vec::with_capacity(rec.supporting_facts.len());
        for s in rec.supporting_facts {
            match (s, format) {
                (SupportJson::Fact(title, idx), _) => supports.push(SupportRef {
                    title,
                    fact: Some(idx + 1),
                }),
                (SupportJson::Title(title), DatasetFormat::Musique) => {
                    supports.push(SupportRef { title, fact: None })
                }
                (SupportJson::Title(title), DatasetFormat::Hotpot) => {
                    return Err(CorpusError::Parse {
                        path: path.display().to_string(),
                        line: 0,
                        column: 0,
                        message: format!(
                            "instance {}: support {title:?} lacks a sentence index (hotpot format)",
                            rec.id
                        ),
                    })
                }
            }
        }
        let mut inst = QuestionInstance::new(rec.id, rec.question, rec.answer, passages, supports)
            .with_type(rec.question_type.unwrap_or_default());
        if let Some(steps) = rec.decomposition {
            inst = inst.with_decomposition(
                steps
                    .into_iter()
                    .map(|d| DecompositionStep {
                        question: d.question,
                        answer: d.answer,
                    })
                    .collect(),
            );
        }
        let report = validate(&inst);
        if !report.is_valid() {
            return Err(CorpusError::Validation {
                id: inst.id,
                report,
            });
        }
        out.push(inst);
    }
    if let Some(orphan) = spans.keys().next() {
        return Err(CorpusError::Sidecar {
            path: side_name,
            message: format!("annotations for unknown instance {orphan}"),
        });
    }
    Ok(out)
}

/// Writes `instances` to `path` and their entity spans to the sidecar path.
/// Output is byte-identical for identical input.
pub fn save_dataset(path: &Path, instances: &[QuestionInstance]) -> Result<(), CorpusError> {
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| CorpusError::Io { path: p, source }
    };
    let mut body = String::from("[\n");
    let mut side: BTreeMap<&str, Vec<SpanJson>> = BTreeMap::new();
    for (n, inst) in instances.iter().enumerate() {
        let rec = RecordJson {
            id: inst.id.clone(),
            question: inst.question.clone(),
            answer: inst.answer.clone(),
            context: inst
                .passages
                .iter()
                .map(|p| (p.title.clone(), p.sentences.clone()))
                .collect(),
            supporting_facts: inst
                .gold_supports
                .iter()
                .map(|s| match s.fact {
                    Some(f) => SupportJson::Fact(s.title.clone(), f - 1),
                    None => SupportJson::Title(s.title.clone()),
                })
                .collect(),
            decomposition: inst.decomposition.as_ref().map(|steps| {
                steps
                    .iter()
                    .map(|d| DecompJson {
                        question: d.question.clone(),
                        answer: d.answer.clone(),
                    })
                    .collect()
            }),
            question_type: Some(inst.question_type),
        };
        body.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        body.push_str(if n + 1 < instances.len() { ",\n" } else { "\n" });
        let spans: Vec<SpanJson> = inst
            .passages
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| {
                p.entity_spans.iter().map(move |s| SpanJson {
                    passage_idx: pi,
                    sentence_idx: s.sentence,
                    start: s.start,
                    end: s.end,
                    target_title: s.target_title.clone(),
                })
            })
            .collect();
        if !spans.is_empty() {
            side.insert(&inst.id, spans);
        }
    }
    body.push_str("]\n");
    fs::write(path, body).map_err(io_err(path))?;
    let sp = sidecar_path(path);
    let side_body = serde_json::to_string_pretty(&side).expect("sidecar serializes") + "\n";
    fs::write(&sp, side_body).map_err(io_err(&sp))?;
    Ok(())
}
