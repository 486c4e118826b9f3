//! Answer and support metrics, faithfulness rates, per-hop breakdowns and
//! disconnected-reasoning probes.

mod dire;
mod faithfulness;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionInstance;
use crate::seqcodec::{parse_path, ParsedPath, PathVariant};

pub use dire::{
    build_dire_probes, dire_scores, parse_probe_id, probe_id, probes_with_both_supports, DireBlock,
};
pub use faithfulness::{answer_in, faithfulness, Faithfulness};
pub use metrics::{
    answer_scores, gold_support_set, model_answer_scores, normalize_answer, predicted_support_set,
    set_scores, support_scores, title_key, SupportItem,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A generated output with its lenient parse.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub output: String,
    pub parsed: ParsedPath,
}

impl Prediction {
    pub fn new(id: impl Into<String>, output: impl Into<String>, variant: PathVariant) -> Self {
        let output = output.into();
        let parsed = parse_path(&output, variant);
        Self {
            id: id.into(),
            output,
            parsed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    output: String,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), EvalError> {
    let mut text = String::new();
    for p in preds {
        let rec = PredictionRecord {
            id: p.id.clone(),
            output: p.output.clone(),
        };
        text.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_predictions(path: &Path, variant: PathVariant) -> Result<Vec<Prediction>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: PredictionRecord = serde_json::from_str(l).map_err(|e| EvalError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(Prediction::new(rec.id, rec.output, variant))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    /// Size of the gold support set (facts, or titles without fact labels).
    pub supports: usize,
    pub answer_em: f64,
    pub answer_f1: f64,
    pub support_em: f64,
    pub support_f1: f64,
}

/// Scores every instance; a missing prediction scores zero everywhere.
pub fn score_examples(preds: &[Prediction], dataset: &[QuestionInstance]) -> Vec<ExampleScore> {
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    dataset
        .iter()
        .map(|inst| {
            let supports = gold_support_set(inst, true).len();
            let (answer, support) = match by_id.get(inst.id.as_str()) {
                Some(p) => (
                    model_answer_scores(&p.parsed.path.final_answer, &inst.answer),
                    support_scores(&p.parsed.path, inst),
                ),
                None => ((0.0, 0.0), (0.0, 0.0)),
            };
            ExampleScore {
                id: inst.id.clone(),
                supports,
                answer_em: answer.0,
                answer_f1: answer.1,
                support_em: support.0,
                support_f1: support.1,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopRow {
    pub supports: usize,
    pub count: usize,
    pub answer_em: f64,
    pub answer_f1: f64,
    pub support_em: f64,
    pub support_f1: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean metrics grouped by gold support-set size, ascending.
pub fn hop_breakdown(scores: &[ExampleScore]) -> Vec<HopRow> {
    let mut groups: BTreeMap<usize, Vec<&ExampleScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.supports).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(supports, g)| HopRow {
            supports,
            count: g.len(),
            answer_em: mean(g.iter().map(|s| s.answer_em)),
            answer_f1: mean(g.iter().map(|s| s.answer_f1)),
            support_em: mean(g.iter().map(|s| s.support_em)),
            support_f1: mean(g.iter().map(|s| s.support_f1)),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub missing_predictions: usize,
    /// Outputs whose parse reported at least one diagnostic.
    pub malformed_outputs: usize,
    pub answer_em: f64,
    pub answer_f1: f64,
    pub support_em: f64,
    pub support_f1: f64,
    pub faithfulness: Faithfulness,
    pub hops: Vec<HopRow>,
    pub dire: Option<DireBlock>,
}

/// Aggregates are means of per-example scores.
pub fn evaluate(preds: &[Prediction], dataset: &[QuestionInstance]) -> EvalReport {
    let scores = score_examples(preds, dataset);
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let pairs: Vec<_> = dataset
        .iter()
        .filter_map(|i| by_id.get(i.id.as_str()).map(|p| (&p.parsed.path, i)))
        .collect();
    EvalReport {
        count: dataset.len(),
        missing_predictions: dataset.len() - pairs.len(),
        malformed_outputs: dataset
            .iter()
            .filter_map(|i| by_id.get(i.id.as_str()))
            .filter(|p| !p.parsed.diagnostics.is_empty())
            .count(),
        answer_em: mean(scores.iter().map(|s| s.answer_em)),
        answer_f1: mean(scores.iter().map(|s| s.answer_f1)),
        support_em: mean(scores.iter().map(|s| s.support_em)),
        support_f1: mean(scores.iter().map(|s| s.support_f1)),
        faithfulness: faithfulness(&pairs),
        hops: hop_breakdown(&scores),
        dire: None,
    }
}

/// `group,category,value` rows for plotting faithfulness, per-hop and DiRe
/// bars.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("group,category,value\n");
    let mut row = |g: &str, c: &str, v: Option<f64>| {
        if let Some(v) = v {
            let _ = writeln!(out, "{g},{c},{v}");
        }
    };
    for (c, v) in [
        ("answer_em", report.answer_em),
        ("answer_f1", report.answer_f1),
        ("support_em", report.support_em),
        ("support_f1", report.support_f1),
    ] {
        row("overall", c, Some(v));
    }
    let f = &report.faithfulness;
    for (c, v) in [
        ("pred_answer_in_pred_titles", f.pred_answer_in_pred_titles),
        ("pred_answer_in_pred_facts", f.pred_answer_in_pred_facts),
        ("gold_answer_in_pred_titles", f.gold_answer_in_pred_titles),
        ("gold_answer_in_pred_facts", f.gold_answer_in_pred_facts),
        ("pred_answer_in_gold_titles", f.pred_answer_in_gold_titles),
        ("pred_answer_in_gold_facts", f.pred_answer_in_gold_facts),
    ] {
        row("faithfulness", c, v);
    }
    for h in &report.hops {
        let g = format!("supports_{}", h.supports);
        row(&g, "count", Some(h.count as f64));
        row(&g, "answer_em", Some(h.answer_em));
        row(&g, "answer_f1", Some(h.answer_f1));
        row(&g, "support_em", Some(h.support_em));
        row(&g, "support_f1", Some(h.support_f1));
    }
    if let Some(d) = &report.dire {
        row("dire", "answer", Some(d.answer));
        row("dire", "supp_p", Some(d.supp_p));
        row("dire", "supp_s", d.supp_s);
        row("dire", "ans_supp_p", Some(d.ans_supp_p));
        row("dire", "ans_supp_s", d.ans_supp_s);
    }
    out
}
