use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{model_answer_scores, predicted_support_set, set_scores, title_key};
use super::Prediction;
use crate::corpus::QuestionInstance;

const PROBE_SUFFIX: &str = "__probe";

pub fn probe_id(original: &str, j: usize) -> String {
    format!("{original}{PROBE_SUFFIX}{j}")
}

/// Splits a probe id into the original id and the probe number.
pub fn parse_probe_id(id: &str) -> Option<(&str, usize)> {
    let (orig, j) = id.rsplit_once(PROBE_SUFFIX)?;
    Some((orig, j.parse().ok()?))
}

/// Two probes per two-support instance: probe `j` keeps gold passage `j`,
/// drops the other one and keeps every distractor. Gold supports are
/// restricted to the kept passage. Other instances are skipped.
pub fn build_dire_probes(dataset: &[QuestionInstance]) -> Vec<QuestionInstance> {
    let mut out = Vec::with_capacity(dataset.len() * 2);
    for inst in dataset {
        let titles = inst.support_titles();
        if titles.len() != 2 {
            log::info!(
                "probe: skipping {} with {} support passages",
                inst.id,
                titles.len()
            );
            continue;
        }
        for j in 0..2 {
            let keep = title_key(&titles[j]);
            let drop = title_key(&titles[1 - j]);
            let mut probe = QuestionInstance::new(
                probe_id(&inst.id, j + 1),
                inst.question.clone(),
                inst.answer.clone(),
                inst.passages
                    .iter()
                    .filter(|p| title_key(&p.title) != drop)
                    .cloned()
                    .collect(),
                inst.gold_supports
                    .iter()
                    .filter(|s| title_key(&s.title) == keep)
                    .cloned()
                    .collect(),
            );
            probe.question_type = inst.question_type;
            out.push(probe);
        }
    }
    out
}

/// Share of original questions whose two probes both succeed, per metric.
/// Fact-level columns are `None` without fact annotations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DireBlock {
    pub questions: usize,
    pub answer: f64,
    pub supp_p: f64,
    pub supp_s: Option<f64>,
    pub ans_supp_p: f64,
    pub ans_supp_s: Option<f64>,
}

#[derive(Clone, Copy, Default)]
struct ProbeOutcome {
    answer: bool,
    supp_p: bool,
    supp_s: bool,
}

fn outcome(pred: Option<&Prediction>, probe: &QuestionInstance) -> ProbeOutcome {
    let Some(pred) = pred else {
        return ProbeOutcome::default();
    };
    let path = &pred.parsed.path;
    let answer = model_answer_scores(&path.final_answer, &probe.answer).0 == 1.0;
    let gold_titles: BTreeSet<_> = probe
        .gold_supports
        .iter()
        .map(|s| (title_key(&s.title), None))
        .collect();
    let supp_p = set_scores(&predicted_support_set(path, false), &gold_titles).0 == 1.0;
    let gold_facts: BTreeSet<_> = probe
        .gold_supports
        .iter()
        .map(|s| (title_key(&s.title), s.fact))
        .collect();
    let pred_facts = predicted_support_set(path, true);
    let supp_s = !pred_facts.is_empty() && set_scores(&pred_facts, &gold_facts).0 == 1.0;
    ProbeOutcome {
        answer,
        supp_p,
        supp_s,
    }
}

/// Scores probe predictions; a missing prediction is a failed probe.
pub fn dire_scores(preds: &[Prediction], probes: &[QuestionInstance]) -> DireBlock {
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut groups: BTreeMap<&str, Vec<(ProbeOutcome, bool)>> = BTreeMap::new();
    for probe in probes {
        let Some((orig, _)) = parse_probe_id(&probe.id) else {
            log::warn!("probe set contains non-probe id {}", probe.id);
            continue;
        };
        let o = outcome(by_id.get(probe.id.as_str()).copied(), probe);
        groups
            .entry(orig)
            .or_default()
            .push((o, probe.has_fact_supports()));
    }
    let pairs: Vec<&Vec<(ProbeOutcome, bool)>> = groups.values().filter(|g| g.len() == 2).collect();
    let n = pairs.len();
    let facts = n > 0 && pairs.iter().all(|g| g.iter().all(|(_, f)| *f));
    let rate = |f: &dyn Fn(&ProbeOutcome) -> bool| {
        if n == 0 {
            return 0.0;
        }
        pairs.iter().filter(|g| g.iter().all(|(o, _)| f(o))).count() as f64 / n as f64
    };
    DireBlock {
        questions: n,
        answer: rate(&|o| o.answer),
        supp_p: rate(&|o| o.supp_p),
        supp_s: facts.then(|| rate(&|o| o.supp_s)),
        ans_supp_p: rate(&|o| o.answer && o.supp_p),
        ans_supp_s: facts.then(|| rate(&|o| o.answer && o.supp_s)),
    }
}

/// Probe contexts that still hold both gold passages of their original
/// question; empty for a well-formed probe set.
pub fn probes_with_both_supports(
    probes: &[QuestionInstance],
    originals: &[QuestionInstance],
) -> Vec<String> {
    let by_id: BTreeMap<&str, &QuestionInstance> =
        originals.iter().map(|i| (i.id.as_str(), i)).collect();
    probes
        .iter()
        .filter(|p| {
            let Some(orig) = parse_probe_id(&p.id).and_then(|(o, _)| by_id.get(o)) else {
                return false;
            };
            orig.support_titles().iter().all(|t| {
                let key = title_key(t);
                p.passages.iter().any(|q| title_key(&q.title) == key)
            })
        })
        .map(|p| p.id.clone())
        .collect()
}
