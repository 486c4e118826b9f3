use serde::{Deserialize, Serialize};

use super::metrics::{normalize_answer, title_key};
use crate::corpus::{QuestionInstance, QuestionType};
use crate::seqcodec::{token_form, ReasoningPath};

/// How often answers occur inside passages or facts, over bridge questions.
/// Fact-level rates only count instances with fact annotations; a rate is
/// `None` when nothing is eligible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub eligible: usize,
    pub fact_eligible: usize,
    pub pred_answer_in_pred_titles: Option<f64>,
    pub pred_answer_in_pred_facts: Option<f64>,
    pub gold_answer_in_pred_titles: Option<f64>,
    pub gold_answer_in_pred_facts: Option<f64>,
    pub pred_answer_in_gold_titles: Option<f64>,
    pub pred_answer_in_gold_facts: Option<f64>,
}

/// Whole-token containment of the normalised answer in normalised text.
pub fn answer_in(answer: &str, texts: &[&str]) -> bool {
    let a = normalize_answer(&token_form(answer));
    if a.is_empty() {
        return false;
    }
    let needle = format!(" {a} ");
    texts
        .iter()
        .any(|t| format!(" {} ", normalize_answer(&token_form(t))).contains(&needle))
}

fn title_texts(inst: &QuestionInstance, titles: &[String]) -> Vec<String> {
    let keys: Vec<String> = titles.iter().map(|t| title_key(t)).collect();
    inst.passages
        .iter()
        .filter(|p| keys.contains(&title_key(&p.title)))
        .map(|p| p.text())
        .collect()
}

fn fact_texts<'a>(inst: &'a QuestionInstance, facts: &[(String, usize)]) -> Vec<&'a str> {
    let mut out = Vec::new();
    for (title, f) in facts {
        let key = title_key(title);
        for p in inst.passages.iter().filter(|p| title_key(&p.title) == key) {
            out.extend(p.fact(*f));
        }
    }
    out
}

pub fn faithfulness(items: &[(&ReasoningPath, &QuestionInstance)]) -> Faithfulness {
    let mut counts = [0usize; 6];
    let (mut eligible, mut fact_eligible) = (0, 0);
    for (path, inst) in items {
        if inst.question_type != QuestionType::Bridge {
            continue;
        }
        eligible += 1;
        let pred_titles: Vec<String> = path.titles().iter().map(|t| t.to_string()).collect();
        let pred_facts: Vec<(String, usize)> = path
            .hops
            .iter()
            .filter_map(|h| h.title.as_ref().map(|t| (t, &h.facts)))
            .flat_map(|(t, fs)| fs.iter().map(move |&f| (t.clone(), f)))
            .collect();
        let gold_facts: Vec<(String, usize)> = inst
            .gold_supports
            .iter()
            .filter_map(|s| s.fact.map(|f| (s.title.clone(), f)))
            .collect();
        let pt = title_texts(inst, &pred_titles);
        let pt: Vec<&str> = pt.iter().map(String::as_str).collect();
        let gt = title_texts(inst, &inst.support_titles());
        let gt: Vec<&str> = gt.iter().map(String::as_str).collect();
        let pred = path.final_answer.as_str();
        let gold = inst.answer.as_str();
        counts[0] += answer_in(pred, &pt) as usize;
        counts[2] += answer_in(gold, &pt) as usize;
        counts[4] += answer_in(pred, &gt) as usize;
        if inst.has_fact_supports() {
            fact_eligible += 1;
            let pf = fact_texts(inst, &pred_facts);
            let gf = fact_texts(inst, &gold_facts);
            counts[1] += answer_in(pred, &pf) as usize;
            counts[3] += answer_in(gold, &pf) as usize;
            counts[5] += answer_in(pred, &gf) as usize;
        }
    }
    let rate = |c: usize, n: usize| (n > 0).then(|| c as f64 / n as f64);
    Faithfulness {
        eligible,
        fact_eligible,
        pred_answer_in_pred_titles: rate(counts[0], eligible),
        pred_answer_in_pred_facts: rate(counts[1], fact_eligible),
        gold_answer_in_pred_titles: rate(counts[2], eligible),
        gold_answer_in_pred_facts: rate(counts[3], fact_eligible),
        pred_answer_in_gold_titles: rate(counts[4], eligible),
        pred_answer_in_gold_facts: rate(counts[5], fact_eligible),
    }
}
