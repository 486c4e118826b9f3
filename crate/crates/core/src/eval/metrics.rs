use std::collections::{BTreeSet, HashMap};

use crate::corpus::QuestionInstance;
use crate::graphbuild::normalize_title;
use crate::seqcodec::{token_form, ReasoningPath};

fn strip_punctuation(text: &str) -> String {
    text.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect()
}

/// SQuAD answer normalisation: lowercase, drop punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    strip_punctuation(text)
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exact match after full normalisation, and bag-of-tokens F1 over the
/// lowercased, punctuation-free tokens with articles kept, so that
/// F1("the cat sat", "cat sat down") = 2/3. An exact match has F1 1. A side
/// that normalises to nothing scores (1, 1) against another empty side and
/// (0, 0) otherwise.
pub fn answer_scores(pred: &str, gold: &str) -> (f64, f64) {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    if p.is_empty() || g.is_empty() {
        let both = p.is_empty() && g.is_empty();
        return if both { (1.0, 1.0) } else { (0.0, 0.0) };
    }
    if p == g {
        return (1.0, 1.0);
    }
    let (ps, gs) = (strip_punctuation(pred), strip_punctuation(gold));
    let pt: Vec<&str> = ps.split_whitespace().collect();
    let gt: Vec<&str> = gs.split_whitespace().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return (0.0, 0.0);
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    (0.0, 2.0 * precision * recall / (precision + recall))
}

/// Answer scores with both sides in the word-level token form the model
/// emits, so detokenisation differences do not count as errors.
pub fn model_answer_scores(pred: &str, gold: &str) -> (f64, f64) {
    answer_scores(&token_form(pred), &token_form(gold))
}

/// Title comparison key shared by gold annotations and generated paths.
pub fn title_key(title: &str) -> String {
    normalize_title(&token_form(title))
}

/// One element of a support set: a title, plus a fact index at fact level.
pub type SupportItem = (String, Option<usize>);

/// Fact-level when the instance annotates facts and `fact_level` is set,
/// title-level otherwise.
pub fn gold_support_set(inst: &QuestionInstance, fact_level: bool) -> BTreeSet<SupportItem> {
    let facts = fact_level && inst.has_fact_supports();
    inst.gold_supports
        .iter()
        .map(|s| (title_key(&s.title), if facts { s.fact } else { None }))
        .collect()
}

pub fn predicted_support_set(path: &ReasoningPath, fact_level: bool) -> BTreeSet<SupportItem> {
    let mut out = BTreeSet::new();
    for hop in &path.hops {
        let Some(title) = hop.title.as_deref() else {
            continue;
        };
        let key = title_key(title);
        if fact_level {
            out.extend(hop.facts.iter().map(|&f| (key.clone(), Some(f))));
        } else {
            out.insert((key, None));
        }
    }
    out
}

/// Set exact match and F1; an empty prediction scores zero.
pub fn set_scores<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> (f64, f64) {
    if pred.is_empty() || gold.is_empty() {
        let both = pred.is_empty() && gold.is_empty();
        return if both { (1.0, 1.0) } else { (0.0, 0.0) };
    }
    let common = pred.intersection(gold).count();
    let em = if pred == gold { 1.0 } else { 0.0 };
    if common == 0 {
        return (em, 0.0);
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    (em, 2.0 * p * r / (p + r))
}

pub fn support_scores(path: &ReasoningPath, inst: &QuestionInstance) -> (f64, f64) {
    // title-only path variants are scored at title level
    let fact_level = inst.has_fact_supports() && path.variant.has_facts();
    let gold = gold_support_set(inst, fact_level);
    let pred = predicted_support_set(path, fact_level);
    if pred.is_empty() {
        return (0.0, 0.0);
    }
    set_scores(&pred, &gold)
}
