//! Seeded generator of k-hop bridge questions over pseudo-word entities.
//!
//! Every passage is a handful of template sentences:
//! relation facts `The {rel} of {Subject} is {Object} .` (the object carries
//! an entity span), attribute facts `The {attr} of {Subject} is {value} .`,
//! and, for planted shortcuts, a leak sentence in the first-hop passage that
//! states the answer outright. Each distractor states the question's
//! attribute with a different value, so the final hop can only be found by
//! following the bridge entities from the question's subject.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    validate, CorpusError, DecompositionStep, EntitySpan, Passage, QuestionInstance, QuestionType,
    SupportRef,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub instances: usize,
    /// Hop counts drawn uniformly per instance.
    pub hop_counts: Vec<usize>,
    /// Passages per question N; distractors are `N - hops`.
    pub passages: usize,
    pub sentences_per_passage: usize,
    /// Number of distinct lowercase value words.
    pub vocab_size: usize,
    /// Number of distinct entity names (passage titles).
    pub entity_pool: usize,
    pub relations: usize,
    pub attributes: usize,
    pub shortcut_rate: f64,
    pub seed: u64,
    /// Seeds the word pools; keep it fixed across splits so they share
    /// entities and values.
    pub pool_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            hop_counts: vec![2],
            passages: 6,
            sentences_per_passage: 3,
            vocab_size: 400,
            entity_pool: 300,
            relations: 6,
            attributes: 6,
            shortcut_rate: 0.0,
            seed: 0,
            pool_seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn check(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if !(0.0..=1.0).contains(&self.shortcut_rate) {
            return bad(format!("shortcut_rate {} outside [0, 1]", self.shortcut_rate));
        }
        if self.hop_counts.is_empty() {
            return bad("hop_counts is empty".into());
        }
        let max_hops = *self.hop_counts.iter().max().unwrap();
        if let Some(h) = self.hop_counts.iter().find(|&&h| h < 2) {
            return bad(format!("hop count {h} is below 2"));
        }
        if self.passages < max_hops {
            return bad(format!(
                "passages {} cannot hold a {max_hops}-hop chain",
                self.passages
            ));
        }
        if self.entity_pool < self.passages {
            return bad(format!(
                "entity_pool {} is smaller than passages {}; titles must be distinct",
                self.entity_pool, self.passages
            ));
        }
        if self.sentences_per_passage < 2 {
            return bad("sentences_per_passage must be at least 2".into());
        }
        if self.relations < max_hops {
            return bad(format!(
                "relations {} cannot give distinct relations to a {max_hops}-hop chain",
                self.relations
            ));
        }
        if self.attributes < 2 {
            return bad("attributes must be at least 2".into());
        }
        let values_needed = self.passages * self.sentences_per_passage + 1;
        if self.vocab_size < values_needed {
            return bad(format!(
                "vocab_size {} is below the {values_needed} distinct values one instance may need",
                self.vocab_size
            ));
        }
        Ok(())
    }
}

const TEMPLATE_WORDS: &[&str] = &["the", "of", "is", "what", "often", "linked", "with"];

/// Disjoint pools of five-letter consonant-vowel words. Equal length keeps
/// one word from ever being a substring of another token.
struct Pools {
    entities: Vec<String>,
    values: Vec<String>,
    relations: Vec<String>,
    attributes: Vec<String>,
}

impl Pools {
    fn new(cfg: &SyntheticConfig) -> Self {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.pool_seed);
        let mut seen: BTreeSet<String> = TEMPLATE_WORDS.iter().map(|s| s.to_string()).collect();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let w: String = [C, V, C, V, C]
                .iter()
                .map(|set| *set.choose(rng).unwrap() as char)
                .collect();
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let capital = |w: String| {
            let mut c = w.chars();
            let first = c.next().unwrap().to_ascii_uppercase();
            std::iter::once(first).chain(c).collect::<String>()
        };
        let surnames: Vec<String> = (0..12).map(|_| capital(word(&mut rng))).collect();
        let entities = (0..cfg.entity_pool)
            .map(|_| {
                let given = capital(word(&mut rng));
                if rng.random_bool(0.3) {
                    format!("{given} {}", surnames.choose(&mut rng).unwrap())
                } else {
                    given
                }
            })
            .collect::<Vec<_>>();
        let relations = (0..cfg.relations).map(|_| word(&mut rng)).collect();
        let attributes = (0..cfg.attributes).map(|_| word(&mut rng)).collect();
        let values = (0..cfg.vocab_size).map(|_| word(&mut rng)).collect();
        let mut entities = entities;
        entities.sort();
        entities.dedup();
        assert_eq!(entities.len(), cfg.entity_pool, "entity names collide");
        Self {
            entities,
            values,
            relations,
            attributes,
        }
    }
}

/// Sentence text with an optional (start, end, target title) mention.
type Sentence = (String, Option<(usize, usize, String)>);

struct Builder {
    title: String,
    sentences: Vec<Sentence>,
}

impl Builder {
    fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            sentences: Vec::new(),
        }
    }

    fn relation(&mut self, rel: &str, object: &str) -> usize {
        let prefix = format!("The {rel} of {} is ", self.title);
        let start = prefix.chars().count();
        let end = start + object.chars().count();
        self.sentences.push((
            format!("{prefix}{object} ."),
            Some((start, end, object.to_string())),
        ));
        self.sentences.len() - 1
    }

    fn attribute(&mut self, attr: &str, value: &str) -> usize {
        self.sentences
            .push((format!("The {attr} of {} is {value} .", self.title), None));
        self.sentences.len() - 1
    }

    fn leak(&mut self, attr: &str, value: &str) -> usize {
        self.sentences.push((
            format!("{} is often linked with the {attr} {value} .", self.title),
            None,
        ));
        self.sentences.len() - 1
    }

    /// Shuffles sentence order; returns the passage and the new position of
    /// each original sentence.
    fn finish(self, rng: &mut ChaCha8Rng) -> (Passage, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.sentences.len()).collect();
        order.shuffle(rng);
        let mut position = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut passage = Passage::new(self.title, Vec::new());
        for &old in &order {
            let (text, span) = &self.sentences[old];
            if let Some((start, end, target)) = span {
                passage.entity_spans.push(EntitySpan {
                    sentence: passage.sentences.len(),
                    start: *start,
                    end: *end,
                    target_title: target.clone(),
                });
            }
            passage.sentences.push(text.clone());
        }
        (passage, position)
    }
}

fn question_text(attr: &str, rels: &[&str], subject: &str) -> String {
    let mut q = format!("What is the {attr}");
    for r in rels.iter().rev() {
        q.push_str(&format!(" of the {r}"));
    }
    q.push_str(&format!(" of {subject} ?"));
    q
}

fn decomposition(attr: &str, rels: &[&str], chain: &[String], answer: &str) -> Vec<DecompositionStep> {
    let mut steps = Vec::with_capacity(rels.len() + 1);
    for (h, r) in rels.iter().enumerate() {
        let subject = if h == 0 {
            chain[0].clone()
        } else {
            format!("#{h}")
        };
        steps.push(DecompositionStep {
            question: format!("What is the {r} of {subject} ?"),
            answer: chain[h + 1].clone(),
        });
    }
    steps.push(DecompositionStep {
        question: format!("What is the {attr} of #{} ?", rels.len()),
        answer: answer.to_string(),
    });
    steps
}

/// Generates `cfg.instances` validated instances; identical configs give
/// identical output.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<QuestionInstance>, CorpusError> {
    cfg.check()?;
    let pools = Pools::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.instances);
    for idx in 0..cfg.instances {
        let hops = *cfg.hop_counts.choose(&mut rng).unwrap();
        let inst = generate_one(cfg, &pools, &mut rng, format!("syn-{}-{idx:05}", cfg.seed), hops);
        let report = validate(&inst);
        if !report.is_valid() {
            return Err(CorpusError::Validation {
                id: inst.id,
                report,
            });
        }
        out.push(inst);
    }
    Ok(out)
}

fn generate_one(
    cfg: &SyntheticConfig,
    pools: &Pools,
    rng: &mut ChaCha8Rng,
    id: String,
    hops: usize,
) -> QuestionInstance {
    let n = cfg.passages;
    let fillers = cfg.sentences_per_passage - 1;
    // titles: chain first, then distractors; extra pool entities serve as
    // relation objects without a passage of their own
    let picked: Vec<&String> = pools
        .entities
        .choose_multiple(rng, (n + 2 * fillers).min(pools.entities.len()))
        .collect();
    let chain: Vec<String> = picked[..hops].iter().map(|s| s.to_string()).collect();
    let distractors: Vec<String> = picked[hops..n].iter().map(|s| s.to_string()).collect();
    let outsiders: Vec<String> = picked[n..].iter().map(|s| s.to_string()).collect();

    let rels: Vec<&str> = pools
        .relations
        .choose_multiple(rng, hops - 1)
        .map(String::as_str)
        .collect();
    let attr = pools.attributes.choose(rng).unwrap().as_str();
    let other_attrs: Vec<&str> = pools
        .attributes
        .iter()
        .map(String::as_str)
        .filter(|a| *a != attr)
        .collect();
    let mut values = pools
        .values
        .choose_multiple(rng, n * cfg.sentences_per_passage + 1)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .into_iter();
    let answer = values.next().unwrap().to_string();
    let shortcut = rng.random_bool(cfg.shortcut_rate);

    // relation objects for filler sentences: other distractor titles (so the
    // graph carries links that lead nowhere useful) or passage-less entities
    let objects_for = |own: &str| -> Vec<String> {
        distractors
            .iter()
            .chain(&outsiders)
            .filter(|e| e.as_str() != own)
            .cloned()
            .collect()
    };
    let add_fillers = |b: &mut Builder,
                       count: usize,
                       banned_rels: &[&str],
                       values: &mut dyn Iterator<Item = &str>,
                       rng: &mut ChaCha8Rng| {
            let objects = objects_for(&b.title.clone());
            for _ in 0..count {
                let rel_choices: Vec<&str> = pools
                    .relations
                    .iter()
                    .map(String::as_str)
                    .filter(|r| !banned_rels.contains(r))
                    .collect();
                if !objects.is_empty() && !rel_choices.is_empty() && rng.random_bool(0.5) {
                    let r = rel_choices.choose(rng).unwrap();
                    b.relation(r, objects.choose(rng).unwrap());
                } else {
                    let a = other_attrs.choose(rng).unwrap();
                    b.attribute(a, values.next().unwrap());
                }
            }
        };

    let mut passages = Vec::with_capacity(n);
    let mut supports = Vec::with_capacity(hops);
    for h in 0..hops {
        let mut b = Builder::new(&chain[h]);
        let key = if h + 1 < hops {
            b.relation(rels[h], &chain[h + 1])
        } else {
            b.attribute(attr, &answer)
        };
        let extra = if h == 0 && shortcut {
            b.leak(attr, &answer);
            fillers.saturating_sub(1)
        } else {
            fillers
        };
        let banned: Vec<&str> = if h + 1 < hops { vec![rels[h]] } else { vec![] };
        add_fillers(&mut b, extra, &banned, &mut values, rng);
        let (p, position) = b.finish(rng);
        supports.push(SupportRef {
            title: chain[h].clone(),
            fact: Some(position[key] + 1),
        });
        passages.push(p);
    }
    for d in &distractors {
        let mut b = Builder::new(d);
        b.attribute(attr, values.next().unwrap());
        add_fillers(&mut b, fillers, &[], &mut values, rng);
        passages.push(b.finish(rng).0);
    }
    passages.shuffle(rng);

    QuestionInstance::new(
        id,
        question_text(attr, &rels, &chain[0]),
        answer.clone(),
        passages,
        supports,
    )
    .with_decomposition(decomposition(attr, &rels, &chain, &answer))
    .with_type(QuestionType::Bridge)
}
