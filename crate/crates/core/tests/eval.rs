use proptest::prelude::*;
use seqgraph::corpus::{
    generate_synthetic, Passage, QuestionInstance, QuestionType, SupportRef, SyntheticConfig,
};
use seqgraph::eval::{
    answer_scores, build_dire_probes, dire_scores, evaluate, faithfulness, hop_breakdown,
    probes_with_both_supports, read_predictions, report_csv, score_examples, support_scores,
    write_predictions, Prediction,
};
use seqgraph::seqcodec::{linearize_path, Hop, PathVariant, ReasoningPath};

fn synthetic(n: usize, hops: Vec<usize>, shortcut_rate: f64, seed: u64) -> Vec<QuestionInstance> {
    generate_synthetic(&SyntheticConfig {
        instances: n,
        hop_counts: hops,
        passages: 6,
        shortcut_rate,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn gold_prediction(inst: &QuestionInstance) -> Prediction {
    let path = ReasoningPath::gold(inst, PathVariant::Hotpot);
    Prediction::new(
        inst.id.clone(),
        linearize_path(&path, 16, 4).unwrap(),
        PathVariant::Hotpot,
    )
}

fn answer_only(id: &str, answer: &str) -> Prediction {
    Prediction::new(id, format!("[answer] {answer}"), PathVariant::Hotpot)
}

fn path(hops: &[(&str, &[usize])], answer: &str) -> ReasoningPath {
    ReasoningPath {
        variant: PathVariant::Hotpot,
        hops: hops
            .iter()
            .map(|(t, f)| Hop {
                title: Some(t.to_string()),
                facts: f.to_vec(),
                ..Hop::default()
            })
            .collect(),
        final_answer: answer.to_string(),
    }
}

#[test]
fn support_examples() {
    let inst = QuestionInstance::new(
        "q",
        "question ?",
        "x",
        vec![
            Passage::new("A", vec!["one .".into()]),
            Passage::new("B", vec!["two .".into()]),
        ],
        vec![
            SupportRef {
                title: "A".into(),
                fact: Some(1),
            },
            SupportRef {
                title: "B".into(),
                fact: Some(1),
            },
        ],
    );
    assert_eq!(support_scores(&path(&[("a", &[1]), ("B", &[1])], "x"), &inst), (1.0, 1.0));
    let (em, f1) = support_scores(&path(&[("A", &[1])], "x"), &inst);
    assert_eq!(em, 0.0);
    assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(support_scores(&path(&[], "x"), &inst), (0.0, 0.0));
    let mut titles_only = path(&[("A", &[]), ("b", &[])], "x");
    titles_only.variant = PathVariant::Sa;
    assert_eq!(support_scores(&titles_only, &inst), (1.0, 1.0));
}

#[test]
fn gold_paths_score_perfectly() {
    let data = synthetic(30, vec![2, 3], 0.3, 1);
    let preds: Vec<Prediction> = data.iter().map(gold_prediction).collect();
    let report = evaluate(&preds, &data);
    assert_eq!(report.answer_em, 1.0);
    assert_eq!(report.support_em, 1.0);
    assert_eq!(report.support_f1, 1.0);
    assert_eq!(report.malformed_outputs, 0);
    assert_eq!(report.faithfulness.pred_answer_in_gold_facts, Some(1.0));
    let csv = report_csv(&report);
    assert!(csv.starts_with("group,category,value\n"));
    assert!(csv.contains("overall,answer_em,1\n"));
}

#[test]
fn predictions_round_trip_through_jsonl() {
    let data = synthetic(5, vec![2], 0.0, 2);
    let preds: Vec<Prediction> = data.iter().map(gold_prediction).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("preds.jsonl");
    write_predictions(&p, &preds).unwrap();
    let back = read_predictions(&p, PathVariant::Hotpot).unwrap();
    assert_eq!(back, preds);
    let line: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&p).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(line.as_object().unwrap().len(), 2);
}

#[test]
fn missing_predictions_score_zero() {
    let data = synthetic(4, vec![2], 0.0, 3);
    let preds = vec![gold_prediction(&data[0])];
    let report = evaluate(&preds, &data);
    assert_eq!(report.missing_predictions, 3);
    assert_eq!(report.answer_em, 0.25);
}

fn fixture_instance(id: &str, kind: QuestionType) -> QuestionInstance {
    let mut inst = QuestionInstance::new(
        id,
        "What is the colour of the pet of Ann ?",
        "red",
        vec![
            Passage::new("Ann", vec!["The pet of Ann is Rex .".into(), "Ann likes red .".into()]),
            Passage::new("Rex", vec!["Rex is big .".into(), "The colour of Rex is red .".into()]),
            Passage::new("Zed", vec!["The colour of Zed is blue .".into()]),
        ],
        vec![
            SupportRef {
                title: "Ann".into(),
                fact: Some(1),
            },
            SupportRef {
                title: "Rex".into(),
                fact: Some(2),
            },
        ],
    );
    inst.question_type = kind;
    inst
}

#[test]
fn faithfulness_matches_hand_count() {
    let insts = [
        fixture_instance("a", QuestionType::Bridge),
        fixture_instance("b", QuestionType::Bridge),
        fixture_instance("c", QuestionType::Bridge),
        fixture_instance("d", QuestionType::Comparison),
    ];
    let paths = [
        // answer copied from a predicted fact
        path(&[("Ann", &[1]), ("Rex", &[2])], "red"),
        // answer from a predicted passage, but not from its predicted fact
        path(&[("Ann", &[1])], "red"),
        // wrong hop and wrong answer
        path(&[("Zed", &[1])], "blue"),
        // comparison question: excluded
        path(&[("Zed", &[1])], "blue"),
    ];
    let items: Vec<_> = paths.iter().zip(insts.iter()).collect();
    let f = faithfulness(&items);
    assert_eq!(f.eligible, 3);
    assert_eq!(f.pred_answer_in_pred_titles, Some(3.0 / 3.0));
    assert_eq!(f.pred_answer_in_pred_facts, Some(2.0 / 3.0));
    assert_eq!(f.gold_answer_in_pred_titles, Some(2.0 / 3.0));
    assert_eq!(f.gold_answer_in_pred_facts, Some(1.0 / 3.0));
    assert_eq!(f.pred_answer_in_gold_titles, Some(2.0 / 3.0));
    assert_eq!(f.pred_answer_in_gold_facts, Some(2.0 / 3.0));
}

#[test]
fn hop_breakdown_counts_follow_composition() {
    let data = synthetic(60, vec![2, 3, 4], 0.0, 4);
    let preds: Vec<Prediction> = data
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            if i % 3 == 0 {
                answer_only(&inst.id, "nothing")
            } else {
                gold_prediction(inst)
            }
        })
        .collect();
    let rows = hop_breakdown(&score_examples(&preds, &data));
    for h in [2, 3, 4] {
        let expected = data.iter().filter(|i| i.hop_count == h).count();
        let row = rows.iter().find(|r| r.supports == h).unwrap();
        assert_eq!(row.count, expected);
        assert!(row.answer_em <= row.answer_f1 && row.support_em <= row.support_f1);
    }
    assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 60);
    let single = hop_breakdown(&score_examples(&preds, &synthetic(10, vec![2], 0.0, 5)));
    assert_eq!(single.len(), 1);
}

#[test]
fn probes_split_the_two_supports() {
    let data = synthetic(100, vec![2], 0.5, 6);
    let probes = build_dire_probes(&data);
    assert_eq!(probes.len(), 200);
    assert!(probes_with_both_supports(&probes, &data).is_empty());
    for (k, p) in probes.iter().enumerate() {
        let orig = &data[k / 2];
        assert_eq!(p.passages.len(), orig.passages.len() - 1);
        assert_eq!(p.support_titles(), vec![orig.support_titles()[k % 2].clone()]);
        assert_eq!(p.answer, orig.answer);
    }
    let three = synthetic(5, vec![3], 0.0, 7);
    assert!(build_dire_probes(&three).is_empty());
}

#[test]
fn ten_passage_instance_gives_two_nine_passage_probes() {
    let data = generate_synthetic(&SyntheticConfig {
        instances: 1,
        passages: 10,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let probes = build_dire_probes(&data);
    assert_eq!(probes.len(), 2);
    assert!(probes.iter().all(|p| p.passages.len() == 9));
}

/// Word after `marker` in `text`.
fn word_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    let at = text.find(marker)? + marker.len();
    text[at..].split_whitespace().next()
}

fn attribute_of(inst: &QuestionInstance) -> String {
    word_after(&inst.question, "What is the ").unwrap().to_string()
}

/// Answers from a single passage: the planted leak if present, else the
/// first passage stating the asked attribute.
fn shortcut_model(inst: &QuestionInstance) -> String {
    let attr = attribute_of(inst);
    let leak = format!("linked with the {attr} ");
    let fact = format!("The {attr} of ");
    for p in &inst.passages {
        for s in &p.sentences {
            if let Some(w) = word_after(s, &leak) {
                return w.to_string();
            }
        }
    }
    for p in &inst.passages {
        for s in &p.sentences {
            if s.starts_with(&fact) {
                return word_after(s, " is ").unwrap().to_string();
            }
        }
    }
    String::new()
}

/// Follows the full chain; fails when any passage on it is missing.
fn lookup_model(inst: &QuestionInstance) -> String {
    let attr = attribute_of(inst);
    let q = &inst.question;
    let rel = word_after(q, &format!("{attr} of the ")).unwrap();
    let subject = q[q.rfind(" of ").unwrap() + 4..q.len() - 2].to_string();
    let find = |title: &str, prefix: &str| -> Option<String> {
        let p = inst.passages.iter().find(|p| p.title == title)?;
        let s = p.sentences.iter().find(|s| s.starts_with(prefix))?;
        let rest = &s[prefix.len()..];
        Some(rest.trim_end_matches(" .").to_string())
    };
    let Some(bridge) = find(&subject, &format!("The {rel} of {subject} is ")) else {
        return String::new();
    };
    find(&bridge, &format!("The {attr} of {bridge} is ")).unwrap_or_default()
}

fn run(model: fn(&QuestionInstance) -> String, probes: &[QuestionInstance]) -> Vec<Prediction> {
    probes.iter().map(|p| answer_only(&p.id, &model(p))).collect()
}

#[test]
fn dire_ceiling_floor_and_toy_models() {
    let data = synthetic(200, vec![2], 0.5, 8);
    let probes = build_dire_probes(&data);
    let oracle: Vec<Prediction> = probes.iter().map(|p| answer_only(&p.id, &p.answer)).collect();
    assert_eq!(dire_scores(&oracle, &probes).answer, 1.0);
    let fail: Vec<Prediction> = probes.iter().map(|p| answer_only(&p.id, "zzz")).collect();
    let floor = dire_scores(&fail, &probes);
    assert_eq!(floor.answer, 0.0);
    assert_eq!(floor.supp_p, 0.0);
    assert_eq!(floor.ans_supp_s, Some(0.0));
    assert_eq!(dire_scores(&[], &probes).answer, 0.0);

    // the lookup model is right on the originals but never on probes
    let originals: Vec<Prediction> = data.iter().map(|i| answer_only(&i.id, &lookup_model(i))).collect();
    assert_eq!(evaluate(&originals, &data).answer_em, 1.0);
    let shortcut = dire_scores(&run(shortcut_model, &probes), &probes).answer;
    let lookup = dire_scores(&run(lookup_model, &probes), &probes).answer;
    assert!(shortcut > lookup, "shortcut {shortcut} vs lookup {lookup}");
}

#[test]
fn removing_shortcuts_does_not_raise_shortcut_dire() {
    let with = build_dire_probes(&synthetic(200, vec![2], 1.0, 9));
    let without = build_dire_probes(&synthetic(200, vec![2], 0.0, 9));
    let a = dire_scores(&run(shortcut_model, &with), &with).answer;
    let b = dire_scores(&run(shortcut_model, &without), &without).answer;
    assert!(b <= a, "{b} > {a}");
}

#[test]
fn gold_paths_on_probes_fill_support_columns() {
    let data = synthetic(20, vec![2], 0.0, 10);
    let probes = build_dire_probes(&data);
    let preds: Vec<Prediction> = probes.iter().map(gold_prediction).collect();
    let block = dire_scores(&preds, &probes);
    assert_eq!(block.questions, 20);
    assert_eq!(block.supp_p, 1.0);
    assert_eq!(block.supp_s, Some(1.0));
    assert_eq!(block.ans_supp_s, Some(1.0));
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("the".to_string()),
            Just("a".to_string()),
            Just("Cat".to_string()),
            Just("cat".to_string()),
            Just("sat,".to_string()),
            Just("dog".to_string()),
            "[a-z]{1,3}",
        ],
        0..6,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn f1_is_symmetric(a in words(), b in words()) {
        prop_assert_eq!(answer_scores(&a, &b), answer_scores(&b, &a));
    }

    #[test]
    fn em_ignores_case_articles_and_punctuation(a in words()) {
        let noisy = format!("The {}!", a.to_uppercase());
        prop_assert_eq!(answer_scores(&noisy, &a).0, 1.0);
    }

    #[test]
    fn em_never_exceeds_f1(a in words(), b in words()) {
        let (em, f1) = answer_scores(&a, &b);
        prop_assert!(em <= f1);
    }
}
