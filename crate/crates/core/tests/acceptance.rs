#![allow(clippy::needless_range_loop)]

//! Acceptance suite: one pass/fail line per criterion, with timings.
//!
//! Run with `cargo test -p seqgraph --test acceptance`. Set
//! `ACCEPTANCE_ONLY=1,4` to run a subset.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use seqgraph::corpus::{generate_synthetic, QuestionInstance, SyntheticConfig};
use seqgraph::eval::{
    answer_scores, build_dire_probes, dire_scores, evaluate, set_scores, title_key, DireBlock,
};
use seqgraph::fusion::GnnConfig;
use seqgraph::graphbuild::{build_local_graph, NodeKind, NodeLocation};
use seqgraph::net::{
    prepare_example, DecodeStrategy, DecoderBatch, EncoderBatch, Example, Mode, ModelConfig,
    Seq2Seq, TaskConfig,
};
use seqgraph::pipeline::{predict, prepare_all};
use seqgraph::seqcodec::{linearize_path, parse_path, Hop, PathVariant, ReasoningPath, VocabConfig, Vocabulary};
use seqgraph::tensor::Tape;
use seqgraph::train::{loss_and_grads, token_accuracy, TrainConfig, Trainer};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn synthetic(instances: usize, seed: u64, passages: usize, sentences: usize) -> Vec<QuestionInstance> {
    generate_synthetic(&SyntheticConfig {
        instances,
        passages,
        sentences_per_passage: sentences,
        seed,
        ..SyntheticConfig::default()
    })
    .expect("synthetic config is valid")
}

// 1. codec round trip

fn random_field(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "Paris", "the", "river", "Zuduv", "1990", "(band)", "O'Neil", "café", "-", "U.S.",
        "north-east", "3.5", "a", "Zoë", "#1", "what", "is", "of", "?", "x,y",
    ];
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_path(rng: &mut ChaCha8Rng, variant: PathVariant) -> ReasoningPath {
    let n = rng.random_range(1..=4);
    let hops = (0..n)
        .map(|_| {
            let mut hop = Hop::default();
            if variant != PathVariant::Da {
                hop.title = Some(random_field(rng));
            }
            if variant == PathVariant::Hotpot {
                let mut facts: Vec<usize> = (1..=16).collect();
                facts.shuffle(rng);
                facts.truncate(rng.random_range(0..=3));
                hop.facts = facts;
            }
            if matches!(variant, PathVariant::Da | PathVariant::Dsia) {
                hop.sub_question = Some(random_field(rng));
            }
            if matches!(variant, PathVariant::Sia | PathVariant::Dsia) && rng.random_bool(0.7) {
                hop.intermediate_answer = Some(random_field(rng));
            }
            hop
        })
        .collect();
    ReasoningPath {
        variant,
        hops,
        final_answer: random_field(rng),
    }
}

fn codec_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for variant in PathVariant::ALL {
        for i in 0..1000 {
            let path = random_path(&mut rng, variant);
            let text = linearize_path(&path, 16, 4).map_err(|e| format!("{variant:?} #{i}: {e}"))?;
            let parsed = parse_path(&text, variant);
            ensure(parsed.path == path && parsed.diagnostics.is_empty(), || {
                format!("{variant:?} #{i}: {text:?} parsed to {:?}", parsed.path)
            })?;
        }
    }
    Ok("5 variants x 1000 paths".into())
}

// 2. graph oracle

fn canonical(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn perturb_links(inst: &mut QuestionInstance, rng: &mut ChaCha8Rng) {
    let titles: Vec<String> = inst.passages.iter().map(|p| p.title.clone()).collect();
    if rng.random_bool(0.3) && titles.len() > 1 {
        // a second passage sharing a title up to case and spacing
        let (a, b) = (0, rng.random_range(1..titles.len()));
        inst.passages[b].title = format!(" {} ", titles[a].to_uppercase().replace(' ', "  "));
    }
    for p in &mut inst.passages {
        for span in &mut p.entity_spans {
            match rng.random_range(0..4) {
                0 => span.target_title = span.target_title.to_lowercase(),
                1 => span.target_title = titles.choose(rng).unwrap().replace(' ', "\t "),
                2 => span.target_title = "Nowhere Placeholder".into(),
                _ => {}
            }
        }
    }
}

fn graph_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut edges_total = 0;
    for i in 0..500u64 {
        let mut inst = generate_synthetic(&SyntheticConfig {
            instances: 1,
            hop_counts: vec![2, 3, 4],
            passages: rng.random_range(4..=8),
            sentences_per_passage: rng.random_range(2..=4),
            seed: 1000 + i,
            ..SyntheticConfig::default()
        })
        .map_err(|e| e.to_string())?
        .remove(0);
        perturb_links(&mut inst, &mut rng);

        let mut want = BTreeSet::new();
        for (p, passage) in inst.passages.iter().enumerate() {
            for (k, span) in passage.entity_spans.iter().enumerate() {
                for (q, target) in inst.passages.iter().enumerate() {
                    if canonical(&span.target_title) == canonical(&target.title) {
                        want.insert(((p, k), q));
                    }
                }
            }
        }
        let graph = build_local_graph(&inst);
        let mut got = BTreeSet::new();
        for &(s, d) in &graph.edges {
            let (src, dst) = (&graph.nodes[s], &graph.nodes[d]);
            let NodeLocation::Entity { span, .. } = src.location else {
                return Err(format!("instance {i}: edge leaves a title node"));
            };
            ensure(dst.kind == NodeKind::PassageTitle, || format!("instance {i}: edge into an entity node"))?;
            got.insert(((src.passage_idx, span), dst.passage_idx));
        }
        ensure(got == want, || format!("instance {i}: edges {got:?} != oracle {want:?}"))?;
        let titles = graph.nodes.iter().filter(|n| n.kind == NodeKind::PassageTitle).count();
        let spans: usize = inst.passages.iter().map(|p| p.entity_spans.len()).sum();
        ensure(titles == inst.passages.len() && graph.nodes.len() == titles + spans, || {
            format!("instance {i}: node count {} for {titles} titles and {spans} spans", graph.nodes.len())
        })?;
        edges_total += want.len();
    }
    Ok(format!("500 instances, {edges_total} edges"))
}

// shared model fixtures

struct Fixture {
    vocab: Vocabulary,
    task: TaskConfig,
}

fn fixture(insts: &[QuestionInstance], mode: Mode, max_len: usize) -> Fixture {
    Fixture {
        vocab: Vocabulary::from_instances(insts, &VocabConfig::default()),
        task: TaskConfig {
            mode,
            max_len,
            ..TaskConfig::default()
        },
    }
}

fn model_config(vocab: usize, d: usize, enc: usize, fusion: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        enc_layers: enc,
        dec_layers: 2,
        heads: 2,
        d_ff: 2 * d,
        fusion_layer: fusion,
        dropout: 0.0,
        vocab_size: vocab,
        max_positions: 96,
        max_target_positions: 64,
        init_std: 0.3,
    }
}

fn teacher_forced(model: &Seq2Seq, enc: &EncoderBatch, dec: &DecoderBatch) -> Result<seqgraph::tensor::Matrix, String> {
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape, false);
    let (_, logits) = model.loss(&mut tape, &vars, enc, dec, &mut None).map_err(|e| e.to_string())?;
    Ok(tape.into_value(logits))
}

// 3. fusion locality

fn fusion_locality() -> Check {
    let insts = synthetic(100, 3, 4, 3);
    let f = fixture(&insts, Mode::SeqGraph, 96);
    let gnn = GnnConfig::default();
    let cfg = model_config(f.vocab.len(), 16, 3, 1);
    let fused_model = Seq2Seq::new(cfg.clone(), Some(gnn.clone()), 7).map_err(|e| e.to_string())?;
    // the baseline shares every non-GNN parameter with the fused model
    let mut plain = Seq2Seq::new(cfg, None, 8).map_err(|e| e.to_string())?;
    for i in 0..plain.store.len() {
        let name = plain.store.get(i).name.clone();
        let j = fused_model.store.index_of(&name).ok_or(format!("{name} missing"))?;
        *plain.store.value_mut(i) = fused_model.store.value(j).clone();
    }
    let (mut span_rows, mut other_rows, mut moved) = (0usize, 0usize, 0usize);
    for (n, inst) in insts.iter().enumerate() {
        let ex = prepare_example(inst, &f.vocab, &f.task).map_err(|e| e.to_string())?;
        let batch = EncoderBatch::new(&[&ex], Some(&gnn));
        let plan = batch.plan.as_ref().ok_or("no fusion plan")?;
        let [lower, fused, _] = fused_model.encoder_states(&batch).map_err(|e| e.to_string())?;
        for r in 0..lower.rows.rows() {
            let in_span = plan.spans.iter().flatten().any(|s| s.contains(r));
            if in_span {
                span_rows += 1;
                moved += (fused.rows.row(r) != lower.rows.row(r)) as usize;
            } else {
                other_rows += 1;
                ensure(fused.rows.row(r) == lower.rows.row(r), || {
                    format!("instance {n}: non-span row {r} changed by fusion")
                })?;
            }
        }

        let mut empty = ex.clone();
        empty.graph.nodes.clear();
        empty.graph.edges.clear();
        let enc_empty = EncoderBatch::new(&[&empty], Some(&gnn));
        ensure(enc_empty.plan.as_ref().is_some_and(|p| p.is_empty()), || "plan not empty".into())?;
        let enc_plain = EncoderBatch::new(&[&ex], None);
        let dec = DecoderBatch::from_examples(&[&ex], 64);
        let a = teacher_forced(&fused_model, &enc_empty, &dec)?;
        let b = teacher_forced(&plain, &enc_plain, &dec)?;
        ensure(a == b, || format!("instance {n}: empty-graph output differs by {}", a.max_abs_diff(&b)))?;
    }
    ensure(moved > 0, || "fusion never changed a span row".into())?;
    Ok(format!(
        "{other_rows} non-span rows unchanged, {moved}/{span_rows} span rows moved; empty graph bit-identical on 100"
    ))
}

// 4. gradient check

fn gradient_check() -> Check {
    let insts = synthetic(2, 4, 3, 2);
    let f = fixture(&insts, Mode::SeqGraph, 40);
    let gnn = GnnConfig {
        layers: 2,
        heads: 2,
        dropout: 0.0,
        ..GnnConfig::default()
    };
    let mut cfg = model_config(f.vocab.len(), 8, 3, 1);
    cfg.max_positions = 40;
    cfg.init_std = 0.5;
    let mut model = Seq2Seq::new(cfg, Some(gnn), 9).map_err(|e| e.to_string())?;
    let examples: Vec<Example> = insts
        .iter()
        .map(|i| prepare_example(i, &f.vocab, &f.task))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = examples.iter().collect();
    let (_, grads) = loss_and_grads(&model, &refs, None).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    let mut groups = 0;
    for p in 0..model.store.len() {
        let name = model.store.get(p).name.clone();
        let size = grads[p].data().len();
        // every entry of small groups; for large ones the biggest analytic
        // entries plus a random sample
        let mut idx: Vec<usize> = (0..size).collect();
        if size > 48 {
            idx.sort_by(|&a, &b| grads[p].data()[b].abs().total_cmp(&grads[p].data()[a].abs()));
            let mut rest = idx.split_off(24);
            rest.shuffle(&mut rng);
            idx.extend(rest.into_iter().take(24));
        }
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for &j in &idx {
            let orig = model.store.value(p).data()[j];
            model.store.value_mut(p).data_mut()[j] = orig + h;
            let up = loss_and_grads(&model, &refs, None).map_err(|e| e.to_string())?.0;
            model.store.value_mut(p).data_mut()[j] = orig - h;
            let down = loss_and_grads(&model, &refs, None).map_err(|e| e.to_string())?.0;
            model.store.value_mut(p).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[p].data()[j];
            diff += (numeric - analytic).powi(2);
            norm_a += analytic * analytic;
            norm_n += numeric * numeric;
        }
        if name.starts_with("gnn.") && norm_a == 0.0 {
            return Err(format!("{name} receives no gradient"));
        }
        // key biases shift every score of a query equally, so their true
        // gradient is zero and both sides are rounding noise; the floor keeps
        // that noise from reading as a relative error
        let scale = (norm_a.sqrt() + norm_n.sqrt()).max(1e-6);
        let rel = diff.sqrt() / scale;
        if rel > worst {
            worst = rel;
            worst_name = name.clone();
        }
        ensure(rel < 1e-3, || format!("{name}: relative error {rel:.2e}"))?;
        groups += 1;
    }
    Ok(format!("{groups} parameter groups, worst {worst:.2e} ({worst_name})"))
}

// 5. permutation equivariance

fn permutation_equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let insts = synthetic(50, 5, 5, 3);
    let f = fixture(&insts, Mode::SeqGraph, 96);
    let gnn = GnnConfig::default();
    let model = Seq2Seq::new(model_config(f.vocab.len(), 16, 3, 1), Some(gnn.clone()), 10)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (t, inst) in insts.iter().enumerate() {
        let mut perm: Vec<usize> = (0..inst.passages.len()).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = inst.clone();
        shuffled.passages = perm.iter().map(|&i| inst.passages[i].clone()).collect();
        let a = prepare_example(inst, &f.vocab, &f.task).map_err(|e| e.to_string())?;
        let b = prepare_example(&shuffled, &f.vocab, &f.task).map_err(|e| e.to_string())?;
        let sa = model
            .encoder_states(&EncoderBatch::new(&[&a], Some(&gnn)))
            .map_err(|e| e.to_string())?;
        let sb = model
            .encoder_states(&EncoderBatch::new(&[&b], Some(&gnn)))
            .map_err(|e| e.to_string())?;
        for (i, &src) in perm.iter().enumerate() {
            for s in 1..3 {
                let d = sb[s].block(i).max_abs_diff(&sa[s].block(src));
                worst = worst.max(d);
                ensure(d <= 1e-6, || format!("trial {t}: passage {src} moved to {i} differs by {d:.2e}"))?;
            }
        }
    }
    Ok(format!("50 trials, max deviation {worst:.2e}"))
}

// 6. metric oracle

struct Reference {
    punct: Regex,
    articles: Regex,
}

impl Reference {
    fn new() -> Self {
        Self {
            punct: Regex::new(r##"[!"#$%&'()*+,\-./:;<=>?@\[\\\]^_`{|}~]"##).unwrap(),
            articles: Regex::new(r"\b(a|an|the)\b").unwrap(),
        }
    }

    fn normalize(&self, s: &str) -> String {
        let lower = s.to_lowercase();
        let no_punct = self.punct.replace_all(&lower, "");
        let no_art = self.articles.replace_all(&no_punct, " ");
        no_art.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn em(&self, pred: &str, gold: &str) -> f64 {
        (self.normalize(pred) == self.normalize(gold)) as u8 as f64
    }

    /// F1 tokens keep articles; emptiness and exact match are judged after
    /// full normalisation.
    fn f1(&self, pred: &str, gold: &str) -> f64 {
        let (p, g) = (self.normalize(pred), self.normalize(gold));
        if p.is_empty() || g.is_empty() || p == g {
            return (p == g) as u8 as f64;
        }
        let tokens = |s: &str| -> Vec<String> {
            self.punct
                .replace_all(&s.to_lowercase(), "")
                .split_whitespace()
                .map(str::to_string)
                .collect()
        };
        let (pt, gt) = (tokens(pred), tokens(gold));
        let pt: Vec<&str> = pt.iter().map(String::as_str).collect();
        let gt: Vec<&str> = gt.iter().map(String::as_str).collect();
        let mut pc: HashMap<&str, i64> = HashMap::new();
        for t in &pt {
            *pc.entry(t).or_default() += 1;
        }
        let mut gc: HashMap<&str, i64> = HashMap::new();
        for t in &gt {
            *gc.entry(t).or_default() += 1;
        }
        let same: i64 = pc.iter().map(|(t, &c)| c.min(*gc.get(t).unwrap_or(&0))).sum();
        if same == 0 {
            return 0.0;
        }
        let precision = same as f64 / pt.len() as f64;
        let recall = same as f64 / gt.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }

    fn set_scores(pred: &BTreeSet<(String, usize)>, gold: &BTreeSet<(String, usize)>) -> (f64, f64) {
        let em = (pred == gold) as u8 as f64;
        if pred.is_empty() && gold.is_empty() {
            return (1.0, 1.0);
        }
        let tp = pred.iter().filter(|x| gold.contains(*x)).count() as f64;
        let precision = if pred.is_empty() { 0.0 } else { tp / pred.len() as f64 };
        let recall = if gold.is_empty() { 0.0 } else { tp / gold.len() as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        (em, f1)
    }
}

fn random_answer(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "The", "the", "a", "An", "cat", "Cat", "sat", "down", "on", "mat", "mat.", "(cat)",
        "dog's", "1,000", "New", "York", "new-york", "café", "", "  ",
    ];
    let n = rng.random_range(0..=6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_support(rng: &mut ChaCha8Rng) -> BTreeSet<(String, usize)> {
    let n = rng.random_range(0..=4);
    (0..n)
        .map(|_| (["A", "B", "C"].choose(rng).unwrap().to_string(), rng.random_range(1..=3)))
        .collect()
}

fn metric_oracle() -> Check {
    let reference = Reference::new();
    let (_, f1) = answer_scores("the cat sat", "cat sat down");
    ensure((f1 - 2.0 / 3.0).abs() < 1e-15, || format!("F1(the cat sat, cat sat down) = {f1}"))?;
    ensure(reference.f1("the cat sat", "cat sat down") == f1, || "reference disagrees on 2/3".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..200 {
        let (p, g) = (random_answer(&mut rng), random_answer(&mut rng));
        let g = if rng.random_bool(0.2) { p.to_uppercase() } else { g };
        let got = answer_scores(&p, &g);
        let want = (reference.em(&p, &g), reference.f1(&p, &g));
        ensure(got == want, || format!("pair {i} ({p:?}, {g:?}): {got:?} != reference {want:?}"))?;

        let (ps, gs) = (random_support(&mut rng), random_support(&mut rng));
        let got = set_scores(&ps, &gs);
        let want = Reference::set_scores(&ps, &gs);
        ensure(got == want, || format!("set pair {i} ({ps:?}, {gs:?}): {got:?} != reference {want:?}"))?;
    }
    Ok("200 answer pairs and 200 support-set pairs agree; F1 = 2/3 on the hand case".into())
}

// 7. overfit sanity

fn overfit_sanity() -> Check {
    let insts = synthetic(16, 7, 6, 3);
    let f = fixture(&insts, Mode::SeqGraph, 96);
    let cfg = ModelConfig {
        d_model: 64,
        enc_layers: 4,
        dec_layers: 4,
        heads: 4,
        d_ff: 256,
        fusion_layer: 2,
        dropout: 0.0,
        vocab_size: f.vocab.len(),
        max_positions: 96,
        max_target_positions: 64,
        init_std: 0.02,
    };
    let gnn = GnnConfig {
        dropout: 0.0,
        ..GnnConfig::default()
    };
    let mut model = Seq2Seq::new(cfg, Some(gnn), 11).map_err(|e| e.to_string())?;
    let examples = prepare_all(&insts, &f.vocab, &f.task).map_err(|e| e.to_string())?;
    let refs: Vec<&Example> = examples.iter().collect();
    let tc = TrainConfig {
        lr: 1e-3,
        warmup_steps: 20,
        total_steps: 500,
        batch_size: 16,
        micro_batch_size: 16,
        weight_decay: 0.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(tc, &model, examples.len()).map_err(|e| e.to_string())?;
    let mut acc = 0.0;
    for step in 1..=500 {
        trainer.step(&mut model, &examples).map_err(|e| e.to_string())?;
        if step % 25 == 0 {
            acc = token_accuracy(&model, &refs).map_err(|e| e.to_string())?;
            if acc >= 0.99 {
                return Ok(format!("token accuracy {acc:.4} at step {step}"));
            }
        }
    }
    Err(format!("token accuracy {acc:.4} after 500 steps"))
}

// 8. directional disconnected-reasoning experiment

struct RunResult {
    support_em: f64,
    answer_em: f64,
    dire: DireBlock,
}

fn run_mode(mode: Mode, seed: u64, train: &[QuestionInstance], dev: &[QuestionInstance], probes: &[QuestionInstance]) -> Result<RunResult, String> {
    let vocab = Vocabulary::from_instances(train, &VocabConfig::default());
    let task = TaskConfig {
        mode,
        max_len: EXP.max_len,
        max_out_len: 24,
        ..TaskConfig::default()
    };
    let examples = prepare_all(train, &vocab, &task).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        d_model: EXP.d_model,
        enc_layers: EXP.enc_layers,
        dec_layers: EXP.dec_layers,
        heads: EXP.heads,
        d_ff: 4 * EXP.d_model,
        fusion_layer: EXP.fusion_layer,
        dropout: 0.1,
        vocab_size: vocab.len(),
        max_positions: EXP.max_len,
        max_target_positions: 32,
        init_std: 0.02,
    };
    let gnn = mode.uses_graph().then(GnnConfig::default);
    let mut model = Seq2Seq::new(cfg, gnn, seed).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        lr: EXP.lr,
        warmup_steps: EXP.steps / 10,
        total_steps: EXP.steps,
        batch_size: EXP.batch,
        micro_batch_size: EXP.batch,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(tc, &model, examples.len()).map_err(|e| e.to_string())?;
    for _ in 0..EXP.steps {
        trainer.step(&mut model, &examples).map_err(|e| e.to_string())?;
    }
    let preds = predict(&model, &vocab, &task, dev, DecodeStrategy::Greedy, 16).map_err(|e| e.to_string())?;
    let report = evaluate(&preds, dev);
    let probe_preds = predict(&model, &vocab, &task, probes, DecodeStrategy::Greedy, 16).map_err(|e| e.to_string())?;
    Ok(RunResult {
        support_em: report.support_em,
        answer_em: report.answer_em,
        dire: dire_scores(&probe_preds, probes),
    })
}

struct Experiment {
    passages: usize,
    sentences: usize,
    entity_pool: usize,
    word_pool: usize,
    heads: usize,
    max_len: usize,
    d_model: usize,
    enc_layers: usize,
    dec_layers: usize,
    fusion_layer: usize,
    lr: f64,
    batch: usize,
    steps: usize,
}

const EXP: Experiment = Experiment {
    passages: 3,
    sentences: 2,
    entity_pool: 40,
    word_pool: 40,
    heads: 2,
    max_len: 128,
    d_model: 32,
    enc_layers: 3,
    dec_layers: 2,
    fusion_layer: 1,
    lr: 3e-3,
    batch: 16,
    steps: 4000,
};

fn directional_experiment() -> Check {
    let mut results: HashMap<Mode, Vec<RunResult>> = HashMap::new();
    for seed in 0..3u64 {
        let base = SyntheticConfig {
            hop_counts: vec![2],
            passages: EXP.passages,
            sentences_per_passage: EXP.sentences,
            shortcut_rate: 0.5,
            pool_seed: 0,
            entity_pool: EXP.entity_pool,
            vocab_size: EXP.word_pool,
            ..SyntheticConfig::default()
        };
        let train = generate_synthetic(&SyntheticConfig {
            instances: 2000,
            seed: 100 + seed,
            ..base.clone()
        })
        .map_err(|e| e.to_string())?;
        let dev = generate_synthetic(&SyntheticConfig {
            instances: 500,
            seed: 200 + seed,
            ..base
        })
        .map_err(|e| e.to_string())?;
        let probes = build_dire_probes(&dev);
        for mode in [Mode::PathFid, Mode::SeqGraph] {
            let t = Instant::now();
            let r = run_mode(mode, seed, &train, &dev, &probes)?;
            println!(
                "    seed {seed} {mode:<8} answer EM {:.3} support EM {:.3} DiRe answer {:.3} supp_p {:.3} ({:.0}s)",
                r.answer_em,
                r.support_em,
                r.dire.answer,
                r.dire.supp_p,
                t.elapsed().as_secs_f64()
            );
            results.entry(mode).or_default().push(r);
        }
    }
    let mean = |mode: Mode, f: fn(&RunResult) -> f64| {
        let rs = &results[&mode];
        rs.iter().map(f).sum::<f64>() / rs.len() as f64
    };
    let (sp, ss) = (mean(Mode::PathFid, |r| r.support_em), mean(Mode::SeqGraph, |r| r.support_em));
    let (dp, ds) = (mean(Mode::PathFid, |r| r.dire.answer), mean(Mode::SeqGraph, |r| r.dire.answer));
    let detail = format!("support EM seqgraph {ss:.4} vs pathfid {sp:.4}; Answer DiRe seqgraph {ds:.4} vs pathfid {dp:.4}");
    if ss > sp && ds < dp {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 9. DiRe probe construction

fn probe_construction() -> Check {
    let dev = generate_synthetic(&SyntheticConfig {
        instances: 500,
        hop_counts: vec![2],
        shortcut_rate: 0.5,
        seed: 9,
        ..SyntheticConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let probes = build_dire_probes(&dev);
    ensure(probes.len() == 2 * dev.len(), || format!("{} probes for {} instances", probes.len(), dev.len()))?;
    let text = |p: &seqgraph::corpus::Passage| format!("{}\n{}", p.title, p.sentences.join("\n"));
    for (inst, pair) in dev.iter().zip(probes.chunks(2)) {
        let gold: Vec<String> = inst.support_titles().iter().map(|t| title_key(t)).collect();
        let gold_texts: Vec<String> = inst
            .passages
            .iter()
            .filter(|p| gold.contains(&title_key(&p.title)))
            .map(text)
            .collect();
        for (j, probe) in pair.iter().enumerate() {
            let context: Vec<String> = probe.passages.iter().map(text).collect();
            let contained: Vec<&String> = gold_texts.iter().filter(|g| context.contains(g)).collect();
            ensure(contained.len() == 1, || {
                format!("{}: contains {} gold support passages", probe.id, contained.len())
            })?;
            let kept: BTreeSet<String> = probe.gold_supports.iter().map(|s| title_key(&s.title)).collect();
            ensure(kept.len() == 1 && kept.contains(&gold[j]), || format!("{}: restricted supports {kept:?}", probe.id))?;
            ensure(probe.passages.len() == inst.passages.len() - 1, || format!("{}: wrong passage count", probe.id))?;
        }
    }
    Ok(format!("{} probes over {} instances, one gold passage each", probes.len(), dev.len()))
}

/// Criteria that fail at desk scale (see the README): their FAIL lines are
/// printed but do not fail `cargo test`.
const KNOWN_UNMET: [usize; 1] = [8];

type Criterion = (usize, &'static str, fn() -> Check, Option<f64>);

fn main() {
    // (number, name, check, time limit in seconds)
    let criteria: [Criterion; 9] = [
        (1, "codec round trip", codec_round_trip, Some(10.0)),
        (2, "graph oracle equivalence", graph_oracle, Some(30.0)),
        (3, "fusion locality", fusion_locality, None),
        (4, "gradient check", gradient_check, Some(300.0)),
        (5, "permutation equivariance", permutation_equivariance, None),
        (6, "metric oracle", metric_oracle, None),
        (7, "overfit sanity", overfit_sanity, Some(300.0)),
        (8, "directional DiRe experiment", directional_experiment, Some(3600.0)),
        (9, "DiRe probe construction", probe_construction, None),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, check, limit) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let mut outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        if let (Ok(detail), Some(limit)) = (&outcome, limit) {
            if secs > limit {
                outcome = Err(format!("{detail}; took {secs:.1}s, over the {limit:.0}s limit"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("FAIL {n} {name}: {detail} [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        return;
    }
    println!("failed criteria: {failed:?}");
    // failures outside the documented list, or any failure under
    // ACCEPTANCE_STRICT=1, fail the run
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let unexpected: Vec<usize> = failed.into_iter().filter(|n| strict || !KNOWN_UNMET.contains(n)).collect();
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
    println!("only documented unmet criteria {KNOWN_UNMET:?} failed; ACCEPTANCE_STRICT=1 makes them fatal");
}
