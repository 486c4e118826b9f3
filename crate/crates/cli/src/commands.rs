use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use seqgraph::corpus::{generate_synthetic, load_dataset, save_dataset, QuestionInstance};
use seqgraph::eval::{
    build_dire_probes, dire_scores, evaluate, read_predictions, report_csv, write_predictions,
};
use seqgraph::fusion::overhead_report;
use seqgraph::graphbuild::build_local_graph;
use seqgraph::net::{load_checkpoint, Example, ModelSpec, Seq2Seq, TaskConfig};
use seqgraph::pipeline::{predict as predict_all, prepare_all};
use seqgraph::seqcodec::{PathVariant, Vocabulary};
use seqgraph::train::{evaluate_loss, fit, FitOutput};

use crate::config::RunConfig;
use crate::{EvalArgs, GenArgs, GraphDumpArgs, Invalid, PredictArgs, ProbeArgs, TrainArgs};

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

/// An input path that must be configured and exist.
fn input(path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let p = path
        .as_deref()
        .ok_or_else(|| Invalid(format!("no {name} given (flag --{name} or paths.{name})")))?;
    if !p.exists() {
        return Err(Invalid(format!("paths.{name}: {} does not exist", p.display())).into());
    }
    Ok(p.to_path_buf())
}

fn output(path: &Option<PathBuf>) -> Result<PathBuf> {
    Ok(path
        .clone()
        .ok_or_else(|| Invalid("no output given (flag --out or paths.out)".into()))?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// The fact-level variant needs fact-annotated supports everywhere.
fn check_variant(instances: &[QuestionInstance], variant: PathVariant) -> Result<()> {
    if variant == PathVariant::Hotpot {
        if let Some(bad) = instances.iter().find(|i| !i.has_fact_supports()) {
            return Err(Invalid(format!(
                "task.variant hotpot needs fact-level supports but instance {} has title-only supports",
                bad.id
            ))
            .into());
        }
    }
    Ok(())
}

fn check_task(cfg: &RunConfig) -> Result<()> {
    if cfg.model.max_positions < cfg.task.max_len {
        return Err(Invalid(format!(
            "model.max_positions {} is below task.max_len {}",
            cfg.model.max_positions, cfg.task.max_len
        ))
        .into());
    }
    if cfg.task.max_out_len == 0 {
        return Err(Invalid("task.max_out_len must be at least 1".into()).into());
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let s = &mut cfg.synthetic;
    set(&mut s.instances, a.n);
    set(&mut s.hop_counts, a.hops);
    set(&mut s.seed, a.seed);
    set(&mut s.pool_seed, a.pool_seed);
    set(&mut s.passages, a.passages);
    set(&mut s.sentences_per_passage, a.sentences);
    set(&mut s.shortcut_rate, a.shortcut_rate);
    set_path(&mut cfg.paths.out, a.out);
    let out = output(&cfg.paths.out)?;
    cfg.synthetic.check()?;
    let data = generate_synthetic(&cfg.synthetic)?;
    ensure_parent(&out)?;
    save_dataset(&out, &data)?;
    cfg.write_beside(&out, false)?;
    println!("wrote {} instances to {}", data.len(), out.display());
    Ok(())
}

/// Token-weighted mean loss over `batch`-sized chunks.
fn dataset_loss(model: &Seq2Seq, examples: &[Example], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let n: usize = chunk.iter().map(|e| e.target.len() + 1).sum();
        total += evaluate_loss(model, &refs)? * n as f64;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    set_path(&mut cfg.paths.train, a.train);
    set_path(&mut cfg.paths.dev, a.dev);
    set_path(&mut cfg.paths.out, a.out);
    set(&mut cfg.paths.format, a.format);
    set(&mut cfg.task.mode, a.mode);
    set(&mut cfg.task.variant, a.variant);
    set(&mut cfg.train.total_steps, a.steps);
    set(&mut cfg.train.warmup_steps, a.warmup);
    set(&mut cfg.train.lr, a.lr);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.seed, a.seed);
    if cfg.train.micro_batch_size > cfg.train.batch_size {
        cfg.train.micro_batch_size = cfg.train.batch_size;
    }
    let train_path = input(&cfg.paths.train, "train")?;
    let dev_path = match &cfg.paths.dev {
        Some(_) => Some(input(&cfg.paths.dev, "dev")?),
        None => None,
    };
    let out = output(&cfg.paths.out)?;

    let train = load_dataset(&train_path, cfg.paths.format)?;
    let dev = dev_path.map(|p| load_dataset(&p, cfg.paths.format)).transpose()?;
    check_variant(&train, cfg.task.variant)?;
    if let Some(d) = &dev {
        check_variant(d, cfg.task.variant)?;
    }
    let vocab = Vocabulary::from_instances(&train, &cfg.vocab);
    match cfg.model.vocab_size {
        0 => cfg.model.vocab_size = vocab.len(),
        n if n != vocab.len() => {
            return Err(Invalid(format!(
                "model.vocab_size {n} does not match the {} tokens built from the training set",
                vocab.len()
            ))
            .into())
        }
        _ => {}
    }
    check_task(&cfg)?;
    cfg.model.check()?;
    cfg.gnn.check().map_err(Invalid)?;
    cfg.train.check()?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write_beside(&out, true)?;
    let gnn = cfg.task.mode.uses_graph().then(|| cfg.gnn.clone());
    let mut model = Seq2Seq::new(cfg.model.clone(), gnn, cfg.train.seed)?;
    let (gnn_params, total_params) = model.param_counts();
    if model.has_fusion() {
        for line in overhead_report(Some((gnn_params, total_params))).lines() {
            log::info!("{line}");
        }
    }
    log::info!(
        "training {} on {} instances: {} params, vocab {}",
        cfg.task.mode,
        train.len(),
        total_params,
        vocab.len()
    );
    let examples = prepare_all(&train, &vocab, &cfg.task)?;
    let spec = ModelSpec {
        model: cfg.model.clone(),
        gnn: cfg.gnn.clone(),
        task: cfg.task.clone(),
    };
    let report = fit(
        &mut model,
        &examples,
        &cfg.train,
        Some(FitOutput {
            dir: &out,
            spec: &spec,
            vocab: &vocab,
        }),
    )?;
    let mut summary = serde_json::json!({
        "steps": report.records.len(),
        "final_loss": report.records.last().map(|r| r.loss),
        "params": total_params,
        "gnn_params": gnn_params,
    });
    if let Some(dev) = &dev {
        let dev_examples = prepare_all(dev, &vocab, &cfg.task)?;
        let loss = dataset_loss(&model, &dev_examples, cfg.train.micro_batch_size)?;
        log::info!("dev loss {loss:.4}");
        summary["dev_loss"] = loss.into();
    }
    let p = out.join("summary.json");
    fs::write(&p, serde_json::to_string_pretty(&summary)?).with_context(|| format!("writing {}", p.display()))?;
    println!("trained {} steps; model at {}", report.records.len(), out.join("model.ckpt").display());
    Ok(())
}

/// Copies the checkpoint's model, fusion and task settings into `cfg`.
fn adopt_spec(cfg: &mut RunConfig, spec: &ModelSpec) -> TaskConfig {
    cfg.model = spec.model.clone();
    cfg.gnn = spec.gnn.clone();
    cfg.task = spec.task.clone();
    spec.task.clone()
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    set_path(&mut cfg.paths.checkpoint, a.checkpoint);
    set_path(&mut cfg.paths.data, a.data);
    set_path(&mut cfg.paths.out, a.out);
    set(&mut cfg.paths.format, a.format);
    set(&mut cfg.decode.beam, a.beam);
    set(&mut cfg.decode.batch_size, a.batch_size);
    let ckpt_path = input(&cfg.paths.checkpoint, "checkpoint")?;
    let data_path = input(&cfg.paths.data, "data")?;
    let out = output(&cfg.paths.out)?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    let mut task = adopt_spec(&mut cfg, &ckpt.spec);
    set(&mut task.max_out_len, a.max_out_len);
    cfg.task = task.clone();
    check_task(&cfg)?;
    let data = load_dataset(&data_path, cfg.paths.format)?;
    check_variant(&data, task.variant)?;
    let preds = predict_all(&ckpt.model, &ckpt.vocab, &task, &data, cfg.decode.strategy(), cfg.decode.batch_size)?;
    ensure_parent(&out)?;
    write_predictions(&out, &preds)?;
    cfg.write_beside(&out, false)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    set_path(&mut cfg.paths.data, a.data);
    set_path(&mut cfg.paths.predictions, a.predictions);
    set_path(&mut cfg.paths.probe_predictions, a.probe_predictions);
    set_path(&mut cfg.paths.out, a.out);
    set(&mut cfg.paths.format, a.format);
    set(&mut cfg.task.variant, a.variant);
    let data_path = input(&cfg.paths.data, "data")?;
    let pred_path = input(&cfg.paths.predictions, "predictions")?;
    let probe_path = match &cfg.paths.probe_predictions {
        Some(_) => Some(input(&cfg.paths.probe_predictions, "probe_predictions")?),
        None => None,
    };
    let out = output(&cfg.paths.out)?;

    let variant = cfg.task.variant;
    let data = load_dataset(&data_path, cfg.paths.format)?;
    check_variant(&data, variant)?;
    let preds = read_predictions(&pred_path, variant)?;
    let mut report = evaluate(&preds, &data);
    if let Some(p) = probe_path {
        let probes = build_dire_probes(&data);
        report.dire = Some(dire_scores(&read_predictions(&p, variant)?, &probes));
    }
    ensure_parent(&out)?;
    fs::write(&out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    let csv = out.with_extension("csv");
    fs::write(&csv, report_csv(&report)).with_context(|| format!("writing {}", csv.display()))?;
    cfg.write_beside(&out, false)?;
    println!(
        "answer EM {:.4} F1 {:.4} | support EM {:.4} F1 {:.4} | {} of {} predicted",
        report.answer_em,
        report.answer_f1,
        report.support_em,
        report.support_f1,
        report.count - report.missing_predictions,
        report.count
    );
    if let Some(d) = &report.dire {
        println!("DiRe answer {:.4} supp_p {:.4} over {} questions", d.answer, d.supp_p, d.questions);
    }
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    set_path(&mut cfg.paths.data, a.data);
    set_path(&mut cfg.paths.checkpoint, a.checkpoint);
    set_path(&mut cfg.paths.out, a.out);
    set(&mut cfg.paths.format, a.format);
    set(&mut cfg.decode.beam, a.beam);
    set(&mut cfg.decode.batch_size, a.batch_size);
    let data_path = input(&cfg.paths.data, "data")?;
    let ckpt_path = input(&cfg.paths.checkpoint, "checkpoint")?;
    let out = output(&cfg.paths.out)?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    let task = adopt_spec(&mut cfg, &ckpt.spec);
    let data = load_dataset(&data_path, cfg.paths.format)?;
    check_variant(&data, task.variant)?;
    let probes = build_dire_probes(&data);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    save_dataset(&out.join("probes.json"), &probes)?;
    let preds = predict_all(&ckpt.model, &ckpt.vocab, &task, &probes, cfg.decode.strategy(), cfg.decode.batch_size)?;
    write_predictions(&out.join("probe_predictions.jsonl"), &preds)?;
    let dire = dire_scores(&preds, &probes);
    let p = out.join("dire.json");
    fs::write(&p, serde_json::to_string_pretty(&dire)?).with_context(|| format!("writing {}", p.display()))?;
    cfg.write_beside(&out, true)?;
    println!(
        "{} probes over {} questions: DiRe answer {:.4} supp_p {:.4} ans+supp_p {:.4}",
        probes.len(),
        dire.questions,
        dire.answer,
        dire.supp_p,
        dire.ans_supp_p
    );
    Ok(())
}

pub fn graph_dump(a: GraphDumpArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    set_path(&mut cfg.paths.data, a.data);
    set_path(&mut cfg.paths.out, a.out);
    set(&mut cfg.paths.format, a.format);
    let data_path = input(&cfg.paths.data, "data")?;
    let out = output(&cfg.paths.out)?;
    let data = load_dataset(&data_path, cfg.paths.format)?;
    let mut text = String::new();
    for inst in data.iter().take(a.limit.unwrap_or(usize::MAX)) {
        let g = build_local_graph(inst);
        let _ = writeln!(text, "# {} ({} nodes, {} edges)", inst.id, g.nodes.len(), g.edges.len());
        text.push_str(&g.edge_list());
        text.push('\n');
    }
    ensure_parent(&out)?;
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    cfg.write_beside(&out, false)?;
    Ok(())
}
