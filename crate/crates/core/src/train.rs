//! Teacher-forced training: AdamW with decoupled decay, linear warmup and
//! decay, global-norm clipping and gradient accumulation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{
    save_checkpoint, Checkpoint, DecoderBatch, EncoderBatch, Example, ModelSpec, NetError, Seq2Seq,
};
use crate::seqcodec::Vocabulary;
use crate::tensor::{Matrix, Tape};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss {loss} at step {step}; batch ids: {}", ids.join(", "))]
    NonFinite {
        step: usize,
        loss: f64,
        ids: Vec<String>,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Examples per optimiser step.
    pub batch_size: usize,
    /// Examples per forward pass; gradients are accumulated up to
    /// `batch_size`.
    pub micro_batch_size: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Intermediate checkpoint period in steps; 0 saves only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup_steps: 2000,
            total_steps: 20000,
            batch_size: 8,
            micro_batch_size: 8,
            clip_norm: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    // negated comparisons so that NaN fails them
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} must not exceed total_steps {} (> 0)",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        if self.batch_size == 0 || self.micro_batch_size == 0 {
            return bad("batch_size and micro_batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0)
        {
            return bad("betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `lr` over the warmup, then linear decay to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_steps {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    } else if cfg.total_steps == cfg.warmup_steps {
        if step == cfg.warmup_steps { cfg.lr } else { 0.0 }
    } else {
        let left = cfg.total_steps.saturating_sub(step) as f64;
        cfg.lr * left / (cfg.total_steps - cfg.warmup_steps) as f64
    }
}

/// Adam moments per parameter; decay is applied directly to the weights.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamW {
    pub fn new(model: &Seq2Seq) -> Self {
        let zeros = || {
            model
                .store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn update(&mut self, model: &mut Seq2Seq, grads: &[Matrix], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let decay = if model.store.get(i).decay {
                lr * cfg.weight_decay
            } else {
                0.0
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = model.store.value_mut(i).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let step = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
                p[j] -= decay * p[j] + lr * step;
            }
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// After clipping.
    pub grad_norm: f64,
    pub grad_norm_raw: f64,
    pub tokens: usize,
}

/// Mean token cross entropy and its gradients for one set of examples, in
/// training mode when `rng` is given.
pub fn loss_and_grads(
    model: &Seq2Seq,
    examples: &[&Example],
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Vec<Matrix>), NetError> {
    let enc = EncoderBatch::new(examples, model.has_fusion().then_some(&model.gnn_cfg));
    let dec = DecoderBatch::from_examples(examples, model.cfg.max_target_positions);
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape, true);
    let mut rng = rng;
    let (loss, _) = model.loss(&mut tape, &vars, &enc, &dec, &mut rng)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss);
    let out = vars
        .iter()
        .zip(model.store.iter())
        .map(|(&v, p)| {
            grads
                .take(v)
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
        })
        .collect();
    Ok((value, out))
}

/// Inference-mode mean token loss over `examples`.
pub fn evaluate_loss(model: &Seq2Seq, examples: &[&Example]) -> Result<f64, NetError> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in examples.chunks(8) {
        let enc = EncoderBatch::new(chunk, model.has_fusion().then_some(&model.gnn_cfg));
        let dec = DecoderBatch::from_examples(chunk, model.cfg.max_target_positions);
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape, false);
        let (loss, _) = model.loss(&mut tape, &vars, &enc, &dec, &mut None)?;
        total += tape.value(loss).get(0, 0) * dec.labels.len() as f64;
        tokens += dec.labels.len();
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Fraction of teacher-forced positions (end token included) whose argmax
/// equals the label.
pub fn token_accuracy(model: &Seq2Seq, examples: &[&Example]) -> Result<f64, NetError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for chunk in examples.chunks(8) {
        let enc = EncoderBatch::new(chunk, model.has_fusion().then_some(&model.gnn_cfg));
        let dec = DecoderBatch::from_examples(chunk, model.cfg.max_target_positions);
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape, false);
        let (_, logits) = model.loss(&mut tape, &vars, &enc, &dec, &mut None)?;
        let logits = tape.value(logits);
        for (r, &label) in dec.labels.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            hit += (best == label) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

/// Stateful training loop: shuffling, accumulation, clipping and updates.
pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    /// Example order of every epoch started so far.
    pub permutations: Vec<Vec<usize>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &Seq2Seq, n_examples: usize) -> Result<Self, TrainError> {
        cfg.check()?;
        if n_examples == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let seed = cfg.seed;
        Ok(Self {
            opt: AdamW::new(model),
            shuffle_rng: ChaCha8Rng::seed_from_u64(seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d40b),
            order: (0..n_examples).collect(),
            cursor: n_examples,
            step: 0,
            permutations: Vec::new(),
            cfg,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        while out.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.shuffle_rng);
                self.permutations.push(self.order.clone());
                self.cursor = 0;
            }
            let take = (self.cfg.batch_size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }

    /// One optimiser step over the next `batch_size` examples.
    pub fn step(&mut self, model: &mut Seq2Seq, examples: &[Example]) -> Result<StepRecord, TrainError> {
        let batch = self.next_batch();
        let micro: Vec<Vec<&Example>> = batch
            .chunks(self.cfg.micro_batch_size)
            .map(|c| c.iter().map(|&i| &examples[i]).collect())
            .collect();
        let limit = model.cfg.max_target_positions;
        let token_counts: Vec<usize> = micro
            .iter()
            .map(|m| m.iter().map(|e| (e.target.len() + 1).min(limit)).sum())
            .collect();
        let total_tokens: usize = token_counts.iter().sum();
        let mut acc: Option<Vec<Matrix>> = None;
        let mut loss = 0.0;
        for (m, &n) in micro.iter().zip(&token_counts) {
            let (l, mut g) = loss_and_grads(model, m, Some(&mut self.dropout_rng))?;
            if !l.is_finite() {
                return Err(TrainError::NonFinite {
                    step: self.step + 1,
                    loss: l,
                    ids: batch.iter().map(|&i| examples[i].id.clone()).collect(),
                });
            }
            let w = n as f64 / total_tokens as f64;
            loss += w * l;
            for x in g.iter_mut() {
                x.scale_in_place(w);
            }
            match acc.as_mut() {
                None => acc = Some(g),
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let mut grads = acc.expect("at least one micro batch");
        let raw = clip_global_norm(&mut grads, self.cfg.clip_norm);
        let clipped = grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
        self.step += 1;
        let lr = lr_at(self.step, &self.cfg);
        self.opt.update(model, &grads, lr, &self.cfg);
        Ok(StepRecord {
            step: self.step,
            loss,
            lr,
            grad_norm: clipped,
            grad_norm_raw: raw,
            tokens: total_tokens,
        })
    }
}

/// Where `fit` writes its log, permutation record and checkpoints.
pub struct FitOutput<'a> {
    pub dir: &'a Path,
    pub spec: &'a ModelSpec,
    pub vocab: &'a Vocabulary,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub records: Vec<StepRecord>,
    pub permutations: Vec<Vec<usize>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_checkpoint(out: &FitOutput<'_>, model: &Seq2Seq, step: usize, name: &str) -> Result<(), TrainError> {
    let ckpt = Checkpoint {
        spec: out.spec.clone(),
        vocab: out.vocab.clone(),
        model: model.clone(),
        step,
    };
    save_checkpoint(&out.dir.join(name), &ckpt)?;
    Ok(())
}

/// Runs `cfg.total_steps` optimiser steps. With an output directory, writes
/// `train_log.jsonl`, `permutations.json`, periodic `checkpoint-<step>.ckpt`
/// files and the final `model.ckpt`; a non-finite loss also leaves
/// `nonfinite_batch.json` there.
pub fn fit(
    model: &mut Seq2Seq,
    examples: &[Example],
    cfg: &TrainConfig,
    out: Option<FitOutput<'_>>,
) -> Result<FitReport, TrainError> {
    let mut trainer = Trainer::new(cfg.clone(), model, examples.len())?;
    let mut log = match &out {
        Some(o) => {
            let p = o.dir.join("train_log.jsonl");
            Some(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.total_steps);
    for _ in 0..cfg.total_steps {
        let rec = match trainer.step(model, examples) {
            Ok(r) => r,
            Err(e) => {
                if let (Some(o), TrainError::NonFinite { step, loss, ids }) = (&out, &e) {
                    let p = o.dir.join("nonfinite_batch.json");
                    let dump = serde_json::json!({"step": step, "loss": loss.to_string(), "ids": ids});
                    std::fs::write(&p, dump.to_string()).map_err(io_err(&p))?;
                }
                return Err(e);
            }
        };
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serialises");
            let p = &out.as_ref().expect("log implies output").dir;
            writeln!(w, "{line}").map_err(io_err(p))?;
        }
        if rec.step % 50 == 0 {
            log::info!("step {} loss {:.4} lr {:.2e}", rec.step, rec.loss, rec.lr);
        }
        if let Some(o) = &out {
            if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && rec.step < cfg.total_steps {
                write_checkpoint(o, model, rec.step, &format!("checkpoint-{}.ckpt", rec.step))?;
            }
        }
        records.push(rec);
    }
    if let Some(o) = &out {
        if let Some(mut w) = log.take() {
            w.flush().map_err(io_err(o.dir))?;
        }
        let p = o.dir.join("permutations.json");
        let json = serde_json::to_string(&trainer.permutations).expect("permutations serialise");
        std::fs::write(&p, json).map_err(io_err(&p))?;
        write_checkpoint(o, model, trainer.steps_done(), "model.ckpt")?;
    }
    Ok(FitReport {
        records,
        permutations: trainer.permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            lr: 1e-3,
            warmup_steps: 100,
            total_steps: 300,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(50, &cfg), 5e-4);
        assert_eq!(lr_at(100, &cfg), 1e-3);
        assert_eq!(lr_at(200, &cfg), 5e-4);
        assert_eq!(lr_at(300, &cfg), 0.0);
        assert_eq!(lr_at(400, &cfg), 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Matrix::filled(2, 2, 3.0), Matrix::filled(1, 3, -4.0)];
        let raw = clip_global_norm(&mut g, 1.0);
        assert!((raw - (36.0f64 + 48.0).sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        let mut small = vec![Matrix::filled(1, 1, 0.5)];
        assert_eq!(clip_global_norm(&mut small, 1.0), 0.5);
        assert_eq!(small[0].get(0, 0), 0.5);
    }

    #[test]
    fn config_checks() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.check().is_ok());
        cfg.warmup_steps = cfg.total_steps + 1;
        assert!(cfg.check().is_err());
        cfg = TrainConfig {
            clip_norm: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.check().is_err());
    }
}
