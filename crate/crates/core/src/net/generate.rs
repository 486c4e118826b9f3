use std::cmp::Ordering;
use std::rc::Rc;

use super::batch::EncoderBatch;
use super::model::Seq2Seq;
use super::NetError;
use crate::seqcodec::Vocabulary;
use crate::tensor::{AttnSegment, Matrix, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    /// Beam search of the given width, without length normalisation.
    Beam(usize),
}

/// Encoder output of one question with the cross-attention keys and values
/// of every decoder layer precomputed.
#[derive(Clone, Debug)]
pub struct Memory {
    pub rows: Rc<Matrix>,
    keys: Vec<Rc<Matrix>>,
    values: Vec<Rc<Matrix>>,
}

/// Self-attention keys and values of one hypothesis, row-major per layer.
#[derive(Clone, Debug)]
struct Cache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<usize>,
    score: f64,
    finished: bool,
    cache: Cache,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - log_z).collect()
}

impl Seq2Seq {
    /// Inference-mode encoder output for the whole batch.
    pub fn encode_batch(&self, batch: &EncoderBatch) -> Result<Matrix, NetError> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape, false);
        let out = self.encode(&mut tape, &vars, batch, &mut None)?;
        Ok(tape.into_value(out))
    }

    pub fn memory(&self, encoded: Matrix) -> Memory {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape, false);
        let m = tape.constant(encoded.clone());
        let mut keys = Vec::with_capacity(self.dec.len());
        let mut values = Vec::with_capacity(self.dec.len());
        for layer in &self.dec {
            let k = self.linear(&mut tape, &vars, m, layer.ck);
            let v = self.linear(&mut tape, &vars, m, layer.cv);
            keys.push(Rc::new(tape.value(k).clone()));
            values.push(Rc::new(tape.value(v).clone()));
        }
        Memory {
            rows: Rc::new(encoded),
            keys,
            values,
        }
    }

    fn empty_cache(&self) -> Cache {
        Cache {
            keys: vec![Vec::new(); self.dec.len()],
            values: vec![Vec::new(); self.dec.len()],
        }
    }

    /// One decoder step for several hypotheses at position `pos`: feeds the
    /// last token of each, appends to its cache and returns next-token logits.
    fn step(
        &self,
        memory: &Memory,
        tokens: &[usize],
        pos: usize,
        caches: &mut [&mut Cache],
    ) -> Result<Matrix, NetError> {
        let d = self.cfg.d_model;
        let n = tokens.len();
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape, false);
        let positions = vec![pos; n];
        let mut x = self.embed(&mut tape, &vars, tokens, &positions, self.dec_pos, &mut None)?;
        let mem_rows = memory.rows.rows();
        let cross_segs: Vec<AttnSegment> = (0..n)
            .map(|b| AttnSegment {
                q_start: b,
                q_len: 1,
                k_start: 0,
                k_len: mem_rows,
            })
            .collect();
        let self_segs: Vec<AttnSegment> = (0..n)
            .map(|b| AttnSegment {
                q_start: b,
                q_len: 1,
                k_start: b * (pos + 1),
                k_len: pos + 1,
            })
            .collect();
        for (l, layer) in self.dec.iter().enumerate() {
            let h = self.norm(&mut tape, &vars, x, layer.ln1);
            let q = self.linear(&mut tape, &vars, h, layer.sq);
            let k = self.linear(&mut tape, &vars, h, layer.sk);
            let v = self.linear(&mut tape, &vars, h, layer.sv);
            let mut all_k = Vec::with_capacity(n * (pos + 1) * d);
            let mut all_v = Vec::with_capacity(n * (pos + 1) * d);
            for (b, cache) in caches.iter_mut().enumerate() {
                cache.keys[l].extend_from_slice(tape.value(k).row(b));
                cache.values[l].extend_from_slice(tape.value(v).row(b));
                debug_assert_eq!(cache.keys[l].len(), (pos + 1) * d);
                all_k.extend_from_slice(&cache.keys[l]);
                all_v.extend_from_slice(&cache.values[l]);
            }
            let kc = tape.constant(Matrix::from_vec(n * (pos + 1), d, all_k));
            let vc = tape.constant(Matrix::from_vec(n * (pos + 1), d, all_v));
            let a = tape.attention(q, kc, vc, self.cfg.heads, self_segs.clone(), false);
            let o = self.linear(&mut tape, &vars, a, layer.so);
            x = tape.add(x, o);

            let h = self.norm(&mut tape, &vars, x, layer.ln2);
            let q = self.linear(&mut tape, &vars, h, layer.cq);
            let mk = tape.shared(&memory.keys[l], false);
            let mv = tape.shared(&memory.values[l], false);
            let a = tape.attention(q, mk, mv, self.cfg.heads, cross_segs.clone(), false);
            let o = self.linear(&mut tape, &vars, a, layer.co);
            x = tape.add(x, o);

            let h = self.norm(&mut tape, &vars, x, layer.ln3);
            let f = self.ffn(&mut tape, &vars, h, layer.ff1, layer.ff2);
            x = tape.add(x, f);
        }
        let h = self.norm(&mut tape, &vars, x, self.dec_ln);
        let logits = tape.matmul_t(h, vars[self.tok]);
        Ok(tape.into_value(logits))
    }

    /// Logits of every prefix of `tokens` (which starts with the begin
    /// token), computed incrementally with the key/value cache.
    pub fn incremental_logits(&self, memory: &Memory, tokens: &[usize]) -> Result<Matrix, NetError> {
        let mut cache = self.empty_cache();
        let mut rows = Vec::with_capacity(tokens.len());
        for (pos, &t) in tokens.iter().enumerate() {
            rows.push(self.step(memory, &[t], pos, &mut [&mut cache])?);
        }
        let refs: Vec<&Matrix> = rows.iter().collect();
        Ok(Matrix::vstack(&refs))
    }

    /// Decoder output for one question, without begin or end tokens.
    pub fn decode_memory(
        &self,
        memory: &Memory,
        strategy: DecodeStrategy,
        max_out_len: usize,
    ) -> Result<Vec<usize>, NetError> {
        if max_out_len == 0 {
            return Err(NetError::Config("max_out_len must be at least 1".into()));
        }
        let steps = max_out_len.min(self.cfg.max_target_positions);
        match strategy {
            DecodeStrategy::Greedy => self.greedy(memory, steps),
            DecodeStrategy::Beam(k) => self.beam(memory, k.max(1), steps),
        }
    }

    fn greedy(&self, memory: &Memory, steps: usize) -> Result<Vec<usize>, NetError> {
        let mut cache = self.empty_cache();
        let mut out = Vec::new();
        let mut last = Vocabulary::BOS_ID;
        for pos in 0..steps {
            let logits = self.step(memory, &[last], pos, &mut [&mut cache])?;
            let row = logits.row(0);
            // first maximum wins, so ties go to the lowest id
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            if best == Vocabulary::EOS_ID {
                break;
            }
            out.push(best);
            last = best;
        }
        Ok(out)
    }

    fn beam(&self, memory: &Memory, width: usize, steps: usize) -> Result<Vec<usize>, NetError> {
        let mut beams = vec![Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
            cache: self.empty_cache(),
        }];
        for pos in 0..steps {
            if beams.iter().all(|b| b.finished) {
                break;
            }
            let active: Vec<usize> = (0..beams.len()).filter(|&i| !beams[i].finished).collect();
            let last: Vec<usize> = active
                .iter()
                .map(|&i| *beams[i].tokens.last().unwrap_or(&Vocabulary::BOS_ID))
                .collect();
            let logits = {
                let mut caches: Vec<&mut Cache> = beams
                    .iter_mut()
                    .filter(|b| !b.finished)
                    .map(|b| &mut b.cache)
                    .collect();
                self.step(memory, &last, pos, &mut caches)?
            };
            // (score, parent, token); token None carries a finished beam over
            let mut cands: Vec<(f64, usize, Option<usize>)> = Vec::new();
            for (i, b) in beams.iter().enumerate() {
                if b.finished {
                    cands.push((b.score, i, None));
                }
            }
            for (row, &i) in active.iter().enumerate() {
                let lp = log_softmax(logits.row(row));
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
                for &t in order.iter().take(width) {
                    cands.push((beams[i].score + lp[t], i, Some(t)));
                }
            }
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            cands.truncate(width);
            beams = cands
                .into_iter()
                .map(|(score, parent, tok)| {
                    let p = &beams[parent];
                    let mut h = Hypothesis {
                        tokens: p.tokens.clone(),
                        score,
                        finished: p.finished,
                        cache: p.cache.clone(),
                    };
                    match tok {
                        Some(Vocabulary::EOS_ID) => h.finished = true,
                        Some(t) => h.tokens.push(t),
                        None => {}
                    }
                    h
                })
                .collect();
        }
        // beams are kept sorted by score, so the first is the best
        Ok(beams.swap_remove(0).tokens)
    }

    /// Encodes the batch once and decodes every question in it.
    pub fn generate(
        &self,
        batch: &EncoderBatch,
        strategy: DecodeStrategy,
        max_out_len: usize,
    ) -> Result<Vec<Vec<usize>>, NetError> {
        let encoded = self.encode_batch(batch)?;
        batch
            .questions
            .iter()
            .map(|&(start, len)| {
                let memory = self.memory(encoded.slice_rows(start, len));
                self.decode_memory(&memory, strategy, max_out_len)
            })
            .collect()
    }
}
