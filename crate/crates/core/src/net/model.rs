use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{DecoderBatch, EncoderBatch};
use super::{ModelConfig, NetError};
use crate::fusion::{self, Gnn, GnnConfig};
use crate::tensor::{AttnSegment, Matrix, ParamStore, Tape, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayer {
    pub ln1: Norm,
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
    pub ln2: Norm,
    pub ff1: Lin,
    pub ff2: Lin,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayer {
    pub ln1: Norm,
    pub sq: Lin,
    pub sk: Lin,
    pub sv: Lin,
    pub so: Lin,
    pub ln2: Norm,
    pub cq: Lin,
    pub ck: Lin,
    pub cv: Lin,
    pub co: Lin,
    pub ln3: Norm,
    pub ff1: Lin,
    pub ff2: Lin,
}

/// Per-passage hidden states stacked row-wise; `passages[i]` is the
/// `(first row, length)` of passage `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenBlock {
    pub rows: Matrix,
    pub passages: Vec<(usize, usize)>,
}

impl HiddenBlock {
    pub fn block(&self, i: usize) -> Matrix {
        let (s, n) = self.passages[i];
        self.rows.slice_rows(s, n)
    }
}

/// The transformer plus, when fusion is on, the GAT stack. Token embeddings
/// are shared by encoder and decoder and tied to the output projection.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub cfg: ModelConfig,
    pub gnn_cfg: GnnConfig,
    pub store: ParamStore,
    pub(crate) tok: usize,
    pub(crate) enc_pos: usize,
    pub(crate) dec_pos: usize,
    pub(crate) enc: Vec<EncLayer>,
    pub(crate) enc_ln: Norm,
    pub(crate) dec: Vec<DecLayer>,
    pub(crate) dec_ln: Norm,
    pub(crate) gnn: Option<Gnn>,
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Option<&mut dyn RngCore>) -> Var {
    match rng {
        Some(r) if p > 0.0 => {
            let (rows, cols) = tape.value(x).shape();
            let keep: Vec<bool> = (0..rows * cols).map(|_| r.random::<f64>() >= p).collect();
            tape.dropout(x, &keep, p)
        }
        _ => x,
    }
}

impl Seq2Seq {
    /// Fresh model; parameters are drawn from `seed`. Fusion parameters are
    /// created only when `gnn` is given.
    pub fn new(cfg: ModelConfig, gnn: Option<GnnConfig>, seed: u64) -> Result<Self, NetError> {
        cfg.check()?;
        if let Some(g) = &gnn {
            g.check().map_err(NetError::Config)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, ff, std) = (cfg.d_model, cfg.d_ff, cfg.init_std);
        let tok = s.normal("embed.tokens", cfg.vocab_size, d, std, &mut rng);
        let enc_pos = s.normal("embed.enc_pos", cfg.max_positions, d, std, &mut rng);
        let dec_pos = s.normal("embed.dec_pos", cfg.max_target_positions, d, std, &mut rng);
        let lin = |s: &mut ParamStore, name: String, i: usize, o: usize, rng: &mut ChaCha8Rng| Lin {
            w: s.normal(format!("{name}.w"), i, o, std, rng),
            b: s.zeros(format!("{name}.b"), 1, o),
        };
        let norm = |s: &mut ParamStore, name: String| Norm {
            g: s.ones(format!("{name}.g"), 1, d),
            b: s.zeros(format!("{name}.b"), 1, d),
        };
        let mut enc = Vec::with_capacity(cfg.enc_layers);
        for l in 0..cfg.enc_layers {
            let p = format!("enc.{l}");
            enc.push(EncLayer {
                ln1: norm(&mut s, format!("{p}.ln1")),
                q: lin(&mut s, format!("{p}.attn.q"), d, d, &mut rng),
                k: lin(&mut s, format!("{p}.attn.k"), d, d, &mut rng),
                v: lin(&mut s, format!("{p}.attn.v"), d, d, &mut rng),
                o: lin(&mut s, format!("{p}.attn.o"), d, d, &mut rng),
                ln2: norm(&mut s, format!("{p}.ln2")),
                ff1: lin(&mut s, format!("{p}.ff1"), d, ff, &mut rng),
                ff2: lin(&mut s, format!("{p}.ff2"), ff, d, &mut rng),
            });
        }
        let enc_ln = norm(&mut s, "enc.ln".into());
        let mut dec = Vec::with_capacity(cfg.dec_layers);
        for l in 0..cfg.dec_layers {
            let p = format!("dec.{l}");
            dec.push(DecLayer {
                ln1: norm(&mut s, format!("{p}.ln1")),
                sq: lin(&mut s, format!("{p}.self.q"), d, d, &mut rng),
                sk: lin(&mut s, format!("{p}.self.k"), d, d, &mut rng),
                sv: lin(&mut s, format!("{p}.self.v"), d, d, &mut rng),
                so: lin(&mut s, format!("{p}.self.o"), d, d, &mut rng),
                ln2: norm(&mut s, format!("{p}.ln2")),
                cq: lin(&mut s, format!("{p}.cross.q"), d, d, &mut rng),
                ck: lin(&mut s, format!("{p}.cross.k"), d, d, &mut rng),
                cv: lin(&mut s, format!("{p}.cross.v"), d, d, &mut rng),
                co: lin(&mut s, format!("{p}.cross.o"), d, d, &mut rng),
                ln3: norm(&mut s, format!("{p}.ln3")),
                ff1: lin(&mut s, format!("{p}.ff1"), d, ff, &mut rng),
                ff2: lin(&mut s, format!("{p}.ff2"), ff, d, &mut rng),
            });
        }
        let dec_ln = norm(&mut s, "dec.ln".into());
        let gnn_cfg = gnn.clone().unwrap_or_default();
        let gnn = gnn.map(|g| Gnn::new(&g, d, &mut s, std, &mut rng));
        Ok(Self {
            cfg,
            gnn_cfg,
            store: s,
            tok,
            enc_pos,
            dec_pos,
            enc,
            enc_ln,
            dec,
            dec_ln,
            gnn,
        })
    }

    pub fn has_fusion(&self) -> bool {
        self.gnn.is_some()
    }

    /// Scalar counts `(gnn, total)`.
    pub fn param_counts(&self) -> (usize, usize) {
        (
            self.store.scalar_count_with_prefix("gnn."),
            self.store.scalar_count(),
        )
    }

    pub(crate) fn linear(&self, tape: &mut Tape, vars: &[Var], x: Var, l: Lin) -> Var {
        let y = tape.matmul(x, vars[l.w]);
        tape.add_row(y, vars[l.b])
    }

    pub(crate) fn norm(&self, tape: &mut Tape, vars: &[Var], x: Var, n: Norm) -> Var {
        tape.layer_norm(x, vars[n.g], vars[n.b], LN_EPS)
    }

    pub(crate) fn ffn(&self, tape: &mut Tape, vars: &[Var], x: Var, ff1: Lin, ff2: Lin) -> Var {
        let h = self.linear(tape, vars, x, ff1);
        let h = tape.gelu(h);
        self.linear(tape, vars, h, ff2)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), NetError> {
        match ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            Some(&id) => Err(NetError::TokenOutOfRange {
                id,
                vocab: self.cfg.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn embed(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ids: &[usize],
        positions: &[usize],
        pos_table: usize,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, NetError> {
        self.check_ids(ids)?;
        let table = self.store.value(pos_table).rows();
        if let Some(&p) = positions.iter().find(|&&p| p >= table) {
            return Err(NetError::Config(format!(
                "position {p} beyond the {table} learned positions"
            )));
        }
        let t = tape.gather_rows(vars[self.tok], ids);
        let p = tape.gather_rows(vars[pos_table], positions);
        let x = tape.add(t, p);
        Ok(dropout(tape, x, self.cfg.dropout, rng))
    }

    fn encoder_layer(
        &self,
        l: usize,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        segments: &[AttnSegment],
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Var {
        let layer = &self.enc[l];
        let h = self.norm(tape, vars, x, layer.ln1);
        let q = self.linear(tape, vars, h, layer.q);
        let k = self.linear(tape, vars, h, layer.k);
        let v = self.linear(tape, vars, h, layer.v);
        let a = tape.attention(q, k, v, self.cfg.heads, segments.to_vec(), false);
        let o = self.linear(tape, vars, a, layer.o);
        let o = dropout(tape, o, self.cfg.dropout, rng);
        let x = tape.add(x, o);
        let h = self.norm(tape, vars, x, layer.ln2);
        let f = self.ffn(tape, vars, h, layer.ff1, layer.ff2);
        let f = dropout(tape, f, self.cfg.dropout, rng);
        tape.add(x, f)
    }

    /// Embeddings followed by the first L encoder layers (Z^L).
    pub fn encode_lower(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &EncoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, NetError> {
        let mut x = self.embed(tape, vars, &batch.ids, &batch.positions, self.enc_pos, rng)?;
        for l in 0..self.cfg.fusion_layer {
            x = self.encoder_layer(l, tape, vars, x, &batch.passage_segments, rng);
        }
        Ok(x)
    }

    /// Layers L+1..M and the final encoder norm.
    pub fn encode_upper(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        batch: &EncoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Var {
        let mut x = x;
        for l in self.cfg.fusion_layer..self.cfg.enc_layers {
            x = self.encoder_layer(l, tape, vars, x, &batch.passage_segments, rng);
        }
        self.norm(tape, vars, x, self.enc_ln)
    }

    /// Graph fusion on Z^L; the identity without a GNN or a plan.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        lower: Var,
        batch: &EncoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Var {
        match (&self.gnn, &batch.plan) {
            (Some(gnn), Some(plan)) => {
                let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
                fusion::fuse(&self.gnn_cfg, gnn, tape, vars, lower, plan, r)
            }
            _ => lower,
        }
    }

    /// Full encoder: lower layers, fusion, upper layers.
    pub fn encode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &EncoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, NetError> {
        let lower = self.encode_lower(tape, vars, batch, rng)?;
        let fused = self.fuse(tape, vars, lower, batch, rng);
        Ok(self.encode_upper(tape, vars, fused, batch, rng))
    }

    /// Teacher-forced decoder logits, one row per decoder input token.
    pub fn decode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        memory: Var,
        enc: &EncoderBatch,
        dec: &DecoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var, NetError> {
        assert_eq!(enc.questions.len(), dec.questions.len(), "batch question counts");
        let self_segs: Vec<AttnSegment> = dec
            .questions
            .iter()
            .map(|&(s, n)| AttnSegment {
                q_start: s,
                q_len: n,
                k_start: s,
                k_len: n,
            })
            .collect();
        let cross_segs: Vec<AttnSegment> = dec
            .questions
            .iter()
            .zip(&enc.questions)
            .map(|(&(qs, qn), &(ks, kn))| AttnSegment {
                q_start: qs,
                q_len: qn,
                k_start: ks,
                k_len: kn,
            })
            .collect();
        let mut x = self.embed(tape, vars, &dec.inputs, &dec.positions, self.dec_pos, rng)?;
        for layer in &self.dec {
            let h = self.norm(tape, vars, x, layer.ln1);
            let q = self.linear(tape, vars, h, layer.sq);
            let k = self.linear(tape, vars, h, layer.sk);
            let v = self.linear(tape, vars, h, layer.sv);
            let a = tape.attention(q, k, v, self.cfg.heads, self_segs.clone(), true);
            let o = self.linear(tape, vars, a, layer.so);
            let o = dropout(tape, o, self.cfg.dropout, rng);
            x = tape.add(x, o);

            let h = self.norm(tape, vars, x, layer.ln2);
            let q = self.linear(tape, vars, h, layer.cq);
            let k = self.linear(tape, vars, memory, layer.ck);
            let v = self.linear(tape, vars, memory, layer.cv);
            let a = tape.attention(q, k, v, self.cfg.heads, cross_segs.clone(), false);
            let o = self.linear(tape, vars, a, layer.co);
            let o = dropout(tape, o, self.cfg.dropout, rng);
            x = tape.add(x, o);

            let h = self.norm(tape, vars, x, layer.ln3);
            let f = self.ffn(tape, vars, h, layer.ff1, layer.ff2);
            let f = dropout(tape, f, self.cfg.dropout, rng);
            x = tape.add(x, f);
        }
        let h = self.norm(tape, vars, x, self.dec_ln);
        Ok(tape.matmul_t(h, vars[self.tok]))
    }

    /// Mean token cross entropy of a batch; padding-free by construction,
    /// zero-weight rows are ignored.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        enc: &EncoderBatch,
        dec: &DecoderBatch,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var), NetError> {
        let memory = self.encode(tape, vars, enc, rng)?;
        let logits = self.decode(tape, vars, memory, enc, dec, rng)?;
        let loss = tape.cross_entropy(logits, &dec.labels, &dec.weights);
        Ok((loss, logits))
    }

    /// Inference-mode Z^L, fused Z^L and final encoder output.
    pub fn encoder_states(&self, batch: &EncoderBatch) -> Result<[HiddenBlock; 3], NetError> {
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape, false);
        let lower = self.encode_lower(&mut tape, &vars, batch, &mut None)?;
        let fused = self.fuse(&mut tape, &vars, lower, batch, &mut None);
        let out = self.encode_upper(&mut tape, &vars, fused, batch, &mut None);
        let block = |v: Var| HiddenBlock {
            rows: tape.value(v).clone(),
            passages: batch.passage_ranges(),
        };
        Ok([block(lower), block(fused), block(out)])
    }
}
