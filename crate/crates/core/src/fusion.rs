//! Entity-passage fusion: graph nodes are initialised from the mean of their
//! token rows in the lower encoder output, refined by a graph attention
//! network, and added back onto their own token rows.

use std::fmt::Write as _;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graphbuild::LocalGraph;
use crate::seqcodec::EncodedSequence;
use crate::tensor::{Adjacency, Matrix, ParamStore, RowSpan, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Let titles send back to the entity mentions that point at them.
    pub add_reverse_edges: bool,
    pub add_self_loops: bool,
    pub leaky_slope: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            dropout: 0.2,
            add_reverse_edges: true,
            add_self_loops: true,
            leaky_slope: 0.2,
        }
    }
}

impl GnnConfig {
    pub fn check(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("gnn.layers must be at least 1".into());
        }
        if self.heads == 0 {
            return Err("gnn.heads must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("gnn.dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Scalar parameter count of a GAT stack over `d_model`-wide nodes. Every
/// head projects to the full width and heads are averaged.
pub fn gnn_param_count(d_model: usize, heads: usize, layers: usize) -> usize {
    layers * (d_model * heads * d_model + 2 * heads * d_model + d_model)
}

/// GNN size at the published backbone widths against the T5 parameter
/// counts, plus the current model when given.
pub fn overhead_report(current: Option<(usize, usize)>) -> String {
    let mut out = String::new();
    for (name, d, backbone) in [("base", 768usize, 222_903_552usize), ("large", 1024, 737_668_096)] {
        let g = gnn_param_count(d, 8, 2);
        let _ = writeln!(
            out,
            "gnn at {name} scale (d={d}, 8 heads, 2 layers): {:.1}M params, {:.1}% of the backbone",
            g as f64 / 1e6,
            100.0 * g as f64 / backbone as f64
        );
    }
    if let Some((gnn, total)) = current {
        let _ = writeln!(
            out,
            "gnn in this model: {gnn} of {total} params ({:.1}%)",
            100.0 * gnn as f64 / total.max(1) as f64
        );
    }
    out
}

/// Node spans and augmented adjacency for a batch of graphs stacked into one
/// hidden block.
#[derive(Clone, Debug)]
pub struct FusionPlan {
    /// Global row span per node; `None` for nodes cut by truncation.
    pub spans: Vec<Option<RowSpan>>,
    /// Receiver-major sender lists after adding reverse edges and self
    /// loops; truncated nodes never send.
    pub adjacency: Adjacency,
}

/// One question's graph, its encoded passages and the first row of each
/// passage in the stacked block.
pub struct PlanPart<'a> {
    pub graph: &'a LocalGraph,
    pub sequences: &'a [EncodedSequence],
    pub passage_rows: &'a [usize],
}

impl FusionPlan {
    pub fn new(cfg: &GnnConfig, parts: &[PlanPart<'_>]) -> Self {
        let mut spans = Vec::new();
        let mut adjacency: Vec<Vec<usize>> = Vec::new();
        for part in parts {
            let base = spans.len();
            let n = part.graph.nodes.len();
            for (local, node) in part.graph.nodes.iter().enumerate() {
                let seq = &part.sequences[node.passage_idx];
                let row0 = part.passage_rows[node.passage_idx];
                spans.push(
                    seq.spans
                        .get(&local)
                        .map(|s| RowSpan::new(row0 + s.start, row0 + s.end)),
                );
            }
            let mut senders: Vec<Vec<usize>> = vec![Vec::new(); n];
            for &(src, dst) in &part.graph.edges {
                senders[dst].push(src);
                if cfg.add_reverse_edges {
                    senders[src].push(dst);
                }
            }
            for (i, s) in senders.iter_mut().enumerate() {
                if cfg.add_self_loops {
                    s.push(i);
                }
                s.retain(|&j| spans[base + j].is_some());
                s.sort_unstable();
                s.dedup();
                adjacency.push(s.iter().map(|&j| base + j).collect());
            }
        }
        Self {
            spans,
            adjacency: Rc::new(adjacency),
        }
    }

    pub fn node_count(&self) -> usize {
        self.spans.len()
    }

    /// A plan without nodes leaves the hidden block untouched.
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Node rows: the mean of each node's token rows; zero for truncated nodes.
pub fn init_nodes(tape: &mut Tape, hidden: Var, plan: &FusionPlan) -> Var {
    tape.span_mean(hidden, &plan.spans)
}

/// `hidden` plus each node row broadcast over its own token span.
pub fn scatter_fuse(tape: &mut Tape, hidden: Var, nodes: Var, plan: &FusionPlan) -> Var {
    tape.scatter_add(hidden, nodes, &plan.spans)
}

/// Parameter indices of the GAT stack inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gnn {
    pub w: Vec<usize>,
    pub a_src: Vec<usize>,
    pub a_dst: Vec<usize>,
    pub bias: Vec<usize>,
}

impl Gnn {
    pub fn new(
        cfg: &GnnConfig,
        d_model: usize,
        store: &mut ParamStore,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut g = Gnn {
            w: Vec::new(),
            a_src: Vec::new(),
            a_dst: Vec::new(),
            bias: Vec::new(),
        };
        for l in 0..cfg.layers {
            g.w.push(store.normal(format!("gnn.{l}.w"), d_model, cfg.heads * d_model, std, rng));
            g.a_src.push(store.normal(format!("gnn.{l}.a_src"), cfg.heads, d_model, std, rng));
            g.a_dst.push(store.normal(format!("gnn.{l}.a_dst"), cfg.heads, d_model, std, rng));
            g.bias.push(store.zeros(format!("gnn.{l}.bias"), 1, d_model));
        }
        g
    }

    /// Runs the stack; returns the output and each layer's graph-attention
    /// node (for coefficient inspection). Dropout on layer inputs applies
    /// only when `rng` is given.
    pub fn propagate(
        &self,
        cfg: &GnnConfig,
        tape: &mut Tape,
        vars: &[Var],
        nodes: Var,
        adjacency: &Adjacency,
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> (Var, Vec<Var>) {
        let d = tape.value(nodes).cols();
        let heads = cfg.heads;
        let mean = Matrix::from_fn(heads * d, d, |r, c| {
            if r % d == c {
                1.0 / heads as f64
            } else {
                0.0
            }
        });
        let mean = tape.constant(mean);
        let mut x = nodes;
        let mut att = Vec::with_capacity(self.w.len());
        for l in 0..self.w.len() {
            if let Some(r) = rng.as_deref_mut() {
                if cfg.dropout > 0.0 {
                    let (rows, cols) = tape.value(x).shape();
                    let keep: Vec<bool> =
                        (0..rows * cols).map(|_| r.random::<f64>() >= cfg.dropout).collect();
                    x = tape.dropout(x, &keep, cfg.dropout);
                }
            }
            let h = tape.matmul(x, vars[self.w[l]]);
            let a = tape.graph_attention(
                h,
                vars[self.a_src[l]],
                vars[self.a_dst[l]],
                heads,
                Rc::clone(adjacency),
                cfg.leaky_slope,
            );
            att.push(a);
            let m = tape.matmul(a, mean);
            x = tape.add_row(m, vars[self.bias[l]]);
            if l + 1 < self.w.len() {
                x = tape.elu(x);
            }
        }
        (x, att)
    }
}

/// Full fusion step on a stacked hidden block; the identity when the plan
/// has no nodes.
pub fn fuse(
    cfg: &GnnConfig,
    gnn: &Gnn,
    tape: &mut Tape,
    vars: &[Var],
    hidden: Var,
    plan: &FusionPlan,
    rng: Option<&mut dyn rand::RngCore>,
) -> Var {
    if plan.is_empty() {
        return hidden;
    }
    let nodes = init_nodes(tape, hidden, plan);
    let (out, _) = gnn.propagate(cfg, tape, vars, nodes, &plan.adjacency, rng);
    scatter_fuse(tape, hidden, out, plan)
}

/// Attention coefficients as dense receiver x sender matrices, one block per
/// layer and head.
pub fn attention_dump(tape: &Tape, layers: &[Var], adjacency: &Adjacency) -> String {
    let n = adjacency.len();
    let mut out = String::new();
    for (l, &v) in layers.iter().enumerate() {
        let Some(coef) = tape.graph_attention_coefficients(v) else { continue };
        for (h, per_head) in coef.iter().enumerate() {
            let _ = writeln!(out, "# layer {l} head {h}");
            for (i, row) in per_head.iter().enumerate() {
                let mut dense = vec![0.0; n];
                for (&j, &a) in adjacency[i].iter().zip(row) {
                    dense[j] = a;
                }
                let line: Vec<String> = dense.iter().map(|a| format!("{a:.6}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
    }
    out
}
