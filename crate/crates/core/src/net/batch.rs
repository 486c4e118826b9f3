use super::{Mode, NetError, TaskConfig};
use crate::corpus::QuestionInstance;
use crate::fusion::{FusionPlan, GnnConfig, PlanPart};
use crate::graphbuild::{build_local_graph, LocalGraph};
use crate::seqcodec::{
    assemble_all, linearize_path, EncodedSequence, PathVariant, ReasoningPath, Vocabulary, ANSWER,
};
use crate::tensor::AttnSegment;

/// One question ready for batching: encoded passages, its graph and the
/// target token ids (without begin/end tokens).
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub sequences: Vec<EncodedSequence>,
    pub graph: LocalGraph,
    pub target: Vec<usize>,
}

/// Target string: `[answer] A` for answer-only training, the linearized
/// gold path otherwise.
pub fn target_text(
    inst: &QuestionInstance,
    mode: Mode,
    variant: PathVariant,
    fact_cap: usize,
    hop_cap: usize,
) -> Result<String, NetError> {
    if !mode.emits_path() {
        return Ok(format!("{ANSWER} {}", inst.answer));
    }
    let path = ReasoningPath::gold(inst, variant);
    Ok(linearize_path(&path, fact_cap, hop_cap)?)
}

pub fn prepare_example(
    inst: &QuestionInstance,
    vocab: &Vocabulary,
    task: &TaskConfig,
) -> Result<Example, NetError> {
    let graph = build_local_graph(inst);
    let sequences = assemble_all(inst, &graph, vocab, task.max_len)?;
    let text = target_text(inst, task.mode, task.variant, vocab.fact_cap(), vocab.hop_cap())?;
    Ok(Example {
        id: inst.id.clone(),
        sequences,
        graph,
        target: vocab.encode(&text),
    })
}

/// All passages of several questions stacked row-wise. Self-attention runs
/// per passage; cross-attention sees all passages of the same question.
#[derive(Clone, Debug)]
pub struct EncoderBatch {
    pub ids: Vec<usize>,
    /// Position within the passage, restarting at zero for every passage.
    pub positions: Vec<usize>,
    pub passage_segments: Vec<AttnSegment>,
    /// `(first row, row count)` per question.
    pub questions: Vec<(usize, usize)>,
    /// `(first passage, passage count)` per question, indexing
    /// `passage_segments`.
    pub question_passages: Vec<(usize, usize)>,
    /// Present when graph fusion is requested.
    pub plan: Option<FusionPlan>,
}

impl EncoderBatch {
    pub fn new(examples: &[&Example], gnn: Option<&GnnConfig>) -> Self {
        let mut b = EncoderBatch {
            ids: Vec::new(),
            positions: Vec::new(),
            passage_segments: Vec::new(),
            questions: Vec::new(),
            question_passages: Vec::new(),
            plan: None,
        };
        let mut rows_per_example = Vec::with_capacity(examples.len());
        for ex in examples {
            let q_start = b.ids.len();
            b.question_passages
                .push((b.passage_segments.len(), ex.sequences.len()));
            let mut rows = Vec::with_capacity(ex.sequences.len());
            for seq in &ex.sequences {
                let start = b.ids.len();
                rows.push(start);
                b.ids.extend(&seq.token_ids);
                b.positions.extend(0..seq.len());
                b.passage_segments.push(AttnSegment {
                    q_start: start,
                    q_len: seq.len(),
                    k_start: start,
                    k_len: seq.len(),
                });
            }
            b.questions.push((q_start, b.ids.len() - q_start));
            rows_per_example.push(rows);
        }
        if let Some(cfg) = gnn {
            let parts: Vec<PlanPart<'_>> = examples
                .iter()
                .zip(&rows_per_example)
                .map(|(ex, rows)| PlanPart {
                    graph: &ex.graph,
                    sequences: &ex.sequences,
                    passage_rows: rows,
                })
                .collect();
            b.plan = Some(FusionPlan::new(cfg, &parts));
        }
        b
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// `(first row, length)` of every passage in batch order.
    pub fn passage_ranges(&self) -> Vec<(usize, usize)> {
        self.passage_segments
            .iter()
            .map(|s| (s.q_start, s.q_len))
            .collect()
    }
}

/// Teacher-forcing inputs `[BOS] y` and labels `y [EOS]` per question,
/// stacked row-wise.
#[derive(Clone, Debug)]
pub struct DecoderBatch {
    pub inputs: Vec<usize>,
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(first row, row count)` per question.
    pub questions: Vec<(usize, usize)>,
}

impl DecoderBatch {
    /// Targets longer than `max_positions - 1` tokens are cut, losing the
    /// end token.
    pub fn new(targets: &[&[usize]], max_positions: usize) -> Self {
        let mut b = DecoderBatch {
            inputs: Vec::new(),
            positions: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
            questions: Vec::new(),
        };
        for target in targets {
            let mut inputs = vec![Vocabulary::BOS_ID];
            inputs.extend_from_slice(target);
            let mut labels = target.to_vec();
            labels.push(Vocabulary::EOS_ID);
            if inputs.len() > max_positions {
                log::warn!(
                    "target of {} tokens cut to {} decoder positions",
                    target.len(),
                    max_positions
                );
                inputs.truncate(max_positions);
                labels.truncate(max_positions);
            }
            b.questions.push((b.inputs.len(), inputs.len()));
            b.positions.extend(0..inputs.len());
            b.weights.extend(std::iter::repeat_n(1.0, inputs.len()));
            b.inputs.extend(inputs);
            b.labels.extend(labels);
        }
        b
    }

    pub fn from_examples(examples: &[&Example], max_positions: usize) -> Self {
        let targets: Vec<&[usize]> = examples.iter().map(|e| e.target.as_slice()).collect();
        Self::new(&targets, max_positions)
    }
}
