//! Glue between the model and the evaluator: batched prediction over
//! instances.

use crate::corpus::QuestionInstance;
use crate::eval::Prediction;
use crate::net::{prepare_example, DecodeStrategy, EncoderBatch, Example, NetError, Seq2Seq, TaskConfig};
use crate::seqcodec::Vocabulary;

/// Examples for every instance, in order.
pub fn prepare_all(
    instances: &[QuestionInstance],
    vocab: &Vocabulary,
    task: &TaskConfig,
) -> Result<Vec<Example>, NetError> {
    instances
        .iter()
        .map(|i| prepare_example(i, vocab, task))
        .collect()
}

/// Generates and parses one output per instance.
pub fn predict(
    model: &Seq2Seq,
    vocab: &Vocabulary,
    task: &TaskConfig,
    instances: &[QuestionInstance],
    strategy: DecodeStrategy,
    batch_size: usize,
) -> Result<Vec<Prediction>, NetError> {
    let examples = prepare_all(instances, vocab, task)?;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = EncoderBatch::new(&refs, model.has_fusion().then_some(&model.gnn_cfg));
        let outputs = model.generate(&batch, strategy, task.max_out_len)?;
        for (ex, ids) in chunk.iter().zip(outputs) {
            out.push(Prediction::new(ex.id.clone(), vocab.decode(&ids), task.variant));
        }
    }
    Ok(out)
}
