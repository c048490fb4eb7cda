use super::MetricsRow;
use crate::data::PreferenceRecord;
use crate::lm::{RowGrad, ToyLanguageModel};
use crate::optim::{Optimizer, OptimizerKind};
use crate::text::Text;
use crate::{Error, Result};

pub const SFT_BATCH_SIZE: usize = 16;

/// Every (prompt, output) of `data`, in record order.
pub fn sft_corpus(data: &[PreferenceRecord]) -> Vec<(Text, Text)> {
    data.iter()
        .flat_map(|r| r.outputs().iter().map(|y| (r.prompt().clone(), y.clone())))
        .collect()
}

/// Maximum-likelihood fit of the bigram logits with Adam, in corpus order.
///
/// Only output tokens (and the end-of-sequence transition after each output)
/// carry loss; the prompt contributes its last token as context. Each
/// epoch's metrics row carries the mean per-token NLL over the corpus after
/// that epoch as `loss`.
pub fn fit_sft(
    corpus: &[(Text, Text)],
    epochs: usize,
    learning_rate: f64,
    init: ToyLanguageModel,
) -> Result<(ToyLanguageModel, Vec<MetricsRow>)> {
    if corpus.is_empty() {
        return Err(Error::Validation("SFT corpus is empty".into()));
    }
    let mut model = init;
    let cols = model.vocab_size();
    let encoded: Vec<(usize, Vec<usize>)> = corpus
        .iter()
        .map(|(x, y)| (model.context_row(x), model.vocab().encode(y)))
        .collect();
    let n_params = model.logits().len();
    let mut opt = Optimizer::new(OptimizerKind::Adam, learning_rate, n_params);
    let mut grad = vec![0.0; n_params];
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        for batch in encoded.chunks(SFT_BATCH_SIZE) {
            let mut g = RowGrad::default();
            for (ctx, ids) in batch {
                model.logprob_ids(*ctx, ids, true, Some(&mut g));
            }
            grad.fill(0.0);
            // ascend log-likelihood = descend its negation
            g.axpy_into(-1.0 / batch.len() as f64, &mut grad, cols);
            opt.step(model.logits_mut(), &grad);
        }
        history.push(MetricsRow {
            step: epoch,
            loss: Some(mean_token_nll(&model, corpus)),
            ..MetricsRow::default()
        });
    }
    Ok((model, history))
}

/// Mean per-token negative log-likelihood (end-of-sequence included).
pub fn mean_token_nll(model: &ToyLanguageModel, corpus: &[(Text, Text)]) -> f64 {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (x, y) in corpus {
        let ids = model.vocab().encode(y);
        nll -= model.logprob_ids(model.context_row(x), &ids, true, None);
        tokens += ids.len() + 1;
    }
    nll / tokens as f64
}
