//! Trainers for every objective: reward modeling (vanilla and constrained,
//! pairwise and listwise), DPO/PCDPO, SFT fitting of the bigram model, and
//! KL-regularized policy improvement.
//!
//! All trainers are sequential and draw randomness from a single seeded
//! ChaCha stream, so a run is reproducible bit for bit. Batch gradients are
//! averaged over the batch.

mod align;
mod dpo;
mod metrics;
mod reward;
mod sft;

pub use align::{align_policy, AlignConfig};
pub use dpo::{train_dpo, DpoPair};
pub use metrics::{metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use reward::{train_reward_model, PreparedPair};
pub use sft::{fit_sft, mean_token_nll, sft_corpus, SFT_BATCH_SIZE};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{pair_indices, PreferenceRecord};
use crate::optim::OptimizerKind;
use crate::similarity::{max_margin, similarity, ConstraintParams, Embedder, SimKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Expand records into pairs and apply the pairwise (or constrained) loss.
    Pairwise,
    /// Plackett-Luce over each full ranking. Constraints do not apply.
    Listwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub seed: u64,
    pub constraint: Option<ConstraintParams>,
    pub shuffle: bool,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            batch_size: 32,
            seed: 0,
            constraint: None,
            shuffle: true,
            objective: Objective::Pairwise,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.constraint.is_some() && self.objective == Objective::Listwise {
            return Err(Error::Config(
                "the max-margin constraint applies to pairwise training only".into(),
            ));
        }
        Ok(())
    }
}

fn require_data(data: &[PreferenceRecord]) -> Result<()> {
    if data.is_empty() {
        Err(Error::Validation("training data is empty".into()))
    } else {
        Ok(())
    }
}

fn require_provider(
    constraint: Option<&ConstraintParams>,
    provider: Option<&dyn Embedder>,
) -> Result<()> {
    match constraint {
        Some(c) if c.sim_kind() == SimKind::Cosine && provider.is_none() => Err(Error::Config(
            "a cosine-similarity constraint needs an embedding provider".into(),
        )),
        _ => Ok(()),
    }
}

/// Similarity and Δ* of one winner/loser pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConstraint {
    pub sim: f64,
    pub delta_star: f64,
}

/// Δ* for every expanded pair of `data`, in record-then-pair order.
pub fn pair_constraints(
    data: &[PreferenceRecord],
    params: &ConstraintParams,
    provider: Option<&dyn Embedder>,
) -> Result<Vec<PairConstraint>> {
    let mut out = Vec::new();
    for r in data {
        for (i, j) in pair_indices(r.outputs().len()) {
            let sim = similarity(
                params.sim_kind(),
                r.prompt(),
                &r.outputs()[i],
                &r.outputs()[j],
                provider,
            )?;
            out.push(PairConstraint {
                sim,
                delta_star: max_margin(sim, params),
            });
        }
    }
    Ok(out)
}

fn epoch_order(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
