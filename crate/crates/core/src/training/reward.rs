use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    epoch_order, mean, pair_constraints, require_data, require_provider, MetricsRow, Objective,
    PairConstraint, TrainConfig,
};
use crate::data::{pair_indices, PreferenceRecord};
use crate::features::{FeatureMap, SparseVec};
use crate::losses::{pairwise_rank_loss, pcrm_loss, plackett_luce_loss, LossGrad, PairScores};
use crate::optim::Optimizer;
use crate::reward::RewardModel;
use crate::similarity::Embedder;
use crate::{Error, Result};

/// A winner/loser pair reduced to its feature difference, with Δ* cached
/// when a constraint is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub record: usize,
    pub diff: SparseVec,
    pub constraint: Option<PairConstraint>,
}

impl PreparedPair {
    pub fn margin(&self, weights: &[f64]) -> f64 {
        self.diff.dot_dense(weights)
    }

    /// Loss and margin derivative at `margin`; PCRM when Δ* is cached.
    pub fn loss(&self, margin: f64) -> Result<LossGrad> {
        let s = PairScores::new(margin, 0.0);
        match self.constraint {
            Some(c) => pcrm_loss(s, c.delta_star),
            None => pairwise_rank_loss(s),
        }
    }
}

fn prepare_pairs(
    data: &[PreferenceRecord],
    map: &FeatureMap,
    constraints: Option<Vec<PairConstraint>>,
) -> Vec<PreparedPair> {
    let mut out = Vec::new();
    for (ri, r) in data.iter().enumerate() {
        let feats: Vec<SparseVec> = r
            .outputs()
            .iter()
            .map(|y| map.sparse_features(r.prompt(), y))
            .collect();
        for (i, j) in pair_indices(feats.len()) {
            out.push(PreparedPair {
                record: ri,
                diff: feats[i].sub(&feats[j]),
                constraint: None,
            });
        }
    }
    if let Some(cs) = constraints {
        for (p, c) in out.iter_mut().zip(cs) {
            p.constraint = Some(c);
        }
    }
    out
}

fn pair_accuracy(pairs: &[PreparedPair], weights: &[f64]) -> f64 {
    let correct = pairs.iter().filter(|p| p.margin(weights) > 0.0).count();
    correct as f64 / pairs.len() as f64
}

fn pair_metrics(step: usize, pairs: &[PreparedPair], weights: &[f64]) -> Result<MetricsRow> {
    let margins: Vec<f64> = pairs.iter().map(|p| p.margin(weights)).collect();
    let mut loss = 0.0;
    for (p, m) in pairs.iter().zip(&margins) {
        loss += p.loss(*m)?.value;
    }
    let constrained = pairs.first().is_some_and(|p| p.constraint.is_some());
    Ok(MetricsRow {
        step,
        loss: Some(loss / pairs.len() as f64),
        accuracy: Some(pair_accuracy(pairs, weights)),
        mean_margin: mean(margins.iter().copied()),
        constraint_active_fraction: constrained.then(|| {
            let active = pairs
                .iter()
                .zip(&margins)
                .filter(|(p, m)| **m > p.constraint.unwrap().delta_star / 2.0)
                .count();
            active as f64 / pairs.len() as f64
        }),
        ..MetricsRow::default()
    })
}

/// Trains a linear reward model on ranked records.
///
/// Pairwise mode uses the Bradley-Terry loss, or the PCRM loss with a
/// per-pair Δ* when `config.constraint` is set. Listwise mode uses the
/// Plackett-Luce loss over whole rankings. With `validation`, the epoch with
/// the best validation accuracy is returned; otherwise the last one.
pub fn train_reward_model(
    data: &[PreferenceRecord],
    validation: Option<&[PreferenceRecord]>,
    config: &TrainConfig,
    init: RewardModel,
    provider: Option<&dyn Embedder>,
) -> Result<(RewardModel, Vec<MetricsRow>)> {
    require_data(data)?;
    config.validate()?;
    require_provider(config.constraint.as_ref(), provider)?;
    let map = *init.feature_map();
    let dim = map.dimension();

    let constraints = match &config.constraint {
        Some(c) => Some(pair_constraints(data, c, provider)?),
        None => None,
    };
    let pairs = prepare_pairs(data, &map, constraints);
    let val_pairs = validation
        .filter(|v| !v.is_empty())
        .map(|v| prepare_pairs(v, &map, None));
    let lists: Vec<Vec<SparseVec>> = match config.objective {
        Objective::Listwise => data
            .iter()
            .map(|r| {
                r.outputs()
                    .iter()
                    .map(|y| map.sparse_features(r.prompt(), y))
                    .collect()
            })
            .collect(),
        Objective::Pairwise => Vec::new(),
    };
    let n_items = match config.objective {
        Objective::Pairwise => pairs.len(),
        Objective::Listwise => lists.len(),
    };

    let mut model = init;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; dim];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, RewardModel)> = None;

    for epoch in 1..=config.epochs {
        let order = epoch_order(n_items, config.shuffle, &mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            for &k in batch {
                match config.objective {
                    Objective::Pairwise => {
                        let p = &pairs[k];
                        let g = p.loss(p.margin(model.weights()))?;
                        p.diff.axpy_into(g.d_winner, &mut grad);
                    }
                    Objective::Listwise => {
                        let feats = &lists[k];
                        let scores: Vec<f64> =
                            feats.iter().map(|f| model.score_features(f)).collect();
                        let (_, g) = plackett_luce_loss(&scores)?;
                        for (f, gk) in feats.iter().zip(g) {
                            f.axpy_into(gk, &mut grad);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(model.weights_mut(), &grad);
        }
        if model.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "reward weights diverged in epoch {epoch}"
            )));
        }

        let mut row = pair_metrics(epoch, &pairs, model.weights())?;
        if config.objective == Objective::Listwise {
            let mut total = 0.0;
            for feats in &lists {
                let scores: Vec<f64> = feats.iter().map(|f| model.score_features(f)).collect();
                total += plackett_luce_loss(&scores)?.0;
            }
            row.loss = Some(total / lists.len() as f64);
        }
        if let Some(vp) = &val_pairs {
            let acc = pair_accuracy(vp, model.weights());
            row.val_accuracy = Some(acc);
            if best.as_ref().is_none_or(|(b, _)| acc >= *b) {
                best = Some((acc, model.clone()));
            }
        }
        history.push(row);
    }

    let model = best.map_or(model, |(_, m)| m);
    Ok((model, history))
}
