use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    epoch_order, mean, pair_constraints, require_data, require_provider, MetricsRow,
    PairConstraint, TrainConfig,
};
use crate::data::{pair_indices, PreferenceRecord};
use crate::lm::{FrozenLm, RowGrad, ToyLanguageModel};
use crate::losses::{dpo_loss, dpo_margin, pcdpo_loss, LossGrad};
use crate::optim::Optimizer;
use crate::similarity::Embedder;
use crate::{Error, Result};

/// One encoded preference pair with its reference log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoPair {
    pub context: usize,
    pub winner: Vec<usize>,
    pub loser: Vec<usize>,
    pub ref_winner: f64,
    pub ref_loser: f64,
    pub constraint: Option<PairConstraint>,
}

impl DpoPair {
    /// Encodes every expanded pair of `data` against `reference`.
    pub fn prepare(data: &[PreferenceRecord], reference: &ToyLanguageModel) -> Vec<DpoPair> {
        let mut out = Vec::new();
        for r in data {
            let ctx = reference.context_row(r.prompt());
            let ids: Vec<Vec<usize>> = r
                .outputs()
                .iter()
                .map(|y| reference.vocab().encode(y))
                .collect();
            let lps: Vec<f64> = ids
                .iter()
                .map(|y| reference.logprob_ids(ctx, y, false, None))
                .collect();
            for (i, j) in pair_indices(ids.len()) {
                out.push(DpoPair {
                    context: ctx,
                    winner: ids[i].clone(),
                    loser: ids[j].clone(),
                    ref_winner: lps[i],
                    ref_loser: lps[j],
                    constraint: None,
                });
            }
        }
        out
    }

    /// (log π(y_w|x) − log π_ref(y_w|x), same for y_l)
    pub fn logratios(&self, policy: &ToyLanguageModel) -> (f64, f64) {
        (
            policy.logprob_ids(self.context, &self.winner, false, None) - self.ref_winner,
            policy.logprob_ids(self.context, &self.loser, false, None) - self.ref_loser,
        )
    }

    pub fn margin(&self, policy: &ToyLanguageModel, beta: f64) -> f64 {
        let (w, l) = self.logratios(policy);
        dpo_margin(w, l, beta)
    }

    fn loss(&self, lw: f64, ll: f64, beta: f64) -> Result<LossGrad> {
        match self.constraint {
            Some(c) => pcdpo_loss(lw, ll, beta, c.delta_star),
            None => dpo_loss(lw, ll, beta),
        }
    }
}

fn dpo_metrics(
    step: usize,
    pairs: &[DpoPair],
    policy: &ToyLanguageModel,
    beta: f64,
) -> Result<MetricsRow> {
    let mut loss = 0.0;
    let mut margins = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (lw, ll) = p.logratios(policy);
        loss += p.loss(lw, ll, beta)?.value;
        margins.push(dpo_margin(lw, ll, beta));
    }
    let n = pairs.len() as f64;
    let constrained = pairs.first().is_some_and(|p| p.constraint.is_some());
    Ok(MetricsRow {
        step,
        loss: Some(loss / n),
        accuracy: Some(margins.iter().filter(|m| **m > 0.0).count() as f64 / n),
        mean_margin: mean(margins.iter().copied()),
        constraint_active_fraction: constrained.then(|| {
            pairs
                .iter()
                .zip(&margins)
                .filter(|(p, m)| **m > p.constraint.unwrap().delta_star / 2.0)
                .count() as f64
                / n
        }),
        ..MetricsRow::default()
    })
}

/// Direct preference optimization of the bigram policy against a frozen
/// reference. With `config.constraint`, each pair's implicit-reward margin
/// is held under its Δ* by the PCDPO loss.
///
/// Metrics report the implicit-reward margin β·(logratio_w − logratio_l)
/// and its accuracy; `val_accuracy` uses the same margin on `validation`.
pub fn train_dpo(
    data: &[PreferenceRecord],
    validation: Option<&[PreferenceRecord]>,
    config: &TrainConfig,
    beta: f64,
    policy: ToyLanguageModel,
    reference: &FrozenLm,
    provider: Option<&dyn Embedder>,
) -> Result<(ToyLanguageModel, Vec<MetricsRow>)> {
    require_data(data)?;
    config.validate()?;
    require_provider(config.constraint.as_ref(), provider)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!(
            "beta must be positive, got {beta}"
        )));
    }
    if policy.vocab() != reference.vocab() {
        return Err(Error::Config(
            "policy and reference use different vocabularies".into(),
        ));
    }

    let mut pairs = DpoPair::prepare(data, reference);
    if let Some(c) = &config.constraint {
        for (p, pc) in pairs.iter_mut().zip(pair_constraints(data, c, provider)?) {
            p.constraint = Some(pc);
        }
    }
    let val_pairs = validation.map(|v| DpoPair::prepare(v, reference));

    let mut policy = policy;
    let cols = policy.vocab_size();
    let n_params = policy.logits().len();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; n_params];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let order = epoch_order(pairs.len(), config.shuffle, &mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            for &k in batch {
                let p = &pairs[k];
                let mut gw = RowGrad::default();
                let mut gl = RowGrad::default();
                let lw =
                    policy.logprob_ids(p.context, &p.winner, false, Some(&mut gw)) - p.ref_winner;
                let ll =
                    policy.logprob_ids(p.context, &p.loser, false, Some(&mut gl)) - p.ref_loser;
                let g = p.loss(lw, ll, beta)?;
                gw.axpy_into(g.d_winner, &mut grad, cols);
                gl.axpy_into(g.d_loser, &mut grad, cols);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(policy.logits_mut(), &grad);
        }
        if policy.logits().iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!(
                "policy logits diverged in epoch {epoch}"
            )));
        }
        let mut row = dpo_metrics(epoch, &pairs, &policy, beta)?;
        if let Some(vp) = val_pairs.as_deref().filter(|v| !v.is_empty()) {
            let correct = vp.iter().filter(|p| p.margin(&policy, beta) > 0.0).count();
            row.val_accuracy = Some(correct as f64 / vp.len() as f64);
        }
        history.push(row);
    }
    Ok((policy, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use crate::lm::{freeze_reference, Vocabulary};
    use crate::optim::OptimizerKind;
    use crate::similarity::{ConstraintParams, SimKind};
    use crate::text::Text;

    fn toy() -> (Vec<PreferenceRecord>, ToyLanguageModel) {
        let data = vec![PreferenceRecord::new(
            Text::new("q"),
            vec![Text::new("good answer"), Text::new("bad answer")],
            Source::Synthetic,
        )
        .unwrap()];
        let vocab = Vocabulary::from_words(["q", "good", "bad", "answer"]).unwrap();
        (data, ToyLanguageModel::uniform(vocab))
    }

    fn constant_constraint(delta_star: f64) -> ConstraintParams {
        ConstraintParams::new(1e-12, 1.0, delta_star, SimKind::LengthRatio).unwrap()
    }

    #[test]
    fn initial_loss_is_ln2() {
        let (data, lm) = toy();
        let reference = freeze_reference(&lm);
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (_, hist) = train_dpo(&data, None, &config, 0.1, lm, &reference, None).unwrap();
        assert_eq!(hist[0].loss, Some(std::f64::consts::LN_2));
    }

    #[test]
    fn far_constraint_tracks_unconstrained_run() {
        let (data, lm) = toy();
        let reference = freeze_reference(&lm);
        let base = TrainConfig {
            epochs: 100,
            batch_size: 1,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let (a, _) = train_dpo(&data, None, &base, 0.5, lm.clone(), &reference, None).unwrap();
        let constrained = TrainConfig {
            constraint: Some(constant_constraint(50.0)),
            ..base
        };
        let (b, _) = train_dpo(&data, None, &constrained, 0.5, lm, &reference, None).unwrap();
        assert!(
            a.parameter_distance(&b) < 1e-6,
            "{}",
            a.parameter_distance(&b)
        );
    }

    #[test]
    fn constrained_margin_settles_while_dpo_grows() {
        let (data, lm) = toy();
        let reference = freeze_reference(&lm);
        let base = TrainConfig {
            epochs: 3000,
            batch_size: 1,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let (_, dpo) = train_dpo(&data, None, &base, 1.0, lm.clone(), &reference, None).unwrap();
        let constrained = TrainConfig {
            constraint: Some(constant_constraint(2.0)),
            ..base
        };
        let (_, pc) = train_dpo(&data, None, &constrained, 1.0, lm, &reference, None).unwrap();
        let dpo_margin = dpo.last().unwrap().mean_margin.unwrap();
        let pc_margin = pc.last().unwrap().mean_margin.unwrap();
        assert!(dpo_margin > 3.0, "{dpo_margin}");
        assert!((pc_margin - 1.0).abs() <= 0.1, "{pc_margin}");
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let (data, lm) = toy();
        let other = ToyLanguageModel::uniform(Vocabulary::from_words(["x"]).unwrap());
        let r = train_dpo(
            &data,
            None,
            &TrainConfig::default(),
            0.1,
            lm,
            &freeze_reference(&other),
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
