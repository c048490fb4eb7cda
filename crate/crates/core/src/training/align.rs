use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mean, MetricsRow};
use crate::data::GroundTruthReward;
use crate::lm::{sample_sequence, FrozenLm, RowGrad, ToyLanguageModel};
use crate::reward::RewardModel;
use crate::text::Text;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    /// Weight of the KL penalty toward the reference policy.
    pub kl_coefficient: f64,
    pub samples_per_prompt: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Rollout decoding. The score-function gradient uses the untempered
    /// policy log-probabilities, which is exact only at temperature 1, top-p 1.
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            kl_coefficient: 0.1,
            samples_per_prompt: 4,
            steps: 100,
            learning_rate: 0.5,
            temperature: 1.0,
            top_p: 1.0,
            max_len: 32,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_coefficient >= 0.0 && self.kl_coefficient.is_finite()) {
            return Err(Error::Config(format!(
                "kl_coefficient must be non-negative, got {}",
                self.kl_coefficient
            )));
        }
        if self.samples_per_prompt == 0 || self.steps == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "samples_per_prompt, steps and max_len must be positive".into(),
            ));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.temperature) || !(positive(self.top_p) && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "temperature must be positive and top_p in (0, 1], got {} / {}",
                self.temperature, self.top_p
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// KL-regularized policy improvement toward `reward`, by the score-function
/// estimator.
///
/// Each step samples `samples_per_prompt` outputs per prompt from the live
/// policy, scores each with R = reward(x, y) − kl·(log π(y|x) − log π_ref(y|x))
/// (the sampled log-ratio estimates the KL integrand), and ascends
/// mean((R − mean R)·∇log π(y|x)). The objective is divided by (1 + kl) so
/// the step stays bounded for any KL weight; this rescales the step, not the
/// maximizer. Log-probabilities include the end-of-sequence transition when
/// a sample terminated, so output length is learnable.
///
/// Metrics per step (computed on that step's samples, before the update):
/// mean proxy reward, mean log-ratio, mean length, and mean true reward when
/// `truth` is given.
pub fn align_policy(
    prompts: &[Text],
    reward: &RewardModel,
    policy: ToyLanguageModel,
    reference: &FrozenLm,
    config: &AlignConfig,
    truth: Option<&GroundTruthReward>,
) -> Result<(ToyLanguageModel, Vec<MetricsRow>)> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(Error::Validation("no prompts to align on".into()));
    }
    if policy.vocab() != reference.vocab() {
        return Err(Error::Config(
            "policy and reference use different vocabularies".into(),
        ));
    }
    if let Some(t) = truth {
        t.check_dimension(reward.feature_map())?;
    }

    let mut policy = policy;
    let cols = policy.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut update = vec![0.0; policy.logits().len()];
    let step_size = config.learning_rate / (1.0 + config.kl_coefficient);
    let mut history = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let n = prompts.len() * config.samples_per_prompt;
        let mut objective = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut kls = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        let mut true_rewards = Vec::new();
        for x in prompts {
            let ctx = policy.context_row(x);
            for _ in 0..config.samples_per_prompt {
                let s = sample_sequence(
                    &policy,
                    x,
                    config.max_len,
                    config.temperature,
                    config.top_p,
                    &mut rng,
                );
                let mut g = RowGrad::default();
                let lp = policy.logprob_ids(ctx, &s.ids, s.terminated, Some(&mut g));
                let lp_ref = reference.logprob_ids(ctx, &s.ids, s.terminated, None);
                let r = reward.score(x, &s.text);
                let kl = lp - lp_ref;
                objective.push(r - config.kl_coefficient * kl);
                grads.push(g);
                rewards.push(r);
                kls.push(kl);
                lengths.push(s.ids.len() as f64);
                if let Some(t) = truth {
                    true_rewards.push(t.reward(reward.feature_map(), x, &s.text));
                }
            }
        }
        history.push(MetricsRow {
            step,
            mean_kl: mean(kls.iter().copied()),
            mean_reward: mean(rewards.iter().copied()),
            mean_true_reward: mean(true_rewards.iter().copied()),
            mean_length: mean(lengths.iter().copied()),
            ..MetricsRow::default()
        });

        let baseline = mean(objective.iter().copied()).unwrap_or(0.0);
        update.fill(0.0);
        for (g, r) in grads.iter().zip(&objective) {
            g.axpy_into((r - baseline) / n as f64, &mut update, cols);
        }
        for (l, u) in policy.logits_mut().iter_mut().zip(&update) {
            *l += step_size * u;
        }
        if policy.logits().iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!(
                "policy logits diverged at step {step}"
            )));
        }
    }
    Ok((policy, history))
}
