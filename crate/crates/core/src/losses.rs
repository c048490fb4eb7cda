//! Ranking losses over scores (or log-probability ratios) with analytic
//! gradients.
//!
//! All pairwise losses depend on the scores only through the margin
//! Δ = winner − loser, so `d_winner = −d_loser` throughout. The PCRM loss
//!
//! ```text
//! L = −log σ(Δ* − Δ) − log σ(Δ) = softplus(Δ − Δ*) + softplus(−Δ)
//! ```
//!
//! has gradient coefficient σ(Δ − Δ*) − σ(−Δ), which vanishes at Δ = Δ*/2,
//! is negative below it (margin grows) and positive above it (margin shrinks).

use crate::error::ensure_finite;
use crate::numeric::{log_sum_exp, sigmoid, softplus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub winner_score: f64,
    pub loser_score: f64,
}

impl PairScores {
    pub fn new(winner_score: f64, loser_score: f64) -> Self {
        PairScores {
            winner_score,
            loser_score,
        }
    }

    pub fn margin(&self) -> f64 {
        self.winner_score - self.loser_score
    }

    fn checked_margin(&self) -> Result<f64> {
        ensure_finite(self.winner_score, "winner score")?;
        ensure_finite(self.loser_score, "loser score")?;
        Ok(self.margin())
    }
}

/// Loss value with its derivatives with respect to the two inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_winner: f64,
    pub d_loser: f64,
}

impl LossGrad {
    fn from_margin_coefficient(value: f64, coef: f64) -> Self {
        LossGrad {
            value,
            d_winner: coef,
            d_loser: -coef,
        }
    }
}

fn check_delta_star(delta_star: f64) -> Result<()> {
    if delta_star.is_nan() || delta_star <= 0.0 {
        return Err(Error::Validation(format!(
            "max margin must be positive, got {delta_star}"
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Validation(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(())
}

/// Bradley-Terry negative log-likelihood −log σ(Δ).
pub fn pairwise_rank_loss(s: PairScores) -> Result<LossGrad> {
    let delta = s.checked_margin()?;
    Ok(LossGrad::from_margin_coefficient(
        softplus(-delta),
        -sigmoid(-delta),
    ))
}

/// Plackett-Luce negative log-likelihood of the best-first ordering
/// `scores[0] ≻ scores[1] ≻ …`, with the gradient for each score.
pub fn plackett_luce_loss(scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.len() < 2 {
        return Err(Error::Validation(format!(
            "listwise loss needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    for s in scores {
        ensure_finite(*s, "score")?;
    }
    let n = scores.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    // Stage i picks scores[i] out of the suffix scores[i..].
    for i in 0..n - 1 {
        let suffix = &scores[i..];
        let lse = log_sum_exp(suffix);
        value += lse - scores[i];
        for (k, s) in suffix.iter().enumerate() {
            grad[i + k] += (s - lse).exp();
        }
        grad[i] -= 1.0;
    }
    Ok((value, grad))
}

/// Prior-constrained ranking loss softplus(Δ − Δ*) + softplus(−Δ).
pub fn pcrm_loss(s: PairScores, delta_star: f64) -> Result<LossGrad> {
    check_delta_star(delta_star)?;
    let delta = s.checked_margin()?;
    Ok(constrained(delta, delta_star))
}

fn constrained(delta: f64, delta_star: f64) -> LossGrad {
    let value = softplus(delta - delta_star) + softplus(-delta);
    let coef = sigmoid(delta - delta_star) - sigmoid(-delta);
    LossGrad::from_margin_coefficient(value, coef)
}

/// Implicit-reward margin β·(logratio_w − logratio_l) used by DPO and PCDPO.
pub fn dpo_margin(logratio_winner: f64, logratio_loser: f64, beta: f64) -> f64 {
    beta * (logratio_winner - logratio_loser)
}

fn checked_dpo_margin(lw: f64, ll: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    ensure_finite(lw, "winner log-ratio")?;
    ensure_finite(ll, "loser log-ratio")?;
    Ok(dpo_margin(lw, ll, beta))
}

/// DPO loss softplus(−Δ) with Δ = β·(logratio_w − logratio_l). Derivatives
/// are with respect to the two log-ratios.
pub fn dpo_loss(logratio_winner: f64, logratio_loser: f64, beta: f64) -> Result<LossGrad> {
    let delta = checked_dpo_margin(logratio_winner, logratio_loser, beta)?;
    Ok(LossGrad::from_margin_coefficient(
        softplus(-delta),
        -beta * sigmoid(-delta),
    ))
}

/// DPO with the max-margin constraint applied to the implicit-reward margin.
pub fn pcdpo_loss(
    logratio_winner: f64,
    logratio_loser: f64,
    beta: f64,
    delta_star: f64,
) -> Result<LossGrad> {
    check_delta_star(delta_star)?;
    let delta = checked_dpo_margin(logratio_winner, logratio_loser, beta)?;
    let g = constrained(delta, delta_star);
    Ok(LossGrad::from_margin_coefficient(
        g.value,
        beta * g.d_winner,
    ))
}
