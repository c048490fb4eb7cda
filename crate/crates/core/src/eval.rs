//! Pairwise accuracy, margin-vs-similarity scatter data, rank correlation
//! against the hidden reward, and the JSON evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{pair_indices, GroundTruthReward, PreferenceRecord};
use crate::lm::{FrozenLm, ToyLanguageModel};
use crate::losses::dpo_margin;
use crate::numeric::quantile;
use crate::reward::RewardModel;
use crate::similarity::{similarity, Embedder, SimKind};
use crate::text::Text;
use crate::{Error, Result};

/// `r`: the pair is ranked correctly (delta > 0); `w`: it is not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "r")]
    Right,
    #[serde(rename = "w")]
    Wrong,
}

impl Label {
    pub fn of(delta: f64) -> Self {
        if delta > 0.0 {
            Label::Right
        } else {
            Label::Wrong
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Right => "r",
            Label::Wrong => "w",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSample {
    pub sim: f64,
    /// winner score − loser score
    pub delta: f64,
    pub label: Label,
}

impl MarginSample {
    pub fn new(sim: f64, delta: f64) -> Self {
        MarginSample {
            sim,
            delta,
            label: Label::of(delta),
        }
    }
}

fn require_nonempty(test: &[PreferenceRecord]) -> Result<()> {
    if test.is_empty() {
        Err(Error::Validation("evaluation set is empty".into()))
    } else {
        Ok(())
    }
}

/// Per-pair score differences, in record-then-pair order.
pub fn pair_margins(model: &RewardModel, test: &[PreferenceRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    for r in test {
        let scores: Vec<f64> = r
            .outputs()
            .iter()
            .map(|y| model.score(r.prompt(), y))
            .collect();
        out.extend(pair_indices(scores.len()).map(|(i, j)| scores[i] - scores[j]));
    }
    out
}

/// Fraction of expanded pairs with score(winner) > score(loser); ties count
/// as wrong.
pub fn accuracy(model: &RewardModel, test: &[PreferenceRecord]) -> Result<f64> {
    require_nonempty(test)?;
    Ok(fraction_positive(&pair_margins(model, test)))
}

fn fraction_positive(margins: &[f64]) -> f64 {
    margins.iter().filter(|d| **d > 0.0).count() as f64 / margins.len() as f64
}

fn pair_sims(
    test: &[PreferenceRecord],
    sim_kind: SimKind,
    provider: Option<&dyn Embedder>,
) -> Result<Vec<f64>> {
    if sim_kind == SimKind::Cosine && provider.is_none() {
        return Err(Error::Config(
            "cosine similarity requires an embedding provider".into(),
        ));
    }
    let mut out = Vec::new();
    for r in test {
        for (i, j) in pair_indices(r.outputs().len()) {
            out.push(similarity(
                sim_kind,
                r.prompt(),
                &r.outputs()[i],
                &r.outputs()[j],
                provider,
            )?);
        }
    }
    Ok(out)
}

/// One sample per expanded pair: (similarity, score margin, label).
pub fn margin_scatter(
    model: &RewardModel,
    test: &[PreferenceRecord],
    sim_kind: SimKind,
    provider: Option<&dyn Embedder>,
) -> Result<Vec<MarginSample>> {
    let sims = pair_sims(test, sim_kind, provider)?;
    Ok(sims
        .into_iter()
        .zip(pair_margins(model, test))
        .map(|(s, d)| MarginSample::new(s, d))
        .collect())
}

/// Scatter of the implicit-reward margin β·(logratio_w − logratio_l) of a
/// preference-optimized policy.
pub fn implicit_margin_scatter(
    policy: &ToyLanguageModel,
    reference: &FrozenLm,
    beta: f64,
    test: &[PreferenceRecord],
    sim_kind: SimKind,
    provider: Option<&dyn Embedder>,
) -> Result<Vec<MarginSample>> {
    let sims = pair_sims(test, sim_kind, provider)?;
    let mut margins = Vec::with_capacity(sims.len());
    for r in test {
        let ratios: Vec<f64> = r
            .outputs()
            .iter()
            .map(|y| policy.logprob(r.prompt(), y) - reference.logprob(r.prompt(), y))
            .collect();
        margins.extend(
            pair_indices(ratios.len()).map(|(i, j)| dpo_margin(ratios[i], ratios[j], beta)),
        );
    }
    Ok(sims
        .into_iter()
        .zip(margins)
        .map(|(s, d)| MarginSample::new(s, d))
        .collect())
}

/// Fraction of expanded pairs where the policy assigns the winner a strictly
/// higher log-likelihood than the loser.
pub fn likelihood_accuracy(policy: &ToyLanguageModel, test: &[PreferenceRecord]) -> Result<f64> {
    require_nonempty(test)?;
    let mut margins = Vec::new();
    for r in test {
        let lps: Vec<f64> = r
            .outputs()
            .iter()
            .map(|y| policy.logprob(r.prompt(), y))
            .collect();
        margins.extend(pair_indices(lps.len()).map(|(i, j)| lps[i] - lps[j]));
    }
    Ok(fraction_positive(&margins))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation with average ranks for ties. A constant input has
/// no defined correlation and yields 0.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Mean over probes of the Spearman correlation between model scores and
/// hidden rewards of each probe's outputs.
pub fn spearman_vs_truth(
    model: &RewardModel,
    truth: &GroundTruthReward,
    probes: &[(Text, Vec<Text>)],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Validation("no probes given".into()));
    }
    truth.check_dimension(model.feature_map())?;
    let map = model.feature_map();
    let mut total = 0.0;
    for (k, (x, ys)) in probes.iter().enumerate() {
        if ys.len() < 3 {
            return Err(Error::Validation(format!(
                "probe {k} has {} outputs, at least 3 are needed",
                ys.len()
            )));
        }
        let scores: Vec<f64> = ys.iter().map(|y| model.score(x, y)).collect();
        let truths: Vec<f64> = ys.iter().map(|y| truth.reward(map, x, y)).collect();
        total += spearman(&scores, &truths);
    }
    Ok(total / probes.len() as f64)
}

/// Probes built from records with at least 3 outputs.
pub fn probes_from(records: &[PreferenceRecord]) -> Vec<(Text, Vec<Text>)> {
    records
        .iter()
        .filter(|r| r.outputs().len() >= 3)
        .map(|r| (r.prompt().clone(), r.outputs().to_vec()))
        .collect()
}

/// Formats like C's `%g`: 6 significant digits, trailing zeros trimmed,
/// scientific notation outside [1e-4, 1e6).
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { format!("{v}") };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_owned());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

pub const SCATTER_HEADER: &str = "sim delta label";

pub fn scatter_text(samples: &[MarginSample]) -> String {
    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for s in samples {
        writeln!(
            out,
            "{} {} {}",
            format_sig6(s.sim),
            format_sig6(s.delta),
            s.label.as_str()
        )
        .unwrap();
    }
    out
}

/// Writes the `sim delta label` whitespace-separated table.
pub fn export_scatter(samples: &[MarginSample], path: &Path) -> Result<()> {
    fs::write(path, scatter_text(samples)).map_err(|e| Error::io(path, e))
}

pub fn parse_scatter(path: &Path) -> Result<Vec<MarginSample>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(SCATTER_HEADER.split_whitespace()) => {}
        _ => {
            return Err(Error::Line {
                line: 1,
                message: format!("expected header `{SCATTER_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let bad = |m: &str| Error::Line {
            line: idx + 1,
            message: m.to_owned(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let sim: f64 = cols[0].parse().map_err(|_| bad("bad sim"))?;
        let delta: f64 = cols[1].parse().map_err(|_| bad("bad delta"))?;
        let label = match cols[2] {
            "r" => Label::Right,
            "w" => Label::Wrong,
            _ => return Err(bad("label must be r or w")),
        };
        out.push(MarginSample { sim, delta, label });
    }
    Ok(out)
}

/// Summary of |delta| for samples whose similarity falls in `[lo, hi)`
/// (the last bucket is closed on the right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_abs_delta: Option<f64>,
    pub p95_abs_delta: Option<f64>,
}

pub const DEFAULT_BUCKET_EDGES: &[f64] = &[0.0, 0.5, 0.7, 0.9, 1.0];

pub fn margin_buckets(samples: &[MarginSample], edges: &[f64]) -> Vec<BucketStat> {
    let last = edges.len().saturating_sub(2);
    edges
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (lo, hi) = (w[0], w[1]);
            let abs: Vec<f64> = samples
                .iter()
                .filter(|s| s.sim >= lo && (s.sim < hi || (k == last && s.sim <= hi)))
                .map(|s| s.delta.abs())
                .collect();
            BucketStat {
                lo,
                hi,
                count: abs.len(),
                mean_abs_delta: (!abs.is_empty())
                    .then(|| abs.iter().sum::<f64>() / abs.len() as f64),
                p95_abs_delta: quantile(&abs, 0.95),
            }
        })
        .collect()
}

/// 95th percentile of |delta| over samples with `sim >= min_sim`.
pub fn p95_abs_margin_above(samples: &[MarginSample], min_sim: f64) -> Option<f64> {
    let abs: Vec<f64> = samples
        .iter()
        .filter(|s| s.sim >= min_sim)
        .map(|s| s.delta.abs())
        .collect();
    quantile(&abs, 0.95)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_margin: f64,
    pub buckets: Vec<BucketStat>,
    pub spearman: Option<f64>,
}

impl EvalReport {
    pub fn from_samples(samples: &[MarginSample], spearman: Option<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("no samples to report on".into()));
        }
        let n = samples.len() as f64;
        Ok(EvalReport {
            accuracy: samples.iter().filter(|s| s.label == Label::Right).count() as f64 / n,
            mean_margin: samples.iter().map(|s| s.delta).sum::<f64>() / n,
            buckets: margin_buckets(samples, DEFAULT_BUCKET_EDGES),
            spearman,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Full evaluation of a reward model: accuracy, margins by similarity
/// bucket, and Spearman against `truth` when given (probes are the records
/// with at least 3 outputs).
pub fn evaluate(
    model: &RewardModel,
    test: &[PreferenceRecord],
    sim_kind: SimKind,
    provider: Option<&dyn Embedder>,
    truth: Option<&GroundTruthReward>,
) -> Result<(EvalReport, Vec<MarginSample>)> {
    require_nonempty(test)?;
    let samples = margin_scatter(model, test, sim_kind, provider)?;
    let spearman = match truth {
        Some(t) => {
            let probes = probes_from(test);
            if probes.is_empty() {
                None
            } else {
                Some(spearman_vs_truth(model, t, &probes)?)
            }
        }
        None => None,
    };
    Ok((EvalReport::from_samples(&samples, spearman)?, samples))
}
