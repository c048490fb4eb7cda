//! One function per CLI verb. Each reads its inputs from the run directory,
//! writes its artifacts there, and echoes what it did.

use std::fs;
use std::path::{Path, PathBuf};

use pcrm::data::{
    generate_dataset, ingest_jsonl, write_jsonl, GroundTruthReward, PreferenceRecord,
};
use pcrm::eval::{
    evaluate, export_scatter as write_scatter, implicit_margin_scatter, likelihood_accuracy,
    EvalReport, MarginSample,
};
use pcrm::lm::{freeze_reference, ToyLanguageModel, Vocabulary};
use pcrm::reward::RewardModel;
use pcrm::similarity::{ConstraintParams, Embedder, EmbeddingProvider, SimKind};
use pcrm::text::Text;
use pcrm::training::{
    align_policy, fit_sft, sft_corpus, train_dpo, train_reward_model, write_metrics_csv,
};

use crate::config::{ExperimentConfig, SWEEP_BETA2};
use crate::run::{
    config_hash, say, RunDir, RunLog, TEST_FILE, TRAIN_FILE, TRUTH_FILE, VALIDATION_FILE,
};
use crate::{CliError, Mode, Target};

fn load_split(run: &RunDir, name: &str) -> Result<Vec<PreferenceRecord>, CliError> {
    Ok(ingest_jsonl(&run.require(name)?)?)
}

/// The embedder, built only when some similarity in play is cosine.
fn provider_for(
    config: &ExperimentConfig,
    kinds: &[SimKind],
) -> Result<Option<EmbeddingProvider>, CliError> {
    if !kinds.contains(&SimKind::Cosine) {
        return Ok(None);
    }
    let context = config.max_context()?;
    let provider = match config.embedding_file() {
        Some(path) => EmbeddingProvider::from_jsonl(Path::new(path), context)?,
        None => EmbeddingProvider::hashed_ngram(config.embedding_dimension()?, context)?,
    };
    Ok(Some(provider))
}

fn as_embedder(p: &Option<EmbeddingProvider>) -> Option<&dyn Embedder> {
    p.as_ref().map(|p| p as &dyn Embedder)
}

fn unique_prompts(records: &[PreferenceRecord]) -> Vec<Text> {
    let mut out: Vec<Text> = Vec::new();
    for r in records {
        if !out.contains(r.prompt()) {
            out.push(r.prompt().clone());
        }
    }
    out
}

/// The run's hidden reward, when present and compatible with the features.
fn load_truth(
    run: &RunDir,
    config: &ExperimentConfig,
) -> Result<Option<GroundTruthReward>, CliError> {
    let path = run.file(TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let truth = GroundTruthReward::load(&path)?;
    truth.check_dimension(&config.feature_map()?)?;
    Ok(Some(truth))
}

fn split_counts(n: usize, fractions: [f64; 3]) -> (usize, usize) {
    let train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let validation = ((n as f64 * fractions[1]).round() as usize).min(n - train);
    (train, validation)
}

pub fn generate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let gen = config.generator()?;
    let fractions = config.splits()?;
    let map = config.feature_map()?;
    let truth = GroundTruthReward::random(
        &map,
        config.seed()?,
        config.length_preference()?,
        config.noise_temperature()?,
    );
    let data = generate_dataset(&gen, &truth, &map)?;
    let (n_train, n_val) = split_counts(data.len(), fractions);
    let run = RunDir::new(out);
    run.create()?;
    let parts = [
        (TRAIN_FILE, &data[..n_train]),
        (VALIDATION_FILE, &data[n_train..n_train + n_val]),
        (TEST_FILE, &data[n_train + n_val..]),
    ];
    for (name, records) in parts {
        let path = run.file(name);
        write_jsonl(&path, records)?;
        say(&format!(
            "wrote {} ({} records)",
            path.display(),
            records.len()
        ));
    }
    let path = run.file(TRUTH_FILE);
    truth.save(&path)?;
    say(&format!("wrote {}", path.display()));
    Ok(())
}

/// Paths written by one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: PathBuf,
}

fn constraint_for(
    config: &ExperimentConfig,
    mode: Mode,
) -> Result<Option<ConstraintParams>, CliError> {
    if !mode.constrained() {
        return Ok(None);
    }
    match config.constraint()? {
        Some(c) => Ok(Some(c)),
        None => Err(CliError::Usage(format!(
            "mode {} needs a constraint section; add e.g. `constraint.preset = dialogue-cossim` \
             or set constraint.sim, constraint.beta1, constraint.beta2 and constraint.beta3",
            mode.name()
        ))),
    }
}

pub fn train(config: &ExperimentConfig, out: &Path, mode: Mode) -> Result<TrainOutcome, CliError> {
    let run = RunDir::new(out);
    let constraint = constraint_for(config, mode)?;
    let stem = run.stem(config, mode)?;
    let checkpoint = run.file(&format!("{stem}.json"));
    let metrics_path = run.file(&format!("{stem}.metrics.csv"));
    let log_path = run.file(&format!("{stem}.log"));

    let mut log = RunLog::default();
    log.line(format!("mode = {}", mode.name()));
    let mut prefixes = vec!["seed", "features."];
    prefixes.extend(crate::run::mode_keys(mode));
    for line in config.resolved(&prefixes) {
        log.line(line);
    }

    let train_set = load_split(&run, TRAIN_FILE)?;
    let val_set = load_split(&run, VALIDATION_FILE)?;
    let map = config.feature_map()?;

    let metrics = match mode {
        Mode::Rm | Mode::Pcrm => {
            let kinds: Vec<SimKind> = constraint.iter().map(|c| c.sim_kind()).collect();
            let provider = provider_for(config, &kinds)?;
            let train_config = config.train(constraint)?;
            let (model, metrics) = train_reward_model(
                &train_set,
                Some(&val_set),
                &train_config,
                RewardModel::zeros(map),
                as_embedder(&provider),
            )?;
            model.save(&checkpoint)?;
            metrics
        }
        Mode::Sft => {
            let (epochs, lr) = config.sft()?;
            let corpus = sft_corpus(&train_set);
            let vocab = Vocabulary::from_corpus(corpus.iter().flat_map(|(x, y)| [x, y]));
            let (model, metrics) = fit_sft(&corpus, epochs, lr, ToyLanguageModel::uniform(vocab))?;
            model.save(&checkpoint)?;
            metrics
        }
        Mode::Dpo | Mode::Pcdpo => {
            let sft = ToyLanguageModel::load(&run.require_checkpoint(config, Mode::Sft)?)?;
            let kinds: Vec<SimKind> = constraint.iter().map(|c| c.sim_kind()).collect();
            let provider = provider_for(config, &kinds)?;
            let train_config = config.train(constraint)?;
            let reference = freeze_reference(&sft);
            let (policy, metrics) = train_dpo(
                &train_set,
                Some(&val_set),
                &train_config,
                config.dpo_beta()?,
                sft,
                &reference,
                as_embedder(&provider),
            )?;
            log.line(format!(
                "held-out likelihood accuracy: sft {} -> {} {}",
                likelihood_accuracy(&reference, &val_set)?,
                mode.name(),
                likelihood_accuracy(&policy, &val_set)?
            ));
            policy.save(&checkpoint)?;
            metrics
        }
        Mode::Align => {
            let sft = ToyLanguageModel::load(&run.require_checkpoint(config, Mode::Sft)?)?;
            let reward_mode = match config.align_reward()?.as_str() {
                "rm" => Mode::Rm,
                _ => Mode::Pcrm,
            };
            let reward = RewardModel::load(&run.require_checkpoint(config, reward_mode)?)?;
            let truth = load_truth(&run, config)?;
            let align_config = config.align()?;
            let reference = freeze_reference(&sft);
            let (policy, metrics) = align_policy(
                &unique_prompts(&train_set),
                &reward,
                sft,
                &reference,
                &align_config,
                truth.as_ref(),
            )?;
            log.line(format!(
                "parameter distance from reference: {}",
                policy.parameter_distance(&reference)
            ));
            policy.save(&checkpoint)?;
            metrics
        }
    };
    write_metrics_csv(&metrics_path, &metrics)?;
    if let Some(last) = metrics.last() {
        if let Some(l) = last.loss {
            log.line(format!("final loss: {l}"));
        }
        if let Some(v) = last.val_accuracy {
            log.line(format!("final validation accuracy: {v}"));
        }
        if let Some(r) = last.mean_true_reward {
            log.line(format!("final mean true reward: {r}"));
        }
    }
    log.line(format!("wrote {}", checkpoint.display()));
    log.line(format!("wrote {}", metrics_path.display()));
    log.save(&log_path)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics: metrics_path,
        log: log_path,
    })
}

enum Loaded {
    Reward(RewardModel),
    Policy(ToyLanguageModel),
}

fn load_any(path: &Path, config: &ExperimentConfig) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path).map_err(|e| pcrm::Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(pcrm::Error::from)?;
    let map = config.feature_map()?;
    let loaded = match value.get("format").and_then(|f| f.as_str()) {
        Some(pcrm::reward::CHECKPOINT_FORMAT) => {
            let model = RewardModel::load(path)?;
            if model.feature_map().dimension() != map.dimension() {
                return Err(pcrm::Error::Config(format!(
                    "checkpoint {} has feature dimension {}, the config uses {}",
                    path.display(),
                    model.feature_map().dimension(),
                    map.dimension()
                ))
                .into());
            }
            Loaded::Reward(model)
        }
        Some(pcrm::lm::CHECKPOINT_FORMAT) => Loaded::Policy(ToyLanguageModel::load(path)?),
        // a hidden-reward file scores like a reward model
        _ => Loaded::Reward(RewardModel::from_truth(
            map,
            &GroundTruthReward::load(path)?,
        )?),
    };
    Ok(loaded)
}

fn target_path(
    run: &RunDir,
    config: &ExperimentConfig,
    target: &Target,
) -> Result<PathBuf, CliError> {
    match (&target.checkpoint, target.mode) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(mode)) => run.require_checkpoint(config, mode),
        (None, None) => Err(CliError::Usage(
            "say what to evaluate with --mode MODE or --checkpoint PATH".into(),
        )),
    }
}

fn scored_samples(
    run: &RunDir,
    config: &ExperimentConfig,
    target: &Target,
) -> Result<(PathBuf, Vec<MarginSample>, Option<f64>), CliError> {
    let path = target_path(run, config, target)?;
    let data = match &target.data {
        Some(p) => ingest_jsonl(p)?,
        None => load_split(run, TEST_FILE)?,
    };
    let sim = config.eval_sim()?;
    let provider = provider_for(config, &[sim])?;
    match load_any(&path, config)? {
        Loaded::Reward(model) => {
            let truth = load_truth(run, config)?;
            let (report, samples) =
                evaluate(&model, &data, sim, as_embedder(&provider), truth.as_ref())?;
            Ok((path, samples, report.spearman))
        }
        Loaded::Policy(policy) => {
            let sft = ToyLanguageModel::load(&run.require_checkpoint(config, Mode::Sft)?)?;
            if policy.vocab() != sft.vocab() {
                return Err(pcrm::Error::Config(format!(
                    "policy {} and the SFT reference use different vocabularies",
                    path.display()
                ))
                .into());
            }
            let samples = implicit_margin_scatter(
                &policy,
                &freeze_reference(&sft),
                config.dpo_beta()?,
                &data,
                sim,
                as_embedder(&provider),
            )?;
            Ok((path, samples, None))
        }
    }
}

fn artifact_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}

/// Writes `{name}.report.json` (and the scatter table when asked) and
/// returns the report.
pub fn eval(
    config: &ExperimentConfig,
    out: &Path,
    target: &Target,
    scatter: Option<Option<PathBuf>>,
) -> Result<EvalReport, CliError> {
    let run = RunDir::new(out);
    let (path, samples, spearman) = scored_samples(&run, config, target)?;
    let report = EvalReport::from_samples(&samples, spearman)?;
    let name = artifact_name(&path);
    run.create()?;
    let json = report.to_json()?;
    let report_path = run.file(&format!("{name}.report.json"));
    fs::write(&report_path, &json).map_err(|e| pcrm::Error::io(&report_path, e))?;
    say(json.trim_end());
    say(&format!("wrote {}", report_path.display()));
    if let Some(choice) = scatter {
        let scatter_path = choice.unwrap_or_else(|| run.file(&format!("{name}.dat")));
        write_scatter(&samples, &scatter_path)?;
        say(&format!("wrote {}", scatter_path.display()));
    }
    Ok(report)
}

pub fn export_scatter(
    config: &ExperimentConfig,
    out: &Path,
    target: &Target,
    scatter: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let run = RunDir::new(out);
    let (path, samples, _) = scored_samples(&run, config, target)?;
    let scatter_path =
        scatter.unwrap_or_else(|| run.file(&format!("{}.dat", artifact_name(&path))));
    write_scatter(&samples, &scatter_path)?;
    say(&format!("wrote {}", scatter_path.display()));
    Ok(scatter_path)
}

pub const SWEEP_HEADER: &str = "beta1,beta2,beta3,status,accuracy";

/// One constrained reward model per (β1, β3) cell, β2 fixed; test accuracy
/// per cell. Cells whose Δ*(1) would not be positive are reported as
/// `invalid-config` and skipped.
pub fn sweep(config: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    let (beta1s, beta3s) = config.sweep_grid()?;
    let run = RunDir::new(out);
    let sim = config
        .constraint()?
        .map_or(SimKind::Cosine, |c| c.sim_kind());
    let provider = provider_for(config, &[sim])?;
    let train_set = load_split(&run, TRAIN_FILE)?;
    let val_set = load_split(&run, VALIDATION_FILE)?;
    let test_set = load_split(&run, TEST_FILE)?;
    let map = config.feature_map()?;

    let mut csv = format!("{SWEEP_HEADER}\n");
    say(SWEEP_HEADER);
    for &b1 in &beta1s {
        for &b3 in &beta3s {
            let row = match ConstraintParams::new(b1, SWEEP_BETA2, b3, sim) {
                Err(_) => format!("{b1},{SWEEP_BETA2},{b3},invalid-config,"),
                Ok(params) => {
                    let train_config = config.train(Some(params))?;
                    let (model, _) = train_reward_model(
                        &train_set,
                        Some(&val_set),
                        &train_config,
                        RewardModel::zeros(map),
                        as_embedder(&provider),
                    )?;
                    let acc = pcrm::eval::accuracy(&model, &test_set)?;
                    format!("{b1},{SWEEP_BETA2},{b3},ok,{acc}")
                }
            };
            say(&row);
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    let prefixes = [
        "seed",
        "generator.",
        "features.",
        "train.",
        "constraint.",
        "embedding.",
        "sweep.",
    ];
    let path = run.file(&format!(
        "sweep-{}.csv",
        config_hash(config, "sweep", &prefixes)
    ));
    fs::write(&path, csv).map_err(|e| pcrm::Error::io(&path, e))?;
    say(&format!("wrote {}", path.display()));
    Ok(path)
}

/// generate → sft → rm → pcrm → align → eval (rm and pcrm, with scatter).
pub fn pipeline(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    constraint_for(config, Mode::Pcrm)?;
    generate(config, out)?;
    for mode in [Mode::Sft, Mode::Rm, Mode::Pcrm, Mode::Align] {
        train(config, out, mode)?;
    }
    for mode in [Mode::Rm, Mode::Pcrm] {
        let target = Target {
            mode: Some(mode),
            checkpoint: None,
            data: None,
        };
        eval(config, out, &target, Some(None))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_cover_everything() {
        assert_eq!(split_counts(2000, [0.8, 0.1, 0.1]), (1600, 200));
        assert_eq!(split_counts(10, [1.0, 0.0, 0.0]), (10, 0));
        assert_eq!(split_counts(7, [0.5, 0.5, 0.0]), (4, 3));
    }
}
