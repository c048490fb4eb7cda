//! Flat `key = value` experiment configuration.
//!
//! Keys are dotted (`train.epochs`), `#` starts a comment, blank lines are
//! ignored. Every key is optional; [`KEYS`] lists the recognized keys with
//! their defaults, and anything else is rejected by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pcrm::data::{GeneratorConfig, Labeling};
use pcrm::features::FeatureMap;
use pcrm::optim::OptimizerKind;
use pcrm::similarity::{ConstraintParams, SimKind, DEFAULT_MAX_CONTEXT};
use pcrm::training::{AlignConfig, Objective, TrainConfig};

use crate::CliError;

/// (key, default, description). An empty default means "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "7", "seed for every random stream of the run"),
    ("generator.num_prompts", "2000", "records to generate"),
    (
        "generator.outputs_per_prompt",
        "4",
        "ranked outputs per record",
    ),
    ("generator.mutation_rate", "0.3", "per-token edit rate"),
    (
        "generator.labeling",
        "deterministic",
        "deterministic | bradley_terry_sampled",
    ),
    (
        "generator.noise_temperature",
        "1.0",
        "temperature of sampled labels",
    ),
    (
        "generator.length_preference",
        "0.0",
        "hidden-reward weight on output length",
    ),
    (
        "generator.min_reward_gap",
        "2.0",
        "minimum hidden-reward gap between outputs",
    ),
    (
        "generator.split_train",
        "0.8",
        "fraction of records for training",
    ),
    (
        "generator.split_validation",
        "0.1",
        "fraction for validation",
    ),
    ("generator.split_test", "0.1", "fraction for test"),
    ("features.dimension", "1024", "reward feature dimension"),
    (
        "embedding.dimension",
        "256",
        "hashed n-gram embedding dimension",
    ),
    (
        "embedding.max_context",
        "",
        "left-truncation window (default from preset, else 512)",
    ),
    ("embedding.file", "", "JSONL of precomputed embeddings"),
    (
        "constraint.preset",
        "",
        "named β preset, e.g. dialogue-cossim",
    ),
    ("constraint.sim", "", "length_ratio | cosine | rouge_l"),
    ("constraint.beta1", "", "Δ* scale"),
    ("constraint.beta2", "", "Δ* similarity offset"),
    ("constraint.beta3", "", "Δ* additive offset"),
    ("train.epochs", "3", "reward / preference training epochs"),
    ("train.learning_rate", "0.01", "step size"),
    ("train.optimizer", "adam", "adam | sgd"),
    ("train.batch_size", "32", "pairs per update"),
    ("train.shuffle", "true", "reshuffle pairs every epoch"),
    (
        "train.objective",
        "pairwise",
        "pairwise | listwise (reward models only)",
    ),
    ("sft.epochs", "3", "epochs of maximum-likelihood fitting"),
    ("sft.learning_rate", "0.01", "Adam step size for SFT"),
    ("dpo.beta", "0.1", "implicit-reward scale"),
    ("align.kl_coefficient", "0.1", "KL penalty weight"),
    (
        "align.samples_per_prompt",
        "4",
        "rollouts per prompt and step",
    ),
    ("align.steps", "100", "policy updates"),
    ("align.learning_rate", "0.5", "policy step size"),
    ("align.temperature", "1.0", "rollout temperature"),
    ("align.top_p", "1.0", "rollout nucleus mass"),
    ("align.max_len", "32", "rollout length cap"),
    (
        "align.reward",
        "pcrm",
        "reward checkpoint to align against: rm | pcrm",
    ),
    (
        "eval.sim",
        "",
        "similarity for scatter/buckets (default: constraint's, else cosine)",
    ),
    ("sweep.beta1", "", "comma-separated β1 grid"),
    ("sweep.beta3", "", "comma-separated β3 grid"),
];

/// β2 of every sweep cell.
pub const SWEEP_BETA2: f64 = 0.001;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> Option<&'static (&'static str, &'static str, &'static str)> {
    KEYS.iter().find(|(k, _, _)| *k == key)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    idx + 1
                )));
            };
            let key = key.trim();
            if known(key).is_none() {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key `{key}`",
                    idx + 1
                )));
            }
            values.insert(key.to_owned(), value.trim().to_owned());
        }
        Ok(ExperimentConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| pcrm::Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if known(key).is_none() {
            return Err(CliError::Usage(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_owned(), value.into());
        Ok(())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Explicit value, else the default (`None` for unset keys without one).
    pub fn raw(&self, key: &str) -> Option<&str> {
        let (_, default, _) = known(key).expect("key listed in KEYS");
        match self.values.get(key) {
            Some(v) => Some(v.as_str()),
            None if default.is_empty() => None,
            None => Some(default),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self
            .raw(key)
            .ok_or_else(|| CliError::Usage(format!("`{key}` must be set")))?;
        raw.parse()
            .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    /// `key = value` lines for every key under `prefixes`, defaults filled
    /// in and marked. Used for run logs and checkpoint hashing.
    pub fn resolved(&self, prefixes: &[&str]) -> Vec<String> {
        KEYS.iter()
            .filter(|(k, _, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .filter_map(|(k, _, _)| {
                let v = self.raw(k)?;
                let mark = if self.is_set(k) { "" } else { " (default)" };
                Some(format!("{k} = {v}{mark}"))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn feature_map(&self) -> Result<FeatureMap, CliError> {
        Ok(FeatureMap::new(self.get("features.dimension")?)?)
    }

    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        let labeling = match self.get::<String>("generator.labeling")?.as_str() {
            "deterministic" => Labeling::Deterministic,
            "bradley_terry_sampled" => Labeling::BradleyTerrySampled,
            other => {
                return Err(CliError::Usage(format!(
                    "`generator.labeling`: expected deterministic or bradley_terry_sampled, got `{other}`"
                )))
            }
        };
        let config = GeneratorConfig {
            num_prompts: self.get("generator.num_prompts")?,
            outputs_per_prompt: self.get("generator.outputs_per_prompt")?,
            mutation_rate: self.get("generator.mutation_rate")?,
            labeling,
            seed: self.seed()?,
            min_reward_gap: self.get("generator.min_reward_gap")?,
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn noise_temperature(&self) -> Result<f64, CliError> {
        self.get("generator.noise_temperature")
    }

    pub fn length_preference(&self) -> Result<f64, CliError> {
        self.get("generator.length_preference")
    }

    /// (train, validation, test) fractions; each in [0, 1], summing to 1.
    pub fn splits(&self) -> Result<[f64; 3], CliError> {
        let s: [f64; 3] = [
            self.get("generator.split_train")?,
            self.get("generator.split_validation")?,
            self.get("generator.split_test")?,
        ];
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(CliError::Usage(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {} + {} + {}",
                s[0], s[1], s[2]
            )));
        }
        Ok(s)
    }

    pub fn has_constraint(&self) -> bool {
        KEYS.iter()
            .any(|(k, _, _)| k.starts_with("constraint.") && self.is_set(k))
    }

    /// The constraint section, if any key of it is set. A preset supplies
    /// every field; explicit keys override it.
    pub fn constraint(&self) -> Result<Option<ConstraintParams>, CliError> {
        if !self.has_constraint() {
            return Ok(None);
        }
        let base = match self.raw("constraint.preset") {
            Some(name) => Some(ConstraintParams::preset(name).ok_or_else(|| {
                let names: Vec<&str> = pcrm::similarity::PRESETS.iter().map(|p| p.0).collect();
                CliError::Usage(format!(
                    "unknown constraint preset `{name}`; known presets: {}",
                    names.join(", ")
                ))
            })?),
            None => None,
        };
        let pick = |key: &str, fallback: Option<f64>| -> Result<f64, CliError> {
            match self.get_opt::<f64>(key)? {
                Some(v) => Ok(v),
                None => fallback.ok_or_else(|| {
                    CliError::Usage(format!(
                        "`{key}` must be set when the constraint has no preset"
                    ))
                }),
            }
        };
        let sim = match self.raw("constraint.sim") {
            Some(s) => parse_sim(s, "constraint.sim")?,
            None => base.map(|b| b.sim_kind()).ok_or_else(|| {
                CliError::Usage(
                    "`constraint.sim` must be set when the constraint has no preset".into(),
                )
            })?,
        };
        let params = ConstraintParams::new(
            pick("constraint.beta1", base.map(|b| b.beta1()))?,
            pick("constraint.beta2", base.map(|b| b.beta2()))?,
            pick("constraint.beta3", base.map(|b| b.beta3()))?,
            sim,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Some(params))
    }

    pub fn embedding_dimension(&self) -> Result<usize, CliError> {
        self.get("embedding.dimension")
    }

    pub fn embedding_file(&self) -> Option<&str> {
        self.raw("embedding.file")
    }

    /// Explicit window, else the preset's context window, else the default.
    pub fn max_context(&self) -> Result<usize, CliError> {
        if let Some(v) = self.get_opt("embedding.max_context")? {
            return Ok(v);
        }
        let preset_context = self.raw("constraint.preset").and_then(|name| {
            pcrm::similarity::PRESETS
                .iter()
                .find(|p| p.0 == name)
                .map(|p| p.5)
        });
        Ok(preset_context.unwrap_or(DEFAULT_MAX_CONTEXT))
    }

    pub fn train(&self, constraint: Option<ConstraintParams>) -> Result<TrainConfig, CliError> {
        let objective = match self.get::<String>("train.objective")?.as_str() {
            "pairwise" => Objective::Pairwise,
            "listwise" => Objective::Listwise,
            other => {
                return Err(CliError::Usage(format!(
                    "`train.objective`: expected pairwise or listwise, got `{other}`"
                )))
            }
        };
        let optimizer = self.get::<String>("train.optimizer")?;
        let config = TrainConfig {
            epochs: self.get("train.epochs")?,
            learning_rate: self.get("train.learning_rate")?,
            optimizer: OptimizerKind::parse(&optimizer).ok_or_else(|| {
                CliError::Usage(format!(
                    "`train.optimizer`: expected adam or sgd, got `{optimizer}`"
                ))
            })?,
            batch_size: self.get("train.batch_size")?,
            seed: self.seed()?,
            constraint,
            shuffle: self.get("train.shuffle")?,
            objective,
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn sft(&self) -> Result<(usize, f64), CliError> {
        Ok((self.get("sft.epochs")?, self.get("sft.learning_rate")?))
    }

    pub fn dpo_beta(&self) -> Result<f64, CliError> {
        let beta: f64 = self.get("dpo.beta")?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(CliError::Usage(format!(
                "`dpo.beta` must be positive, got {beta}"
            )));
        }
        Ok(beta)
    }

    pub fn align(&self) -> Result<AlignConfig, CliError> {
        let config = AlignConfig {
            kl_coefficient: self.get("align.kl_coefficient")?,
            samples_per_prompt: self.get("align.samples_per_prompt")?,
            steps: self.get("align.steps")?,
            learning_rate: self.get("align.learning_rate")?,
            temperature: self.get("align.temperature")?,
            top_p: self.get("align.top_p")?,
            max_len: self.get("align.max_len")?,
            seed: self.seed()?,
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn align_reward(&self) -> Result<String, CliError> {
        let r: String = self.get("align.reward")?;
        match r.as_str() {
            "rm" | "pcrm" => Ok(r),
            other => Err(CliError::Usage(format!(
                "`align.reward`: expected rm or pcrm, got `{other}`"
            ))),
        }
    }

    /// Similarity used by evaluation: explicit, else the constraint's kind,
    /// else cosine.
    pub fn eval_sim(&self) -> Result<SimKind, CliError> {
        if let Some(s) = self.raw("eval.sim") {
            return parse_sim(s, "eval.sim");
        }
        Ok(self.constraint()?.map_or(SimKind::Cosine, |c| c.sim_kind()))
    }

    pub fn sweep_grid(&self) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let list = |key: &str| -> Result<Vec<f64>, CliError> {
            let Some(raw) = self.raw(key) else {
                return Ok(Vec::new());
            };
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| CliError::Usage(format!("`{key}`: cannot parse `{s}`")))
                })
                .collect()
        };
        let (b1, b3) = (list("sweep.beta1")?, list("sweep.beta3")?);
        if b1.is_empty() || b3.is_empty() {
            return Err(CliError::Usage(
                "sweep needs non-empty `sweep.beta1` and `sweep.beta3` lists".into(),
            ));
        }
        Ok((b1, b3))
    }
}

fn parse_sim(s: &str, key: &str) -> Result<SimKind, CliError> {
    SimKind::parse(s).ok_or_else(|| {
        CliError::Usage(format!(
            "`{key}`: expected length_ratio, cosine or rouge_l, got `{s}`"
        ))
    })
}
