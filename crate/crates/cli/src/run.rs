//! Run-directory layout, content-addressed artifact names and the run log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{CliError, Mode};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRUTH_FILE: &str = "truth.json";

/// Config sections every artifact depends on: the data and the features.
const DATA_KEYS: &[&str] = &["seed", "generator.", "features."];

/// Config sections a mode's checkpoint depends on, beyond [`DATA_KEYS`].
pub fn mode_keys(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Rm => &["train."],
        Mode::Pcrm => &["train.", "constraint.", "embedding."],
        Mode::Sft => &["sft."],
        Mode::Dpo => &["sft.", "train.", "dpo."],
        Mode::Pcdpo => &["sft.", "train.", "dpo.", "constraint.", "embedding."],
        Mode::Align => &["sft.", "align.", "train.", "constraint.", "embedding."],
    }
}

/// First 12 hex digits of the SHA-256 of `label` and the resolved values
/// (defaults included) of every key under `prefixes`.
pub fn config_hash(config: &ExperimentConfig, label: &str, prefixes: &[&str]) -> String {
    let mut canonical = format!("{label}\n");
    for line in config.resolved(prefixes) {
        canonical.push_str(line.trim_end_matches(" (default)"));
        canonical.push('\n');
    }
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(12);
    for b in &digest[..6] {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir {
            root: root.to_path_buf(),
        }
    }

    pub fn create(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| pcrm::Error::io(&self.root, e))?;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// `{mode}-{hash}`: the stem shared by a mode's checkpoint, metrics and log.
    pub fn stem(&self, config: &ExperimentConfig, mode: Mode) -> Result<String, CliError> {
        let mut prefixes: Vec<&str> = DATA_KEYS.to_vec();
        prefixes.extend(mode_keys(mode));
        let mut label = mode.name().to_owned();
        if mode == Mode::Align {
            // the reward checkpoint is an input, so its identity is too
            let reward = config.align_reward()?;
            label.push_str(&format!(" reward={reward}"));
            if reward == "rm" {
                prefixes.retain(|p| *p != "constraint." && *p != "embedding.");
            }
        }
        Ok(format!(
            "{}-{}",
            mode.name(),
            config_hash(config, &label, &prefixes)
        ))
    }

    pub fn checkpoint(&self, config: &ExperimentConfig, mode: Mode) -> Result<PathBuf, CliError> {
        Ok(self.file(&format!("{}.json", self.stem(config, mode)?)))
    }

    /// Checkpoint of `mode` that must already exist.
    pub fn require_checkpoint(
        &self,
        config: &ExperimentConfig,
        mode: Mode,
    ) -> Result<PathBuf, CliError> {
        let path = self.checkpoint(config, mode)?;
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                path,
                hint: format!(
                    "run `pcrm train --mode {}` with the same config first",
                    mode.name()
                ),
            })
        }
    }

    pub fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.file(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                path,
                hint: "run `pcrm generate` with the same config first".into(),
            })
        }
    }
}

/// Prints one line to stdout. A closed pipe (e.g. `| head`) is not an
/// error worth aborting a finished computation for.
pub fn say(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

/// Lines echoed to stdout and kept for a `.log` file next to the artifacts.
#[derive(Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    pub fn line(&mut self, text: impl Into<String>) {
        let text = text.into();
        say(&text);
        self.lines.push(text);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut body = self.lines.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| pcrm::Error::io(path, e))?;
        Ok(())
    }
}
