//! Preference records, the synthetic generator with a hidden reward, and
//! JSONL ingestion.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::features::FeatureMap;
use crate::numeric::dot;
use crate::text::Text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Ingested,
}

/// A prompt with `n >= 2` outputs ranked best first.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    prompt: Text,
    outputs: Vec<Text>,
    source: Source,
}

impl PreferenceRecord {
    pub fn new(prompt: Text, outputs: Vec<Text>, source: Source) -> Result<Self> {
        if outputs.len() < 2 {
            return Err(Error::Validation(format!(
                "a preference record needs at least 2 outputs, got {}",
                outputs.len()
            )));
        }
        Ok(PreferenceRecord {
            prompt,
            outputs,
            source,
        })
    }

    pub fn prompt(&self) -> &Text {
        &self.prompt
    }

    /// Outputs, best first.
    pub fn outputs(&self) -> &[Text] {
        &self.outputs
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Every (winner, loser) pair, in `(i, j)` order with `i < j`.
    pub fn pairs(&self) -> Vec<(&Text, &Text)> {
        pairs_of(self)
    }
}

/// Index pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pair_indices(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

pub fn pairs_of(record: &PreferenceRecord) -> Vec<(&Text, &Text)> {
    pair_indices(record.outputs.len())
        .map(|(i, j)| (&record.outputs[i], &record.outputs[j]))
        .collect()
}

/// The hidden reward r*(y, x) = w · features(x, y) behind synthetic labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthReward {
    pub weights: Vec<f64>,
    pub noise_temperature: f64,
}

impl GroundTruthReward {
    /// Standard-normal weights on the hashed slots; `length_preference`
    /// goes on the linear length slot (negative favors short outputs) and
    /// the quadratic slot is zero.
    pub fn random(
        map: &FeatureMap,
        seed: u64,
        length_preference: f64,
        noise_temperature: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights: Vec<f64> = (0..map.dimension())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let slot = map.length_slot();
        weights[slot] = length_preference;
        weights[slot + 1] = 0.0;
        GroundTruthReward {
            weights,
            noise_temperature,
        }
    }

    pub fn check_dimension(&self, map: &FeatureMap) -> Result<()> {
        if self.weights.len() != map.dimension() {
            return Err(Error::Config(format!(
                "ground-truth reward has dimension {} but the feature map has {}",
                self.weights.len(),
                map.dimension()
            )));
        }
        Ok(())
    }

    pub fn reward(&self, map: &FeatureMap, x: &Text, y: &Text) -> f64 {
        map.sparse_features(x, y).dot_dense(&self.weights)
    }

    pub fn reward_dense(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    Deterministic,
    BradleyTerrySampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub num_prompts: usize,
    pub outputs_per_prompt: usize,
    pub mutation_rate: f64,
    pub labeling: Labeling,
    pub seed: u64,
    /// Outputs of one prompt whose hidden rewards differ by less than this
    /// are redrawn, so no ranked pair is an unresolvable near-tie.
    pub min_reward_gap: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_prompts: 2000,
            outputs_per_prompt: 4,
            mutation_rate: 0.3,
            labeling: Labeling::Deterministic,
            seed: 7,
            min_reward_gap: DEFAULT_MIN_REWARD_GAP,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts == 0 {
            return Err(Error::Config("num_prompts must be positive".into()));
        }
        if self.outputs_per_prompt < 2 {
            return Err(Error::Config(
                "outputs_per_prompt must be at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config(format!(
                "mutation_rate must lie in [0, 1], got {}",
                self.mutation_rate
            )));
        }
        if !(self.min_reward_gap >= 0.0 && self.min_reward_gap.is_finite()) {
            return Err(Error::Config(format!(
                "min_reward_gap must be a non-negative number, got {}",
                self.min_reward_gap
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_MIN_REWARD_GAP: f64 = 2.0;

const PROMPT_TEMPLATES: &[&str] = &[
    "write a short note about {}",
    "explain {} to a new student",
    "give advice on {} for beginners",
    "summarize the main facts about {}",
    "describe how people use {} today",
    "list the good and bad sides of {}",
    "answer a question about {} in plain words",
    "tell a brief story involving {}",
];

const TOPICS: &[&str] = &[
    "gardens", "rivers", "music", "cooking", "trains", "weather", "history", "money", "sleep",
    "coffee", "bridges", "birds", "markets", "paint", "maps", "winter",
];

const WORDS: &[&str] = &[
    "the",
    "a",
    "is",
    "are",
    "was",
    "of",
    "and",
    "to",
    "in",
    "for",
    "with",
    "on",
    "it",
    "this",
    "that",
    "can",
    "will",
    "may",
    "very",
    "more",
    "most",
    "some",
    "many",
    "few",
    "good",
    "bad",
    "clear",
    "simple",
    "useful",
    "careful",
    "quick",
    "slow",
    "new",
    "old",
    "small",
    "large",
    "people",
    "things",
    "ideas",
    "steps",
    "parts",
    "time",
    "place",
    "water",
    "light",
    "sound",
    "work",
    "help",
    "make",
    "take",
    "give",
    "find",
    "keep",
    "start",
    "learn",
    "show",
    "build",
    "often",
    "always",
    "never",
    "sometimes",
    "usually",
    "really",
    "also",
    "then",
    "first",
    "next",
    "finally",
    "because",
    "so",
    "but",
    "or",
    "if",
    "when",
    "where",
    "how",
    "why",
    "answer",
    "question",
    "example",
    "reason",
    "result",
    "problem",
    "method",
    "detail",
    "point",
    "fact",
    "story",
    "note",
    "plan",
    "rule",
    "idea",
    "way",
    "day",
    "year",
    "world",
    "city",
    "home",
    "friend",
    "teacher",
    "student",
    "book",
    "road",
    "tree",
    "stone",
    "fire",
    "bright",
    "quiet",
    "strong",
    "warm",
    "cold",
    "soft",
    "hard",
    "easy",
    "honest",
    "kind",
];

/// Text of every built-in prompt template and output word, for vocabulary sizing.
pub fn builtin_vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = PROMPT_TEMPLATES
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| *w != "{}")
        .chain(TOPICS.iter().copied())
        .chain(WORDS.iter().copied())
        .collect();
    let mut seen = std::collections::HashSet::new();
    words.retain(|w| seen.insert(*w));
    words
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Output words follow a Zipf law over `WORDS` (weight 1/(rank+1)), so the
/// output distribution has structure a language model can learn.
fn pick_word<R: Rng>(rng: &mut R) -> &'static str {
    static CDF: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    let cdf = CDF.get_or_init(|| {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (0..WORDS.len())
            .map(|k| {
                acc += 1.0 / (k as f64 + 1.0);
                acc
            })
            .collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        cdf
    });
    let u: f64 = rng.random();
    let k = cdf.partition_point(|c| *c <= u).min(WORDS.len() - 1);
    WORDS[k]
}

/// Applies insert/delete/substitute edits, each position edited with
/// probability `rate`. The result is never empty.
fn mutate<'a, R: Rng>(rng: &mut R, base: &[&'a str], rate: f64) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(base.len() + 4);
    for &w in base {
        if rng.random::<f64>() < rate {
            match rng.random_range(0..3) {
                0 => {
                    out.push(pick_word(rng));
                    out.push(w);
                }
                1 => {}
                _ => out.push(pick_word(rng)),
            }
        } else {
            out.push(w);
        }
    }
    if out.is_empty() {
        out.push(base[0]);
    }
    out
}

const MAX_ATTEMPTS: usize = 256;

fn generate_record(
    index: usize,
    config: &GeneratorConfig,
    truth: &GroundTruthReward,
    map: &FeatureMap,
) -> Result<PreferenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let template = pick(&mut rng, PROMPT_TEMPLATES);
    let topic = pick(&mut rng, TOPICS);
    let prompt = Text::new(template.replace("{}", topic));

    let base_len = rng.random_range(8..=20);
    let mut base: Vec<&str> = (0..base_len).map(|_| pick_word(&mut rng)).collect();
    let at = rng.random_range(0..base.len());
    base[at] = topic;

    // Each output gets its own edit intensity in [0, 2·rate] so pairwise
    // similarity spreads over the unit interval.
    // Candidates are redrawn (up to a fixed budget) when they duplicate an
    // existing output or sit within `min_reward_gap` of one.
    let mut outputs: Vec<Text> = Vec::with_capacity(config.outputs_per_prompt);
    let mut rewards: Vec<f64> = Vec::with_capacity(config.outputs_per_prompt);
    let mut attempts = 0;
    while outputs.len() < config.outputs_per_prompt {
        let intensity = (rng.random::<f64>() * 2.0 * config.mutation_rate).min(1.0);
        let candidate = Text::from_words(&mutate(&mut rng, &base, intensity));
        let r = truth.reward(map, &prompt, &candidate);
        attempts += 1;
        let clash = outputs.contains(&candidate)
            || rewards
                .iter()
                .any(|o| (o - r).abs() < config.min_reward_gap);
        if clash && attempts < MAX_ATTEMPTS {
            continue;
        }
        outputs.push(candidate);
        rewards.push(r);
    }
    let order = match config.labeling {
        Labeling::Deterministic => {
            let mut order: Vec<usize> = (0..outputs.len()).collect();
            order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]));
            order
        }
        Labeling::BradleyTerrySampled => {
            sample_plackett_luce(&mut rng, &rewards, truth.noise_temperature)
        }
    };
    let ranked = order.into_iter().map(|i| outputs[i].clone()).collect();
    PreferenceRecord::new(prompt, ranked, Source::Synthetic)
}

/// Sequential Plackett-Luce draw: pick the best with probability
/// softmax(r / T) over the remaining items, remove it, repeat.
pub fn sample_plackett_luce<R: Rng>(rng: &mut R, rewards: &[f64], temperature: f64) -> Vec<usize> {
    let t = temperature.max(1e-12);
    let mut remaining: Vec<usize> = (0..rewards.len()).collect();
    let mut order = Vec::with_capacity(rewards.len());
    let mut probs = vec![0.0; rewards.len()];
    while remaining.len() > 1 {
        let logits: Vec<f64> = remaining.iter().map(|&i| rewards[i] / t).collect();
        let p = &mut probs[..remaining.len()];
        crate::numeric::softmax_into(&logits, p);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (k, pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                chosen = k;
                break;
            }
        }
        order.push(remaining.remove(chosen));
    }
    order.extend(remaining);
    order
}

/// Generates `config.num_prompts` records labeled by `truth`. Record `i`
/// draws from its own RNG stream derived from `(seed, i)`.
pub fn generate_dataset(
    config: &GeneratorConfig,
    truth: &GroundTruthReward,
    map: &FeatureMap,
) -> Result<Vec<PreferenceRecord>> {
    config.validate()?;
    truth.check_dimension(map)?;
    (0..config.num_prompts)
        .map(|i| generate_record(i, config, truth, map))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    prompt: String,
    outputs: Vec<String>,
}

/// Reads one record per line: `{"prompt": ..., "outputs": [best, ..., worst]}`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn ingest_jsonl(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: line_no,
            message: format!("malformed record: {e}"),
        })?;
        if parsed.outputs.len() < 2 {
            return Err(Error::Line {
                line: line_no,
                message: format!(
                    "outputs must hold at least 2 entries, got {}",
                    parsed.outputs.len()
                ),
            });
        }
        let outputs: Vec<Text> = parsed.outputs.into_iter().map(Text::new).collect();
        if let Some(k) = outputs.iter().position(Text::is_empty) {
            return Err(Error::Line {
                line: line_no,
                message: format!("output {k} is empty"),
            });
        }
        records.push(PreferenceRecord::new(
            Text::new(parsed.prompt),
            outputs,
            Source::Ingested,
        )?);
    }
    Ok(records)
}

pub fn write_jsonl(path: &Path, records: &[PreferenceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        let line = JsonRecord {
            prompt: r.prompt.raw().to_owned(),
            outputs: r.outputs.iter().map(|o| o.raw().to_owned()).collect(),
        };
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            num_prompts: 50,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let map = FeatureMap::default();
        let truth = GroundTruthReward::random(&map, 1, 0.0, 1.0);
        let a = generate_dataset(&small_config(7), &truth, &map).unwrap();
        let b = generate_dataset(&small_config(7), &truth, &map).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_config(8), &truth, &map).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_labels_sorted_by_truth() {
        let map = FeatureMap::default();
        let truth = GroundTruthReward::random(&map, 3, -1.0, 1.0);
        let data = generate_dataset(&small_config(11), &truth, &map).unwrap();
        for r in &data {
            let rs: Vec<f64> = r
                .outputs()
                .iter()
                .map(|y| truth.reward(&map, r.prompt(), y))
                .collect();
            assert!(rs.windows(2).all(|w| w[0] >= w[1]), "{rs:?}");
            assert_eq!(r.outputs().len(), 4);
            assert_eq!(r.source(), Source::Synthetic);
        }
    }

    #[test]
    fn outputs_respect_min_reward_gap() {
        let map = FeatureMap::default();
        let truth = GroundTruthReward::random(&map, 3, 0.0, 1.0);
        let data = generate_dataset(&small_config(5), &truth, &map).unwrap();
        let mut closest = f64::INFINITY;
        for r in &data {
            let rs: Vec<f64> = r
                .outputs()
                .iter()
                .map(|y| truth.reward(&map, r.prompt(), y))
                .collect();
            for w in rs.windows(2) {
                closest = closest.min(w[0] - w[1]);
            }
        }
        assert!(closest >= DEFAULT_MIN_REWARD_GAP, "{closest}");
        let bad = GeneratorConfig {
            min_reward_gap: -1.0,
            ..small_config(5)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let truth = GroundTruthReward {
            weights: vec![0.0; 10],
            noise_temperature: 1.0,
        };
        let err = generate_dataset(&small_config(1), &truth, &FeatureMap::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn two_outputs_ordered_by_reward() {
        // r* = 2.0 vs 1.0 under the length slot alone.
        let map = FeatureMap::new(8).unwrap();
        let mut weights = vec![0.0; 8];
        weights[map.length_slot()] = 32.0; // φ/64 · 32 = φ/2
        let truth = GroundTruthReward {
            weights,
            noise_temperature: 1.0,
        };
        let x = Text::new("p");
        let long = Text::new("a b c d");
        let short = Text::new("a b");
        assert_eq!(truth.reward(&map, &x, &long), 2.0);
        assert_eq!(truth.reward(&map, &x, &short), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Zero temperature degenerates to the deterministic sort.
        assert_eq!(sample_plackett_luce(&mut rng, &[1.0, 2.0], 0.0), vec![1, 0]);
    }

    #[test]
    fn plackett_luce_sampling_matches_sigmoid() {
        // P(first preferred) = σ(10) for a gap of 10 at temperature 1.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| sample_plackett_luce(&mut rng, &[10.0, 0.0], 1.0)[0] == 0)
            .count();
        let freq = hits as f64 / draws as f64;
        let expected = crate::numeric::sigmoid(10.0);
        assert!((freq - expected).abs() <= 0.02, "{freq} vs {expected}");
    }

    #[test]
    fn plackett_luce_moderate_gap_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| sample_plackett_luce(&mut rng, &[1.0, 0.0], 1.0)[0] == 0)
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - crate::numeric::sigmoid(1.0)).abs() < 0.02, "{freq}");
    }

    #[test]
    fn pair_expansion() {
        let mk = |n: usize| {
            PreferenceRecord::new(
                Text::new("p"),
                (0..n).map(|i| Text::new(format!("o{i}"))).collect(),
                Source::Synthetic,
            )
            .unwrap()
        };
        assert_eq!(pairs_of(&mk(2)).len(), 1);
        assert_eq!(pairs_of(&mk(4)).len(), 6);
        let r = PreferenceRecord::new(
            Text::new("p"),
            vec![Text::new("a"), Text::new("b"), Text::new("c")],
            Source::Synthetic,
        )
        .unwrap();
        let names: Vec<(&str, &str)> = pairs_of(&r)
            .iter()
            .map(|(w, l)| (w.raw(), l.raw()))
            .collect();
        assert_eq!(names, vec![("a", "b"), ("a", "c"), ("b", "c")]);
    }

    #[test]
    fn single_output_record_rejected() {
        let r = PreferenceRecord::new(Text::new("p"), vec![Text::new("a")], Source::Ingested);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_valid_lines() {
        let f = write_lines(&[
            r#"{"prompt":"p","outputs":["a","b"]}"#,
            r#"{"prompt":"q","outputs":["c","d","e"]}"#,
            r#"{"prompt":"r","outputs":["f","g"]}"#,
        ]);
        let recs = ingest_jsonl(f.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].outputs().len(), 2);
        assert_eq!(recs[1].prompt().raw(), "q");
        assert_eq!(recs[2].prompt().raw(), "r");
        assert_eq!(recs[0].source(), Source::Ingested);
    }

    #[test]
    fn ingest_short_outputs_names_line() {
        let f = write_lines(&[r#"{"prompt":"p","outputs":["a"]}"#]);
        match ingest_jsonl(f.path()) {
            Err(Error::Line { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_malformed_names_line() {
        let f = write_lines(&[r#"{"prompt":"p","outputs":["a","b"]}"#, "{not json"]);
        match ingest_jsonl(f.path()) {
            Err(Error::Line { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("malformed"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let map = FeatureMap::default();
        let truth = GroundTruthReward::random(&map, 2, 0.0, 1.0);
        let data = generate_dataset(&small_config(3), &truth, &map).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_jsonl(f.path(), &data).unwrap();
        let back = ingest_jsonl(f.path()).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.prompt(), b.prompt());
            assert_eq!(a.outputs(), b.outputs());
        }
    }
}
