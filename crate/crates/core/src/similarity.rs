//! Output-pair similarity estimators and the similarity-to-margin map
//! Δ*(s) = β1 / (s + β2) + β3.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::hash_parts;
use crate::numeric::dot;
use crate::text::Text;
use crate::{Error, Result};

/// Norm floor in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Lower clamp applied to Δ*.
pub const MIN_MARGIN: f64 = 1e-6;
pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_MAX_CONTEXT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    LengthRatio,
    Cosine,
    RougeL,
}

impl SimKind {
    pub fn name(self) -> &'static str {
        match self {
            SimKind::LengthRatio => "length_ratio",
            SimKind::Cosine => "cosine",
            SimKind::RougeL => "rouge_l",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "length_ratio" | "len_rat" => Some(SimKind::LengthRatio),
            "cosine" | "cos_sim" => Some(SimKind::Cosine),
            "rouge_l" | "rouge" => Some(SimKind::RougeL),
            _ => None,
        }
    }
}

/// (β1, β2, β3) plus the similarity estimator that feeds Δ*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    beta1: f64,
    beta2: f64,
    beta3: f64,
    sim_kind: SimKind,
}

/// Named presets: (name, sim kind, β1, β2, β3, similarity context window).
pub const PRESETS: &[(&str, SimKind, f64, f64, f64, usize)] = &[
    (
        "dialogue-lenrat",
        SimKind::LengthRatio,
        10.0,
        0.001,
        -5.0,
        512,
    ),
    ("dialogue-cossim", SimKind::Cosine, 20.0, 0.001, -15.0, 512),
    (
        "summarization-lenrat",
        SimKind::LengthRatio,
        10.0,
        0.001,
        -5.0,
        1024,
    ),
    (
        "summarization-cossim",
        SimKind::Cosine,
        20.0,
        0.001,
        -15.0,
        1024,
    ),
    (
        "summarization-rouge",
        SimKind::RougeL,
        10.0,
        0.001,
        -5.0,
        1024,
    ),
];

impl ConstraintParams {
    /// Validates β1 > 0, β2 > 0 and Δ*(1) > 0. Δ* decreases in the
    /// similarity, so positivity at 1 covers the whole unit interval.
    pub fn new(beta1: f64, beta2: f64, beta3: f64, sim_kind: SimKind) -> Result<Self> {
        for (name, v) in [("beta1", beta1), ("beta2", beta2), ("beta3", beta3)] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be finite, got {v}")));
            }
        }
        if beta1 <= 0.0 {
            return Err(Error::Validation(format!(
                "beta1 must be positive, got {beta1}"
            )));
        }
        if beta2 <= 0.0 {
            return Err(Error::Validation(format!(
                "beta2 must be positive, got {beta2}"
            )));
        }
        let at_one = beta1 / (1.0 + beta2) + beta3;
        if at_one <= 0.0 {
            return Err(Error::Validation(format!(
                "max margin at similarity 1 is {at_one}, must be positive \
                 (beta1={beta1}, beta2={beta2}, beta3={beta3})"
            )));
        }
        Ok(ConstraintParams {
            beta1,
            beta2,
            beta3,
            sim_kind,
        })
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|&(_, kind, b1, b2, b3, _)| ConstraintParams::new(b1, b2, b3, kind).unwrap())
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }
    pub fn beta2(&self) -> f64 {
        self.beta2
    }
    pub fn beta3(&self) -> f64 {
        self.beta3
    }
    pub fn sim_kind(&self) -> SimKind {
        self.sim_kind
    }

    pub fn max_margin(&self, sim: f64) -> f64 {
        max_margin(sim, self)
    }
}

/// Δ*(sim) = β1 / (sim + β2) + β3, floored at [`MIN_MARGIN`].
pub fn max_margin(sim: f64, params: &ConstraintParams) -> f64 {
    (params.beta1 / (sim + params.beta2) + params.beta3).max(MIN_MARGIN)
}

fn require_nonempty(y: &Text, which: &str) -> Result<()> {
    if y.is_empty() {
        Err(Error::Validation(format!("{which} output is empty")))
    } else {
        Ok(())
    }
}

/// min(φ(y1), φ(y2)) / max(φ(y1), φ(y2)) with φ the token count.
pub fn sim_length_ratio(y1: &Text, y2: &Text) -> Result<f64> {
    require_nonempty(y1, "first")?;
    require_nonempty(y2, "second")?;
    let (a, b) = (y1.len() as f64, y2.len() as f64);
    Ok(a.min(b) / a.max(b))
}

/// ROUGE-L F-measure over tokens, with P = L/φ(y2) and R = L/φ(y1).
pub fn sim_rouge_l(y1: &Text, y2: &Text) -> Result<f64> {
    require_nonempty(y1, "first")?;
    require_nonempty(y2, "second")?;
    let lcs = lcs_len(y1.tokens(), y2.tokens());
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / y2.len() as f64;
    let r = lcs as f64 / y1.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Angular similarity of two embedding vectors:
/// 1 − arccos(clamp(u·v / (max(‖u‖, ε)·max(‖v‖, ε)), −1, 1)) / π.
pub fn angular_similarity(u: &[f64], v: &[f64]) -> f64 {
    // sqrt(a·b) rather than sqrt(a)·sqrt(b): for u = v this is exactly |u·u|,
    // so identical embeddings give cos = 1 with no round-off.
    let floor = COSINE_EPS * COSINE_EPS;
    let denom = (dot(u, u).max(floor) * dot(v, v).max(floor)).sqrt();
    let c = (dot(u, v) / denom).clamp(-1.0, 1.0);
    1.0 - c.acos() / std::f64::consts::PI
}

pub fn sim_cosine(x: &Text, y1: &Text, y2: &Text, provider: &dyn Embedder) -> Result<f64> {
    let u = provider.embed(x, y1)?;
    let v = provider.embed(x, y2)?;
    Ok(angular_similarity(&u, &v))
}

/// Dispatches to the estimator named by `kind`. Cosine needs a provider.
pub fn similarity(
    kind: SimKind,
    x: &Text,
    y1: &Text,
    y2: &Text,
    provider: Option<&dyn Embedder>,
) -> Result<f64> {
    match kind {
        SimKind::LengthRatio => sim_length_ratio(y1, y2),
        SimKind::RougeL => sim_rouge_l(y1, y2),
        SimKind::Cosine => {
            let p = provider.ok_or_else(|| {
                Error::Config("cosine similarity requires an embedding provider".into())
            })?;
            sim_cosine(x, y1, y2, p)
        }
    }
}

/// Source of E(x, y) for the cosine estimator.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, x: &Text, y: &Text) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
enum Mode {
    HashedNgram {
        seed: u64,
    },
    FileBacked {
        table: HashMap<(String, String), Vec<f64>>,
    },
}

/// Built-in embedders: a signed hashed 1+2-gram bag over the left-truncated
/// prompt⊕output token stream, or a table of precomputed vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProvider {
    dimension: usize,
    max_context: usize,
    mode: Mode,
}

const EMBED_SEED: u64 = 0xe1be_dd1e_c0de_0001;

impl EmbeddingProvider {
    pub fn hashed_ngram(dimension: usize, max_context: usize) -> Result<Self> {
        if dimension == 0 || max_context == 0 {
            return Err(Error::Config(
                "embedding dimension and max_context must be positive".into(),
            ));
        }
        Ok(EmbeddingProvider {
            dimension,
            max_context,
            mode: Mode::HashedNgram { seed: EMBED_SEED },
        })
    }

    /// Loads `{"prompt": .., "output": .., "embedding": [..]}` lines. The
    /// first line fixes the dimension.
    pub fn from_jsonl(path: &Path, max_context: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            prompt: String,
            output: String,
            embedding: Vec<f64>,
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        let mut dimension = None;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::Line {
                line: line_no,
                message: format!("malformed embedding row: {e}"),
            })?;
            let dim = *dimension.get_or_insert(row.embedding.len());
            if dim == 0 || row.embedding.len() != dim {
                return Err(Error::Line {
                    line: line_no,
                    message: format!(
                        "embedding has {} components, expected {dim}",
                        row.embedding.len()
                    ),
                });
            }
            table.insert((row.prompt, row.output), row.embedding);
        }
        let dimension = dimension
            .ok_or_else(|| Error::Validation(format!("{} holds no embeddings", path.display())))?;
        Ok(EmbeddingProvider {
            dimension,
            max_context,
            mode: Mode::FileBacked { table },
        })
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn is_file_backed(&self) -> bool {
        matches!(self.mode, Mode::FileBacked { .. })
    }

    fn hashed(&self, seed: u64, x: &Text, y: &Text) -> Vec<f64> {
        let stream: Vec<u64> = x.tokens().iter().chain(y.tokens()).map(|t| t.0).collect();
        let start = stream.len().saturating_sub(self.max_context);
        let window = &stream[start..];
        let mut v = vec![0.0; self.dimension];
        let mut add = |parts: &[u64]| {
            let h = hash_parts(seed, parts);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dimension as u64) as usize] += sign;
        };
        for t in window {
            add(&[1, *t]);
        }
        for w in window.windows(2) {
            add(&[2, w[0], w[1]]);
        }
        v
    }
}

impl Embedder for EmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, x: &Text, y: &Text) -> Result<Vec<f64>> {
        match &self.mode {
            Mode::HashedNgram { seed } => Ok(self.hashed(*seed, x, y)),
            Mode::FileBacked { table } => table
                .get(&(x.raw().to_owned(), y.raw().to_owned()))
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding {
                    prompt: x.raw().to_owned(),
                    output: y.raw().to_owned(),
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn words(n: usize, prefix: &str) -> Text {
        Text::from_words(&(0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>())
    }

    #[test]
    fn length_ratio_examples() {
        assert_eq!(
            sim_length_ratio(&words(5, "a"), &words(10, "b")).unwrap(),
            0.5
        );
        assert_eq!(
            sim_length_ratio(&words(7, "a"), &words(7, "b")).unwrap(),
            1.0
        );
        assert_eq!(
            sim_length_ratio(&words(3, "a"), &words(12, "b")).unwrap(),
            0.25
        );
        assert!(sim_length_ratio(&Text::new(""), &words(2, "b")).is_err());
    }

    #[test]
    fn rouge_l_examples() {
        let abc = Text::new("a b c");
        assert_eq!(sim_rouge_l(&abc, &abc).unwrap(), 1.0);
        assert_eq!(sim_rouge_l(&abc, &Text::new("x y")).unwrap(), 0.0);
        let f = sim_rouge_l(&abc, &Text::new("a c")).unwrap();
        assert!((f - 0.8).abs() < 1e-15, "{f}");
        assert!(sim_rouge_l(&abc, &Text::new(" ")).is_err());
    }

    #[test]
    fn angular_similarity_examples() {
        assert_eq!(angular_similarity(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert!((angular_similarity(&[1.0, 0.0], &[0.0, 3.0]) - 0.5).abs() < 1e-15);
        assert_eq!(angular_similarity(&[1.0, 1.0], &[-2.0, -2.0]), 0.0);
        // zero vectors hit the ε floor instead of dividing by zero
        assert_eq!(angular_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn max_margin_table_values() {
        let lenrat = ConstraintParams::preset("dialogue-lenrat").unwrap();
        assert!((max_margin(1.0, &lenrat) - 4.990_009_990_009_99).abs() < 1e-12);
        let cossim = ConstraintParams::preset("dialogue-cossim").unwrap();
        assert!((max_margin(0.5, &cossim) - 24.920_159_680_638_72).abs() < 1e-10);
        let mut last = 0.0;
        for k in (1..=10).rev() {
            let m = max_margin(k as f64 / 10.0, &cossim);
            assert!(m > last);
            last = m;
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ConstraintParams::new(10.0, 0.0, -5.0, SimKind::LengthRatio).is_err());
        assert!(ConstraintParams::new(0.0, 0.001, 1.0, SimKind::LengthRatio).is_err());
        // Δ*(1) = 10/1.001 − 10 < 0
        assert!(ConstraintParams::new(10.0, 0.001, -10.0, SimKind::LengthRatio).is_err());
        assert!(ConstraintParams::new(10.0, 0.001, -9.0, SimKind::LengthRatio).is_ok());
    }

    #[test]
    fn hashed_embedding_shape_and_truncation() {
        let p = EmbeddingProvider::hashed_ngram(256, 4).unwrap();
        let x = Text::new("one two three");
        let y = Text::new("four five six");
        let e = p.embed(&x, &y).unwrap();
        assert_eq!(e.len(), 256);
        assert_eq!(e, p.embed(&x, &y).unwrap());
        // last four tokens only
        let suffix = p
            .embed(&Text::new(""), &Text::new("three four five six"))
            .unwrap();
        assert_eq!(e, suffix);
    }

    #[test]
    fn cosine_requires_provider() {
        let y = Text::new("a");
        let r = similarity(SimKind::Cosine, &y, &y, &y, None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn file_backed_lookup() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"prompt":"p","output":"a","embedding":[1.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"prompt":"p","output":"b","embedding":[0.0,1.0]}}"#).unwrap();
        let p = EmbeddingProvider::from_jsonl(f.path(), 512).unwrap();
        assert_eq!(p.dimension(), 2);
        let x = Text::new("p");
        let s = sim_cosine(&x, &Text::new("a"), &Text::new("b"), &p).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        match sim_cosine(&x, &Text::new("a"), &Text::new("zzz"), &p) {
            Err(Error::MissingEmbedding { output, .. }) => assert_eq!(output, "zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_backed_dimension_enforced() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"prompt":"p","output":"a","embedding":[1.0,0.0]}}"#).unwrap();
        writeln!(
            f,
            r#"{{"prompt":"p","output":"b","embedding":[0.0,1.0,2.0]}}"#
        )
        .unwrap();
        match EmbeddingProvider::from_jsonl(f.path(), 512) {
            Err(Error::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
