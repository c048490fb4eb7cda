//! Bigram language model: the trainable policy and, once frozen, the
//! reference policy.
//!
//! Row `r` of the logits table is the next-token distribution after token
//! `r`; the extra last row is the begin-of-sequence context. The prompt
//! conditions the output only through its last token, which becomes the
//! context of the first output token.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{log_softmax_into, softmax_into};
use crate::text::{Text, Token};
use crate::{Error, Result};

pub const MAX_VOCAB: usize = 256;
pub const EOS: usize = 0;
pub const UNK: usize = 1;
const EOS_WORD: &str = "</s>";
const UNK_WORD: &str = "<unk>";

/// Closed vocabulary. Id 0 is end-of-sequence, id 1 collects every
/// out-of-vocabulary token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<Token, usize>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = vec![EOS_WORD.to_owned(), UNK_WORD.to_owned()];
        let mut index = HashMap::new();
        index.insert(Token::of(EOS_WORD), EOS);
        index.insert(Token::of(UNK_WORD), UNK);
        for w in words {
            let w: String = w.into();
            let tok = Token::of(&w);
            if index.contains_key(&tok) {
                continue;
            }
            if list.len() == MAX_VOCAB {
                return Err(Error::Config(format!(
                    "vocabulary exceeds {MAX_VOCAB} entries"
                )));
            }
            index.insert(tok, list.len());
            list.push(w);
        }
        Ok(Vocabulary { words: list, index })
    }

    /// The `MAX_VOCAB - 2` most frequent tokens of `texts` (ties broken by
    /// first occurrence).
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a Text>) -> Self {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for t in texts {
            for w in t.words() {
                let e = counts.entry(w.to_owned()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.retain(|(w, _)| w != EOS_WORD && w != UNK_WORD);
        ranked.truncate(MAX_VOCAB - 2);
        Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w)).expect("truncated to capacity")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: Token) -> usize {
        self.index.get(&token).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, text: &Text) -> Vec<usize> {
        text.tokens().iter().map(|t| self.id(*t)).collect()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Sparse gradient over logits rows: row index → dense row of length vocab_size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrad {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl RowGrad {
    pub fn rows(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.rows
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows.get(&row).map_or(0.0, |r| r[col])
    }

    /// `dense += scale * self` over a flattened logits table.
    pub fn axpy_into(&self, scale: f64, dense: &mut [f64], cols: usize) {
        for (r, vals) in &self.rows {
            let base = r * cols;
            for (c, v) in vals.iter().enumerate() {
                dense[base + c] += scale * v;
            }
        }
    }

    fn row_mut(&mut self, row: usize, cols: usize) -> &mut Vec<f64> {
        self.rows.entry(row).or_insert_with(|| vec![0.0; cols])
    }
}

/// Result of [`sample_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub text: Text,
    pub ids: Vec<usize>,
    /// True when sampling stopped on the end-of-sequence token.
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLanguageModel {
    vocab: Vocabulary,
    logits: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "pcrm-bigram-lm";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    vocab: Vec<String>,
    logits: Vec<f64>,
}

impl ToyLanguageModel {
    /// All-zero logits: every row uniform.
    pub fn uniform(vocab: Vocabulary) -> Self {
        let v = vocab.len();
        ToyLanguageModel {
            logits: vec![0.0; (v + 1) * v],
            vocab,
        }
    }

    pub fn from_logits(vocab: Vocabulary, logits: Vec<f64>) -> Result<Self> {
        let v = vocab.len();
        if logits.len() != (v + 1) * v {
            return Err(Error::Config(format!(
                "logits table has {} entries, expected {}",
                logits.len(),
                (v + 1) * v
            )));
        }
        if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit {bad}")));
        }
        Ok(ToyLanguageModel { vocab, logits })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Row index of the begin-of-sequence context.
    pub fn bos_row(&self) -> usize {
        self.vocab.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let v = self.vocab.len();
        &self.logits[r * v..(r + 1) * v]
    }

    /// Context row for the first output token: last prompt token, or BOS.
    pub fn context_row(&self, x: &Text) -> usize {
        x.tokens()
            .last()
            .map_or(self.bos_row(), |t| self.vocab.id(*t))
    }

    /// log π(ids | prev) summed over positions, optionally followed by the
    /// end-of-sequence transition. Accumulates `one_hot − softmax` per
    /// visited row into `grad` when given.
    pub fn logprob_ids(
        &self,
        prev: usize,
        ids: &[usize],
        terminated: bool,
        mut grad: Option<&mut RowGrad>,
    ) -> f64 {
        let v = self.vocab.len();
        let mut buf = vec![0.0; v];
        let mut total = 0.0;
        let mut ctx = prev;
        let end = terminated.then_some(EOS);
        for &tok in ids.iter().chain(end.iter()) {
            log_softmax_into(self.row(ctx), &mut buf);
            total += buf[tok];
            if let Some(g) = grad.as_deref_mut() {
                let row = g.row_mut(ctx, v);
                for (c, lp) in buf.iter().enumerate() {
                    row[c] -= lp.exp();
                }
                row[tok] += 1.0;
            }
            ctx = tok;
        }
        total
    }

    pub fn sequence_logprob(&self, x: &Text, y: &Text) -> (f64, RowGrad) {
        let mut grad = RowGrad::default();
        let lp = self.logprob_ids(
            self.context_row(x),
            &self.vocab.encode(y),
            false,
            Some(&mut grad),
        );
        (lp, grad)
    }

    pub fn logprob(&self, x: &Text, y: &Text) -> f64 {
        self.logprob_ids(self.context_row(x), &self.vocab.encode(y), false, None)
    }

    /// Euclidean distance between two logits tables of the same shape.
    pub fn parameter_distance(&self, other: &ToyLanguageModel) -> f64 {
        self.logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            vocab: self.vocab.words[2..].to_vec(),
            logits: self.logits.clone(),
        };
        let body = serde_json::to_string(&ckpt)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&body)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{} is not a version-{CHECKPOINT_VERSION} language-model checkpoint",
                path.display()
            )));
        }
        Self::from_logits(Vocabulary::from_words(ckpt.vocab)?, ckpt.logits)
    }
}

/// Read-only snapshot used as the reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLm(ToyLanguageModel);

impl Deref for FrozenLm {
    type Target = ToyLanguageModel;
    fn deref(&self) -> &ToyLanguageModel {
        &self.0
    }
}

impl FrozenLm {
    /// A trainable copy (for initializing a policy at the reference).
    pub fn thaw(&self) -> ToyLanguageModel {
        self.0.clone()
    }
}

pub fn freeze_reference(model: &ToyLanguageModel) -> FrozenLm {
    FrozenLm(model.clone())
}

/// Token distribution after temperature scaling and nucleus filtering.
pub fn next_token_distribution(row: &[f64], temperature: f64, top_p: f64) -> Vec<f64> {
    let t = temperature.max(f64::MIN_POSITIVE);
    let scaled: Vec<f64> = row.iter().map(|l| l / t).collect();
    let mut probs = vec![0.0; row.len()];
    softmax_into(&scaled, &mut probs);
    if top_p < 1.0 {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut keep = order.len();
        for (k, &i) in order.iter().enumerate() {
            cum += probs[i];
            if cum >= top_p {
                keep = k + 1;
                break;
            }
        }
        let mut kept = vec![0.0; probs.len()];
        let mass: f64 = order[..keep].iter().map(|&i| probs[i]).sum();
        for &i in &order[..keep] {
            kept[i] = probs[i] / mass;
        }
        probs = kept;
    }
    probs
}

fn draw<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_nonzero = i;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// Autoregressive sampling with temperature then top-p filtering; stops at
/// end-of-sequence or after `max_len` tokens.
pub fn sample_sequence<R: Rng>(
    model: &ToyLanguageModel,
    x: &Text,
    max_len: usize,
    temperature: f64,
    top_p: f64,
    rng: &mut R,
) -> Sample {
    let mut ids = Vec::new();
    let mut ctx = model.context_row(x);
    let mut terminated = false;
    while ids.len() < max_len {
        let probs = next_token_distribution(model.row(ctx), temperature, top_p);
        let tok = draw(rng, &probs);
        if tok == EOS {
            terminated = true;
            break;
        }
        ids.push(tok);
        ctx = tok;
    }
    let words: Vec<&str> = ids.iter().map(|&i| model.vocab.word(i)).collect();
    Sample {
        text: Text::from_words(&words),
        ids,
        terminated,
    }
}

pub fn sample_output<R: Rng>(
    model: &ToyLanguageModel,
    x: &Text,
    max_len: usize,
    temperature: f64,
    top_p: f64,
    rng: &mut R,
) -> Text {
    sample_sequence(model, x, max_len, temperature, top_p, rng).text
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_words((0..n - 2).map(|i| format!("w{i}"))).unwrap()
    }

    fn random_model(n: usize, seed: u64) -> ToyLanguageModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab(n);
        let logits = (0..(n + 1) * n)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        ToyLanguageModel::from_logits(v, logits).unwrap()
    }

    #[test]
    fn uniform_logprob() {
        let m = ToyLanguageModel::uniform(vocab(16));
        let (lp, _) = m.sequence_logprob(&Text::new("w1"), &Text::new("w2 w3 w4"));
        assert!((lp + 8.317_766_166_719_343).abs() < 1e-12);
        let (lp, g) = m.sequence_logprob(&Text::new("w1"), &Text::new(""));
        assert_eq!(lp, 0.0);
        assert!(g.rows().is_empty());
    }

    #[test]
    fn rows_are_normalized() {
        let m = random_model(20, 3);
        let mut p = vec![0.0; 20];
        for r in 0..=20 {
            softmax_into(m.row(r), &mut p);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = vocab(8);
        assert_eq!(v.encode(&Text::new("w0 zzz")), vec![2, UNK]);
        assert_eq!(v.word(EOS), "</s>");
    }

    #[test]
    fn vocabulary_capacity() {
        assert!(Vocabulary::from_words((0..300).map(|i| format!("t{i}"))).is_err());
        let texts: Vec<Text> = (0..400)
            .map(|i| Text::new(format!("t{i} common")))
            .collect();
        let v = Vocabulary::from_corpus(&texts);
        assert_eq!(v.len(), MAX_VOCAB);
        assert_eq!(v.word(2), "common");
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let m = random_model(12, 9);
        let x = Text::new("w3 w5");
        let y = Text::new("w1 w7 w1 w9 w0");
        let (_, g) = m.sequence_logprob(&x, &y);
        let h = 1e-5;
        let v = m.vocab_size();
        for idx in 0..m.logits().len() {
            let mut plus = m.clone();
            plus.logits_mut()[idx] += h;
            let mut minus = m.clone();
            minus.logits_mut()[idx] -= h;
            let num = (plus.logprob(&x, &y) - minus.logprob(&x, &y)) / (2.0 * h);
            let ana = g.get(idx / v, idx % v);
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-3);
            assert!(rel < 1e-6, "idx {idx}: {ana} vs {num}");
        }
    }

    #[test]
    fn logprob_additive_over_concatenation() {
        let m = random_model(10, 4);
        let x = Text::new("w2");
        let y1 = Text::new("w3 w4");
        let y2 = Text::new("w5 w1 w6");
        let whole = m.logprob(&x, &y1.concat(&y2));
        let parts = m.logprob(&x, &y1) + m.logprob(&x.concat(&y1), &y2);
        assert_eq!(whole, parts);
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let m = random_model(10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Text::new("w0");
        let s = sample_sequence(&m, &x, 12, 1e-6, 0.95, &mut rng);
        let mut ctx = m.context_row(&x);
        for &tok in s.ids.iter().chain(s.terminated.then_some(&EOS)) {
            let row = m.row(ctx);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(tok, best);
            ctx = tok;
        }
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        let m = random_model(8, 6);
        let row = m.bos_row();
        let mut expected = vec![0.0; 8];
        softmax_into(m.row(row), &mut expected);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            let s = sample_sequence(&m, &Text::new(""), 1, 1.0, 1.0, &mut rng);
            counts[s.ids.first().copied().unwrap_or(EOS)] += 1;
        }
        for (c, e) in counts.iter().zip(&expected) {
            assert!((*c as f64 / draws as f64 - e).abs() < 0.01);
        }
    }

    #[test]
    fn output_respects_max_len() {
        let m = ToyLanguageModel::uniform(vocab(6));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert!(sample_output(&m, &Text::new(""), 4, 1.0, 1.0, &mut rng).len() <= 4);
        }
    }

    #[test]
    fn nucleus_keeps_smallest_covering_set() {
        let row = [2.0f64.ln(), 1.0f64.ln(), 1.0f64.ln()]; // probs .5 .25 .25
        let p = next_token_distribution(&row, 1.0, 0.5);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = next_token_distribution(&row, 1.0, 0.6);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_reference_is_independent() {
        let mut m = random_model(6, 8);
        let frozen = freeze_reference(&m);
        let snapshot = m.logits().to_vec();
        m.logits_mut()[3] += 1.0;
        assert_eq!(frozen.logits(), &snapshot[..]);
        assert_eq!(freeze_reference(&frozen), frozen);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(9, 10);
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        let back = ToyLanguageModel::load(f.path()).unwrap();
        assert_eq!(back, m);
    }
}
