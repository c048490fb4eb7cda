//! Deterministic hashed feature map shared by the reward model and the
//! synthetic ground-truth reward.

use serde::{Deserialize, Serialize};

use crate::text::{Text, Token};

pub const DEFAULT_FEATURE_DIM: usize = 1024;
const DEFAULT_HASH_SEED: u64 = 0x5eed_f00d_0b5e_55ed;

const TAG_UNIGRAM: u64 = 1;
const TAG_BIGRAM: u64 = 2;
const TAG_CROSS: u64 = 3;

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn hash_parts(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |h, p| mix64(h ^ p))
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    /// Builds from unsorted (index, value) contributions, summing duplicates
    /// and dropping exact zeros.
    pub fn from_contributions(mut raw: Vec<(u32, f64)>) -> Self {
        raw.sort_by_key(|(i, _)| *i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (i, v) in raw {
            match entries.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|(_, v)| *v != 0.0);
        SparseVec { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|(i, v)| v * dense[*i as usize])
            .sum()
    }

    /// `dense += scale * self`
    pub fn axpy_into(&self, scale: f64, dense: &mut [f64]) {
        for (i, v) in &self.entries {
            dense[*i as usize] += scale * v;
        }
    }

    pub fn to_dense(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![0.0; dimension];
        self.axpy_into(1.0, &mut out);
        out
    }

    /// `self - other`
    pub fn sub(&self, other: &SparseVec) -> SparseVec {
        let raw = self
            .entries
            .iter()
            .copied()
            .chain(other.entries.iter().map(|(i, v)| (*i, -v)))
            .collect();
        SparseVec::from_contributions(raw)
    }
}

/// Signed hashed counts of output 1-grams and 2-grams, prompt×output cross
/// 1-grams, and two length features in the last two slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    dimension: usize,
    hash_seed: u64,
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap {
            dimension: DEFAULT_FEATURE_DIM,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

impl FeatureMap {
    /// `dimension` must leave room for the two length slots plus at least one hash bucket.
    pub fn new(dimension: usize) -> crate::Result<Self> {
        if dimension < 3 {
            return Err(crate::Error::Config(format!(
                "feature dimension must be at least 3, got {dimension}"
            )));
        }
        Ok(FeatureMap {
            dimension,
            hash_seed: DEFAULT_HASH_SEED,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Index of the φ(y)/64 feature; φ(y)²/4096 sits right after it.
    pub fn length_slot(&self) -> usize {
        self.dimension - 2
    }

    fn bucket(&self, parts: &[u64]) -> (u32, f64) {
        let h = hash_parts(self.hash_seed, parts);
        let buckets = (self.dimension - 2) as u64;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % buckets) as u32, sign)
    }

    pub fn sparse_features(&self, x: &Text, y: &Text) -> SparseVec {
        let yt = y.tokens();
        let mut raw = Vec::with_capacity(yt.len() * (2 + x.len()) + 2);
        for Token(t) in yt {
            raw.push(self.bucket(&[TAG_UNIGRAM, *t]));
        }
        for w in yt.windows(2) {
            raw.push(self.bucket(&[TAG_BIGRAM, w[0].0, w[1].0]));
        }
        for Token(a) in x.tokens() {
            for Token(b) in yt {
                raw.push(self.bucket(&[TAG_CROSS, *a, *b]));
            }
        }
        let len = yt.len() as f64;
        let slot = self.length_slot() as u32;
        raw.push((slot, len / 64.0));
        raw.push((slot + 1, len * len / 4096.0));
        SparseVec::from_contributions(raw)
    }

    pub fn features(&self, x: &Text, y: &Text) -> Vec<f64> {
        self.sparse_features(x, y).to_dense(self.dimension)
    }
}
