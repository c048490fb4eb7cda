//! Linear reward model over the hashed feature map.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GroundTruthReward;
use crate::features::{FeatureMap, SparseVec};
use crate::text::Text;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pcrm-reward-model";
const CHECKPOINT_VERSION: u32 = 1;

/// score(x, y) = w · features(x, y)
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    map: FeatureMap,
    weights: Vec<f64>,
}

impl RewardModel {
    pub fn zeros(map: FeatureMap) -> Self {
        RewardModel {
            weights: vec![0.0; map.dimension()],
            map,
        }
    }

    pub fn from_weights(map: FeatureMap, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != map.dimension() {
            return Err(Error::Config(format!(
                "reward weights have dimension {} but the feature map has {}",
                weights.len(),
                map.dimension()
            )));
        }
        Ok(RewardModel { map, weights })
    }

    /// A reward model scoring exactly like the hidden reward.
    pub fn from_truth(map: FeatureMap, truth: &GroundTruthReward) -> Result<Self> {
        Self::from_weights(map, truth.weights.clone())
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn score(&self, x: &Text, y: &Text) -> f64 {
        self.map.sparse_features(x, y).dot_dense(&self.weights)
    }

    pub fn score_features(&self, f: &SparseVec) -> f64 {
        f.dot_dense(&self.weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dimension: self.map.dimension(),
            weights: self.weights.clone(),
        };
        let body = serde_json::to_string(&ckpt)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&body)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{} is not a version-{CHECKPOINT_VERSION} reward checkpoint (found {} v{})",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        let map = FeatureMap::new(ckpt.dimension)?;
        Self::from_weights(map, ckpt.weights)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    dimension: usize,
    weights: Vec<f64>,
}

/// Checked scoring: the model's feature dimension must match `map`.
pub fn reward_score(model: &RewardModel, map: &FeatureMap, x: &Text, y: &Text) -> Result<f64> {
    if model.map != *map {
        return Err(Error::Config(format!(
            "reward model expects feature dimension {}, caller uses {}",
            model.map.dimension(),
            map.dimension()
        )));
    }
    Ok(model.score(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{dot, l2_norm};

    #[test]
    fn zero_weights_score_zero() {
        let m = RewardModel::zeros(FeatureMap::default());
        assert_eq!(m.score(&Text::new("p"), &Text::new("a b c")), 0.0);
    }

    #[test]
    fn self_aligned_weights_give_norm() {
        let map = FeatureMap::default();
        let x = Text::new("tell me");
        let y = Text::new("a b a c");
        let f = map.features(&x, &y);
        let n = l2_norm(&f);
        let w: Vec<f64> = f.iter().map(|v| v / n).collect();
        let m = RewardModel::from_weights(map, w).unwrap();
        assert!((m.score(&x, &y) - n).abs() < 1e-12);
    }

    #[test]
    fn margin_is_linear_in_feature_difference() {
        let map = FeatureMap::new(64).unwrap();
        let w: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let m = RewardModel::from_weights(map, w.clone()).unwrap();
        let x = Text::new("q");
        let (a, b) = (Text::new("a b c"), Text::new("a d"));
        let diff: Vec<f64> = map
            .features(&x, &a)
            .iter()
            .zip(map.features(&x, &b))
            .map(|(p, q)| p - q)
            .collect();
        assert!((m.score(&x, &a) - m.score(&x, &b) - dot(&w, &diff)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(RewardModel::from_weights(FeatureMap::default(), vec![0.0; 3]).is_err());
        let m = RewardModel::zeros(FeatureMap::new(16).unwrap());
        let r = reward_score(&m, &FeatureMap::default(), &Text::new("p"), &Text::new("a"));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let map = FeatureMap::default();
        let truth = GroundTruthReward::random(&map, 17, -0.5, 1.0);
        let w: Vec<f64> = truth.weights.iter().map(|v| v / 3.0 + 1e-17).collect();
        let m = RewardModel::from_weights(map, w).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        let back = RewardModel::load(f.path()).unwrap();
        assert_eq!(back, m);
        let (x, y) = (Text::new("write a note"), Text::new("the note is short"));
        assert_eq!(back.score(&x, &y).to_bits(), m.score(&x, &y).to_bits());
    }
}
