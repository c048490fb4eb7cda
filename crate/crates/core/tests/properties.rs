use proptest::prelude::*;

use pcrm::data::{builtin_vocabulary, ingest_jsonl, write_jsonl, PreferenceRecord, Source};
use pcrm::features::FeatureMap;
use pcrm::lm::{ToyLanguageModel, Vocabulary};
use pcrm::losses::{pairwise_rank_loss, pcrm_loss, plackett_luce_loss, PairScores};
use pcrm::numeric::{log_sum_exp, sigmoid, softplus};
use pcrm::reward::RewardModel;
use pcrm::similarity::{
    max_margin, similarity, ConstraintParams, EmbeddingProvider, SimKind, DEFAULT_EMBED_DIM,
    DEFAULT_MAX_CONTEXT, MIN_MARGIN,
};
use pcrm::text::Text;

fn text(max_words: usize) -> impl Strategy<Value = Text> {
    let vocab = builtin_vocabulary();
    prop::collection::vec(prop::sample::select(vocab), 1..=max_words)
        .prop_map(|words| Text::from_words(&words))
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, 2..=max_len)
}

proptest! {
    #[test]
    fn sigmoid_halves_sum_to_one(x in -60.0..60.0f64) {
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn softplus_difference_is_identity(x in -60.0..60.0f64) {
        prop_assert!((softplus(x) - softplus(-x) - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn log_sum_exp_shifts_with_its_input(v in scores(10), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = v.iter().map(|s| s + c).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&v) - c).abs() <= 1e-9);
    }

    #[test]
    fn plackett_luce_ignores_common_offsets(v in scores(8), c in -50.0..50.0f64) {
        let shifted: Vec<f64> = v.iter().map(|s| s + c).collect();
        let (a, ga) = plackett_luce_loss(&v).unwrap();
        let (b, gb) = plackett_luce_loss(&shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        for (x, y) in ga.iter().zip(&gb) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!(ga.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn pair_gradients_are_antisymmetric(w in -30.0..30.0f64, l in -30.0..30.0f64, ds in 0.1..40.0f64) {
        for g in [
            pairwise_rank_loss(PairScores::new(w, l)).unwrap(),
            pcrm_loss(PairScores::new(w, l), ds).unwrap(),
        ] {
            prop_assert_eq!(g.d_winner, -g.d_loser);
            prop_assert!(g.value >= 0.0);
        }
    }

    #[test]
    fn pcrm_pulls_toward_half_delta_star(delta in -30.0..30.0f64, ds in 0.1..40.0f64) {
        let g = pcrm_loss(PairScores::new(delta, 0.0), ds).unwrap();
        let toward = ds / 2.0 - delta;
        // descent direction −d_winner points at Δ*/2
        prop_assert!(-g.d_winner * toward >= 0.0);
    }

    #[test]
    fn similarities_symmetric_and_bounded(x in text(8), a in text(12), b in text(12)) {
        let provider = EmbeddingProvider::hashed_ngram(DEFAULT_EMBED_DIM, DEFAULT_MAX_CONTEXT).unwrap();
        for kind in [SimKind::LengthRatio, SimKind::RougeL, SimKind::Cosine] {
            let ab = similarity(kind, &x, &a, &b, Some(&provider)).unwrap();
            let ba = similarity(kind, &x, &b, &a, Some(&provider)).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab), "{:?} {}", kind, ab);
            let aa = similarity(kind, &x, &a, &a, Some(&provider)).unwrap();
            prop_assert!((aa - 1.0).abs() <= 1e-12, "{:?} self-similarity {}", kind, aa);
        }
    }

    #[test]
    fn max_margin_shrinks_as_pairs_get_closer(
        beta1 in 0.5..50.0f64,
        beta2 in 0.0005..1.0f64,
        s1 in 0.0..=1.0f64,
        s2 in 0.0..=1.0f64,
    ) {
        // keep Δ*(1) positive so the parameters validate
        let beta3 = -beta1 / (1.0 + beta2) + 0.5;
        let params = ConstraintParams::new(beta1, beta2, beta3, SimKind::Cosine).unwrap();
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(max_margin(lo, &params) >= max_margin(hi, &params));
        prop_assert!(max_margin(hi, &params) >= MIN_MARGIN);
    }

    #[test]
    fn jsonl_round_trip(records in prop::collection::vec(
        (text(6), prop::collection::vec(text(10), 2..5)), 1..6)
    ) {
        let records: Vec<PreferenceRecord> = records
            .into_iter()
            .map(|(x, ys)| PreferenceRecord::new(x, ys, Source::Ingested).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_jsonl(&path, &records).unwrap();
        prop_assert_eq!(ingest_jsonl(&path).unwrap(), records);
    }

    #[test]
    fn reward_checkpoint_round_trip(w in prop::collection::vec(-1e3..1e3f64, 64)) {
        let model = RewardModel::from_weights(FeatureMap::new(64).unwrap(), w).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rm.json");
        model.save(&path).unwrap();
        prop_assert_eq!(RewardModel::load(&path).unwrap(), model);
    }

    #[test]
    fn uniform_model_scores_by_length(x in text(6), y in text(6)) {
        let model = ToyLanguageModel::uniform(Vocabulary::from_corpus([&x, &y]));
        let lp = model.logprob(&x, &y);
        let per_token = -(model.vocab_size() as f64).ln();
        prop_assert!((lp - per_token * y.len() as f64).abs() <= 1e-9 * lp.abs());
    }
}
