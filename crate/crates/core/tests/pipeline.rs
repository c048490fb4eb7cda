use pcrm::data::{generate_dataset, GeneratorConfig, GroundTruthReward, PreferenceRecord};
use pcrm::eval::{accuracy, evaluate, margin_scatter};
use pcrm::features::FeatureMap;
use pcrm::lm::{freeze_reference, ToyLanguageModel, Vocabulary};
use pcrm::reward::RewardModel;
use pcrm::similarity::{
    ConstraintParams, EmbeddingProvider, SimKind, DEFAULT_EMBED_DIM, DEFAULT_MAX_CONTEXT,
};
use pcrm::text::Text;
use pcrm::training::{
    align_policy, fit_sft, sft_corpus, train_reward_model, AlignConfig, TrainConfig,
};

fn small_benchmark(seed: u64) -> (FeatureMap, GroundTruthReward, Vec<PreferenceRecord>) {
    let map = FeatureMap::default();
    let truth = GroundTruthReward::random(&map, seed, 0.0, 1.0);
    let config = GeneratorConfig {
        num_prompts: 400,
        seed,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&config, &truth, &map).unwrap();
    (map, truth, data)
}

#[test]
fn generated_pairs_cover_close_and_distant_similarities() {
    let (_, _, data) = small_benchmark(3);
    let provider = EmbeddingProvider::hashed_ngram(DEFAULT_EMBED_DIM, DEFAULT_MAX_CONTEXT).unwrap();
    let model = RewardModel::zeros(FeatureMap::default());
    let sims: Vec<f64> = margin_scatter(&model, &data, SimKind::Cosine, Some(&provider))
        .unwrap()
        .iter()
        .map(|s| s.sim)
        .collect();
    let high = sims.iter().filter(|s| **s >= 0.9).count();
    let low = sims.iter().filter(|s| **s < 0.7).count();
    assert!(
        high > sims.len() / 100,
        "{high} of {} pairs at sim >= 0.9",
        sims.len()
    );
    assert!(
        low > sims.len() / 20,
        "{low} of {} pairs below 0.7",
        sims.len()
    );
}

#[test]
fn trained_models_beat_chance_and_constraint_caps_margins() {
    let (map, truth, mut data) = small_benchmark(5);
    let test = data.split_off(320);
    let provider = EmbeddingProvider::hashed_ngram(DEFAULT_EMBED_DIM, DEFAULT_MAX_CONTEXT).unwrap();
    let preset = ConstraintParams::preset("dialogue-cossim").unwrap();
    let mut mean_abs = Vec::new();
    for constraint in [None, Some(preset)] {
        let config = TrainConfig {
            epochs: 20,
            constraint,
            ..TrainConfig::default()
        };
        let (model, history) = train_reward_model(
            &data,
            None,
            &config,
            RewardModel::zeros(map),
            Some(&provider),
        )
        .unwrap();
        assert_eq!(history.len(), 20);
        assert!(accuracy(&model, &test).unwrap() > 0.85);
        let (report, samples) = evaluate(
            &model,
            &test,
            SimKind::Cosine,
            Some(&provider),
            Some(&truth),
        )
        .unwrap();
        assert!(report.spearman.unwrap() > 0.5);
        let high: Vec<f64> = samples
            .iter()
            .filter(|s| s.sim >= 0.9)
            .map(|s| s.delta.abs())
            .collect();
        mean_abs.push(high.iter().sum::<f64>() / high.len() as f64);
    }
    assert!(mean_abs[1] < mean_abs[0], "{mean_abs:?}");
}

#[test]
fn zero_reward_alignment_leaves_the_reference_untouched() {
    let (map, truth, data) = small_benchmark(9);
    let corpus = sft_corpus(&data);
    let vocab = Vocabulary::from_corpus(corpus.iter().flat_map(|(x, y)| [x, y]));
    let (sft, _) = fit_sft(&corpus, 1, 1e-2, ToyLanguageModel::uniform(vocab)).unwrap();
    let reference = freeze_reference(&sft);
    let prompts: Vec<Text> = data.iter().take(8).map(|r| r.prompt().clone()).collect();
    let config = AlignConfig {
        steps: 5,
        ..AlignConfig::default()
    };
    // At the reference every sample's log-ratio is 0, so R = 0 and the
    // baselined gradient vanishes; the policy never moves.
    let (policy, history) = align_policy(
        &prompts,
        &RewardModel::zeros(map),
        sft.clone(),
        &reference,
        &config,
        Some(&truth),
    )
    .unwrap();
    assert_eq!(policy.parameter_distance(&sft), 0.0);
    assert!(history.iter().all(|r| r.mean_kl == Some(0.0)));
}
