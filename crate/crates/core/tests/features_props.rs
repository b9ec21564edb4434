mod common;

use cqa_rank::corpus::{preprocess, Dataset, TokenizerConfig};
use cqa_rank::embeddings::{train_skipgram, EmbeddingConfig};
use cqa_rank::features::{
    all_groups, default_tagset, fit_scaler, qc_similarity, ExtractOptions, Extractor, FeatureGroup, FeatureModels,
    FeatureSchema, GroupSet,
};
use cqa_rank::synth::{generate, Signal, SynthConfig};
use proptest::prelude::*;

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-1e3f64..1e3, d), 1..20))
}

proptest! {
    #[test]
    fn scaled_training_rows_span_the_unit_interval(rows in rows_strategy()) {
        let s = fit_scaler(&rows);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        for j in 0..s.len() {
            let col: Vec<f64> = scaled.iter().map(|r| r[j]).collect();
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            if s.max[j] > s.min[j] {
                prop_assert!(col.contains(&0.0) && col.contains(&1.0));
            } else {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn unseen_rows_are_clamped(rows in rows_strategy(), shift in -1e4f64..1e4) {
        let s = fit_scaler(&rows);
        let probe: Vec<f64> = rows[0].iter().map(|v| v + shift).collect();
        prop_assert!(s.apply(&probe).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn group_subsets_partition_columns(mask in 1u16..(1 << 9), dim in 1usize..8) {
        let tags = default_tagset();
        let cats = vec!["one".to_string(), "two".to_string()];
        let set: GroupSet = FeatureGroup::ALL.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, g)| *g).collect();
        let full = FeatureSchema::new(&all_groups(), dim, &tags, &cats).unwrap();
        let part = FeatureSchema::new(&set, dim, &tags, &cats).unwrap();
        let per_group: usize = set.iter().map(|g| FeatureSchema::new(&GroupSet::from([*g]), dim, &tags, &cats).unwrap().len()).sum();
        prop_assert_eq!(part.len(), per_group);
        prop_assert_eq!(full.indices_for(&set).len(), part.len());
    }
}

fn synth_setup(signal: Signal) -> (Dataset, cqa_rank::embeddings::EmbeddingModel) {
    let data = generate(&SynthConfig {
        threads: 40,
        seed: 11,
        signal,
        ..Default::default()
    })
    .unwrap()
    .preprocessed();
    let tok = TokenizerConfig::default();
    let corpus: Vec<Vec<String>> = data.unannotated.iter().map(|l| preprocess(l, &tok)).collect();
    let emb = train_skipgram(
        &corpus,
        &EmbeddingConfig {
            dim: 30,
            min_count: 2,
            epochs: 5,
            threads: 1,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    (data.dataset, emb)
}

/// Best single-threshold accuracy of a score against binary labels.
fn best_threshold_accuracy(scored: &[(f64, bool)]) -> f64 {
    scored
        .iter()
        .map(|&(t, _)| scored.iter().filter(|&&(s, g)| (s >= t) == g).count() as f64 / scored.len() as f64)
        .fold(0.0, f64::max)
}

#[test]
fn planted_signal_is_recovered_by_question_comment_similarity() {
    let (ds, emb) = synth_setup(Signal::Topical);
    let Dataset::SubtaskA(threads) = &ds else { panic!("expected subtask A data") };
    let scored: Vec<(f64, bool)> = threads
        .iter()
        .flat_map(|t| t.comments.iter().map(|c| (qc_similarity(&t.question, c, &emb)[0], c.gold_label.unwrap().is_good())))
        .collect();
    let acc = best_threshold_accuracy(&scored);
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn removing_groups_keeps_every_row() {
    let (ds, emb) = synth_setup(Signal::Centroid);
    let tags = default_tagset();
    let cats = ds.categories();
    let models = FeatureModels {
        embeddings: Some(&emb),
        clusters: None,
        lda: None,
    };
    let mut counts = Vec::new();
    for groups in [
        GroupSet::from([FeatureGroup::QuestionToComment, FeatureGroup::Metadata]),
        GroupSet::from([FeatureGroup::Metadata]),
        GroupSet::from([FeatureGroup::RawVectors, FeatureGroup::PosSim]),
    ] {
        let schema = FeatureSchema::new(&groups, emb.dim(), &tags, &cats).unwrap();
        let width = schema.len();
        let ex = Extractor::new(schema, models, ExtractOptions::default()).unwrap();
        let rows = ex.extract_dataset(&ds);
        assert!(rows.iter().all(|r| r.values.len() == width));
        counts.push(rows.len());
    }
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}
