mod common;

use std::collections::HashMap;

use synplug::knowledge::{KnowledgeBundle, KnowledgeKind};
use synplug::plugin::{
    grad_check_plugin, train_plugin, Combine, PluginError, PluginExample, PluginModel, PluginSpec, QueryTable,
    TrainOptions,
};
use synplug::synthetic::PlantedRule;
use synplug::{AbsaInstance, AspectSpan, Polarity};

use common::plugin_data;

fn opts(epochs: usize, lr: f64, seed: u64) -> TrainOptions {
    TrainOptions {
        lr,
        epochs,
        patience: epochs,
        batch_size: 16,
        seed,
    }
}

fn example(id: &str, entries: &[(&str, &str)]) -> PluginExample {
    PluginExample {
        instance: AbsaInstance {
            id: id.into(),
            tokens: vec!["the".into(), "food".into(), "was".into(), "poor".into()],
            aspect: AspectSpan { start: 1, end: 2 },
            gold: Some(Polarity::Negative),
        },
        bundle: KnowledgeBundle::new(
            id,
            KnowledgeKind::Dep,
            entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            entries.len().max(5),
        ),
    }
}

#[test]
fn empty_bundle_reads_zero_and_still_classifies() {
    let train = vec![example("a", &[("poor", "poor-nsubj")]), example("b", &[])];
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &train, 1).unwrap();
    let p = model.predict(&train[1], None).unwrap();
    assert!(p.attention.empty);
    assert!(p.attention.weights.is_empty());
    assert!(p.attention.output.iter().all(|&x| x == 0.0));
    assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn single_entry_reads_its_value_row() {
    let train = vec![example("a", &[("poor", "poor-nsubj")])];
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &train, 2).unwrap();
    let p = model.predict(&train[0], None).unwrap();
    assert_eq!(p.attention.weights, vec![1.0]);
    let id = model.values.id("poor-nsubj");
    let row = model.param("value_emb").unwrap().row(id).to_vec();
    assert_eq!(p.attention.output, row);
}

#[test]
fn memory_truncates_long_bundles() {
    let entries: Vec<(String, String)> = (0..7).map(|i| (format!("k{i}"), format!("v{i}"))).collect();
    let refs: Vec<(&str, &str)> = entries.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let train = vec![example("a", &refs)];
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 8, 3), &train, 3).unwrap();
    let p = model.predict(&train[0], None).unwrap();
    assert_eq!(p.attention.weights.len(), 3);
}

#[test]
fn batched_prediction_matches_one_at_a_time() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 80, 40, 5, 5);
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 16, 5), &train, 9).unwrap();
    let batch = model.predict_batch(&dev, None).unwrap();
    for (ex, b) in dev.iter().zip(&batch) {
        let single = model.predict(ex, None).unwrap();
        for c in 0..3 {
            assert!((single.probs[c] - b.probs[c]).abs() < 1e-12);
        }
        assert_eq!(single.attention.weights.len(), b.attention.weights.len());
    }
}

#[test]
fn gradients_match_finite_differences() {
    for combine in [Combine::Concat, Combine::Sum] {
        let (train, _) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 6, 1, 3, 5);
        let spec = PluginSpec {
            combine,
            ..PluginSpec::new(KnowledgeKind::Dep, 8, 5)
        };
        let model = PluginModel::new(spec, &train, 4).unwrap();
        let r = grad_check_plugin(&model, &train, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-3, "{combine}: {r:?}");
        assert!(r.checked > 100);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 40, 10, 1, 5);
    let spec = PluginSpec::new(KnowledgeKind::Dep, 8, 5);
    let init = PluginModel::new(spec, &train, 7).unwrap();
    let (trained, report) = train_plugin(spec, &train, &dev, &opts(3, 0.0, 7), None).unwrap();
    assert_eq!(trained.params, init.params);
    assert_eq!(report.history.len(), 3);
}

#[test]
fn same_seed_same_bytes() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 60, 20, 2, 5);
    let spec = PluginSpec::new(KnowledgeKind::Dep, 8, 5);
    let run = |seed| {
        let (m, _) = train_plugin(spec, &train, &dev, &opts(3, 1e-2, seed), None).unwrap();
        m.to_checkpoint().to_bytes()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Ccg, 60, 20, 2, 5);
    let spec = PluginSpec::new(KnowledgeKind::Ccg, 8, 5);
    let (m, _) = train_plugin(spec, &train, &dev, &opts(2, 1e-2, 1), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    m.save(&path).unwrap();
    let back = PluginModel::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict_batch(&dev, None).unwrap(), m.predict_batch(&dev, None).unwrap());
}

#[test]
fn wrong_kind_rejected() {
    let (train, _) = plugin_data(PlantedRule::Presence, KnowledgeKind::Const, 10, 1, 2, 5);
    let err = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &train, 1).unwrap_err();
    assert!(matches!(err, PluginError::KindMismatch { .. }));
}

#[test]
fn unlabeled_training_rejected() {
    let mut ex = example("a", &[("poor", "poor-nsubj")]);
    ex.instance.gold = None;
    let err = train_plugin(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &[ex], &[], &opts(1, 1e-3, 1), None)
        .unwrap_err();
    assert!(matches!(err, PluginError::MissingGold(_)));
}

#[test]
fn precomputed_queries_replace_the_encoder() {
    let train = vec![example("a", &[("poor", "poor-nsubj"), ("was", "was-cop")])];
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 4, 5), &train, 1).unwrap();
    let h = model.encode_query(&train[0].instance).unwrap();
    let table = QueryTable::new(HashMap::from([("a".to_string(), h.clone())]));
    let direct = model.predict(&train[0], None).unwrap();
    let via_table = model.predict(&train[0], Some(&table)).unwrap();
    assert_eq!(direct.probs, via_table.probs);

    let short = QueryTable::new(HashMap::from([("a".to_string(), vec![0.0; 3])]));
    assert!(matches!(
        model.predict(&train[0], Some(&short)),
        Err(PluginError::QueryWidth { .. })
    ));
    assert!(matches!(
        model.predict(&train[0], Some(&QueryTable::new(HashMap::new()))),
        Err(PluginError::MissingQuery(_))
    ));
}

#[test]
fn presence_rule_is_learned_quickly() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 400, 100, 8, 5);
    let (_, report) = train_plugin(
        PluginSpec::new(KnowledgeKind::Dep, 32, 5),
        &train,
        &dev,
        &opts(15, 1e-3, 1),
        None,
    )
    .unwrap();
    assert!(report.best_dev_accuracy >= 0.9, "{report:?}");
}
