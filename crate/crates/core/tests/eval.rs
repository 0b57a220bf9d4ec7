mod common;

use std::io::BufReader;

use proptest::prelude::*;
use synplug::eval::{
    aggregate_runs, attention_reports, dump_attention, evaluate, read_attention_jsonl, read_sweep_csv,
    sweep_memory_size, write_attention_jsonl, write_sweep_csv, AttentionEntry, AttentionReport, RunResult, SweepRow,
    SweepSetup,
};
use synplug::gateway::{read_predictions, write_predictions, PredictionRecord};
use synplug::knowledge::{ExtractConfig, KnowledgeBundle, KnowledgeKind};
use synplug::plugin::{memory_attend, train_plugin, PluginExample, PluginModel, PluginSpec, TrainOptions};
use synplug::synthetic::{planted_corpus, PlantedRule};
use synplug::{AbsaInstance, AspectSpan, Polarity};

use common::plugin_data;

fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::Positive), Just(Polarity::Neutral), Just(Polarity::Negative)]
}

fn kind() -> impl Strategy<Value = KnowledgeKind> {
    prop_oneof![Just(KnowledgeKind::Dep), Just(KnowledgeKind::Const), Just(KnowledgeKind::Ccg)]
}

proptest! {
    #[test]
    fn evaluate_ignores_joint_order(
        pairs in prop::collection::vec((prop::option::weighted(0.9, polarity()), polarity()), 1..60),
        seed in any::<u64>(),
    ) {
        let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        let mut rng = synplug::autodiff::seeded_rng(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let (sp, sg): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(evaluate(&p, &g).unwrap(), evaluate(&sp, &sg).unwrap());
    }

    #[test]
    fn metrics_are_consistent(
        pairs in prop::collection::vec((prop::option::weighted(0.9, polarity()), polarity()), 1..60),
    ) {
        let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = evaluate(&p, &g).unwrap();
        prop_assert_eq!(m.correct, p.iter().zip(&g).filter(|(a, b)| **a == Some(**b)).count());
        prop_assert_eq!(m.accuracy, m.correct as f64 / m.total as f64);
        prop_assert_eq!(m.unparseable, p.iter().filter(|x| x.is_none()).count());
        prop_assert!((0.0..=1.0).contains(&m.macro_f1));
        if m.unparseable == 0 {
            prop_assert!((m.micro_f1 - m.accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_csv_round_trips(
        rows in prop::collection::vec((kind(), 1usize..20, any::<u64>(), 0.0f64..=1.0, 0.0f64..=1.0), 0..20),
    ) {
        let rows: Vec<SweepRow> = rows
            .into_iter()
            .map(|(kind, m, seed, acc, macro_f1)| SweepRow { kind, m, seed, acc, macro_f1 })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn predictions_round_trip(
        recs in prop::collection::vec(
            ("[a-z0-9-]{1,8}", prop::option::of(polarity()), prop::option::of(polarity()), "\\PC{0,30}",
             prop::option::of("[a-z ]{0,20}"), prop::collection::btree_map(kind(), polarity(), 0..3)),
            0..10,
        ),
    ) {
        let recs: Vec<PredictionRecord> = recs
            .into_iter()
            .map(|(id, prediction, gold, reply, parse_failure, plugins)| PredictionRecord {
                id, prediction, gold, reply, parse_failure, plugins,
            })
            .collect();
        let mut buf = Vec::new();
        write_predictions(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_predictions(BufReader::new(buf.as_slice())).unwrap(), recs);
    }

    #[test]
    fn attention_jsonl_round_trips(
        weights in prop::collection::vec(0.0f64..=1.0, 0..6),
        sentence in "\\PC{0,30}",
    ) {
        let report = AttentionReport {
            id: "r".into(),
            sentence,
            aspect: "bar".into(),
            prediction: Polarity::Neutral,
            gold: None,
            entries: weights
                .iter()
                .enumerate()
                .map(|(i, &weight)| AttentionEntry { key: format!("k{i}"), value: format!("v{i}-<b>"), weight })
                .collect(),
        };
        let mut buf = Vec::new();
        write_attention_jsonl(&mut buf, std::slice::from_ref(&report)).unwrap();
        prop_assert_eq!(read_attention_jsonl(BufReader::new(buf.as_slice())).unwrap(), vec![report]);
    }
}

#[test]
fn aggregate_matches_hand_recomputation() {
    // seed | acc    | macro-F1
    //   1  | 0.8125 | 0.75
    //   2  | 0.6875 | 0.5
    //   3  | 0.875  | 0.625
    // column sums 2.375 and 1.875, divided by 3.
    let runs = [(1, 0.8125, 0.75), (2, 0.6875, 0.5), (3, 0.875, 0.625)].map(|(seed, accuracy, macro_f1)| RunResult {
        seed,
        accuracy,
        macro_f1,
    });
    let a = aggregate_runs(&runs).unwrap();
    assert!((a.mean_accuracy - 2.375 / 3.0).abs() < 1e-15);
    assert!((a.mean_macro_f1 - 0.625).abs() < 1e-15);
    assert_eq!(a.runs, runs.to_vec());
}

fn single_entry_example() -> PluginExample {
    PluginExample {
        instance: AbsaInstance {
            id: "one".into(),
            tokens: vec!["bar".into(), "is".into(), "poor".into()],
            aspect: AspectSpan { start: 0, end: 1 },
            gold: Some(Polarity::Negative),
        },
        bundle: KnowledgeBundle::new(
            "one",
            KnowledgeKind::Dep,
            vec![("poor".into(), "poor-nsubj".into())],
            5,
        ),
    }
}

#[test]
fn single_entry_gets_all_the_weight_and_untrained_is_flagged() {
    let ex = vec![single_entry_example()];
    let model = PluginModel::new(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &ex, 1).unwrap();
    let (reports, warnings) = attention_reports(&model, &ex).unwrap();
    assert_eq!(reports[0].entries.len(), 1);
    assert_eq!(reports[0].entries[0].weight, 1.0);
    assert_eq!(warnings.len(), 1);
}

#[test]
fn report_weights_are_memory_attend_outputs() {
    let (train, dev) = plugin_data(PlantedRule::Presence, KnowledgeKind::Dep, 60, 20, 4, 5);
    let opts = TrainOptions {
        epochs: 2,
        ..TrainOptions::default()
    };
    let (model, _) = train_plugin(PluginSpec::new(KnowledgeKind::Dep, 8, 5), &train, &dev, &opts, None).unwrap();
    let (reports, warnings) = attention_reports(&model, &dev).unwrap();
    assert!(warnings.is_empty());
    for (ex, r) in dev.iter().zip(&reports) {
        let h = model.encode_query(&ex.instance).unwrap();
        let (k, v) = model.memory_rows(&ex.bundle);
        let mut direct = memory_attend(&h, &k, &v).weights;
        direct.sort_by(|a, b| b.total_cmp(a));
        let from_report: Vec<f64> = r.entries.iter().map(|e| e.weight).collect();
        assert_eq!(from_report, direct);
        if !direct.is_empty() {
            assert!((direct.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    dump_attention(&model, &dev, dir.path()).unwrap();
    let back = read_attention_jsonl(BufReader::new(std::fs::File::open(dir.path().join("attention.jsonl")).unwrap()))
        .unwrap();
    assert_eq!(back, reports);
    let html = std::fs::read_to_string(dir.path().join("attention.html")).unwrap();
    assert!(html.contains(&reports[0].id));
}

#[test]
fn training_focuses_attention_on_the_deciding_pair() {
    // The relation of "poor" to the aspect alone decides the label.
    let (train, dev) = plugin_data(PlantedRule::Relation, KnowledgeKind::Dep, 600, 100, 6, 5);
    let opts = TrainOptions {
        lr: 1e-2,
        epochs: 30,
        patience: 30,
        batch_size: 16,
        seed: 6,
    };
    let (model, report) = train_plugin(PluginSpec::new(KnowledgeKind::Dep, 16, 5), &train, &dev, &opts, None).unwrap();
    assert!(report.best_dev_accuracy >= 0.95, "{report:?}");
    let (reports, _) = attention_reports(&model, &dev).unwrap();
    let top_is_cue = reports
        .iter()
        .filter(|r| r.entries.first().is_some_and(|e| e.value.starts_with("poor-")))
        .count();
    assert_eq!(top_is_cue, reports.len(), "{top_is_cue} of {}", reports.len());
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let c = planted_corpus(PlantedRule::Presence, 80, 20, 2);
    let setup = SweepSetup {
        kind: KnowledgeKind::Dep,
        train: &c.train,
        dev: &c.dev,
        spec: PluginSpec::new(KnowledgeKind::Dep, 8, 5),
        extract: ExtractConfig::default(),
        opts: TrainOptions {
            epochs: 2,
            ..TrainOptions::default()
        },
    };
    let one = sweep_memory_size(&setup, &[1], &[7]).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!((one[0].m, one[0].seed), (1, 7));

    let default_ms: Vec<usize> = (1..=5).collect();
    let rows = sweep_memory_size(&setup, &default_ms, &[1, 2]).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().any(|r| r.m == 5));
    let keys: Vec<(usize, u64)> = rows.iter().map(|r| (r.m, r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    assert!(sweep_memory_size(&setup, &[], &[1]).is_err());
    assert!(sweep_memory_size(&setup, &[0], &[1]).is_err());
}
