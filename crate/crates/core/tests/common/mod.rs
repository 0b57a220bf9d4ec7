#![allow(dead_code)]

use synplug::hub::FusedExample;
use synplug::knowledge::{extract_split, ExtractConfig, KnowledgeKind};
use synplug::plugin::{pair_examples, PluginExample};
use synplug::synthetic::{planted_corpus, PlantedRule};
use synplug::ParsedInstance;

pub fn plain(split: &[ParsedInstance]) -> Vec<synplug::AbsaInstance> {
    split.iter().map(|p| p.instance.clone()).collect()
}

/// Planted corpus paired with bundles of `kind` (frequencies from train).
pub fn plugin_data(
    rule: PlantedRule,
    kind: KnowledgeKind,
    n_train: usize,
    n_dev: usize,
    seed: u64,
    memory: usize,
) -> (Vec<PluginExample>, Vec<PluginExample>) {
    let c = planted_corpus(rule, n_train, n_dev, seed);
    let cfg = ExtractConfig {
        memory,
        ..ExtractConfig::default()
    };
    let tb = extract_split(kind, &c.train, &c.train, &cfg).unwrap();
    let db = extract_split(kind, &c.train, &c.dev, &cfg).unwrap();
    (
        pair_examples(&plain(&c.train), &tb).unwrap(),
        pair_examples(&plain(&c.dev), &db).unwrap(),
    )
}

pub fn fused_data(
    rule: PlantedRule,
    kinds: &[KnowledgeKind],
    n_train: usize,
    n_dev: usize,
    seed: u64,
) -> (Vec<ParsedInstance>, Vec<FusedExample>, Vec<FusedExample>) {
    let c = planted_corpus(rule, n_train, n_dev, seed);
    let cfg = ExtractConfig::default();
    let build = |split: &[ParsedInstance]| {
        let per: Vec<_> = kinds
            .iter()
            .map(|&k| extract_split(k, &c.train, split, &cfg).unwrap())
            .collect();
        split
            .iter()
            .enumerate()
            .map(|(i, p)| FusedExample {
                instance: p.instance.clone(),
                bundles: per.iter().map(|b| b[i].clone()).collect(),
            })
            .collect::<Vec<_>>()
    };
    let train = build(&c.train);
    let dev = build(&c.dev);
    (c.train, train, dev)
}
