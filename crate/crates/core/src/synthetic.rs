//! Built-in fixtures: the "bar service" example sentence and planted-rule
//! corpora whose labels are a known function of the extracted knowledge.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::seeded_rng;
use crate::corpus::{
    bind, parse_bracketed, write_absa_jsonl, AbsaInstance, AspectSpan, DepTree, ParsedInstance,
    Polarity, SupertagSeq,
};

/// "The environment is fantastic although bar service is poor ." with the
/// aspect "bar service", a UD-style dependency tree, a constituency tree and
/// CCG supertags.
pub fn bar_service_example() -> ParsedInstance {
    let tokens: Vec<String> = "The environment is fantastic although bar service is poor ."
        .split(' ')
        .map(str::to_string)
        .collect();
    let heads = vec![2, 4, 4, 0, 9, 7, 9, 9, 4, 4];
    let rels = [
        "det", "nsubj", "cop", "root", "mark", "compound", "nsubj", "cop", "advcl", "punct",
    ];
    let dep = DepTree::new(heads, rels.iter().map(|r| r.to_string()).collect()).expect("valid tree");
    let constituency = parse_bracketed(
        "(S (S (NP (DT The) (NN environment)) (VP (VBZ is) (ADJP (JJ fantastic)))) \
         (SBAR (IN although) (S (NP (NN bar) (NN service)) (VP (VBZ is) (ADJP (JJ poor))))) (. .))",
    )
    .expect("valid bracketing");
    let tags = [
        "NP[nb]/N", "N", "(S[dcl]\\NP)/(S[adj]\\NP)", "S[adj]\\NP", "((S\\NP)\\(S\\NP))/S[dcl]",
        "N/N", "N", "(S[dcl]\\NP)/(S[adj]\\NP)", "S[adj]\\NP", ".",
    ];
    let supertags = SupertagSeq::new(tags.iter().map(|t| t.to_string()).collect()).expect("tags");
    let instance = AbsaInstance {
        id: "bar-service".into(),
        tokens,
        aspect: AspectSpan { start: 5, end: 7 },
        gold: Some(Polarity::Negative),
    };
    bind(instance, Some(dep), Some(constituency), Some(supertags)).expect("aligned annotations")
}

/// How the label of a planted instance is determined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlantedRule {
    /// A first-order `(superb, amod)` pair means positive, `(poor, nsubj)`
    /// means negative, neither means neutral.
    Presence,
    /// Three cue words are always attached to the aspect, each with relation
    /// `amod` (+1) or `nmod` (-1); the majority sign decides positive vs
    /// negative. The words are identical across instances, so the label is
    /// only recoverable from the value symbols of all three pairs.
    Majority3,
    /// The cue word `poor` is always a first-order dependent of the aspect;
    /// relation `nsubj` means negative and `amod` means positive. Only the
    /// value symbol of that one entry carries the label.
    Relation,
}

impl std::str::FromStr for PlantedRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "presence" => Ok(PlantedRule::Presence),
            "majority3" => Ok(PlantedRule::Majority3),
            "relation" => Ok(PlantedRule::Relation),
            other => Err(format!("unknown rule {other:?} (expected presence, majority3 or relation)")),
        }
    }
}

pub const POSITIVE_CUE: (&str, &str) = ("superb", "amod");
pub const NEGATIVE_CUE: (&str, &str) = ("poor", "nsubj");
pub const MAJORITY_CUES: [&str; 3] = ["alpha", "beta", "gamma"];

const ASPECTS: [&str; 12] = [
    "food", "service", "pasta", "staff", "screen", "battery", "keyboard", "wine", "price",
    "menu", "bar", "knife",
];

fn filler_words() -> Vec<String> {
    let stems = [
        "red", "blue", "tall", "flat", "odd", "new", "old", "warm", "cold", "thin", "wide", "long",
        "dry", "wet", "soft", "loud", "calm", "dark", "pale", "raw",
    ];
    let suffixes = ["", "ish", "er"];
    suffixes
        .iter()
        .flat_map(|s| stems.iter().map(move |t| format!("{t}{s}")))
        .collect()
}

struct Builder {
    tokens: Vec<String>,
    heads: Vec<usize>,
    rels: Vec<String>,
}

impl Builder {
    fn new(root: &str) -> Self {
        Builder {
            tokens: vec![root.to_string()],
            heads: vec![usize::MAX],
            rels: vec!["root".to_string()],
        }
    }

    fn attach(&mut self, word: &str, head: usize, rel: &str) -> usize {
        self.tokens.push(word.to_string());
        self.heads.push(head);
        self.rels.push(rel.to_string());
        self.tokens.len() - 1
    }

    /// Shuffles token order and returns (tokens, 1-based heads, rels, new index of node 0).
    fn finish(self, rng: &mut impl Rng) -> (Vec<String>, Vec<usize>, Vec<String>, usize) {
        let n = self.tokens.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut pos = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        let mut tokens = vec![String::new(); n];
        let mut heads = vec![0; n];
        let mut rels = vec![String::new(); n];
        for old in 0..n {
            let new = pos[old];
            tokens[new] = self.tokens[old].clone();
            rels[new] = self.rels[old].clone();
            heads[new] = if self.heads[old] == usize::MAX { 0 } else { pos[self.heads[old]] + 1 };
        }
        (tokens, heads, rels, pos[0])
    }
}

fn planted_instance(rule: PlantedRule, id: String, fillers: &[String], rng: &mut impl Rng) -> ParsedInstance {
    let aspect_word = ASPECTS[rng.random_range(0..ASPECTS.len())];
    let mut b = Builder::new(aspect_word);
    let gold;
    match rule {
        PlantedRule::Presence => {
            gold = match rng.random_range(0..3) {
                0 => {
                    b.attach(POSITIVE_CUE.0, 0, POSITIVE_CUE.1);
                    Polarity::Positive
                }
                1 => {
                    b.attach(NEGATIVE_CUE.0, 0, NEGATIVE_CUE.1);
                    Polarity::Negative
                }
                _ => Polarity::Neutral,
            };
            for _ in 0..rng.random_range(2..5) {
                let w = &fillers[rng.random_range(0..fillers.len())];
                let rel = ["amod", "det", "compound"][rng.random_range(0..3)];
                let node = b.attach(w, 0, rel);
                if rng.random_bool(0.5) {
                    let w2 = &fillers[rng.random_range(0..fillers.len())];
                    b.attach(w2, node, "advmod");
                }
            }
        }
        PlantedRule::Majority3 => {
            let mut score = 0i32;
            for cue in MAJORITY_CUES {
                let positive = rng.random_bool(0.5);
                score += if positive { 1 } else { -1 };
                let node = b.attach(cue, 0, if positive { "amod" } else { "nmod" });
                for _ in 0..rng.random_range(0..2) {
                    let w = &fillers[rng.random_range(0..fillers.len())];
                    b.attach(w, node, "advmod");
                }
            }
            gold = if score > 0 { Polarity::Positive } else { Polarity::Negative };
        }
        PlantedRule::Relation => {
            let negative = rng.random_bool(0.5);
            let rel = if negative { NEGATIVE_CUE.1 } else { "amod" };
            b.attach(NEGATIVE_CUE.0, 0, rel);
            for _ in 0..rng.random_range(2..5) {
                let w = &fillers[rng.random_range(0..fillers.len())];
                let rel = ["amod", "det", "compound"][rng.random_range(0..3)];
                b.attach(w, 0, rel);
            }
            gold = if negative { Polarity::Negative } else { Polarity::Positive };
        }
    }
    let (tokens, heads, rels, aspect_pos) = b.finish(rng);
    let dep = DepTree::new(heads, rels).expect("generated tree is valid");
    let leaves: Vec<String> = tokens.iter().map(|t| format!("(X {t})")).collect();
    let constituency = parse_bracketed(&format!("(S (NP {}))", leaves.join(" "))).expect("flat tree");
    let cue_words: Vec<&str> = [POSITIVE_CUE.0, NEGATIVE_CUE.0]
        .into_iter()
        .chain(MAJORITY_CUES)
        .collect();
    let tags = tokens
        .iter()
        .map(|t| if cue_words.contains(&t.as_str()) { "S[adj]\\NP".to_string() } else { "N".to_string() })
        .collect();
    let instance = AbsaInstance {
        id,
        tokens,
        aspect: AspectSpan { start: aspect_pos, end: aspect_pos + 1 },
        gold: Some(gold),
    };
    bind(instance, Some(dep), Some(constituency), Some(SupertagSeq::new(tags).expect("tags")))
        .expect("aligned")
}

#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub train: Vec<ParsedInstance>,
    pub dev: Vec<ParsedInstance>,
}

/// Generates `n_train + n_dev` planted instances from `seed`.
pub fn planted_corpus(rule: PlantedRule, n_train: usize, n_dev: usize, seed: u64) -> PlantedCorpus {
    let mut rng = seeded_rng(seed);
    let fillers = filler_words();
    let mut all: Vec<ParsedInstance> = (0..n_train + n_dev)
        .map(|i| planted_instance(rule, format!("p{i:05}"), &fillers, &mut rng))
        .collect();
    let dev = all.split_off(n_train);
    PlantedCorpus { train: all, dev }
}

/// Writes `<split>.jsonl`, `.conllu`, `.const` and `.ccg` files for `instances`.
pub fn write_split(dir: &Path, split: &str, instances: &[ParsedInstance]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let plain: Vec<AbsaInstance> = instances.iter().map(|p| p.instance.clone()).collect();
    write_absa_jsonl(std::fs::File::create(dir.join(format!("{split}.jsonl")))?, &plain)?;
    let mut conllu = std::fs::File::create(dir.join(format!("{split}.conllu")))?;
    let mut consts = std::fs::File::create(dir.join(format!("{split}.const")))?;
    let mut ccg = std::fs::File::create(dir.join(format!("{split}.ccg")))?;
    for p in instances {
        if let Some(d) = &p.dep {
            writeln!(conllu, "{}", d.to_conllu(p.id(), &p.instance.tokens))?;
        }
        if let Some(c) = &p.constituency {
            writeln!(consts, "{}\t{}", p.id(), c.to_bracketed())?;
        }
        if let Some(s) = &p.supertags {
            writeln!(ccg, "{}\t{}", p.id(), s.tags().join(" "))?;
        }
    }
    Ok(())
}
