mod error;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use synplug::config::Config;
use synplug::corpus::{load_absa_jsonl, load_split, ParsedInstance};
use synplug::eval::{
    aggregate_sweep, dump_attention, evaluate_plugin, evaluate_records, read_sweep_csv, sweep_memory_size,
    write_sweep_csv, Metrics, SweepSetup,
};
use synplug::gateway::{
    infer, write_predictions, AuditLog, ChatBackend, HttpBackend, InferenceSettings, PromptTemplate, ReplayBackend,
    RetryPolicy,
};
use synplug::hub::{lm_vocab, train_strategy1, FusedExample, FusedModel, MicroLm};
use synplug::knowledge::{extract_split, read_bundles, write_bundles, KnowledgeBundle, KnowledgeKind};
use synplug::plugin::{pair_examples, train_plugin, PluginModel, PluginSpec, TrainOptions};
use synplug::synthetic::{planted_corpus, write_split, PlantedRule};
use synplug::AbsaInstance;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "synplug", version, about = "Syntactic knowledge plugins for aspect-based sentiment analysis")]
struct Cli {
    /// Seed for initialisation and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for infer-llm).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Directory with `<split>.jsonl` and parse sidecars.
    #[arg(long)]
    corpus: PathBuf,
    /// Split used for vocabularies and dependency frequencies.
    #[arg(long, default_value = "train")]
    train_split: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract knowledge bundles for a split.
    Extract {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "train")]
        split: String,
        /// dep, const, ccg or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Train a standalone plugin.
    TrainPlugin {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        kind: KnowledgeKind,
        #[arg(long, default_value = "dev")]
        dev_split: String,
    },
    /// Score a trained plugin on a split.
    EvalPlugin {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Build a frozen micro LM from a corpus vocabulary.
    InitLm {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Train plugins and hub through the frozen micro LM.
    TrainFused {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Comma-separated knowledge kinds, one plugin each.
        #[arg(long, value_delimiter = ',', default_value = "dep")]
        kinds: Vec<KnowledgeKind>,
        #[arg(long, default_value = "dev")]
        dev_split: String,
        /// LM checkpoint; a fresh one is built and saved when omitted.
        #[arg(long)]
        lm: Option<PathBuf>,
    },
    /// Query a chat-completion endpoint with plugin-filled prompts.
    InferLlm {
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "gpt-4o-mini")]
        model: String,
        #[arg(long)]
        template: PathBuf,
        /// `kind=checkpoint` pairs.
        #[arg(long, value_delimiter = ',')]
        plugins: Vec<String>,
        /// `kind=bundles.jsonl` pairs; kinds without one are extracted from
        /// the sidecar parses next to `--in`.
        #[arg(long, value_delimiter = ',')]
        bundles: Vec<String>,
        /// Instances to label (`<split>.jsonl`).
        #[arg(long = "in")]
        input: PathBuf,
        /// Split whose dependency frequencies rank dependency pairs; defaults
        /// to the input split.
        #[arg(long)]
        freq_split: Option<String>,
        /// Audit log path; defaults to `<out>.audit.jsonl`.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Answer from a recorded audit log instead of the network.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Train and score plugins over memory sizes and seeds.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        kind: KnowledgeKind,
        #[arg(long = "m", value_delimiter = ',', default_value = "1,2,3,4,5")]
        ms: Vec<usize>,
        /// Seeds; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "dev")]
        dev_split: String,
    },
    /// Write per-instance memory weights as JSON lines and HTML.
    DumpAttention {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Average sweep rows over seeds.
    Aggregate {
        /// Sweep CSV (`kind,M,seed,acc,macro_f1`).
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write a planted-rule synthetic corpus.
    Synth {
        /// presence, majority3 or relation.
        #[arg(long, default_value = "presence")]
        rule: PlantedRule,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_dev: usize,
    },
}

struct Ctx {
    seed: u64,
    config: Config,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }

    fn opts(&self) -> TrainOptions {
        TrainOptions::from_config(&self.config, self.seed)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(config.seeds[0]),
        config,
        out: cli.out,
    };
    match cli.command {
        Command::Extract { corpus, split, kind } => cmd_extract(&ctx, &corpus, &split, &kind),
        Command::TrainPlugin {
            corpus,
            kind,
            dev_split,
        } => cmd_train_plugin(&ctx, &corpus, kind, &dev_split),
        Command::EvalPlugin { corpus, ckpt, split } => cmd_eval_plugin(&ctx, &corpus, &ckpt, &split),
        Command::InitLm { corpus } => cmd_init_lm(&ctx, &corpus),
        Command::TrainFused {
            corpus,
            kinds,
            dev_split,
            lm,
        } => cmd_train_fused(&ctx, &corpus, &kinds, &dev_split, lm.as_deref()),
        Command::InferLlm {
            endpoint,
            model,
            template,
            plugins,
            bundles,
            input,
            freq_split,
            audit,
            replay,
        } => cmd_infer_llm(
            &ctx,
            InferArgs {
                endpoint,
                model,
                template,
                plugins,
                bundles,
                input,
                freq_split,
                audit,
                replay,
            },
        ),
        Command::Sweep {
            corpus,
            kind,
            ms,
            seeds,
            dev_split,
        } => cmd_sweep(&ctx, &corpus, kind, &ms, &seeds, &dev_split),
        Command::DumpAttention {
            corpus,
            ckpt,
            split,
            limit,
        } => cmd_dump_attention(&ctx, &corpus, &ckpt, &split, limit),
        Command::Aggregate { input } => cmd_aggregate(&ctx, &input),
        Command::Synth { rule, n_train, n_dev } => {
            let dir = ctx.out_dir()?;
            let c = planted_corpus(rule, n_train, n_dev, ctx.seed);
            write_split(&dir, "train", &c.train).map_err(|e| CliError::io(&dir, e))?;
            write_split(&dir, "dev", &c.dev).map_err(|e| CliError::io(&dir, e))?;
            println!("wrote {} train and {} dev instances to {}", c.train.len(), c.dev.len(), dir.display());
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn load(corpus: &CorpusArgs, split: &str) -> Result<Vec<ParsedInstance>, CliError> {
    Ok(load_split(&corpus.corpus, split)?)
}

fn instances(split: &[ParsedInstance]) -> Vec<AbsaInstance> {
    split.iter().map(|p| p.instance.clone()).collect()
}

fn parse_kinds(s: &str) -> Result<Vec<KnowledgeKind>, CliError> {
    if s == "all" {
        return Ok(KnowledgeKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse().map_err(|_| CliError::invalid(format!("unknown knowledge kind {k:?}"))))
        .collect()
}

fn cmd_extract(ctx: &Ctx, corpus: &CorpusArgs, split: &str, kind: &str) -> Result<(), CliError> {
    let kinds = parse_kinds(kind)?;
    let train = load(corpus, &corpus.train_split)?;
    let target = if split == corpus.train_split {
        train.clone()
    } else {
        load(corpus, split)?
    };
    let dir = ctx.out_dir()?;
    for kind in kinds {
        let bundles = extract_split(kind, &train, &target, &ctx.config.extract_config())?;
        let path = dir.join(format!("{split}.{kind}.jsonl"));
        let mut w = create(&path)?;
        write_bundles(&mut w, &bundles).map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let fallback = bundles.iter().filter(|b| b.fallback).count();
        println!("{}: {} bundles ({} fallback)", path.display(), bundles.len(), fallback);
    }
    Ok(())
}

fn plugin_split(
    ctx: &Ctx,
    kind: KnowledgeKind,
    train: &[ParsedInstance],
    split: &[ParsedInstance],
) -> Result<Vec<synplug::plugin::PluginExample>, CliError> {
    let bundles = extract_split(kind, train, split, &ctx.config.extract_config())?;
    Ok(pair_examples(&instances(split), &bundles)?)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    kind: KnowledgeKind,
    seed: u64,
    best_epoch: usize,
    best_dev_accuracy: f64,
    stopped_early: bool,
    history: &'a [synplug::plugin::EpochStats],
}

fn cmd_train_plugin(ctx: &Ctx, corpus: &CorpusArgs, kind: KnowledgeKind, dev_split: &str) -> Result<(), CliError> {
    let train = load(corpus, &corpus.train_split)?;
    let dev = load(corpus, dev_split)?;
    let train_ex = plugin_split(ctx, kind, &train, &train)?;
    let dev_ex = plugin_split(ctx, kind, &train, &dev)?;
    let (model, report) = train_plugin(ctx.config.plugin_spec(kind), &train_ex, &dev_ex, &ctx.opts(), None)?;
    let dir = ctx.out_dir()?;
    let ckpt = dir.join(format!("plugin-{kind}.ckpt"));
    model.save(&ckpt)?;
    write_json(
        &dir.join(format!("train-{kind}.json")),
        &TrainSummary {
            kind,
            seed: ctx.seed,
            best_epoch: report.best_epoch,
            best_dev_accuracy: report.best_dev_accuracy,
            stopped_early: report.stopped_early,
            history: &report.history,
        },
    )?;
    println!(
        "{kind}: best dev accuracy {:.4} at epoch {}; saved {}",
        report.best_dev_accuracy,
        report.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!(
        "accuracy {:.4}  macro-F1 {:.4}  micro-F1 {:.4}  ({} / {} correct, {} unparseable)",
        m.accuracy, m.macro_f1, m.micro_f1, m.correct, m.total, m.unparseable
    );
    for c in &m.per_class {
        println!(
            "  {:<8} P {:.4} R {:.4} F1 {:.4} (support {})",
            c.label.as_str(),
            c.precision,
            c.recall,
            c.f1,
            c.support
        );
    }
}

fn cmd_eval_plugin(ctx: &Ctx, corpus: &CorpusArgs, ckpt: &Path, split: &str) -> Result<(), CliError> {
    let model = PluginModel::load(ckpt).map_err(|e| CliError::invalid(format!("{}: {e}", ckpt.display())))?;
    let train = load(corpus, &corpus.train_split)?;
    let target = load(corpus, split)?;
    let extract = synplug::knowledge::ExtractConfig {
        memory: model.spec.memory,
        ..ctx.config.extract_config()
    };
    let bundles = extract_split(model.kind(), &train, &target, &extract)?;
    let examples = pair_examples(&instances(&target), &bundles)?;
    let metrics = evaluate_plugin(&model, &examples, None)?;
    print_metrics(&metrics);
    if ctx.out.is_some() {
        write_json(&ctx.out_dir()?.join("metrics.json"), &metrics)?;
    }
    Ok(())
}

fn build_lm(ctx: &Ctx, train: &[ParsedInstance]) -> Result<MicroLm, CliError> {
    let vocab = lm_vocab(&instances(train), ctx.config.lm_vocab_size);
    Ok(MicroLm::new(ctx.config.lm_config(), vocab, ctx.seed)?)
}

fn cmd_init_lm(ctx: &Ctx, corpus: &CorpusArgs) -> Result<(), CliError> {
    let train = load(corpus, &corpus.train_split)?;
    let lm = build_lm(ctx, &train)?;
    let path = ctx.out_dir()?.join("lm.ckpt");
    lm.save(&path)?;
    println!("saved {} (hash {})", path.display(), lm.checkpoint_hash());
    Ok(())
}

fn fused_split(
    ctx: &Ctx,
    kinds: &[KnowledgeKind],
    train: &[ParsedInstance],
    split: &[ParsedInstance],
) -> Result<Vec<FusedExample>, CliError> {
    let mut per_kind = Vec::with_capacity(kinds.len());
    for &k in kinds {
        per_kind.push(extract_split(k, train, split, &ctx.config.extract_config())?);
    }
    Ok(split
        .iter()
        .enumerate()
        .map(|(i, p)| FusedExample {
            instance: p.instance.clone(),
            bundles: per_kind.iter().map(|b| b[i].clone()).collect(),
        })
        .collect())
}

#[derive(Serialize)]
struct FusedSummary<'a> {
    kinds: &'a [KnowledgeKind],
    seed: u64,
    lm_hash: &'a str,
    best_epoch: usize,
    best_dev_accuracy: f64,
    stopped_early: bool,
    history: &'a [synplug::plugin::EpochStats],
    hub_grad_norms: &'a [f64],
}

fn cmd_train_fused(
    ctx: &Ctx,
    corpus: &CorpusArgs,
    kinds: &[KnowledgeKind],
    dev_split: &str,
    lm_path: Option<&Path>,
) -> Result<(), CliError> {
    if kinds.is_empty() || kinds.len() > 3 {
        return Err(CliError::invalid("--kinds takes one to three knowledge kinds"));
    }
    let train = load(corpus, &corpus.train_split)?;
    let dev = load(corpus, dev_split)?;
    let dir = ctx.out_dir()?;
    let lm = match lm_path {
        Some(p) => MicroLm::load(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?,
        None => {
            let lm = build_lm(ctx, &train)?;
            lm.save(&dir.join("lm.ckpt"))?;
            lm
        }
    };
    let train_ex = fused_split(ctx, kinds, &train, &train)?;
    let dev_ex = fused_split(ctx, kinds, &train, &dev)?;
    let specs: Vec<PluginSpec> = kinds.iter().map(|&k| ctx.config.plugin_spec(k)).collect();
    let mut model = FusedModel::new(&specs, &lm, &train_ex, ctx.seed)?;
    let report = train_strategy1(&lm, &mut model, &train_ex, &dev_ex, &ctx.opts())?;
    let path = dir.join("fused.ckpt");
    model.save(&path)?;
    write_json(
        &dir.join("train-fused.json"),
        &FusedSummary {
            kinds,
            seed: ctx.seed,
            lm_hash: &report.lm_hash,
            best_epoch: report.best_epoch,
            best_dev_accuracy: report.best_dev_accuracy,
            stopped_early: report.stopped_early,
            history: &report.history,
            hub_grad_norms: &report.hub_grad_norms,
        },
    )?;
    println!(
        "fused {:?}: best dev accuracy {:.4} at epoch {}; LM hash {} unchanged; saved {}",
        kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        report.best_dev_accuracy,
        report.best_epoch,
        report.lm_hash,
        path.display()
    );
    Ok(())
}

struct InferArgs {
    endpoint: Option<String>,
    model: String,
    template: PathBuf,
    plugins: Vec<String>,
    bundles: Vec<String>,
    input: PathBuf,
    freq_split: Option<String>,
    audit: Option<PathBuf>,
    replay: Option<PathBuf>,
}

fn kind_pairs(items: &[String], flag: &str) -> Result<BTreeMap<KnowledgeKind, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    for item in items.iter().filter(|s| !s.is_empty()) {
        let (k, p) = item
            .split_once('=')
            .ok_or_else(|| CliError::invalid(format!("{flag} expects kind=path, got {item:?}")))?;
        let kind: KnowledgeKind = k
            .parse()
            .map_err(|_| CliError::invalid(format!("{flag}: unknown knowledge kind {k:?}")))?;
        if out.insert(kind, PathBuf::from(p)).is_some() {
            return Err(CliError::invalid(format!("{flag}: {kind} given twice")));
        }
    }
    Ok(out)
}

/// `<dir>/<stem>.jsonl` -> (dir, stem).
fn split_location(path: &Path) -> Result<(PathBuf, String), CliError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::invalid(format!("cannot take a split name from {}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    Ok((dir, stem.to_string()))
}

fn cmd_infer_llm(ctx: &Ctx, a: InferArgs) -> Result<(), CliError> {
    let template = PromptTemplate::load(&a.template)?;
    let plugin_paths = kind_pairs(&a.plugins, "--plugins")?;
    let bundle_paths = kind_pairs(&a.bundles, "--bundles")?;
    for slot in template.slots() {
        if !plugin_paths.contains_key(&slot) {
            return Err(CliError::invalid(format!(
                "template slot {{plugin:{slot}}} has no checkpoint in --plugins"
            )));
        }
    }
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| CliError::invalid("infer-llm needs --out <preds.jsonl>"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }

    let inputs = load_absa_jsonl(&a.input)?;
    let mut predictions: Vec<BTreeMap<KnowledgeKind, synplug::Polarity>> = vec![BTreeMap::new(); inputs.len()];
    if !plugin_paths.is_empty() {
        let (dir, stem) = split_location(&a.input)?;
        let mut parsed: Option<(Vec<ParsedInstance>, Vec<ParsedInstance>)> = None;
        for (&kind, ckpt) in &plugin_paths {
            let model =
                PluginModel::load(ckpt).map_err(|e| CliError::invalid(format!("{}: {e}", ckpt.display())))?;
            if model.kind() != kind {
                return Err(CliError::invalid(format!(
                    "{} holds a {} plugin, not {kind}",
                    ckpt.display(),
                    model.kind()
                )));
            }
            let bundles: Vec<KnowledgeBundle> = match bundle_paths.get(&kind) {
                Some(p) => {
                    let f = File::open(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
                    read_bundles(BufReader::new(f))?
                }
                None => {
                    if parsed.is_none() {
                        let target = load_split(&dir, &stem)?;
                        let freq = match &a.freq_split {
                            Some(s) => load_split(&dir, s)?,
                            None => target.clone(),
                        };
                        parsed = Some((freq, target));
                    }
                    let (freq, target) = parsed.as_ref().expect("loaded above");
                    let extract = synplug::knowledge::ExtractConfig {
                        memory: model.spec.memory,
                        ..ctx.config.extract_config()
                    };
                    extract_split(kind, freq, target, &extract)?
                }
            };
            let examples = pair_examples(&inputs, &bundles)?;
            for (slot, p) in predictions.iter_mut().zip(model.predict_batch(&examples, None)?) {
                slot.insert(kind, p.label);
            }
        }
    }

    let settings = InferenceSettings {
        model: a.model,
        temperature: ctx.config.temperature,
        max_tokens: ctx.config.max_tokens,
        concurrency: ctx.config.concurrency,
    };
    let backend: Box<dyn ChatBackend> = match (&a.replay, &a.endpoint) {
        (Some(r), _) => Box::new(ReplayBackend::load(r).map_err(|e| CliError::invalid(e.to_string()))?),
        (None, Some(url)) => Box::new(HttpBackend::new(
            url,
            Duration::from_secs(ctx.config.timeout_secs),
            RetryPolicy::default(),
        )?),
        (None, None) => return Err(CliError::invalid("infer-llm needs --endpoint or --replay")),
    };
    let audit = match (&a.replay, &a.audit) {
        (Some(_), None) => None,
        (_, Some(p)) => Some(AuditLog::create(p)?),
        (None, None) => Some(AuditLog::create(&out.with_extension("audit.jsonl"))?),
    };
    let result = infer(backend.as_ref(), &template, &inputs, &predictions, &settings, audit.as_ref())?;
    for (id, kinds) in &result.unused_predictions {
        log::warn!("{id}: no template slot for {kinds:?}");
    }
    if !result.unused_predictions.is_empty() {
        eprintln!(
            "warning: {} instances had plugin predictions without a template slot",
            result.unused_predictions.len()
        );
    }
    let mut w = create(&out)?;
    write_predictions(&mut w, &result.records).map_err(|e| CliError::io(&out, e))?;
    w.flush().map_err(|e| CliError::io(&out, e))?;
    println!("wrote {} predictions to {}", result.records.len(), out.display());
    if result.records.iter().all(|r| r.gold.is_some()) && !result.records.is_empty() {
        print_metrics(&evaluate_records(&result.records)?);
    }
    Ok(())
}

fn cmd_sweep(
    ctx: &Ctx,
    corpus: &CorpusArgs,
    kind: KnowledgeKind,
    ms: &[usize],
    seeds: &[u64],
    dev_split: &str,
) -> Result<(), CliError> {
    let train = load(corpus, &corpus.train_split)?;
    let dev = load(corpus, dev_split)?;
    let seeds = if seeds.is_empty() { ctx.config.seeds.clone() } else { seeds.to_vec() };
    let setup = SweepSetup {
        kind,
        train: &train,
        dev: &dev,
        spec: ctx.config.plugin_spec(kind),
        extract: ctx.config.extract_config(),
        opts: ctx.opts(),
    };
    let rows = sweep_memory_size(&setup, ms, &seeds)?;
    let path = ctx.out_dir()?.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    for r in &rows {
        println!("{} M={} seed={} acc={:.4} macro_f1={:.4}", r.kind, r.m, r.seed, r.acc, r.macro_f1);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_dump_attention(
    ctx: &Ctx,
    corpus: &CorpusArgs,
    ckpt: &Path,
    split: &str,
    limit: Option<usize>,
) -> Result<(), CliError> {
    let model = PluginModel::load(ckpt).map_err(|e| CliError::invalid(format!("{}: {e}", ckpt.display())))?;
    let train = load(corpus, &corpus.train_split)?;
    let mut target = load(corpus, split)?;
    if let Some(n) = limit {
        target.truncate(n);
    }
    let extract = synplug::knowledge::ExtractConfig {
        memory: model.spec.memory,
        ..ctx.config.extract_config()
    };
    let bundles = extract_split(model.kind(), &train, &target, &extract)?;
    let examples = pair_examples(&instances(&target), &bundles)?;
    let dir = ctx.out_dir()?;
    let (reports, warnings) = dump_attention(&model, &examples, &dir)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} reports to {}", reports.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct AggregateRow {
    kind: KnowledgeKind,
    #[serde(rename = "M")]
    m: usize,
    seeds: Vec<u64>,
    mean_accuracy: f64,
    mean_macro_f1: f64,
    accuracy: Vec<f64>,
    macro_f1: Vec<f64>,
}

fn cmd_aggregate(ctx: &Ctx, input: &Path) -> Result<(), CliError> {
    let f = File::open(input).map_err(|e| CliError::invalid(format!("{}: {e}", input.display())))?;
    let rows = read_sweep_csv(f).map_err(|e| CliError::invalid(format!("{}: {e}", input.display())))?;
    let groups = aggregate_sweep(&rows)?;
    let out: Vec<AggregateRow> = groups
        .into_iter()
        .map(|(kind, m, a)| AggregateRow {
            kind,
            m,
            seeds: a.runs.iter().map(|r| r.seed).collect(),
            mean_accuracy: a.mean_accuracy,
            mean_macro_f1: a.mean_macro_f1,
            accuracy: a.runs.iter().map(|r| r.accuracy).collect(),
            macro_f1: a.runs.iter().map(|r| r.macro_f1).collect(),
        })
        .collect();
    for r in &out {
        println!(
            "{} M={} over {} seeds: acc {:.4} macro_f1 {:.4}",
            r.kind,
            r.m,
            r.seeds.len(),
            r.mean_accuracy,
            r.mean_macro_f1
        );
    }
    if ctx.out.is_some() {
        write_json(&ctx.out_dir()?.join("aggregate.json"), &out)?;
    }
    Ok(())
}
