use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use termlink::corpus::{read_annotations, write_annotations, Analyzer, TokenizerConfig};
use termlink::dictionary::{
    load_dictionary, mine_ngrams, rank_by_tfidf, write_ranked_tsv, CountOver, DEFAULT_MAX_NGRAM,
};
use termlink::evaluation::{
    linking_metrics_docs, relation_metrics, term_metrics_exact, term_metrics_partial, Averaging,
};
use termlink::kb::{kb_stats, load_embeddings, load_kb, KbOptions};
use termlink::linker::{link_corpus, LinkMode, LinkerConfig};
use termlink::pipeline::{parse_stages, run_pipeline, PipelineConfig};
use termlink::relation::{candidate_pairs, classify_pairs, PairSampling, PatternSet, RelationLabel};
use termlink::tagger::{
    run_weak_supervision, CommandTagger, DictionaryTagger, MergePolicy, RepairConfig, Tagger, WeakSupervisionConfig,
};

#[derive(Parser)]
#[command(name = "termlink", version, about = "Term extraction, relation classification and entity linking")]
struct Cli {
    /// Keep hyphenated compounds apart (`a-b` becomes three tokens).
    #[arg(long, global = true)]
    split_hyphens: bool,

    /// Log progress to stderr (RUST_LOG also works).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank corpus n-grams by TF-IDF.
    MineDict(MineDictArgs),
    /// Annotate terms with the dictionary (and an optional external tagger).
    Tag(TagArgs),
    /// Classify relations between same-sentence terms with patterns.
    Relate(RelateArgs),
    /// Link terms to knowledge-base entities.
    Link(LinkArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Run tag → relate → link → evaluate from a config file.
    Pipeline(PipelineArgs),
    /// Inspect a knowledge-base dump.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Args)]
struct MineDictArgs {
    /// Corpus JSONL (`{"id", "text"}` is enough), or a directory of .jsonl/.txt files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Ranked TSV output: ngram, tf, df, tfidf.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated n-gram sizes.
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    n: Vec<usize>,
    /// Count lowercased surfaces instead of normalized forms.
    #[arg(long)]
    surfaces: bool,
    /// Also write the top N n-grams as a plain dictionary file.
    #[arg(long, requires = "dict_out")]
    top: Option<usize>,
    #[arg(long)]
    dict_out: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    dict: PathBuf,
    /// Corpus JSONL or directory of .jsonl/.txt files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Re-annotation rounds.
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// union_prefer_longer, dictionary_priority or model_priority.
    #[arg(long, default_value = "union_prefer_longer")]
    merge_policy: String,
    /// Skip preposition stripping and Latin-token extension.
    #[arg(long)]
    no_repair: bool,
    /// Extra preposition to strip from term starts (repeatable).
    #[arg(long = "preposition", value_name = "WORD")]
    prepositions: Vec<String>,
    /// External tagger command, called as `<cmd> tag` and `<cmd> train`.
    #[arg(long)]
    tagger_cmd: Option<String>,
}

#[derive(Args)]
struct RelateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pattern file; the bundled starter patterns otherwise.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Fraction of unrelated pairs kept.
    #[arg(long, default_value_t = 1.0)]
    sample_rate: f64,
    /// Drop unrelated pairs with at least this many tokens between them.
    #[arg(long)]
    max_distance: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep NO-RELATION instances (for building training data).
    #[arg(long)]
    emit_no_relation: bool,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Word vectors; required for weighted_cosine.
    #[arg(long)]
    emb: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::WeightedCosine)]
    mode: ModeArg,
    /// Minimum weighted similarity for the top candidate.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
    /// Context tokens on each side of a mention.
    #[arg(long, default_value_t = 5)]
    context: usize,
    /// Longest sub-n-gram looked up.
    #[arg(long, default_value_t = 3)]
    max_ngram: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    WeightedCosine,
    Baseline,
}

impl From<ModeArg> for LinkMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WeightedCosine => LinkMode::WeightedCosine,
            ModeArg::Baseline => LinkMode::Baseline,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(value_enum)]
    what: EvalTarget,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Write the report here as JSON (stdout otherwise).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Restrict relation scoring to these labels.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Pool relation counts instead of averaging per label.
    #[arg(long)]
    micro: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTarget {
    Terms,
    Relations,
    Links,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set threshold=0.2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated subset of tag,relate,link,evaluate.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Parse the dump and report the first error, if any.
    Validate {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        emb: Option<PathBuf>,
    },
    /// Print entity and alias counts as JSON.
    Stats {
        #[arg(long)]
        kb: PathBuf,
    },
}

fn analyzer(cli: &Cli) -> Analyzer {
    let config = TokenizerConfig {
        split_hyphens: cli.split_hyphens,
        ..TokenizerConfig::default()
    };
    Analyzer::new(config, Analyzer::default().normalizer())
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    match path {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn mine_dict(args: &MineDictArgs, analyzer: &Analyzer) -> Result<()> {
    let corpus: Vec<_> = read_annotations(&args.input, analyzer)?
        .into_iter()
        .map(|d| d.document)
        .collect();
    let n_values: BTreeSet<usize> = args.n.iter().copied().collect();
    let over = if args.surfaces {
        CountOver::Surfaces
    } else {
        CountOver::Norms
    };
    let ranked = rank_by_tfidf(mine_ngrams(&corpus, &n_values, over)?, corpus.len())?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_ranked_tsv(&ranked, BufWriter::new(file))?;
    info!("{} n-grams from {} documents", ranked.len(), corpus.len());
    if let (Some(top), Some(path)) = (args.top, &args.dict_out) {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for s in ranked.iter().take(top) {
            writeln!(w, "{}", s.key())?;
        }
        w.flush()?;
    }
    Ok(())
}

fn tag(args: &TagArgs, analyzer: &Analyzer) -> Result<()> {
    let (dict, report) = load_dictionary(&args.dict, analyzer, DEFAULT_MAX_NGRAM)?;
    info!("dictionary: {} entries, {} too long", report.entries, report.too_long);
    let corpus: Vec<_> = read_annotations(&args.input, analyzer)?
        .into_iter()
        .map(|d| d.document)
        .collect();
    let config = WeakSupervisionConfig {
        iterations: args.iterations,
        merge_policy: args.merge_policy.parse::<MergePolicy>()?,
        repair: (!args.no_repair).then(|| RepairConfig::with_extra(&args.prepositions)),
    };
    if config.iterations == 0 {
        bail!("--iterations must be at least 1");
    }
    let mut tagger: Box<dyn Tagger> = match &args.tagger_cmd {
        Some(cmd) => Box::new(CommandTagger {
            command: cmd.clone(),
            analyzer: analyzer.clone(),
        }),
        None => Box::new(DictionaryTagger {
            dictionary: dict.clone(),
        }),
    };
    let output = run_weak_supervision(&corpus, &dict, tagger.as_mut(), &config)?;
    for s in &output.stats {
        info!("iteration {}: {} terms (+{} / -{})", s.iteration, s.terms, s.added, s.removed);
    }
    write_annotations(&output.corpus, &args.out)?;
    Ok(())
}

fn relate(args: &RelateArgs, analyzer: &Analyzer) -> Result<()> {
    if !(0.0..=1.0).contains(&args.sample_rate) {
        bail!("--sample-rate {} outside [0, 1]", args.sample_rate);
    }
    let patterns = match &args.patterns {
        Some(p) => PatternSet::load(p, analyzer)?,
        None => PatternSet::starter(analyzer),
    };
    let docs = read_annotations(&args.input, analyzer)?;
    let out: Vec<_> = docs
        .into_par_iter()
        .enumerate()
        .map(|(i, mut doc)| {
            let sampling = PairSampling {
                max_distance: args.max_distance,
                sample_rate: args.sample_rate,
                seed: args.seed.wrapping_add(i as u64),
            };
            let pairs = candidate_pairs(&doc, &sampling);
            doc.relations = classify_pairs(&doc, &pairs, &patterns, args.emit_no_relation);
            doc
        })
        .collect();
    write_annotations(&out, &args.out)?;
    Ok(())
}

fn link(args: &LinkArgs, analyzer: &Analyzer) -> Result<()> {
    let config = LinkerConfig {
        mode: args.mode.into(),
        threshold: args.threshold,
        context_window: args.context,
        max_ngram: args.max_ngram,
    };
    config.validate()?;
    let kb = load_kb(&args.kb, analyzer, &KbOptions::default())?;
    let embeddings = match (&args.emb, config.mode) {
        (Some(p), LinkMode::WeightedCosine) => Some(load_embeddings(p, analyzer)?),
        (None, LinkMode::WeightedCosine) => bail!("--emb is required for --mode weighted_cosine"),
        _ => None,
    };
    let docs = read_annotations(&args.input, analyzer)?;
    let linked = link_corpus(&docs, &kb, embeddings.as_ref(), analyzer, &config)?;
    write_annotations(&linked, &args.out)?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs, analyzer: &Analyzer) -> Result<()> {
    let gold = read_annotations(&args.gold, analyzer).context("reading gold")?;
    let pred = read_annotations(&args.pred, analyzer).context("reading predictions")?;
    let report = args.report.as_deref();
    match args.what {
        EvalTarget::Terms => {
            #[derive(Serialize)]
            struct TermsReport {
                exact: termlink::evaluation::MetricsReport,
                partial: termlink::evaluation::MetricsReport,
            }
            write_json(
                &TermsReport {
                    exact: term_metrics_exact(&gold, &pred)?,
                    partial: term_metrics_partial(&gold, &pred)?,
                },
                report,
            )
        }
        EvalTarget::Relations => {
            let labels = args
                .labels
                .iter()
                .map(|l| l.parse::<RelationLabel>())
                .collect::<Result<Vec<_>, _>>()?;
            let restrict = (!labels.is_empty()).then_some(labels.as_slice());
            let averaging = if args.micro {
                Averaging::Micro
            } else {
                Averaging::Macro
            };
            write_json(&relation_metrics(&gold, &pred, restrict, averaging)?, report)
        }
        EvalTarget::Links => write_json(&linking_metrics_docs(&gold, &pred)?, report),
    }
}

fn pipeline(args: &PipelineArgs) -> Result<()> {
    let mut overrides = Vec::new();
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {kv:?}");
        };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut config = PipelineConfig::load(&args.config, &overrides)?;
    if let Some(s) = &args.stages {
        config.stages = parse_stages(s)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out_dir {
        config.out_dir = out.clone();
    }
    let summary = run_pipeline(&config)?;
    for p in &summary.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn kb_command(command: &KbCommand, analyzer: &Analyzer) -> Result<()> {
    match command {
        KbCommand::Validate { kb, emb } => {
            let store = load_kb(kb, analyzer, &KbOptions::default())?;
            for w in &store.warnings {
                eprintln!("warning: {w}");
            }
            println!("ok: {} entities", store.len());
            if let Some(p) = emb {
                let e = load_embeddings(p, analyzer)?;
                for w in &e.warnings {
                    eprintln!("warning: {w}");
                }
                println!("ok: {} vectors of dimension {}", e.len(), e.dimension());
            }
            Ok(())
        }
        KbCommand::Stats { kb } => {
            let store = load_kb(kb, analyzer, &KbOptions::default())?;
            write_json(&kb_stats(&store), None)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let analyzer = analyzer(cli);
    match &cli.command {
        Command::MineDict(a) => mine_dict(a, &analyzer),
        Command::Tag(a) => tag(a, &analyzer),
        Command::Relate(a) => relate(a, &analyzer),
        Command::Link(a) => link(a, &analyzer),
        Command::Evaluate(a) => evaluate(a, &analyzer),
        Command::Pipeline(a) => pipeline(a),
        Command::Kb { command } => kb_command(command, &analyzer),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
