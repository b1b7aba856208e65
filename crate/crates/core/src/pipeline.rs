//! File-based tag → relate → link → evaluate pipeline driven by a flat TOML config.
//!
//! Each stage reads the previous stage's output file and writes its own, so
//! stages can be rerun on their own. Files are written with a `.partial`
//! suffix and renamed only once every requested stage has succeeded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_annotations, write_annotations, AnnotatedDocument, Analyzer, TokenizerConfig};
use crate::dictionary::{load_dictionary, DEFAULT_MAX_NGRAM};
use crate::evaluation::{
    linking_metrics_docs, relation_metrics, term_metrics_exact, term_metrics_partial, Averaging, LinkingReport,
    MetricsReport,
};
use crate::kb::{load_embeddings, load_kb, KbOptions};
use crate::linker::{link_corpus, LinkMode, LinkerConfig};
use crate::relation::{candidate_pairs, classify_pairs, PairSampling, PatternSet};
use crate::tagger::{
    run_weak_supervision, CommandTagger, DictionaryTagger, MergePolicy, RepairConfig, Tagger,
    WeakSupervisionConfig,
};

pub const TAGGED_FILE: &str = "tagged.jsonl";
pub const RELATIONS_FILE: &str = "relations.jsonl";
pub const LINKED_FILE: &str = "linked.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PARTIAL_SUFFIX: &str = ".partial";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("config file {path}")]
    ConfigParse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("stage {stage} failed")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Tag,
    Relate,
    Link,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Tag, Stage::Relate, Stage::Link, Stage::Evaluate];

    fn output(self) -> &'static str {
        match self {
            Stage::Tag => TAGGED_FILE,
            Stage::Relate => RELATIONS_FILE,
            Stage::Link => LINKED_FILE,
            Stage::Evaluate => METRICS_FILE,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Tag => "tag",
            Stage::Relate => "relate",
            Stage::Link => "link",
            Stage::Evaluate => "evaluate",
        })
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

/// Parse a comma-separated stage list such as `tag,relate`.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, PipelineError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Stage::from_str)
        .collect()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_merge_policy() -> String {
    "union_prefer_longer".into()
}
fn default_iterations() -> usize {
    1
}
fn default_threshold() -> f64 {
    0.0
}
fn default_context() -> usize {
    5
}
fn default_max_ngram() -> usize {
    3
}
fn default_sample_rate() -> f64 {
    1.0
}
fn default_averaging() -> String {
    "macro".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input JSONL; bare `{"id", "text"}` records are tokenized on load.
    pub corpus: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Relation patterns; the bundled starter set when absent.
    pub patterns: Option<PathBuf>,
    /// Gold annotations aligned with `corpus`; enables the metrics report.
    pub gold: Option<PathBuf>,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,

    #[serde(default)]
    pub split_hyphens: bool,

    #[serde(default = "default_true")]
    pub repair: bool,
    /// Added to the built-in preposition list used by repair.
    #[serde(default)]
    pub extra_prepositions: Vec<String>,
    #[serde(default = "default_merge_policy")]
    pub merge_policy: String,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// External tagger command (see `CommandTagger`); dictionary-only otherwise.
    pub tagger_cmd: Option<String>,

    #[serde(default)]
    pub link_mode: LinkMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_max_ngram")]
    pub max_ngram: usize,

    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    pub max_distance: Option<usize>,
    #[serde(default)]
    pub seed: u64,

    /// `macro` or `micro` averaging for the overall relation scores.
    #[serde(default = "default_averaging")]
    pub averaging: String,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Load a config file, applying `key=value` overrides first.
    ///
    /// Override values are read as TOML values when they parse as one
    /// (`3`, `true`, `["tag"]`) and as plain strings otherwise. Relative
    /// paths in the file are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table = text.parse().map_err(|source| PipelineError::ConfigParse {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in ["corpus", "out_dir", "dictionary", "kb", "embeddings", "patterns", "gold"] {
            if let Some(toml::Value::String(p)) = table.get_mut(key) {
                *p = base.join(&*p).display().to_string();
            }
        }
        for (k, v) in overrides {
            table.insert(k.clone(), override_value(v));
        }
        table.try_into().map_err(|source| PipelineError::ConfigParse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn analyzer(&self) -> Analyzer {
        let config = TokenizerConfig {
            split_hyphens: self.split_hyphens,
            ..TokenizerConfig::default()
        };
        Analyzer::new(config, Analyzer::default().normalizer())
    }

    pub fn averaging(&self) -> Result<Averaging, PipelineError> {
        match self.averaging.as_str() {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(PipelineError::Config(format!("averaging must be macro or micro, got {other:?}"))),
        }
    }

    pub fn linker_config(&self) -> LinkerConfig {
        LinkerConfig {
            mode: self.link_mode,
            threshold: self.threshold,
            context_window: self.context,
            max_ngram: self.max_ngram,
        }
    }

    pub fn weak_supervision(&self) -> Result<WeakSupervisionConfig, PipelineError> {
        let merge_policy: MergePolicy = self
            .merge_policy
            .parse()
            .map_err(|e| PipelineError::Config(format!("{e}")))?;
        Ok(WeakSupervisionConfig {
            iterations: self.iterations,
            merge_policy,
            repair: self
                .repair
                .then(|| RepairConfig::with_extra(&self.extra_prepositions)),
        })
    }

    pub fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// Check ranges and that every path the requested stages need exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let need = |name: &str, p: &Option<PathBuf>, why: &str| -> Result<(), PipelineError> {
            match p {
                None => Err(PipelineError::Config(format!("`{name}` is required {why}"))),
                Some(p) if !p.exists() => Err(PipelineError::Config(format!(
                    "`{name}` path {} does not exist",
                    p.display()
                ))),
                Some(_) => Ok(()),
            }
        };
        if self.stages.is_empty() {
            return bad("no stages selected".into());
        }
        if !self.corpus.exists() {
            return bad(format!("`corpus` path {} does not exist", self.corpus.display()));
        }
        if self.runs(Stage::Tag) {
            need("dictionary", &self.dictionary, "by the tag stage")?;
            self.weak_supervision()?;
            if self.iterations == 0 {
                return bad("`iterations` must be at least 1".into());
            }
        }
        if self.runs(Stage::Relate) {
            if let Some(p) = &self.patterns {
                need("patterns", &Some(p.clone()), "")?;
            }
            if !(0.0..=1.0).contains(&self.sample_rate) {
                return bad(format!("`sample_rate` {} outside [0, 1]", self.sample_rate));
            }
        }
        if self.runs(Stage::Link) {
            need("kb", &self.kb, "by the link stage")?;
            if self.link_mode == LinkMode::WeightedCosine {
                need("embeddings", &self.embeddings, "by weighted_cosine linking")?;
            }
            self.linker_config()
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            if self.max_ngram == 0 {
                return bad("`max_ngram` must be at least 1".into());
            }
        }
        if let Some(g) = &self.gold {
            need("gold", &Some(g.clone()), "")?;
        }
        self.averaging()?;
        Ok(())
    }
}

fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineMetrics {
    pub terms_exact: MetricsReport,
    pub terms_partial: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relations: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub links: Option<LinkingReport>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineSummary {
    /// Final output files, in the order they were produced.
    pub outputs: Vec<PathBuf>,
    pub metrics: Option<PipelineMetrics>,
}

fn partial(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(PARTIAL_SUFFIX);
    PathBuf::from(s)
}

fn stage_err(stage: Stage) -> impl Fn(BoxError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

fn boxed<E: std::error::Error + Send + Sync + 'static>(e: E) -> BoxError {
    Box::new(e)
}

/// Run the configured stages in order.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;
    let analyzer = config.analyzer();
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out.display())))?;

    let final_path = |name: &str| out.join(name);
    for name in [TAGGED_FILE, RELATIONS_FILE, LINKED_FILE, ANNOTATIONS_FILE, METRICS_FILE] {
        for p in [final_path(name), partial(&final_path(name))] {
            if p.exists() {
                fs::remove_file(&p).map_err(|e| PipelineError::Config(format!("cannot remove {}: {e}", p.display())))?;
            }
        }
    }

    let mut input = config.corpus.clone();
    let mut written: Vec<PathBuf> = Vec::new();
    let mut metrics = None;

    for stage in Stage::ALL.into_iter().filter(|s| config.runs(*s)) {
        info!("stage {stage}: reading {}", input.display());
        let err = stage_err(stage);
        if stage == Stage::Evaluate {
            let Some(gold_path) = &config.gold else {
                info!("stage evaluate: no gold data configured, skipping");
                continue;
            };
            let pred = read_annotations(&input, &analyzer).map_err(boxed).map_err(&err)?;
            let gold = read_annotations(gold_path, &analyzer).map_err(boxed).map_err(&err)?;
            let m = evaluate(config, &gold, &pred).map_err(&err)?;
            let path = partial(&final_path(METRICS_FILE));
            let mut json = serde_json::to_string_pretty(&m).map_err(boxed).map_err(&err)?;
            json.push('\n');
            fs::write(&path, json).map_err(boxed).map_err(&err)?;
            written.push(path);
            metrics = Some(m);
            continue;
        }

        let docs = read_annotations(&input, &analyzer).map_err(boxed).map_err(&err)?;
        let result = match stage {
            Stage::Tag => tag_stage(config, &analyzer, &docs),
            Stage::Relate => relate_stage(config, &analyzer, docs),
            Stage::Link => link_stage(config, &analyzer, &docs),
            Stage::Evaluate => unreachable!(),
        }
        .map_err(&err)?;
        let path = partial(&final_path(stage.output()));
        write_annotations(&result, &path).map_err(boxed).map_err(&err)?;
        info!("stage {stage}: wrote {} documents to {}", result.len(), path.display());
        written.push(path.clone());
        input = path;
    }

    if input != config.corpus {
        let ann = partial(&final_path(ANNOTATIONS_FILE));
        fs::copy(&input, &ann).map_err(|e| PipelineError::Config(format!("cannot write {}: {e}", ann.display())))?;
        written.push(ann);
    }

    let mut outputs = Vec::new();
    for p in written {
        let done = p.with_extension("");
        fs::rename(&p, &done).map_err(|e| PipelineError::Config(format!("cannot rename {}: {e}", p.display())))?;
        outputs.push(done);
    }
    Ok(PipelineSummary { outputs, metrics })
}

fn tag_stage(
    config: &PipelineConfig,
    analyzer: &Analyzer,
    docs: &[AnnotatedDocument],
) -> Result<Vec<AnnotatedDocument>, BoxError> {
    let dict_path = config.dictionary.as_ref().expect("validated");
    let (dict, report) = load_dictionary(dict_path, analyzer, DEFAULT_MAX_NGRAM)?;
    info!(
        "dictionary: {} entries ({} duplicates, {} longer than {} tokens skipped)",
        report.entries, report.duplicates, report.too_long, DEFAULT_MAX_NGRAM
    );
    let plain: Vec<_> = docs.iter().map(|d| d.document.clone()).collect();
    let ws = config.weak_supervision()?;
    let mut tagger: Box<dyn Tagger> = match &config.tagger_cmd {
        Some(cmd) => Box::new(CommandTagger {
            command: cmd.clone(),
            analyzer: analyzer.clone(),
        }),
        None => Box::new(DictionaryTagger { dictionary: dict.clone() }),
    };
    let output = run_weak_supervision(&plain, &dict, tagger.as_mut(), &ws)?;
    for s in &output.stats {
        info!(
            "iteration {}: {} terms (+{} / -{})",
            s.iteration, s.terms, s.added, s.removed
        );
    }
    Ok(output.corpus)
}

fn relate_stage(
    config: &PipelineConfig,
    analyzer: &Analyzer,
    docs: Vec<AnnotatedDocument>,
) -> Result<Vec<AnnotatedDocument>, BoxError> {
    let patterns = match &config.patterns {
        Some(p) => PatternSet::load(p, analyzer)?,
        None => PatternSet::starter(analyzer),
    };
    Ok(docs
        .into_par_iter()
        .enumerate()
        .map(|(i, mut doc)| {
            let sampling = PairSampling {
                max_distance: config.max_distance,
                sample_rate: config.sample_rate,
                seed: config.seed.wrapping_add(i as u64),
            };
            // predicted relations replace whatever the input carried
            doc.relations.clear();
            let pairs = candidate_pairs(&doc, &sampling);
            doc.relations = classify_pairs(&doc, &pairs, &patterns, false);
            doc
        })
        .collect())
}

fn link_stage(
    config: &PipelineConfig,
    analyzer: &Analyzer,
    docs: &[AnnotatedDocument],
) -> Result<Vec<AnnotatedDocument>, BoxError> {
    let kb = load_kb(config.kb.as_ref().expect("validated"), analyzer, &KbOptions::default())?;
    info!("kb: {} entities", kb.len());
    let embeddings = match (&config.embeddings, config.link_mode) {
        (Some(p), LinkMode::WeightedCosine) => Some(load_embeddings(p, analyzer)?),
        _ => None,
    };
    Ok(link_corpus(docs, &kb, embeddings.as_ref(), analyzer, &config.linker_config())?)
}

fn evaluate(
    config: &PipelineConfig,
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
) -> Result<PipelineMetrics, BoxError> {
    let averaging = config.averaging()?;
    Ok(PipelineMetrics {
        terms_exact: term_metrics_exact(gold, pred)?,
        terms_partial: term_metrics_partial(gold, pred)?,
        relations: if config.runs(Stage::Relate) {
            Some(relation_metrics(gold, pred, None, averaging)?)
        } else {
            None
        },
        links: if config.runs(Stage::Link) {
            Some(linking_metrics_docs(gold, pred)?)
        } else {
            None
        },
    })
}

/// Flatten a nested metrics value into `a.b.c = number` pairs for logging.
pub fn flatten_metrics(value: &serde_json::Value) -> BTreeMap<String, f64> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, f64>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            serde_json::Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    out.insert(prefix.to_string(), x);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}
