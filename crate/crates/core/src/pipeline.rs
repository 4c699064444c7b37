//! Staged, resumable pipeline driven by a TOML configuration.
//!
//! Every stage reads its upstream artifacts from the work directory, writes
//! its own files into `<workdir>/<stage>/`, and finishes with a
//! `manifest.json` holding input hashes, the knobs it used, output hashes and
//! counts. Wall time and thread count go to a separate `run_report.json` so
//! that manifests and artifacts depend only on inputs, knobs and seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{
    average_gatekeeping_series, build_influence_graph, corpus_topic_skew, gatekeeping_series,
    top_outlets_subgraph, write_gatekeeping_csv, DayIndex, InfluenceGraph, NodeKey,
};
use crate::clustering::{
    build_story_clusters, connected_components, read_clusters_jsonl, write_clusters_jsonl, StoryCluster,
};
use crate::corpus::{
    dedup, ingest, truncate_range, write_articles_jsonl, write_outlets_jsonl, Corpus, DateRange,
    IngestOptions, Reliability, Scope,
};
use crate::entities::{
    build_index, decode_candidates, with_fallback_entities, CandidateGenerator, CandidateWriter, EntityIndex,
    TypeFilter, FALLBACK_TYPE,
};
use crate::error::{Error, Result};
use crate::similarity::{
    decode_edges, encode_edges, encode_emb1, load_embeddings, mock_embed, score_candidates, EmbeddingMatrix,
};
use crate::storms::{
    average_storm_series, duration_ecdf, identify_storms, peak_statistics, read_storms_jsonl, storm_summary,
    write_bands_csv, write_storm_table_csv, write_storms_jsonl, SeriesBands, SeriesKind, StormParams,
    StormRecord,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const WORKDIR_ENV: &str = "STORMPIPE_WORKDIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Index,
    Candidates,
    Score,
    Cluster,
    Storms,
    Stats,
    Topics,
    Gatekeeping,
    Influence,
    All,
}

impl Stage {
    /// Concrete stages in execution order.
    pub const SEQUENCE: [Stage; 10] = [
        Stage::Ingest,
        Stage::Index,
        Stage::Candidates,
        Stage::Score,
        Stage::Cluster,
        Stage::Storms,
        Stage::Stats,
        Stage::Topics,
        Stage::Gatekeeping,
        Stage::Influence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Index => "index",
            Stage::Candidates => "candidates",
            Stage::Score => "score",
            Stage::Cluster => "cluster",
            Stage::Storms => "storms",
            Stage::Stats => "stats",
            Stage::Topics => "topics",
            Stage::Gatekeeping => "gatekeeping",
            Stage::Influence => "influence",
            Stage::All => "all",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest | Stage::All => &[],
            Stage::Index => &[Stage::Ingest],
            Stage::Candidates => &[Stage::Ingest, Stage::Index],
            Stage::Score => &[Stage::Ingest, Stage::Candidates],
            Stage::Cluster => &[Stage::Ingest, Stage::Score],
            Stage::Storms => &[Stage::Ingest, Stage::Cluster],
            Stage::Stats => &[Stage::Cluster, Stage::Storms],
            Stage::Topics | Stage::Gatekeeping | Stage::Influence => &[Stage::Ingest, Stage::Storms],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::SEQUENCE
            .into_iter()
            .chain([Stage::All])
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub articles: Option<PathBuf>,
    pub outlets: Option<PathBuf>,
    /// EMB1 file with its `.ids` sibling; mock embeddings are used when absent.
    pub embeddings: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    pub entity_types: Vec<String>,
    pub max_count: usize,
    pub max_day_gap: u32,
    pub threshold: f32,
    pub embed_dim: usize,
    pub min_cluster_size: usize,
    pub window_days: u32,
    pub share_threshold: f64,
    pub min_window_articles: u32,
    pub min_duration: u32,
    pub min_storm_outlets: usize,
    pub topics: usize,
    pub bootstrap_reps: usize,
    pub series_horizon: usize,
    pub gatekeeping_window: u32,
    pub lookback_days: u32,
    pub top_outlets: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let storm = StormParams::default();
        PipelineConfig {
            paths: PathsConfig::default(),
            start_date: None,
            end_date: None,
            entity_types: TypeFilter::standard()
                .with_tag(FALLBACK_TYPE)
                .tags()
                .map(str::to_owned)
                .collect(),
            max_count: crate::entities::DEFAULT_MAX_COUNT,
            max_day_gap: crate::entities::DEFAULT_MAX_DAY_GAP,
            threshold: crate::similarity::DEFAULT_THRESHOLD,
            embed_dim: 256,
            min_cluster_size: crate::clustering::DEFAULT_MIN_SIZE,
            window_days: storm.window_days,
            share_threshold: storm.share_threshold,
            min_window_articles: storm.min_window_articles,
            min_duration: storm.min_duration,
            min_storm_outlets: storm.min_storm_outlets,
            topics: crate::analysis::DEFAULT_TOPICS,
            bootstrap_reps: 1000,
            series_horizon: 30,
            gatekeeping_window: crate::analysis::DEFAULT_GATEKEEPING_WINDOW,
            lookback_days: crate::analysis::DEFAULT_LOOKBACK_DAYS,
            top_outlets: 20,
            seed: 0,
            threads: 0,
        }
    }
}

/// Parses a `--set` value as a TOML literal, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// TOML date literals become plain strings so dates parse either way.
fn dates_to_strings(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(d) => *value = toml::Value::String(d.to_string()),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| dates_to_strings(v)),
        toml::Value::Array(a) => a.iter_mut().for_each(dates_to_strings),
        _ => {}
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides; dotted keys reach
    /// into tables (`paths.workdir=...`).
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for (key, raw) in overrides {
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts
                .pop()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| Error::Config(format!("empty override key in {key:?}")))?;
            let mut node = &mut table;
            for part in parts {
                node = node
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
            }
            node.insert(last.to_owned(), override_value(raw));
        }
        let mut value = toml::Value::Table(table);
        dates_to_strings(&mut value);
        let config: PipelineConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(config)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_with(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.paths.articles,
            &mut config.paths.outlets,
            &mut config.paths.embeddings,
            &mut config.paths.workdir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        let positive = [
            ("max_count", self.max_count as u64),
            ("max_day_gap", u64::from(self.max_day_gap)),
            ("embed_dim", self.embed_dim as u64),
            ("min_cluster_size", self.min_cluster_size as u64),
            ("window_days", u64::from(self.window_days)),
            ("min_window_articles", u64::from(self.min_window_articles)),
            ("min_duration", u64::from(self.min_duration)),
            ("min_storm_outlets", self.min_storm_outlets as u64),
            ("topics", self.topics as u64),
            ("bootstrap_reps", self.bootstrap_reps as u64),
            ("series_horizon", self.series_horizon as u64),
            ("gatekeeping_window", u64::from(self.gatekeeping_window)),
            ("lookback_days", u64::from(self.lookback_days)),
            ("top_outlets", self.top_outlets as u64),
        ];
        for (name, value) in positive {
            if value == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]");
        }
        if !(self.share_threshold > 0.0 && self.share_threshold <= 1.0) {
            return bad("share_threshold must lie in (0, 1]");
        }
        if self.topics < 2 {
            return bad("topics must be at least 2");
        }
        if self.embed_dim < 8 {
            return bad("embed_dim must be at least 8");
        }
        if self.entity_types.is_empty() {
            return bad("entity_types must not be empty");
        }
        if let (Some(start), Some(end)) = (self.start_date, self.end_date) {
            DateRange::new(start, end)?;
        }
        Ok(())
    }

    pub fn storm_params(&self) -> StormParams {
        StormParams {
            window_days: self.window_days,
            share_threshold: self.share_threshold,
            min_window_articles: self.min_window_articles,
            min_duration: self.min_duration,
            min_storm_outlets: self.min_storm_outlets,
        }
    }

    pub fn type_filter(&self) -> TypeFilter {
        TypeFilter::from_tags(self.entity_types.iter().cloned())
    }

    /// Configured work directory, else `$STORMPIPE_WORKDIR`.
    pub fn workdir(&self) -> Result<PathBuf> {
        self.paths
            .workdir
            .clone()
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no workdir configured and {WORKDIR_ENV} unset")))
    }

    /// The knobs a stage depends on, as recorded in its manifest.
    fn snapshot(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::Ingest => json!({"start_date": self.start_date, "end_date": self.end_date}),
            Stage::Index => json!({"entity_types": self.entity_types, "max_count": self.max_count}),
            Stage::Candidates => json!({"max_day_gap": self.max_day_gap}),
            Stage::Score => match self.paths.embeddings {
                Some(_) => json!({"threshold": self.threshold}),
                None => json!({
                    "threshold": self.threshold,
                    "mock_embed_dim": self.embed_dim,
                    "seed": self.seed,
                }),
            },
            Stage::Cluster => json!({"min_cluster_size": self.min_cluster_size}),
            Stage::Storms => json!(self.storm_params()),
            Stage::Stats => json!({
                "bootstrap_reps": self.bootstrap_reps,
                "series_horizon": self.series_horizon,
                "seed": self.seed,
            }),
            Stage::Topics => json!({"topics": self.topics}),
            Stage::Gatekeeping => json!({
                "topics": self.topics,
                "gatekeeping_window": self.gatekeeping_window,
            }),
            Stage::Influence => json!({
                "lookback_days": self.lookback_days,
                "top_outlets": self.top_outlets,
            }),
            Stage::All => json!(null),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    pub threads: usize,
    pub wall_time_ms: u64,
    pub counts: BTreeMap<String, u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Files produced by one stage run, kept in memory until committed.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
    counts: BTreeMap<String, u64>,
}

impl Outputs {
    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_owned(), bytes);
    }

    fn count(&mut self, name: &str, value: impl TryInto<u64>) {
        self.counts
            .insert(name.to_owned(), value.try_into().unwrap_or(u64::MAX));
    }
}

/// Upstream data a stage consumes, with the hashes that identify it.
struct Inputs {
    hashes: BTreeMap<String, String>,
    manifests: BTreeMap<Stage, Manifest>,
}

impl Inputs {
    fn count(&self, stage: Stage, name: &str) -> Option<u64> {
        self.manifests
            .get(&stage)
            .and_then(|m| m.counts.get(name))
            .copied()
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    workdir: PathBuf,
    force: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let workdir = config.workdir()?;
        Ok(Pipeline {
            config,
            workdir,
            force: false,
        })
    }

    /// Re-run stages even when their manifest shows they are up to date.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.workdir.join(stage.name())
    }

    /// Runs `stage` (every stage for `All`) on the configured thread pool.
    pub fn run(&self, stage: Stage) -> Result<Vec<StageReport>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let threads = pool.current_num_threads();
        pool.install(|| {
            let stages: Vec<Stage> = match stage {
                Stage::All => Stage::SEQUENCE.to_vec(),
                s => vec![s],
            };
            stages.into_iter().map(|s| self.run_one(s, threads)).collect()
        })
    }

    /// Reads and checks a stage's manifest against the files on disk.
    pub fn verified_manifest(&self, stage: Stage) -> Result<Manifest> {
        let dir = self.stage_dir(stage);
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: stage.name(),
                path,
            });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|_| Error::CorruptArtifact { path: path.clone() })?;
        for (name, hash) in &manifest.outputs {
            let file = dir.join(name);
            if !file.exists() {
                return Err(Error::MissingArtifact {
                    stage: stage.name(),
                    path: file,
                });
            }
            if sha256_file(&file)? != *hash {
                return Err(Error::CorruptArtifact { path: file });
            }
        }
        Ok(manifest)
    }

    fn inputs(&self, stage: Stage) -> Result<Inputs> {
        let mut hashes = BTreeMap::new();
        let mut manifests = BTreeMap::new();
        if stage == Stage::Ingest {
            for (label, path) in [
                ("articles", &self.config.paths.articles),
                ("outlets", &self.config.paths.outlets),
            ] {
                let path = path
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("paths.{label} is required for ingest")))?;
                let hash = sha256_file(path).map_err(|e| Error::Config(format!("paths.{label}: {e}")))?;
                hashes.insert(label.to_owned(), hash);
            }
        }
        if stage == Stage::Score {
            if let Some(path) = &self.config.paths.embeddings {
                let ids = crate::similarity::ids_path_for(path);
                for (label, file) in [("embeddings", path.as_path()), ("embeddings.ids", ids.as_path())] {
                    let hash =
                        sha256_file(file).map_err(|e| Error::Config(format!("paths.embeddings: {e}")))?;
                    hashes.insert(label.to_owned(), hash);
                }
            }
        }
        for up in stage.upstream() {
            let manifest = self.verified_manifest(*up)?;
            for (name, hash) in &manifest.outputs {
                hashes.insert(format!("{}/{}", up.name(), name), hash.clone());
            }
            manifests.insert(*up, manifest);
        }
        Ok(Inputs { hashes, manifests })
    }

    fn run_one(&self, stage: Stage, threads: usize) -> Result<StageReport> {
        let started = Instant::now();
        let inputs = self.inputs(stage)?;
        let config = self.config.snapshot(stage);
        let dir = self.stage_dir(stage);

        if !self.force {
            if let Ok(existing) = self.verified_manifest(stage) {
                if existing.inputs == inputs.hashes && existing.config == config {
                    tracing::info!(stage = stage.name(), "up to date");
                    return self.report(stage, true, threads, started, existing.counts);
                }
            }
        }

        tracing::info!(stage = stage.name(), "running");
        let outputs = match stage {
            Stage::Ingest => self.ingest_stage()?,
            Stage::Index => self.index_stage()?,
            Stage::Candidates => self.candidates_stage()?,
            Stage::Score => self.score_stage()?,
            Stage::Cluster => self.cluster_stage()?,
            Stage::Storms => self.storms_stage()?,
            Stage::Stats => self.stats_stage()?,
            Stage::Topics => self.topics_stage()?,
            Stage::Gatekeeping => self.gatekeeping_stage()?,
            Stage::Influence => self.influence_stage()?,
            Stage::All => unreachable!("expanded by run"),
        };
        self.check_consistency(stage, &inputs, &outputs)?;

        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        }
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &outputs.files {
            write_atomic(&dir.join(name), bytes)?;
            hashes.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            stage,
            inputs: inputs.hashes,
            config,
            outputs: hashes,
            counts: outputs.counts,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&manifest_path, &bytes)?;
        self.report(stage, false, threads, started, manifest.counts)
    }

    fn report(
        &self,
        stage: Stage,
        skipped: bool,
        threads: usize,
        started: Instant,
        counts: BTreeMap<String, u64>,
    ) -> Result<StageReport> {
        let report = StageReport {
            stage,
            skipped,
            threads,
            wall_time_ms: started.elapsed().as_millis() as u64,
            counts,
        };
        let dir = self.stage_dir(stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        write_atomic(&dir.join(RUN_REPORT_FILE), &bytes)?;
        Ok(report)
    }

    fn check_consistency(&self, stage: Stage, inputs: &Inputs, outputs: &Outputs) -> Result<()> {
        let out = |name: &str| outputs.counts.get(name).copied();
        let violated = match stage {
            Stage::Score => out("edges") > out("candidates"),
            Stage::Cluster => out("clustered_articles") > inputs.count(Stage::Ingest, "articles"),
            Stage::Storms => out("storm_articles") > inputs.count(Stage::Cluster, "clustered_articles"),
            _ => false,
        };
        if violated {
            return Err(Error::Config(format!(
                "{stage}: inconsistent counts {:?}",
                outputs.counts
            )));
        }
        Ok(())
    }

    fn read_stage_file(&self, stage: Stage, name: &str) -> Result<Vec<u8>> {
        let path = self.stage_dir(stage).join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    fn read_stage_text(&self, stage: Stage, name: &str) -> Result<String> {
        let bytes = self.read_stage_file(stage, name)?;
        String::from_utf8(bytes).map_err(|_| Error::CorruptArtifact {
            path: self.stage_dir(stage).join(name),
        })
    }

    /// The ingested corpus with its recorded date range.
    pub fn load_corpus(&self) -> Result<Corpus> {
        let dir = self.stage_dir(Stage::Ingest);
        let range: DateRange = serde_json::from_slice(&self.read_stage_file(Stage::Ingest, "range.json")?)?;
        let ingested = ingest(
            &dir.join("corpus.jsonl"),
            &dir.join("outlets.jsonl"),
            &IngestOptions {
                date_range: Some(range),
            },
        )?;
        if !ingested.rejections.is_empty() {
            return Err(Error::CorruptArtifact {
                path: dir.join("corpus.jsonl"),
            });
        }
        Ok(ingested.corpus)
    }

    pub fn load_clusters(&self) -> Result<Vec<StoryCluster>> {
        read_clusters_jsonl(&self.read_stage_text(Stage::Cluster, "clusters.jsonl")?)
    }

    pub fn load_storms(&self) -> Result<Vec<StormRecord>> {
        read_storms_jsonl(&self.read_stage_text(Stage::Storms, "storms.jsonl")?)
    }

    fn ingest_stage(&self) -> Result<Outputs> {
        let paths = &self.config.paths;
        let (articles, outlets) = (
            paths.articles.as_deref().expect("checked in inputs"),
            paths.outlets.as_deref().expect("checked in inputs"),
        );
        let ingested = ingest(articles, outlets, &IngestOptions::default())?;
        let read = ingested.corpus.len() + ingested.rejections.len();
        let full = ingested.corpus.date_range();
        let start = self.config.start_date.unwrap_or(full.start);
        let end = self.config.end_date.unwrap_or(full.end);
        let windowed = truncate_range(&ingested.corpus, start, end)?;
        let corpus = dedup(&windowed);

        let mut out = Outputs::default();
        let mut buf = Vec::new();
        write_articles_jsonl(&mut buf, corpus.articles()).map_err(|e| Error::io("corpus.jsonl", e))?;
        out.file("corpus.jsonl", buf);
        let mut buf = Vec::new();
        write_outlets_jsonl(&mut buf, corpus.outlets().values())
            .map_err(|e| Error::io("outlets.jsonl", e))?;
        out.file("outlets.jsonl", buf);
        out.file("range.json", serde_json::to_vec(&corpus.date_range())?);
        let mut buf = Vec::new();
        for r in &ingested.rejections {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        out.file("rejections.jsonl", buf);
        out.count("records_read", read);
        out.count("rejected", ingested.rejections.len());
        out.count("outside_range", ingested.corpus.len() - windowed.len());
        out.count("duplicates_removed", windowed.len() - corpus.len());
        out.count("articles", corpus.len());
        out.count("outlets", corpus.outlets().len());
        Ok(out)
    }

    fn index_stage(&self) -> Result<Outputs> {
        let corpus = with_fallback_entities(&self.load_corpus()?)?;
        let index = build_index(&corpus, &self.config.type_filter(), self.config.max_count);
        let mut out = Outputs::default();
        let mut buf = Vec::new();
        index
            .write_postings_jsonl(&mut buf)
            .map_err(|e| Error::io("postings.jsonl", e))?;
        out.file("postings.jsonl", buf);
        let mut buf = Vec::new();
        index
            .write_excluded_jsonl(&mut buf)
            .map_err(|e| Error::io("excluded.jsonl", e))?;
        out.file("excluded.jsonl", buf);
        out.count("articles", corpus.len());
        out.count("entities", index.postings().len());
        out.count("excluded_entities", index.excluded().len());
        out.count("postings", index.postings().values().map(Vec::len).sum::<usize>());
        Ok(out)
    }

    fn load_index(&self) -> Result<EntityIndex> {
        EntityIndex::from_jsonl(
            &self.read_stage_text(Stage::Index, "postings.jsonl")?,
            &self.read_stage_text(Stage::Index, "excluded.jsonl")?,
            self.config.type_filter(),
            self.config.max_count,
        )
    }

    fn candidates_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let index = self.load_index()?;
        let generator = CandidateGenerator::new(&index, &corpus, self.config.max_day_gap)?;
        let mut writer = CandidateWriter::new(Vec::new()).map_err(|e| Error::io("candidates.cnd", e))?;
        generator
            .for_each_block(1 << 14, |pairs| writer.write(pairs))
            .map_err(|e| Error::io("candidates.cnd", e))?;
        let count = writer.count();
        let bytes = writer.finish().map_err(|e| Error::io("candidates.cnd", e))?;
        let mut out = Outputs::default();
        out.file("candidates.cnd", bytes);
        out.count("articles", corpus.len());
        out.count("candidates", count);
        Ok(out)
    }

    fn score_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let pairs = decode_candidates(&self.read_stage_file(Stage::Candidates, "candidates.cnd")?)?;
        let mut out = Outputs::default();
        let embeddings = match &self.config.paths.embeddings {
            Some(path) => load_embeddings(path)?,
            None => {
                let matrix = mock_embeddings(&corpus, self.config.embed_dim, self.config.seed)?;
                out.file("embeddings.emb", encode_emb1(&matrix));
                let ids: String = matrix.ids().iter().map(|id| format!("{id}\n")).collect();
                out.file("embeddings.ids", ids.into_bytes());
                matrix
            }
        };
        let scored = score_candidates(&pairs, &embeddings, self.config.threshold);
        if !scored.report.missing_articles.is_empty() {
            tracing::warn!(
                missing = scored.report.missing_articles.len(),
                skipped_pairs = scored.report.skipped_pairs,
                "candidate articles without embeddings were skipped"
            );
        }
        out.file("edges.edg", encode_edges(&scored.edges));
        let mut report = serde_json::to_vec_pretty(&scored.report)?;
        report.push(b'\n');
        out.file("score_report.json", report);
        out.count("articles", corpus.len());
        out.count("candidates", scored.report.candidates);
        out.count("scored", scored.report.scored);
        out.count("edges", scored.report.edges);
        out.count("skipped_pairs", scored.report.skipped_pairs);
        Ok(out)
    }

    fn cluster_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let edges = decode_edges(&self.read_stage_file(Stage::Score, "edges.edg")?)?;
        let assignment = connected_components(&edges, corpus.ids())?;
        let clusters = build_story_clusters(&assignment, &corpus, self.config.min_cluster_size)?;
        let mut buf = Vec::new();
        write_clusters_jsonl(&mut buf, &clusters).map_err(|e| Error::io("clusters.jsonl", e))?;
        let mut out = Outputs::default();
        out.file("clusters.jsonl", buf);
        out.count("articles", corpus.len());
        out.count("components", assignment.component_count());
        out.count("clusters", clusters.len());
        out.count(
            "clustered_articles",
            clusters.iter().map(StoryCluster::size).sum::<usize>(),
        );
        Ok(out)
    }

    fn storms_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let clusters = self.load_clusters()?;
        let storms = identify_storms(&clusters, &corpus, &self.config.storm_params())?;
        let mut out = Outputs::default();
        let mut buf = Vec::new();
        write_storms_jsonl(&mut buf, &storms).map_err(|e| Error::io("storms.jsonl", e))?;
        out.file("storms.jsonl", buf);
        let mut buf = Vec::new();
        write_storm_table_csv(&mut buf, &storms)?;
        out.file("storm_table.csv", buf);
        out.count("articles", corpus.len());
        out.count("clusters", clusters.len());
        out.count("storms", storms.len());
        out.count(
            "storm_articles",
            storms.iter().map(|s| s.article_count).sum::<usize>(),
        );
        Ok(out)
    }

    fn stats_stage(&self) -> Result<Outputs> {
        let clusters = self.load_clusters()?;
        let storms = self.load_storms()?;
        let storm_ids: HashSet<usize> = storms.iter().map(|s| s.cluster_id).collect();
        let other: Vec<u32> = clusters
            .iter()
            .filter(|c| !storm_ids.contains(&c.cluster_id))
            .map(StoryCluster::duration_days)
            .collect();
        let durations: Vec<u32> = storms.iter().map(|s| s.duration_days).collect();

        let mut out = Outputs::default();
        let summary = match storms.is_empty() {
            true => json!({"storms": 0, "nonstorm_clusters": other.len()}),
            false => json!({
                "storms": storms.len(),
                "nonstorm_clusters": other.len(),
                "summary": storm_summary(&storms)?,
                "peaks": peak_statistics(&storms)?,
            }),
        };
        let mut bytes = serde_json::to_vec_pretty(&summary)?;
        bytes.push(b'\n');
        out.file("summary.json", bytes);

        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["group", "duration_days", "cdf"])?;
        for (group, values) in [("storm", &durations), ("nonstorm", &other)] {
            if values.is_empty() {
                continue;
            }
            for point in duration_ecdf(values)? {
                csv.write_record([group.to_owned(), point.value.to_string(), point.cdf.to_string()])?;
            }
        }
        out.file("duration_ecdf.csv", csv_bytes(csv)?);

        let horizon = self.config.series_horizon;
        let (reps, seed) = (self.config.bootstrap_reps, self.config.seed);
        let mut bands = Vec::new();
        if storms.len() >= 2 {
            let articles = average_storm_series(&storms, SeriesKind::Articles, horizon, reps, seed)?;
            let states = average_storm_series(&storms, SeriesKind::States, horizon, reps, seed)?;
            write_bands_csv(&mut bands, &articles, &states)?;
        } else {
            let empty = SeriesBands {
                mean: vec![],
                lower: vec![],
                upper: vec![],
            };
            write_bands_csv(&mut bands, &empty, &empty)?;
        }
        out.file("series_bands.csv", bands);
        out.count("storms", storms.len());
        out.count("nonstorm_clusters", other.len());
        Ok(out)
    }

    fn topics_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let storms = self.load_storms()?;
        let k = self.config.topics;
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["topic", "skew_pp"])?;
        let storm_articles: usize = storms.iter().map(|s| s.article_count).sum();
        if storms.is_empty() || storm_articles == corpus.len() {
            tracing::warn!("topic skew needs both storm and non-storm articles; writing an empty table");
        } else {
            for (topic, skew) in corpus_topic_skew(&storms, &corpus, k)?.into_iter().enumerate() {
                csv.write_record([topic.to_string(), skew.to_string()])?;
            }
        }
        let mut out = Outputs::default();
        out.file("topic_skew.csv", csv_bytes(csv)?);
        out.count("articles", corpus.len());
        out.count("storms", storms.len());
        Ok(out)
    }

    fn gatekeeping_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let storms = self.load_storms()?;
        let days = DayIndex::new(&corpus);
        let (k, window) = (self.config.topics, self.config.gatekeeping_window);
        let mut all = Vec::new();
        let mut excluding = Vec::new();
        for storm in &storms {
            all.push(gatekeeping_series(storm, &days, k, window, false)?);
            excluding.push(gatekeeping_series(storm, &days, k, window, true)?);
        }
        let (all, excluding) = if storms.is_empty() {
            (vec![], vec![])
        } else {
            (
                average_gatekeeping_series(&all)?,
                average_gatekeeping_series(&excluding)?,
            )
        };
        let mut buf = Vec::new();
        write_gatekeeping_csv(&mut buf, window, &all, &excluding)?;
        let mut out = Outputs::default();
        out.file("gatekeeping.csv", buf);
        out.count("articles", corpus.len());
        out.count("storms", storms.len());
        Ok(out)
    }

    fn influence_stage(&self) -> Result<Outputs> {
        let corpus = self.load_corpus()?;
        let storms = self.load_storms()?;
        let lookback = self.config.lookback_days;
        let mut out = Outputs::default();
        let mut emit = |name: &str, graph: &InfluenceGraph| -> Result<()> {
            let mut json = serde_json::to_vec_pretty(&graph.to_json())?;
            json.push(b'\n');
            out.file(&format!("{name}.json"), json);
            out.file(&format!("{name}.dot"), graph.to_dot().into_bytes());
            Ok(())
        };
        let outlets = build_influence_graph(&storms, &corpus, lookback, NodeKey::Outlet)?;
        emit("influence_outlets", &outlets)?;
        let types = build_influence_graph(&storms, &corpus, lookback, NodeKey::OutletType)?;
        emit("influence_outlet_types", &types)?;
        let top = top_outlets_subgraph(&outlets, &storms, &corpus, self.config.top_outlets, |o| {
            o.scope == Scope::National && o.reliability == Reliability::Reliable
        })?;
        emit("influence_top_reliable", &top.graph)?;
        let selected: BTreeSet<&str> = top.selected.iter().map(String::as_str).collect();
        out.count("articles", corpus.len());
        out.count("storms", storms.len());
        out.count("outlet_nodes", outlets.nodes().len());
        out.count("outlet_edges", outlets.edges().len());
        out.count("top_outlets_selected", selected.len());
        Ok(out)
    }
}

fn csv_bytes(csv: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    csv.into_inner()
        .map_err(|e| Error::io("csv buffer", std::io::Error::other(e.to_string())))
}

/// Mock embeddings for every article of `corpus`, in corpus order.
pub fn mock_embeddings(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    use rayon::prelude::*;
    let data: Vec<f32> = corpus
        .articles()
        .par_iter()
        .flat_map_iter(|a| mock_embed(&a.title, &a.text, dim, seed))
        .collect();
    EmbeddingMatrix::new(dim, corpus.ids().collect(), data)
}

/// Sorted relative paths of every artifact under `workdir`, excluding run
/// reports.
pub fn artifact_files(workdir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for stage in Stage::SEQUENCE {
        let dir = workdir.join(stage.name());
        let Ok(entries) = fs::read_dir(&dir) else {
            continue;
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_name() != RUN_REPORT_FILE {
                files.push(PathBuf::from(stage.name()).join(entry.file_name()));
            }
        }
    }
    files.sort();
    Ok(files)
}
