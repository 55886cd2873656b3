//! Run configuration and the end-to-end commands built on the other modules.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::bench::{load_split, BenchmarkSplit, IngestError, TaskInstance};
use crate::budget::{TokenBudget, TokenCounter, SegmentCounter, TruncationRecord, TARGET_SECTION};
use crate::cot::{run_cot, CotMode, CotOptions, CotTrace};
use crate::curation::{score_candidates, select_top_k, CachedEmbedder, CuratedSet, CurationError, ExamplePool, LexicalEmbedder};
use crate::eval::{aggregate, execute_and_compare, EvalOutcome, ExBreakdown, BucketCount};
use crate::gateway::{extract_sql, Completer, Embedder, GatewayError, GatewayMode, LlmEndpoint, LlmGateway, ReplayStore};
use crate::prompt::{
    build_few_shot_prompt_budgeted, build_open_prompt_budgeted, derive_seed, emit_sft_dataset, PromptBundle, PromptError, CUE,
    TABLES_LINE,
};
use crate::schema::{render_catalog, render_schema_format_header, SchemaVariant};
use crate::taxonomy::{classify, tabulate, ErrorCategory, ErrorLabel, FailureTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read config `{path}`: {reason}")]
    ConfigRead { path: PathBuf, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unknown question id {0}")]
    UnknownQuestion(i64),
    #[error("no catalog for database `{0}`")]
    UnknownDatabase(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("worker pool: {0}")]
    Workers(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_split() -> String {
    "dev".into()
}
fn default_variant() -> SchemaVariant {
    SchemaVariant::CVDT
}
fn default_temperature() -> f64 {
    1.0
}
fn default_workers() -> usize {
    4
}
fn default_exec_timeout() -> u64 {
    30
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_pool_split() -> Option<String> {
    None
}
fn default_true() -> bool {
    true
}
fn default_endpoint() -> LlmEndpoint {
    LlmEndpoint::new("http://127.0.0.1:8000", "local-model")
}

/// Everything a run needs. Loaded from TOML; CLI flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmark_root: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default = "default_variant")]
    pub variant: SchemaVariant,
    #[serde(default)]
    pub mode: CotMode,
    #[serde(default)]
    pub shots: usize,
    /// Benchmark root of the example pool; defaults to `benchmark_root`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_root: Option<PathBuf>,
    #[serde(default = "default_pool_split", skip_serializing_if = "Option::is_none")]
    pub pool_split: Option<String>,
    #[serde(default)]
    pub budget: TokenBudget,
    /// Softmax temperature for example column truncation.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub truncation_seed: u64,
    #[serde(default = "default_true")]
    pub restrict_step2: bool,
    #[serde(default = "default_endpoint")]
    pub endpoint: LlmEndpoint,
    /// Embedding server; the built-in lexical embedder is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_endpoint: Option<LlmEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<PathBuf>,
    #[serde(default)]
    pub gateway_mode: GatewayMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_exec_timeout")]
    pub exec_timeout_secs: u64,
    /// Only the first `limit` instances of the split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl RunConfig {
    pub fn new(benchmark_root: impl Into<PathBuf>) -> Self {
        RunConfig {
            benchmark_root: benchmark_root.into(),
            split: default_split(),
            variant: default_variant(),
            mode: CotMode::None,
            shots: 0,
            pool_root: None,
            pool_split: None,
            budget: TokenBudget::default(),
            temperature: default_temperature(),
            truncation_seed: 0,
            restrict_step2: true,
            endpoint: default_endpoint(),
            embedding_endpoint: None,
            embedding_cache: None,
            gateway_mode: GatewayMode::Live,
            replay_store: None,
            output_dir: default_output_dir(),
            workers: default_workers(),
            exec_timeout_secs: default_exec_timeout(),
            limit: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::ConfigRead {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.shots > 0 && self.pool_split.is_none() {
            return Err(PipelineError::Config("shots > 0 requires pool_split".into()));
        }
        if self.shots > 0 && self.mode != CotMode::None {
            return Err(PipelineError::Config("few-shot prompts cannot be combined with a chain-of-thought mode".into()));
        }
        if self.gateway_mode != GatewayMode::Live && self.replay_store.is_none() {
            return Err(PipelineError::Config(format!(
                "gateway mode `{}` requires replay_store",
                mode_name(self.gateway_mode)
            )));
        }
        self.budget.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PipelineError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_secs(self.exec_timeout_secs)
    }

    pub fn pool_root(&self) -> &Path {
        self.pool_root.as_deref().unwrap_or(&self.benchmark_root)
    }

    pub fn load_split(&self) -> Result<BenchmarkSplit, PipelineError> {
        let mut split = load_split(&self.benchmark_root, &self.split)?;
        if let Some(limit) = self.limit {
            split.instances.truncate(limit);
        }
        Ok(split)
    }
}

fn mode_name(mode: GatewayMode) -> &'static str {
    match mode {
        GatewayMode::Live => "live",
        GatewayMode::Record => "record",
        GatewayMode::Replay => "replay",
    }
}

/// Model access for one run.
pub struct Services {
    pub completer: Arc<dyn Completer>,
    pub embedder: Arc<dyn Embedder>,
    pub counter: Arc<dyn TokenCounter>,
}

impl Services {
    pub fn from_config(config: &RunConfig) -> Result<Self, PipelineError> {
        let store = match &config.replay_store {
            Some(path) if config.gateway_mode != GatewayMode::Live => Some(Arc::new(ReplayStore::open(path)?)),
            _ => None,
        };
        let completer = Arc::new(LlmGateway::new(config.endpoint.clone(), config.gateway_mode, store.clone())?);
        let embedder: Arc<dyn Embedder> = match (&config.embedding_endpoint, &config.embedding_cache) {
            (Some(endpoint), Some(cache)) => {
                let gateway = LlmGateway::new(endpoint.clone(), config.gateway_mode, store)?;
                Arc::new(CachedEmbedder::open(gateway, cache)?)
            }
            (Some(endpoint), None) => Arc::new(LlmGateway::new(endpoint.clone(), config.gateway_mode, store)?),
            (None, _) => Arc::new(LexicalEmbedder::default()),
        };
        Ok(Services {
            completer,
            embedder,
            counter: Arc::new(SegmentCounter),
        })
    }
}

/// Counts printed by `ingest-check`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub split: String,
    pub instances: usize,
    pub databases: usize,
    pub tables: usize,
    pub columns: usize,
    pub foreign_keys: usize,
    pub warnings: Vec<String>,
}

pub fn ingest_summary(split: &BenchmarkSplit) -> IngestSummary {
    let catalogs = split.databases.values();
    IngestSummary {
        split: split.name.clone(),
        instances: split.instances.len(),
        databases: split.databases.len(),
        tables: catalogs.clone().map(|c| c.tables.len()).sum(),
        columns: catalogs.clone().flat_map(|c| &c.tables).map(|t| t.columns.len()).sum(),
        foreign_keys: catalogs.map(|c| c.foreign_keys.len()).sum(),
        warnings: split.warnings.clone(),
    }
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split: {}", self.split)?;
        writeln!(f, "instances: {}", self.instances)?;
        writeln!(f, "databases: {}", self.databases)?;
        writeln!(f, "tables: {}", self.tables)?;
        writeln!(f, "columns: {}", self.columns)?;
        write!(f, "foreign keys: {}", self.foreign_keys)?;
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

/// Schema block as it appears in a prompt: format header, tables line and
/// the rendered catalog.
pub fn render_schema_document(catalog: &crate::schema::DatabaseCatalog, variant: SchemaVariant) -> String {
    let mut text = render_schema_format_header(variant);
    text.push_str(TABLES_LINE);
    text.push('\n');
    text.push_str(&render_catalog(catalog, variant));
    text
}

/// Writes `<output_dir>/schemas/<database>/<variant>.txt` for every database
/// and variant. Returns the written paths in order.
pub fn cmd_serialize_schema(split: &BenchmarkSplit, output_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    for (id, catalog) in &split.databases {
        let dir = output_dir.join("schemas").join(id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for variant in SchemaVariant::ALL {
            let path = dir.join(format!("{}.txt", variant.tag()));
            fs::write(&path, render_schema_document(catalog, variant)).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Column truncation figures over a set of prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationStats {
    pub total_queries: usize,
    pub truncated_queries: usize,
    /// Truncated queries over total queries, in percent.
    pub truncated_share: f64,
    /// Removed columns per truncated query.
    pub average_truncated_columns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_target_columns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_example_columns: Option<f64>,
}

impl TruncationStats {
    /// `records` holds one entry per query; `None` marks a query whose prompt
    /// was never truncated or never built.
    pub fn from_records<'a, I>(records: I, total_queries: usize, split_sections: bool) -> Self
    where
        I: IntoIterator<Item = &'a TruncationRecord>,
    {
        let mut truncated = 0usize;
        let mut removed = 0usize;
        let mut target = 0usize;
        for record in records {
            if record.is_truncated() {
                truncated += 1;
                removed += record.total_removed();
                target += record.removed_in(TARGET_SECTION);
            }
        }
        let per = |n: usize| if truncated == 0 { 0.0 } else { n as f64 / truncated as f64 };
        TruncationStats {
            total_queries,
            truncated_queries: truncated,
            truncated_share: if total_queries == 0 {
                0.0
            } else {
                truncated as f64 * 100.0 / total_queries as f64
            },
            average_truncated_columns: per(removed),
            average_target_columns: split_sections.then(|| per(target)),
            average_example_columns: split_sections.then(|| per(removed - target)),
        }
    }
}

impl fmt::Display for TruncationStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Queries with column truncation/Total queries: {}/{} ({:.2}%)",
            self.truncated_queries, self.total_queries, self.truncated_share
        )?;
        write!(f, "Average truncated columns: {:.2}", self.average_truncated_columns)?;
        if let (Some(t), Some(e)) = (self.average_target_columns, self.average_example_columns) {
            write!(f, "\nAverage truncated target columns: {t:.2}")?;
            write!(f, "\nAverage truncated example columns: {e:.2}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSummary {
    pub path: PathBuf,
    pub written: usize,
    pub skipped: Vec<(i64, String)>,
    pub stats: TruncationStats,
}

/// Writes `<output_dir>/sft_<split>.jsonl`. Instances whose pair cannot fit
/// the budget are logged and skipped.
pub fn cmd_prep_sft(config: &RunConfig, split: &BenchmarkSplit, counter: &dyn TokenCounter) -> Result<SftSummary, PipelineError> {
    config.budget.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let path = config.output_dir.join(format!("sft_{}.jsonl", split.name));
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let results = emit_sft_dataset(split, config.variant, config.budget, counter, config.truncation_seed);
    for (instance, result) in split.instances.iter().zip(results) {
        match result {
            Ok(record) => {
                let line = serde_json::to_string(&record.pair).map_err(|e| PipelineError::Serialize(e.to_string()))?;
                writeln!(out, "{line}").map_err(io_err(&path))?;
                records.push(record.truncation);
            }
            Err(e) => {
                warn!(question_id = instance.question_id, error = %e, "skipping instance");
                skipped.push((instance.question_id, e.to_string()));
            }
        }
    }
    out.flush().map_err(io_err(&path))?;
    let stats = TruncationStats::from_records(&records, split.instances.len(), false);
    Ok(SftSummary {
        path,
        written: records.len(),
        skipped,
        stats,
    })
}

/// Result of one instance in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub question_id: i64,
    pub database_id: String,
    pub difficulty: String,
    pub predicted_sql: String,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ErrorLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<i64>,
    pub prompt_tokens: usize,
    pub truncated_columns: usize,
}

/// Dump of what produced one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceTrace {
    Prompt {
        question_id: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        draft: Option<PromptBundle>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        curated: Option<CuratedSet>,
        prompt: PromptBundle,
        response: String,
    },
    Cot(CotTrace),
    Failed {
        question_id: i64,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub split: String,
    pub variant: SchemaVariant,
    pub mode: CotMode,
    pub shots: usize,
    pub model: String,
    pub truncation_seed: u64,
    pub total_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub ex_by_split: ExBreakdown,
    pub counts: std::collections::BTreeMap<String, BucketCount>,
    pub failures: FailureTable,
    pub truncation: TruncationStats,
    pub instances: Vec<InstanceRecord>,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.summary;
        writeln!(
            f,
            "{} split={} variant={} mode={} shots={}",
            s.model, s.split, s.variant, s.mode, s.shots
        )?;
        writeln!(f, "{:>10} {:>10} {:>12} {:>8}", "simple", "moderate", "challenging", "sum")?;
        let ex = &self.ex_by_split;
        writeln!(f, "{:>10.2} {:>10.2} {:>12.2} {:>8.2}", ex.simple, ex.moderate, ex.challenging, ex.sum)?;
        writeln!(f)?;
        writeln!(f, "{}", self.failures)?;
        writeln!(f)?;
        write!(f, "{}", self.truncation)
    }
}

pub struct RunOutputs {
    pub report: RunReport,
    pub report_path: PathBuf,
    pub traces_path: PathBuf,
    pub config_path: PathBuf,
}

struct InstanceResult {
    predicted_sql: String,
    prompt_tokens: usize,
    truncation: Option<TruncationRecord>,
    examples: Vec<i64>,
    trace: InstanceTrace,
}

struct RunContext<'a> {
    config: &'a RunConfig,
    split: &'a BenchmarkSplit,
    pool: Option<&'a ExamplePool>,
    services: &'a Services,
}

impl RunContext<'_> {
    fn predict(&self, instance: &TaskInstance) -> Result<InstanceResult, String> {
        let catalog = self
            .split
            .catalog(&instance.database_id)
            .ok_or_else(|| format!("no catalog for database `{}`", instance.database_id))?;
        let counter: &dyn TokenCounter = self.services.counter.as_ref();
        let completer = self.services.completer.as_ref();
        let seed = derive_seed(self.config.truncation_seed, instance.question_id);

        if self.config.mode != CotMode::None {
            let options = CotOptions {
                restrict_step2: self.config.restrict_step2,
                budget: self.config.budget,
                seed: self.config.truncation_seed,
            };
            let trace = run_cot(instance, catalog, completer, counter, self.config.mode, &options).map_err(|e| e.to_string())?;
            let truncation = merge_step_truncations(&trace);
            let prompt_tokens = trace.steps.iter().map(|s| s.prompt.token_count).max().unwrap_or(0);
            return Ok(InstanceResult {
                predicted_sql: trace.final_sql.clone(),
                prompt_tokens,
                truncation: Some(truncation),
                examples: Vec::new(),
                trace: InstanceTrace::Cot(trace),
            });
        }

        let zero = build_open_prompt_budgeted(instance, catalog, self.config.variant, counter, &self.config.budget, seed)
            .map_err(|e| e.to_string())?;
        let zero_response = completer.complete(&zero).map_err(|e| e.to_string())?;
        let pool = match self.pool {
            Some(pool) if self.config.shots > 0 => pool,
            _ => {
                let sql = extract_sql(&zero_response, CUE).map_err(|e| e.to_string())?;
                return Ok(InstanceResult {
                    predicted_sql: sql,
                    prompt_tokens: zero.token_count,
                    truncation: zero.truncation.clone(),
                    examples: Vec::new(),
                    trace: InstanceTrace::Prompt {
                        question_id: instance.question_id,
                        draft: None,
                        curated: None,
                        prompt: zero,
                        response: zero_response,
                    },
                });
            }
        };
        let draft_sql = extract_sql(&zero_response, CUE).unwrap_or_else(|_| CUE.to_string());
        let triples = score_candidates(instance, catalog, &draft_sql, pool, self.services.embedder.as_ref())
            .map_err(|e| e.to_string())?;
        let curated = select_top_k(&triples, self.config.shots);
        let examples = curated.examples(pool);
        let prompt = build_few_shot_prompt_budgeted(
            instance,
            catalog,
            &examples,
            self.config.variant,
            counter,
            &self.config.budget,
            self.config.temperature,
            seed,
        )
        .map_err(|e| e.to_string())?;
        let response = completer.complete(&prompt).map_err(|e| e.to_string())?;
        let sql = extract_sql(&response, CUE).map_err(|e| e.to_string())?;
        Ok(InstanceResult {
            predicted_sql: sql,
            prompt_tokens: prompt.token_count,
            truncation: prompt.truncation.clone(),
            examples: examples.iter().map(|e| e.instance.question_id).collect(),
            trace: InstanceTrace::Prompt {
                question_id: instance.question_id,
                draft: Some(zero),
                curated: Some(curated),
                prompt,
                response,
            },
        })
    }

    fn run_one(&self, instance: &TaskInstance) -> (InstanceRecord, EvalOutcome, InstanceTrace, Option<TruncationRecord>) {
        let qid = instance.question_id;
        let base = |predicted_sql: String| InstanceRecord {
            question_id: qid,
            database_id: instance.database_id.clone(),
            difficulty: instance.difficulty.as_str().to_string(),
            predicted_sql,
            matched: false,
            error: None,
            label: None,
            examples: Vec::new(),
            prompt_tokens: 0,
            truncated_columns: 0,
        };
        match self.predict(instance) {
            Err(error) => {
                warn!(question_id = qid, %error, "instance failed before execution");
                let mut record = base(String::new());
                record.error = Some(error.clone());
                record.label = Some(ErrorLabel::new(ErrorCategory::SyntaxError, format!("pipeline failure: {error}")));
                let outcome = EvalOutcome::failed(qid, error.clone());
                (record, outcome, InstanceTrace::Failed { question_id: qid, error }, None)
            }
            Ok(result) => {
                let outcome = match self.split.database_file(&instance.database_id) {
                    Some(db) => execute_and_compare(qid, &result.predicted_sql, &instance.gold_sql, db, self.config.exec_timeout()),
                    None => EvalOutcome::failed(qid, format!("no database file for `{}`", instance.database_id)),
                };
                let catalog = self.split.catalog(&instance.database_id).expect("checked in predict");
                let label = classify(&result.predicted_sql, &instance.gold_sql, catalog, &outcome);
                let mut record = base(result.predicted_sql);
                record.matched = outcome.matched;
                record.error = outcome.predicted_error.clone().or_else(|| outcome.gold_error.clone().map(|g| format!("gold: {g}")));
                record.label = label;
                record.examples = result.examples;
                record.prompt_tokens = result.prompt_tokens;
                record.truncated_columns = result.truncation.as_ref().map_or(0, TruncationRecord::total_removed);
                (record, outcome, result.trace, result.truncation)
            }
        }
    }
}

/// Folds the per-step truncation records of a chain-of-thought run into one.
fn merge_step_truncations(trace: &CotTrace) -> TruncationRecord {
    let mut merged = TruncationRecord::default();
    for step in &trace.steps {
        if let Some(record) = &step.prompt.truncation {
            merged.tokens_before = merged.tokens_before.max(record.tokens_before);
            merged.tokens_after = merged.tokens_after.max(record.tokens_after);
            merged.sections.extend(record.sections.iter().cloned());
        }
    }
    merged
}

/// Builds the example pool a few-shot run draws from.
pub fn load_pool(config: &RunConfig, embedder: &dyn Embedder) -> Result<Option<ExamplePool>, PipelineError> {
    if config.shots == 0 {
        return Ok(None);
    }
    let name = config
        .pool_split
        .as_deref()
        .ok_or_else(|| PipelineError::Config("shots > 0 requires pool_split".into()))?;
    let pool_split = load_split(config.pool_root(), name)?;
    Ok(Some(ExamplePool::from_split(&pool_split, config.variant, embedder)?))
}

/// Runs every instance of the configured split and writes `report.json`,
/// `traces.jsonl` and `config.toml` into the output directory.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutputs, PipelineError> {
    let services = Services::from_config(config)?;
    cmd_run_with(config, &services)
}

pub fn cmd_run_with(config: &RunConfig, services: &Services) -> Result<RunOutputs, PipelineError> {
    config.validate()?;
    let split = config.load_split()?;
    let pool = load_pool(config, services.embedder.as_ref())?;
    let context = RunContext {
        config,
        split: &split,
        pool: pool.as_ref(),
        services,
    };
    info!(instances = split.instances.len(), "starting run");
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    let results: Vec<_> = workers.install(|| {
        use rayon::prelude::*;
        split.instances.par_iter().map(|instance| context.run_one(instance)).collect()
    });

    let mut records = Vec::with_capacity(results.len());
    let mut outcomes = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    let mut truncations = Vec::new();
    for (record, outcome, trace, truncation) in results {
        records.push(record);
        outcomes.push(outcome);
        traces.push(trace);
        truncations.extend(truncation);
    }
    let eval = aggregate(outcomes, &split.instances).map_err(|e| PipelineError::Serialize(e.to_string()))?;
    let total = split.instances.len();
    let failures = tabulate(records.iter().filter_map(|r| r.label.as_ref()), total);
    let truncation = TruncationStats::from_records(&truncations, total, config.shots > 0);
    let report = RunReport {
        summary: RunSummary {
            split: split.name.clone(),
            variant: config.variant,
            mode: config.mode,
            shots: config.shots,
            model: config.endpoint.model_id.clone(),
            truncation_seed: config.truncation_seed,
            total_queries: total,
        },
        ex_by_split: eval.ex_by_split,
        counts: eval.counts,
        failures,
        truncation,
        instances: records,
    };

    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let report_path = config.output_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::Serialize(e.to_string()))?;
    fs::write(&report_path, json + "\n").map_err(io_err(&report_path))?;

    let traces_path = config.output_dir.join("traces.jsonl");
    let mut out = BufWriter::new(fs::File::create(&traces_path).map_err(io_err(&traces_path))?);
    for trace in &traces {
        let line = serde_json::to_string(trace).map_err(|e| PipelineError::Serialize(e.to_string()))?;
        writeln!(out, "{line}").map_err(io_err(&traces_path))?;
    }
    out.flush().map_err(io_err(&traces_path))?;

    let config_path = config.output_dir.join("config.toml");
    fs::write(&config_path, config.to_toml()?).map_err(io_err(&config_path))?;
    info!(sum = report.ex_by_split.sum, "run finished");
    Ok(RunOutputs {
        report,
        report_path,
        traces_path,
        config_path,
    })
}

pub fn read_report(path: &Path) -> Result<RunReport, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Serialize(e.to_string()))
}

fn find_instance<'a>(split: &'a BenchmarkSplit, question_id: i64) -> Result<&'a TaskInstance, PipelineError> {
    split
        .instances
        .iter()
        .find(|i| i.question_id == question_id)
        .ok_or(PipelineError::UnknownQuestion(question_id))
}

/// Curated examples for one question. Without `draft_sql` the zero-shot
/// prediction is requested from the completer.
pub fn curate_for(
    config: &RunConfig,
    split: &BenchmarkSplit,
    services: &Services,
    question_id: i64,
    draft_sql: Option<String>,
) -> Result<(CuratedSet, Vec<TaskInstance>), PipelineError> {
    let instance = find_instance(split, question_id)?;
    let catalog = split
        .catalog(&instance.database_id)
        .ok_or_else(|| PipelineError::UnknownDatabase(instance.database_id.clone()))?;
    let pool = load_pool(config, services.embedder.as_ref())?
        .ok_or_else(|| PipelineError::Config("curation needs shots > 0".into()))?;
    let draft = match draft_sql {
        Some(sql) => sql,
        None => {
            let seed = derive_seed(config.truncation_seed, question_id);
            let prompt = build_open_prompt_budgeted(instance, catalog, config.variant, services.counter.as_ref(), &config.budget, seed)?;
            extract_sql(&services.completer.complete(&prompt)?, CUE)?
        }
    };
    let triples = score_candidates(instance, catalog, &draft, &pool, services.embedder.as_ref())?;
    let curated = select_top_k(&triples, config.shots);
    let chosen = curated.selected.iter().map(|t| pool.candidates[t.candidate_index].instance.clone()).collect();
    Ok((curated, chosen))
}

/// The zero-shot or few-shot prompt a run would send for one question.
pub fn build_prompt_for(
    config: &RunConfig,
    split: &BenchmarkSplit,
    services: &Services,
    question_id: i64,
    draft_sql: Option<String>,
) -> Result<PromptBundle, PipelineError> {
    if config.mode != CotMode::None {
        return Err(PipelineError::Config(
            "chain-of-thought prompts depend on model responses; use `run` and inspect traces".into(),
        ));
    }
    let instance = find_instance(split, question_id)?;
    let catalog = split
        .catalog(&instance.database_id)
        .ok_or_else(|| PipelineError::UnknownDatabase(instance.database_id.clone()))?;
    let seed = derive_seed(config.truncation_seed, question_id);
    if config.shots == 0 {
        return Ok(build_open_prompt_budgeted(
            instance,
            catalog,
            config.variant,
            services.counter.as_ref(),
            &config.budget,
            seed,
        )?);
    }
    let (curated, _) = curate_for(config, split, services, question_id, draft_sql)?;
    let pool = load_pool(config, services.embedder.as_ref())?.expect("shots > 0");
    let examples = curated.examples(&pool);
    Ok(build_few_shot_prompt_budgeted(
        instance,
        catalog,
        &examples,
        config.variant,
        services.counter.as_ref(),
        &config.budget,
        config.temperature,
        seed,
    )?)
}
