//! Completion and embedding clients.
//!
//! [`LlmGateway`] talks to an HTTP server speaking the common open-model
//! JSON convention (`/v1/completions`, `/v1/embeddings`) and can record
//! every response into a JSONL replay store, or serve responses purely from
//! that store for offline, deterministic runs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{PromptBundle, CUE};
use crate::schema::single_line;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint {url} unreachable: {reason}")]
    EndpointUnreachable { url: String, reason: String },
    #[error("endpoint {url} answered HTTP {status}: {body}")]
    HttpStatusError { url: String, status: u16, body: String },
    #[error("replay store has no entry for prompt hash {0}")]
    ReplayMiss(String),
    #[error("server returned embeddings of differing dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding request with no input texts")]
    EmptyInput,
    #[error("empty model response")]
    EmptyResponse,
    #[error("malformed server response: {0}")]
    MalformedResponse(String),
    #[error("replay mode needs a replay store")]
    MissingStore,
    #[error("replay store {path}: {reason}")]
    Store { path: PathBuf, reason: String },
}

fn default_temperature() -> f64 {
    0.001
}
fn default_max_tokens() -> u32 {
    200
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_completion_path() -> String {
    "/v1/completions".into()
}
fn default_chat_path() -> String {
    "/v1/chat/completions".into()
}
fn default_embedding_path() -> String {
    "/v1/embeddings".into()
}
fn default_batch() -> usize {
    32
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

/// Where and how to reach a model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub sampling_temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_response_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Send chat-message requests instead of raw completions.
    #[serde(default)]
    pub chat_style: bool,
    #[serde(default = "default_completion_path")]
    pub completion_path: String,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    #[serde(default = "default_embedding_path")]
    pub embedding_path: String,
    /// Largest number of texts sent in one embedding request.
    #[serde(default = "default_batch")]
    pub max_batch: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl LlmEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        LlmEndpoint {
            base_url: base_url.into(),
            model_id: model_id.into(),
            sampling_temperature: default_temperature(),
            max_response_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            chat_style: false,
            completion_path: default_completion_path(),
            chat_path: default_chat_path(),
            embedding_path: default_embedding_path(),
            max_batch: default_batch(),
            max_in_flight: default_in_flight(),
            max_attempts: default_retries(),
            retry_backoff_ms: default_backoff_ms(),
            api_key: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Produces a completion for a prompt.
pub trait Completer: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError>;
}

/// Produces one embedding vector per input text.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
    fn model_id(&self) -> &str;
}

/// Digest identifying a completion request.
pub fn prompt_hash(model_id: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Digest identifying an embedding request for one text.
pub fn embedding_hash(model_id: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"embedding\0");
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

/// One line of a replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub hash: String,
    pub model: String,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Append-only JSONL map from request hash to recorded response.
#[derive(Debug)]
pub struct ReplayStore {
    path: PathBuf,
    records: RwLock<HashMap<String, CompletionRecord>>,
    writer: Mutex<Option<File>>,
}

impl ReplayStore {
    /// Opens a store, loading any existing records. The file is created on
    /// first write.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let store_err = |reason: String| GatewayError::Store {
            path: path.clone(),
            reason,
        };
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| store_err(e.to_string()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| store_err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CompletionRecord =
                    serde_json::from_str(&line).map_err(|e| store_err(format!("line {}: {e}", n + 1)))?;
                records.entry(record.hash.clone()).or_insert(record);
            }
        }
        Ok(ReplayStore {
            path,
            records: RwLock::new(records),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, hash: &str) -> Option<CompletionRecord> {
        self.records.read().expect("replay store lock").get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("replay store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a record unless its hash is already present. Returns whether
    /// it was written.
    pub fn insert(&self, record: CompletionRecord) -> Result<bool, GatewayError> {
        let mut writer = self.writer.lock().expect("replay writer lock");
        {
            let records = self.records.read().expect("replay store lock");
            if records.contains_key(&record.hash) {
                return Ok(false);
            }
        }
        let store_err = |reason: String| GatewayError::Store {
            path: self.path.clone(),
            reason,
        };
        if writer.is_none() {
            if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| store_err(e.to_string()))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| store_err(e.to_string()))?;
            *writer = Some(file);
        }
        let line = serde_json::to_string(&record).map_err(|e| store_err(e.to_string()))?;
        let file = writer.as_mut().expect("writer opened above");
        writeln!(file, "{line}").map_err(|e| store_err(e.to_string()))?;
        file.flush().map_err(|e| store_err(e.to_string()))?;
        self.records
            .write()
            .expect("replay store lock")
            .insert(record.hash.clone(), record);
        Ok(true)
    }

    /// Adds a completion keyed by the prompt it answers.
    pub fn insert_completion(&self, model_id: &str, prompt: &str, response: &str) -> Result<bool, GatewayError> {
        self.insert(CompletionRecord {
            hash: prompt_hash(model_id, prompt),
            model: model_id.to_string(),
            response: response.to_string(),
            prompt_tokens: 0,
            completion_tokens: 0,
            embedding: None,
        })
    }

    pub fn insert_embedding(&self, model_id: &str, text: &str, vector: Vec<f64>) -> Result<bool, GatewayError> {
        self.insert(CompletionRecord {
            hash: embedding_hash(model_id, text),
            model: model_id.to_string(),
            response: String::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            embedding: Some(vector),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    /// Always call the server.
    #[default]
    Live,
    /// Serve from the store when possible, otherwise call and record.
    Record,
    /// Serve only from the store.
    Replay,
}

/// Counting semaphore capping concurrent wire requests.
#[derive(Debug)]
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(slots: usize) -> Self {
        InFlight {
            slots: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().expect("in-flight lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("in-flight lock");
        }
        *slots -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("in-flight lock") += 1;
        self.0.freed.notify_one();
    }
}

/// Usage reported by a completion call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Completion and embedding client with optional record/replay.
#[derive(Debug)]
pub struct LlmGateway {
    endpoint: LlmEndpoint,
    mode: GatewayMode,
    store: Option<Arc<ReplayStore>>,
    agent: ureq::Agent,
    in_flight: InFlight,
    wire_calls: AtomicUsize,
}

impl LlmGateway {
    pub fn new(endpoint: LlmEndpoint, mode: GatewayMode, store: Option<Arc<ReplayStore>>) -> Result<Self, GatewayError> {
        if mode != GatewayMode::Live && store.is_none() {
            return Err(GatewayError::MissingStore);
        }
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(endpoint.timeout())
            .timeout(endpoint.timeout())
            .build();
        Ok(LlmGateway {
            in_flight: InFlight::new(endpoint.max_in_flight),
            endpoint,
            mode,
            store,
            agent,
            wire_calls: AtomicUsize::new(0),
        })
    }

    /// Gateway that answers only from `store`.
    pub fn replay(model_id: &str, store: Arc<ReplayStore>) -> Self {
        Self::new(LlmEndpoint::new("http://replay.invalid", model_id), GatewayMode::Replay, Some(store))
            .expect("store supplied")
    }

    pub fn endpoint(&self) -> &LlmEndpoint {
        &self.endpoint
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    /// Number of HTTP requests issued so far (retries included).
    pub fn wire_calls(&self) -> usize {
        self.wire_calls.load(Ordering::SeqCst)
    }

    pub fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        let hash = prompt_hash(&self.endpoint.model_id, prompt);
        if self.mode != GatewayMode::Live {
            let store = self.store.as_ref().ok_or(GatewayError::MissingStore)?;
            if let Some(record) = store.get(&hash) {
                return Ok(record.response);
            }
            if self.mode == GatewayMode::Replay {
                return Err(GatewayError::ReplayMiss(hash));
            }
        }
        let completion = self.complete_live(prompt)?;
        if let (GatewayMode::Record, Some(store)) = (self.mode, &self.store) {
            store.insert(CompletionRecord {
                hash,
                model: self.endpoint.model_id.clone(),
                response: completion.text.clone(),
                prompt_tokens: completion.prompt_tokens,
                completion_tokens: completion.completion_tokens,
                embedding: None,
            })?;
        }
        Ok(completion.text)
    }

    fn complete_live(&self, prompt: &str) -> Result<Completion, GatewayError> {
        let ep = &self.endpoint;
        let (path, body) = if ep.chat_style {
            (
                &ep.chat_path,
                json!({
                    "model": ep.model_id,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": ep.sampling_temperature,
                    "max_tokens": ep.max_response_tokens,
                }),
            )
        } else {
            (
                &ep.completion_path,
                json!({
                    "model": ep.model_id,
                    "prompt": prompt,
                    "temperature": ep.sampling_temperature,
                    "max_tokens": ep.max_response_tokens,
                }),
            )
        };
        let response = self.post(path, &body)?;
        let choice = response
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let text = if ep.chat_style {
            choice.pointer("/message/content").and_then(|v| v.as_str())
        } else {
            choice.get("text").and_then(|v| v.as_str())
        }
        .ok_or_else(|| GatewayError::MalformedResponse("choice without text".into()))?;
        let usage = |key: &str| response.pointer(&format!("/usage/{key}")).and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(Completion {
            text: text.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }

    fn embed_live(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.endpoint.max_batch.max(1)) {
            let body = json!({ "model": self.endpoint.model_id, "input": chunk });
            let response = self.post(&self.endpoint.embedding_path, &body)?;
            let data = response
                .get("data")
                .and_then(|d| d.as_array())
                .ok_or_else(|| GatewayError::MalformedResponse("no data array".into()))?;
            let mut rows: Vec<(u64, Vec<f64>)> = data
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let index = item.get("index").and_then(|v| v.as_u64()).unwrap_or(i as u64);
                    let vector = item
                        .get("embedding")
                        .and_then(|v| v.as_array())
                        .ok_or_else(|| GatewayError::MalformedResponse("item without embedding".into()))?
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| GatewayError::MalformedResponse("non-numeric embedding".into())))
                        .collect::<Result<Vec<f64>, _>>()?;
                    Ok((index, vector))
                })
                .collect::<Result<_, GatewayError>>()?;
            if rows.len() != chunk.len() {
                return Err(GatewayError::MalformedResponse(format!(
                    "{} embeddings for {} inputs",
                    rows.len(),
                    chunk.len()
                )));
            }
            rows.sort_by_key(|(index, _)| *index);
            out.extend(rows.into_iter().map(|(_, v)| v));
        }
        check_dimensions(&out)?;
        Ok(out)
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let url = self.endpoint.url(path);
        let _slot = self.in_flight.acquire();
        let attempts = self.endpoint.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.endpoint.retry_backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.wire_calls.fetch_add(1, Ordering::SeqCst);
            let mut request = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &self.endpoint.api_key {
                request = request.set("Authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body.clone()) {
                Ok(response) => {
                    return response
                        .into_json::<serde_json::Value>()
                        .map_err(|e| GatewayError::MalformedResponse(e.to_string()));
                }
                Err(ureq::Error::Status(status, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    let err = GatewayError::HttpStatusError {
                        url: url.clone(),
                        status,
                        body,
                    };
                    if status == 429 || status >= 500 {
                        tracing::debug!(attempt, status, "transient HTTP failure");
                        last_err = Some(err);
                        continue;
                    }
                    return Err(err);
                }
                Err(ureq::Error::Transport(transport)) => {
                    tracing::debug!(attempt, %transport, "transport failure");
                    last_err = Some(GatewayError::EndpointUnreachable {
                        url: url.clone(),
                        reason: transport.to_string(),
                    });
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

fn check_dimensions(vectors: &[Vec<f64>]) -> Result<(), GatewayError> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(GatewayError::DimensionMismatch(first.len(), bad.len()));
        }
    }
    Ok(())
}

impl Completer for LlmGateway {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        self.complete_text(&prompt.text)
    }
}

impl Embedder for LlmGateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let model = &self.endpoint.model_id;
        if self.mode == GatewayMode::Live {
            return self.embed_live(texts);
        }
        let store = self.store.as_ref().ok_or(GatewayError::MissingStore)?;
        let mut out: Vec<Option<Vec<f64>>> = texts
            .iter()
            .map(|t| store.get(&embedding_hash(model, t)).and_then(|r| r.embedding))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            if self.mode == GatewayMode::Replay {
                return Err(GatewayError::ReplayMiss(embedding_hash(model, &texts[missing[0]])));
            }
            let wanted: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fetched = self.embed_live(&wanted)?;
            for (&i, vector) in missing.iter().zip(fetched) {
                store.insert_embedding(model, &texts[i], vector.clone())?;
                out[i] = Some(vector);
            }
        }
        let out: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled above")).collect();
        check_dimensions(&out)?;
        Ok(out)
    }

    fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }
}

/// Keeps only the first SQL statement of a model response.
///
/// Markdown fences are stripped, the text is cut at the first terminator
/// (semicolon outside a string literal, blank line, or fence), whitespace is
/// collapsed, and the cue is prepended unless the statement already starts
/// with it.
pub fn extract_sql(raw: &str, cue: &str) -> Result<String, GatewayError> {
    let mut text = raw;
    if let Some(fence) = raw.find("```") {
        if raw[..fence].trim().is_empty() {
            let after = &raw[fence + 3..];
            let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
            let header = after[..body_start].trim();
            // a fence followed by code on the same line has no language tag
            let body = if header.is_empty() || header.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
                &after[body_start..]
            } else {
                after
            };
            text = body.find("```").map_or(body, |close| &body[..close]);
        } else {
            text = &raw[..fence];
        }
    }
    let text = cut_at_terminator(text);
    let statement = single_line(text);
    if statement.is_empty() {
        return Err(GatewayError::EmptyResponse);
    }
    let starts_with_cue = statement
        .get(..cue.len())
        .map_or(false, |head| head.eq_ignore_ascii_case(cue))
        && statement[cue.len()..]
            .chars()
            .next()
            .map_or(true, |c| !(c.is_alphanumeric() || c == '_'));
    if starts_with_cue {
        Ok(format!("{cue}{}", &statement[cue.len()..]))
    } else {
        Ok(format!("{cue} {statement}"))
    }
}

/// Default cue variant of [`extract_sql`].
pub fn extract_select(raw: &str) -> Result<String, GatewayError> {
    extract_sql(raw, CUE)
}

fn cut_at_terminator(text: &str) -> &str {
    let bytes = text.as_bytes();
    let mut in_quote: Option<u8> = None;
    let mut line_has_content = true;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match in_quote {
            Some(q) => {
                if b == q {
                    in_quote = None;
                }
            }
            None => match b {
                b'\'' | b'"' | b'`' => {
                    in_quote = Some(b);
                    line_has_content = true;
                }
                b';' => return &text[..i],
                b'\n' => {
                    if !line_has_content && text[..i].trim().len() > 0 {
                        return &text[..i];
                    }
                    line_has_content = false;
                }
                b' ' | b'\t' | b'\r' => {}
                _ => line_has_content = true,
            },
        }
        i += 1;
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpListener;
    use std::sync::Mutex as StdMutex;

    #[test]
    fn extract_examples() {
        assert_eq!(extract_select(" movie_title FROM movies;").unwrap(), "SELECT movie_title FROM movies");
        assert_eq!(
            extract_select(" a FROM t\n\nThis query selects a from t.").unwrap(),
            "SELECT a FROM t"
        );
        assert_eq!(extract_select("```sql\nSELECT 1;\n```").unwrap(), "SELECT 1");
        assert_eq!(extract_select(" a\n  FROM t WHERE x = 'a;b'; more").unwrap(), "SELECT a FROM t WHERE x = 'a;b'");
        assert_eq!(extract_select(" a FROM t\n```\nexplanation").unwrap(), "SELECT a FROM t");
        assert_eq!(
            extract_select("```sql\nselect 1\n```\n```sql\nSELECT 2\n```").unwrap(),
            "SELECT 1"
        );
        assert!(matches!(extract_select("   \n"), Err(GatewayError::EmptyResponse)));
        assert!(matches!(extract_select(";"), Err(GatewayError::EmptyResponse)));
    }

    #[test]
    fn extract_keeps_words_starting_with_cue() {
        assert_eq!(extract_select(" SELECTED FROM t").unwrap(), "SELECT SELECTED FROM t");
    }

    proptest::proptest! {
        #[test]
        fn extracted_sql_is_single_line_select(raw in "[ -~\n]{0,80}") {
            if let Ok(sql) = extract_select(&raw) {
                proptest::prop_assert!(sql.starts_with("SELECT"));
                proptest::prop_assert!(!sql.contains('\n'));
            }
        }
    }

    #[test]
    fn replay_store_roundtrip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Arc::new(ReplayStore::open(&path).unwrap());
        assert!(store.insert_completion("m", "PROMPT SELECT", "movie_title FROM movies").unwrap());
        assert!(!store.insert_completion("m", "PROMPT SELECT", "other").unwrap());
        let gateway = LlmGateway::replay("m", store);
        assert_eq!(gateway.complete_text("PROMPT SELECT").unwrap(), "movie_title FROM movies");
        assert!(matches!(gateway.complete_text("unknown"), Err(GatewayError::ReplayMiss(_))));

        let reopened = ReplayStore::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        let line = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for key in ["hash", "model", "response", "prompt_tokens", "completion_tokens"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn replay_embeddings_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReplayStore::open(dir.path().join("s.jsonl")).unwrap());
        store.insert_embedding("e", "a", vec![1.0, 0.0]).unwrap();
        store.insert_embedding("e", "b", vec![0.0, 1.0]).unwrap();
        let gateway = LlmGateway::replay("e", store);
        let v = gateway.embed(&["b".to_string(), "a".to_string()]).unwrap();
        assert_eq!(v, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(gateway.embed(&[]), Err(GatewayError::EmptyInput)));
    }

    #[test]
    fn replay_mode_requires_store() {
        assert!(matches!(
            LlmGateway::new(LlmEndpoint::new("http://x", "m"), GatewayMode::Replay, None),
            Err(GatewayError::MissingStore)
        ));
    }

    /// Minimal HTTP server answering each request with `respond(body)`.
    fn serve<F>(respond: F) -> (String, Arc<StdMutex<Vec<serde_json::Value>>>)
    where
        F: Fn(&serde_json::Value) -> (u16, serde_json::Value) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(StdMutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let (head_end, content_length) = loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break (None, 0);
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        let head = String::from_utf8_lossy(&buf[..pos]).to_lowercase();
                        let len = head
                            .lines()
                            .find_map(|l| l.strip_prefix("content-length:").map(|v| v.trim().parse().unwrap_or(0)))
                            .unwrap_or(0);
                        break (Some(pos + 4), len);
                    }
                };
                let Some(start) = head_end else { continue };
                while buf.len() < start + content_length {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
                let body: serde_json::Value =
                    serde_json::from_slice(&buf[start..start + content_length]).unwrap_or(serde_json::Value::Null);
                log.lock().unwrap().push(body.clone());
                let (status, reply) = respond(&body);
                let payload = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        (format!("http://{addr}"), seen)
    }

    fn fast_endpoint(url: &str) -> LlmEndpoint {
        let mut ep = LlmEndpoint::new(url, "test-model");
        ep.retry_backoff_ms = 1;
        ep.timeout_ms = 2_000;
        ep
    }

    #[test]
    fn wire_request_carries_sampling_settings() {
        let (url, seen) = serve(|_| (200, json!({"choices": [{"text": " 1;"}], "usage": {"prompt_tokens": 3, "completion_tokens": 2}})));
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Live, None).unwrap();
        assert_eq!(gateway.complete_text("SELECT").unwrap(), " 1;");
        let body = seen.lock().unwrap()[0].clone();
        assert_eq!(body["temperature"], json!(0.001));
        assert_eq!(body["max_tokens"], json!(200));
        assert_eq!(body["model"], json!("test-model"));
        assert_eq!(body["prompt"], json!("SELECT"));
    }

    #[test]
    fn chat_style_wraps_prompt() {
        let (url, seen) = serve(|_| (200, json!({"choices": [{"message": {"role": "assistant", "content": "x"}}]})));
        let mut ep = fast_endpoint(&url);
        ep.chat_style = true;
        let gateway = LlmGateway::new(ep, GatewayMode::Live, None).unwrap();
        assert_eq!(gateway.complete_text("hi").unwrap(), "x");
        assert_eq!(seen.lock().unwrap()[0]["messages"][0]["content"], json!("hi"));
    }

    #[test]
    fn record_mode_calls_wire_once() {
        let (url, _) = serve(|_| (200, json!({"choices": [{"text": "a FROM t"}]})));
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReplayStore::open(dir.path().join("r.jsonl")).unwrap());
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Record, Some(store.clone())).unwrap();
        assert_eq!(gateway.complete_text("p").unwrap(), "a FROM t");
        assert_eq!(gateway.complete_text("p").unwrap(), "a FROM t");
        assert_eq!(gateway.wire_calls(), 1);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn transient_errors_are_retried_then_surface() {
        let (url, seen) = serve(|_| (503, json!({"error": "busy"})));
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Live, None).unwrap();
        match gateway.complete_text("p") {
            Err(GatewayError::HttpStatusError { status: 503, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(seen.lock().unwrap().len(), 3);

        let (url, seen) = serve(|_| (400, json!({"error": "bad"})));
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Live, None).unwrap();
        assert!(matches!(gateway.complete_text("p"), Err(GatewayError::HttpStatusError { status: 400, .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Live, None).unwrap();
        assert!(matches!(gateway.complete_text("p"), Err(GatewayError::EndpointUnreachable { .. })));
    }

    #[test]
    fn embeddings_are_chunked_and_ordered() {
        let (url, seen) = serve(|body| {
            let inputs = body["input"].as_array().cloned().unwrap_or_default();
            // answer in reverse order to exercise index sorting
            let data: Vec<serde_json::Value> = inputs
                .iter()
                .enumerate()
                .rev()
                .map(|(i, text)| {
                    let n: f64 = text.as_str().unwrap().trim_start_matches('t').parse().unwrap();
                    json!({"index": i, "embedding": [n, 1.0]})
                })
                .collect();
            (200, json!({ "data": data }))
        });
        let mut ep = fast_endpoint(&url);
        ep.max_batch = 16;
        let gateway = LlmGateway::new(ep, GatewayMode::Live, None).unwrap();
        let texts: Vec<String> = (0..100).map(|i| format!("t{i}")).collect();
        let vectors = gateway.embed(&texts).unwrap();
        assert_eq!(vectors.len(), 100);
        for (i, v) in vectors.iter().enumerate() {
            assert_eq!(v[0], i as f64);
        }
        let sizes: Vec<usize> = seen.lock().unwrap().iter().map(|b| b["input"].as_array().unwrap().len()).collect();
        assert_eq!(sizes, vec![16, 16, 16, 16, 16, 16, 4]);
    }

    #[test]
    fn ragged_embeddings_are_rejected() {
        let (url, _) = serve(|_| (200, json!({"data": [{"index": 0, "embedding": [1.0]}, {"index": 1, "embedding": [1.0, 2.0]}]})));
        let gateway = LlmGateway::new(fast_endpoint(&url), GatewayMode::Live, None).unwrap();
        assert!(matches!(
            gateway.embed(&["a".into(), "b".into()]),
            Err(GatewayError::DimensionMismatch(1, 2))
        ));
    }
}
