//! Few-shot example curation.
//!
//! Each pool candidate is scored against the target by the mean of three
//! cosine similarities (question, rendered schema, SQL) and the best `k` are
//! emitted least similar first, so the closest example sits right above the
//! target block.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bench::{BenchmarkSplit, TaskInstance};
use crate::gateway::{Embedder, GatewayError};
use crate::prompt::ExampleBlock;
use crate::schema::{render_catalog, DatabaseCatalog, SchemaVariant};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("vectors of dimension {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedder returned {got} vectors for {expected} texts")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("pool instance {question_id} references unknown database {database_id}")]
    UnknownDatabase { question_id: i64, database_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, CurationError> {
    if a.len() != b.len() {
        return Err(CurationError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CurationError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Text embedded for the database similarity of a catalog.
pub fn schema_text(catalog: &DatabaseCatalog, variant: SchemaVariant) -> String {
    render_catalog(catalog, variant)
}

/// One pool entry with its three embeddings.
#[derive(Debug, Clone)]
pub struct PoolCandidate {
    pub instance: TaskInstance,
    pub catalog: Arc<DatabaseCatalog>,
    pub question_embedding: Vec<f64>,
    pub schema_embedding: Vec<f64>,
    pub sql_embedding: Vec<f64>,
}

/// Candidate examples with cached embeddings.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    pub variant: SchemaVariant,
    pub embedding_model: String,
    pub candidates: Vec<PoolCandidate>,
}

fn embed_checked(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<Vec<f64>>, CurationError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = embedder.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(CurationError::EmbeddingCount {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    Ok(vectors)
}

impl ExamplePool {
    /// Embeds every instance of `split` that has a gold query.
    pub fn from_split(split: &BenchmarkSplit, variant: SchemaVariant, embedder: &dyn Embedder) -> Result<Self, CurationError> {
        let catalogs: BTreeMap<String, Arc<DatabaseCatalog>> = split
            .databases
            .iter()
            .map(|(id, c)| (id.clone(), Arc::new(c.clone())))
            .collect();
        let mut entries = Vec::new();
        for instance in split.instances.iter().filter(|i| !i.gold_sql.trim().is_empty()) {
            let catalog = catalogs
                .get(&instance.database_id)
                .ok_or_else(|| CurationError::UnknownDatabase {
                    question_id: instance.question_id,
                    database_id: instance.database_id.clone(),
                })?;
            entries.push((instance.clone(), Arc::clone(catalog)));
        }
        Self::build(entries, variant, embedder)
    }

    /// Embeds the given instances. Schema texts are embedded once per
    /// database.
    pub fn build(
        entries: Vec<(TaskInstance, Arc<DatabaseCatalog>)>,
        variant: SchemaVariant,
        embedder: &dyn Embedder,
    ) -> Result<Self, CurationError> {
        let questions: Vec<String> = entries.iter().map(|(i, _)| i.question.clone()).collect();
        let sqls: Vec<String> = entries.iter().map(|(i, _)| i.gold_sql.clone()).collect();
        let mut schema_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut schemas = Vec::new();
        for (_, catalog) in &entries {
            schema_index.entry(catalog.database_id.clone()).or_insert_with(|| {
                schemas.push(schema_text(catalog, variant));
                schemas.len() - 1
            });
        }
        let q = embed_checked(embedder, &questions)?;
        let d = embed_checked(embedder, &schemas)?;
        let s = embed_checked(embedder, &sqls)?;
        let candidates = entries
            .into_iter()
            .zip(q.into_iter().zip(s))
            .map(|((instance, catalog), (qe, se))| PoolCandidate {
                schema_embedding: d[schema_index[&catalog.database_id]].clone(),
                instance,
                catalog,
                question_embedding: qe,
                sql_embedding: se,
            })
            .collect();
        let pool = ExamplePool {
            variant,
            embedding_model: embedder.model_id().to_string(),
            candidates,
        };
        pool.check_dimensions()?;
        Ok(pool)
    }

    fn check_dimensions(&self) -> Result<(), CurationError> {
        let Some(first) = self.candidates.first() else { return Ok(()) };
        let dim = first.question_embedding.len();
        for c in &self.candidates {
            for v in [&c.question_embedding, &c.schema_embedding, &c.sql_embedding] {
                if v.len() != dim {
                    return Err(CurationError::DimensionMismatch(dim, v.len()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Similarities of one candidate to the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub candidate_index: usize,
    pub gamma_q: f64,
    pub gamma_d: f64,
    pub gamma_s: f64,
    pub gamma_a: f64,
}

impl SimilarityTriple {
    pub fn new(candidate_index: usize, gamma_q: f64, gamma_d: f64, gamma_s: f64) -> Self {
        SimilarityTriple {
            candidate_index,
            gamma_q,
            gamma_d,
            gamma_s,
            gamma_a: (gamma_q + gamma_d + gamma_s) / 3.0,
        }
    }
}

/// Target-side embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEmbeddings {
    pub question: Vec<f64>,
    pub schema: Vec<f64>,
    pub draft_sql: Vec<f64>,
}

/// Scores every candidate whose database differs from `target_database`.
pub fn score_with_embeddings(
    target_database: &str,
    target: &TargetEmbeddings,
    pool: &ExamplePool,
) -> Result<Vec<SimilarityTriple>, CurationError> {
    pool.candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.instance.database_id != target_database)
        .map(|(i, c)| {
            Ok(SimilarityTriple::new(
                i,
                cosine(&target.question, &c.question_embedding)?,
                cosine(&target.schema, &c.schema_embedding)?,
                cosine(&target.draft_sql, &c.sql_embedding)?,
            ))
        })
        .collect()
}

/// Embeds the target question, its schema (in the pool's variant) and the
/// zero-shot draft query, then scores the cross-domain candidates.
pub fn score_candidates(
    target: &TaskInstance,
    target_catalog: &DatabaseCatalog,
    draft_sql: &str,
    pool: &ExamplePool,
    embedder: &dyn Embedder,
) -> Result<Vec<SimilarityTriple>, CurationError> {
    let texts = vec![
        target.question.clone(),
        schema_text(target_catalog, pool.variant),
        draft_sql.to_string(),
    ];
    let mut vectors = embed_checked(embedder, &texts)?.into_iter();
    let embeddings = TargetEmbeddings {
        question: vectors.next().unwrap_or_default(),
        schema: vectors.next().unwrap_or_default(),
        draft_sql: vectors.next().unwrap_or_default(),
    };
    score_with_embeddings(&target.database_id, &embeddings, pool)
}

/// Selected examples, least similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedSet {
    pub k: usize,
    pub selected: Vec<SimilarityTriple>,
}

impl CuratedSet {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Prompt-ready examples in emission order.
    pub fn examples(&self, pool: &ExamplePool) -> Vec<ExampleBlock> {
        self.selected
            .iter()
            .map(|t| {
                let c = &pool.candidates[t.candidate_index];
                ExampleBlock {
                    instance: c.instance.clone(),
                    catalog: (*c.catalog).clone(),
                    similarity: t.gamma_a,
                }
            })
            .collect()
    }
}

/// Keeps the `k` highest averages (ties to the lower index) and orders them
/// ascending.
pub fn select_top_k(triples: &[SimilarityTriple], k: usize) -> CuratedSet {
    let mut ranked: Vec<SimilarityTriple> = triples.to_vec();
    ranked.sort_by(|a, b| {
        b.gamma_a
            .total_cmp(&a.gamma_a)
            .then(a.candidate_index.cmp(&b.candidate_index))
    });
    ranked.truncate(k);
    ranked.sort_by(|a, b| {
        a.gamma_a
            .total_cmp(&b.gamma_a)
            .then(a.candidate_index.cmp(&b.candidate_index))
    });
    CuratedSet { k, selected: ranked }
}

/// Deterministic bag-of-words embedder for offline use.
///
/// Lowercased word tokens are hashed into `dim - 1` signed buckets; the last
/// component is a small constant so that empty texts still embed.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    dim: usize,
    model_id: String,
}

impl LexicalEmbedder {
    pub fn new(dim: usize) -> Self {
        let dim = dim.max(2);
        LexicalEmbedder {
            dim,
            model_id: format!("lexical-{dim}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.dim - 1] = 1e-3;
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|w| !w.is_empty()) {
            let digest = Sha256::digest(word.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % (self.dim - 1);
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for LexicalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    dim: usize,
    vector: Vec<f64>,
}

/// On-disk embedding cache keyed by embedding model and text.
pub struct CachedEmbedder<E> {
    inner: E,
    path: PathBuf,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    writer: Mutex<Option<File>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let store_err = |reason: String| GatewayError::Store {
            path: path.clone(),
            reason,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| store_err(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| store_err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| store_err(e.to_string()))?;
                if parsed.vector.len() == parsed.dim {
                    entries.entry(parsed.key).or_insert(parsed.vector);
                }
            }
        }
        Ok(CachedEmbedder {
            inner,
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn cache_key(&self, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.model_id().as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn cached(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn append(&self, new: &[(String, Vec<f64>)]) -> Result<(), GatewayError> {
        let store_err = |reason: String| GatewayError::Store {
            path: self.path.clone(),
            reason,
        };
        let mut writer = self.writer.lock().expect("cache writer lock");
        let mut entries = self.entries.write().expect("cache lock");
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
        let file = writer.as_mut().expect("opened above");
        for (key, vector) in new {
            if entries.contains_key(key) {
                continue;
            }
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                dim: vector.len(),
                vector: vector.clone(),
            })
            .map_err(|e| store_err(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| store_err(e.to_string()))?;
            entries.insert(key.clone(), vector.clone());
        }
        file.flush().map_err(|e| store_err(e.to_string()))
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let keys: Vec<String> = texts.iter().map(|t| self.cache_key(t)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let entries = self.entries.read().expect("cache lock");
            let mut queued = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if !entries.contains_key(key) && queued.insert(key.clone()) {
                    missing.push(i);
                }
            }
        }
        if !missing.is_empty() {
            let wanted: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fetched = self.inner.embed(&wanted)?;
            if fetched.len() != wanted.len() {
                return Err(GatewayError::MalformedResponse(format!(
                    "{} embeddings for {} inputs",
                    fetched.len(),
                    wanted.len()
                )));
            }
            let new: Vec<(String, Vec<f64>)> = missing.iter().map(|&i| keys[i].clone()).zip(fetched).collect();
            self.append(&new)?;
        }
        let entries = self.entries.read().expect("cache lock");
        Ok(keys.iter().map(|k| entries[k].clone()).collect())
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.9746).abs() < 1e-4);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(CurationError::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(CurationError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn average_of_three() {
        let t = SimilarityTriple::new(0, 0.9, 0.6, 0.3);
        assert!((t.gamma_a - 0.6).abs() < 1e-12);
    }

    #[test]
    fn top_k_examples() {
        let triples: Vec<SimilarityTriple> = [0.2, 0.9, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &g)| SimilarityTriple::new(i, g, g, g))
            .collect();
        let set = select_top_k(&triples, 2);
        let idx: Vec<usize> = set.selected.iter().map(|t| t.candidate_index).collect();
        assert_eq!(idx, vec![2, 1]);
        assert!(select_top_k(&triples, 0).is_empty());
        assert_eq!(select_top_k(&triples, 10).len(), 3);

        let ties: Vec<SimilarityTriple> = (0..4).map(|i| SimilarityTriple::new(i, 0.5, 0.5, 0.5)).collect();
        let idx: Vec<usize> = select_top_k(&ties, 2).selected.iter().map(|t| t.candidate_index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 1..16),
            seed in proptest::collection::vec(-10.0f64..10.0, 16),
        ) {
            let b: Vec<f64> = seed[..a.len()].to_vec();
            if let (Ok(x), Ok(y)) = (cosine(&a, &b), cosine(&b, &a)) {
                prop_assert_eq!(x, y);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn top_k_matches_full_sort(values in proptest::collection::vec(0u8..20, 0..200), k in 0usize..30) {
            let triples: Vec<SimilarityTriple> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| SimilarityTriple::new(i, v as f64 / 20.0, 0.0, 0.0))
                .collect();
            let mut oracle: Vec<(usize, f64)> = triples.iter().map(|t| (t.candidate_index, t.gamma_a)).collect();
            oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            oracle.truncate(k);
            oracle.reverse();
            oracle.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let got: Vec<usize> = select_top_k(&triples, k).selected.iter().map(|t| t.candidate_index).collect();
            let want: Vec<usize> = oracle.iter().map(|p| p.0).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn lexical_embedder_is_deterministic() {
        let e = LexicalEmbedder::new(64);
        assert_eq!(e.embed_one("Movie titles"), e.embed_one("movie TITLES"));
        assert!((cosine(&e.embed_one("a b"), &e.embed_one("b a")).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&e.embed_one(""), &e.embed_one("")).is_ok());
    }

    struct Counting {
        inner: LexicalEmbedder,
        texts: AtomicUsize,
    }

    impl Embedder for Counting {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
        fn model_id(&self) -> &str {
            self.inner.model_id()
        }
    }

    #[test]
    fn cache_avoids_refetching() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let make = || Counting {
            inner: LexicalEmbedder::new(8),
            texts: AtomicUsize::new(0),
        };
        let cached = CachedEmbedder::open(make(), &path).unwrap();
        let texts: Vec<String> = vec!["a".into(), "b".into(), "a".into()];
        let first = cached.embed(&texts).unwrap();
        assert_eq!(cached.inner().texts.load(Ordering::SeqCst), 2);
        assert_eq!(first[0], first[2]);
        cached.embed(&texts).unwrap();
        assert_eq!(cached.inner().texts.load(Ordering::SeqCst), 2);

        let reopened = CachedEmbedder::open(make(), &path).unwrap();
        assert_eq!(reopened.cached(), 2);
        assert_eq!(reopened.embed(&texts).unwrap(), first);
        assert_eq!(reopened.inner().texts.load(Ordering::SeqCst), 0);
    }
}
