//! Loading BIRD-format benchmark splits.
//!
//! Expected layout under a benchmark root:
//!
//! ```text
//! <root>/<split>.json
//! <root>/databases/<db_id>/<db_id>.sqlite
//! <root>/databases/<db_id>/database_description/<table>.csv
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{single_line, ColumnSpec, ColumnType, DatabaseCatalog, ForeignKey, TableSpec, MAX_SAMPLE_VALUES};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("question {question_id} references database `{database_id}` but {path} does not exist")]
    MissingDatabase {
        question_id: i64,
        database_id: String,
        path: PathBuf,
    },
    #[error("record {index} in {file}: {reason}")]
    MalformedRecord {
        file: PathBuf,
        index: usize,
        reason: String,
    },
    #[error("cannot decode description metadata {path}: {reason}")]
    MetadataDecodeError { path: PathBuf, reason: String },
    #[error("{path} is not a readable SQLite database: {reason}")]
    NotADatabase { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    #[default]
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenging];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(Difficulty::Simple),
            "moderate" => Ok(Difficulty::Moderate),
            "challenging" => Ok(Difficulty::Challenging),
            other => Err(format!("unknown difficulty `{other}`")),
        }
    }
}

/// One benchmark question with its gold query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub question_id: i64,
    pub question: String,
    pub external_knowledge: String,
    pub gold_sql: String,
    pub database_id: String,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSplit {
    pub name: String,
    pub instances: Vec<TaskInstance>,
    pub databases: BTreeMap<String, DatabaseCatalog>,
    #[serde(skip)]
    pub database_files: BTreeMap<String, PathBuf>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl BenchmarkSplit {
    pub fn catalog(&self, database_id: &str) -> Option<&DatabaseCatalog> {
        self.databases.get(database_id)
    }

    pub fn database_file(&self, database_id: &str) -> Option<&Path> {
        self.database_files.get(database_id).map(PathBuf::as_path)
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    question_id: Option<i64>,
    question: Option<String>,
    evidence: Option<String>,
    #[serde(rename = "SQL")]
    sql: Option<String>,
    db_id: Option<String>,
    difficulty: Option<String>,
}

pub fn database_dir(root: &Path, database_id: &str) -> PathBuf {
    root.join("databases").join(database_id)
}

pub fn database_file(root: &Path, database_id: &str) -> PathBuf {
    database_dir(root, database_id).join(format!("{database_id}.sqlite"))
}

/// Options controlling catalog introspection.
#[derive(Debug, Clone, Copy)]
pub struct IntrospectOptions {
    /// Wall-clock limit for each distinct-value probe.
    pub probe_timeout: Duration,
}

impl Default for IntrospectOptions {
    fn default() -> Self {
        IntrospectOptions {
            probe_timeout: Duration::from_secs(10),
        }
    }
}

/// Parses the question file of a split without touching any database.
pub fn read_questions(path: &Path) -> Result<Vec<TaskInstance>, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Vec<serde_json::Value> =
        serde_json::from_slice(&bytes).map_err(|e| IngestError::MalformedRecord {
            file: path.to_path_buf(),
            index: 0,
            reason: format!("not a JSON array of records: {e}"),
        })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, value)| {
            let malformed = |reason: String| IngestError::MalformedRecord {
                file: path.to_path_buf(),
                index,
                reason,
            };
            let record: RawRecord = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            let question = record
                .question
                .filter(|q| !q.trim().is_empty())
                .ok_or_else(|| malformed("missing or empty `question`".into()))?;
            let gold_sql = record
                .sql
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| malformed("missing or empty `SQL`".into()))?;
            let database_id = record
                .db_id
                .filter(|d| !d.trim().is_empty())
                .ok_or_else(|| malformed("missing `db_id`".into()))?;
            let difficulty = match record.difficulty {
                Some(label) => label.parse().map_err(malformed)?,
                None => Difficulty::Simple,
            };
            Ok(TaskInstance {
                question_id: record.question_id.unwrap_or(index as i64),
                question: question.trim().to_string(),
                external_knowledge: record.evidence.map(|e| e.trim().to_string()).unwrap_or_default(),
                gold_sql: gold_sql.trim().to_string(),
                database_id,
                difficulty,
            })
        })
        .collect()
}

/// Loads `<root>/<split>.json` and introspects every database it references.
pub fn load_split(root: &Path, split_name: &str) -> Result<BenchmarkSplit, IngestError> {
    load_split_with(root, split_name, IntrospectOptions::default())
}

pub fn load_split_with(
    root: &Path,
    split_name: &str,
    options: IntrospectOptions,
) -> Result<BenchmarkSplit, IngestError> {
    let question_file = root.join(format!("{split_name}.json"));
    let instances = read_questions(&question_file)?;

    let mut database_ids: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for instance in &instances {
        if seen.insert(instance.database_id.clone()) {
            let path = database_file(root, &instance.database_id);
            if !path.is_file() {
                return Err(IngestError::MissingDatabase {
                    question_id: instance.question_id,
                    database_id: instance.database_id.clone(),
                    path,
                });
            }
            database_ids.push(instance.database_id.clone());
        }
    }

    let loaded: Vec<(String, PathBuf, DatabaseCatalog, Vec<String>)> = database_ids
        .par_iter()
        .map(|id| {
            let path = database_file(root, id);
            let desc_dir = database_dir(root, id).join("database_description");
            let descriptions = if desc_dir.is_dir() {
                Some(load_descriptions(&desc_dir)?)
            } else {
                None
            };
            let (catalog, warnings) = introspect_database_with(&path, id, descriptions.as_ref(), options)?;
            Ok((id.clone(), path, catalog, warnings))
        })
        .collect::<Result<_, IngestError>>()?;

    let mut split = BenchmarkSplit {
        name: split_name.to_string(),
        instances,
        databases: BTreeMap::new(),
        database_files: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for (id, path, catalog, warnings) in loaded {
        split.warnings.extend(warnings);
        split.databases.insert(id.clone(), catalog);
        split.database_files.insert(id, path);
    }
    for warning in &split.warnings {
        tracing::warn!("{warning}");
    }
    Ok(split)
}

/// Column descriptions keyed by lowercase table name, then lowercase column name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableDescriptions {
    tables: HashMap<String, HashMap<String, String>>,
}

impl TableDescriptions {
    pub fn insert(&mut self, table: &str, column: &str, description: &str) {
        let text = single_line(description);
        if text.is_empty() {
            return;
        }
        self.tables
            .entry(table.to_lowercase())
            .or_default()
            .insert(column.trim().to_lowercase(), text);
    }

    pub fn get(&self, table: &str, column: &str) -> Option<&str> {
        self.tables
            .get(&table.to_lowercase())
            .and_then(|cols| cols.get(&column.to_lowercase()))
            .map(String::as_str)
    }
}

/// Reads every `<table>.csv` in a description directory.
///
/// Bytes that are not valid UTF-8 are replaced rather than rejected.
pub fn load_descriptions(dir: &Path) -> Result<TableDescriptions, IngestError> {
    let mut out = TableDescriptions::default();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x.eq_ignore_ascii_case("csv")))
        .collect();
    entries.sort();
    for path in entries {
        let table = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        let bytes = fs::read(&path).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let text = text.trim_start_matches('\u{feff}');
        let decode_err = |reason: String| IngestError::MetadataDecodeError {
            path: path.clone(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| decode_err(e.to_string()))?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let name_idx = find("original_column_name").ok_or_else(|| decode_err("no original_column_name header".into()))?;
        let desc_idx = find("column_description").ok_or_else(|| decode_err("no column_description header".into()))?;
        for row in reader.records() {
            let row = row.map_err(|e| decode_err(e.to_string()))?;
            if let (Some(name), Some(desc)) = (row.get(name_idx), row.get(desc_idx)) {
                out.insert(&table, name, desc);
            }
        }
    }
    Ok(out)
}

pub fn introspect_database(
    sqlite_file: &Path,
    descriptions: Option<&TableDescriptions>,
) -> Result<(DatabaseCatalog, Vec<String>), IngestError> {
    let id = sqlite_file
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    introspect_database_with(sqlite_file, &id, descriptions, IntrospectOptions::default())
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Builds a catalog from a SQLite file, returning it with any warnings.
pub fn introspect_database_with(
    sqlite_file: &Path,
    database_id: &str,
    descriptions: Option<&TableDescriptions>,
    options: IntrospectOptions,
) -> Result<(DatabaseCatalog, Vec<String>), IngestError> {
    let not_db = |reason: String| IngestError::NotADatabase {
        path: sqlite_file.to_path_buf(),
        reason,
    };
    let conn = Connection::open_with_flags(
        sqlite_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| not_db(e.to_string()))?;

    let table_names: Vec<String> = (|| {
        let mut stmt = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )?;
        let names = stmt.query_map([], |row| row.get::<_, String>(0))?;
        names.collect::<Result<Vec<_>, _>>()
    })()
    .map_err(|e| not_db(e.to_string()))?;

    let mut warnings = Vec::new();
    let mut catalog = DatabaseCatalog::new(database_id);
    for table in &table_names {
        let mut columns = Vec::new();
        let infos: Vec<(String, String, i64)> = (|| {
            let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
            let rows = stmt.query_map([], |row| {
                Ok((
                    row.get::<_, String>(1)?,
                    row.get::<_, Option<String>>(2)?.unwrap_or_default(),
                    row.get::<_, i64>(5)?,
                ))
            })?;
            rows.collect::<Result<Vec<_>, _>>()
        })()
        .map_err(|e| not_db(e.to_string()))?;
        for (name, declared, pk) in infos {
            let mut column = ColumnSpec::new(name.clone(), ColumnType::from_declared(&declared));
            column.is_primary_key = pk > 0;
            if let Some(desc) = descriptions.and_then(|d| d.get(table, &name)) {
                column = column.with_description(desc);
            }
            match probe_values(&conn, table, &name, options.probe_timeout) {
                Ok(values) => column.values = values,
                Err(ProbeError::Timeout) => warnings.push(format!(
                    "{database_id}: distinct-value probe timed out for {table}.{name}; VALUES omitted"
                )),
                Err(ProbeError::Sql(e)) => warnings.push(format!(
                    "{database_id}: distinct-value probe failed for {table}.{name}: {e}"
                )),
            }
            columns.push(column);
        }
        catalog.tables.push(TableSpec::new(table.clone(), columns));
    }

    for table in &table_names {
        let fks: Vec<(i64, i64, String, String, Option<String>)> = (|| {
            let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(table)))?;
            let rows = stmt.query_map([], |row| {
                Ok((
                    row.get::<_, i64>(0)?,
                    row.get::<_, i64>(1)?,
                    row.get::<_, String>(2)?,
                    row.get::<_, String>(3)?,
                    row.get::<_, Option<String>>(4)?,
                ))
            })?;
            rows.collect::<Result<Vec<_>, _>>()
        })()
        .map_err(|e| not_db(e.to_string()))?;
        let mut fks = fks;
        fks.sort_by_key(|(id, seq, ..)| (*id, *seq));
        for (_, _, ref_table, from, to) in fks {
            match resolve_foreign_key(&catalog, table, &from, &ref_table, to.as_deref()) {
                Some(fk) => {
                    if !catalog.foreign_keys.contains(&fk) {
                        catalog.foreign_keys.push(fk);
                    }
                }
                None => warnings.push(format!(
                    "{database_id}: dropping foreign key {table}.{from} -> {ref_table}.{} with a missing endpoint",
                    to.as_deref().unwrap_or("<pk>")
                )),
            }
        }
    }
    Ok((catalog, warnings))
}

fn resolve_foreign_key(
    catalog: &DatabaseCatalog,
    table: &str,
    from: &str,
    ref_table: &str,
    to: Option<&str>,
) -> Option<ForeignKey> {
    let local = catalog.table(table)?;
    let local_col = local.column(from)?;
    let target = catalog.table(ref_table)?;
    let target_col = match to {
        Some(name) => target.column(name)?,
        None => {
            let mut keys = target.columns.iter().filter(|c| c.is_primary_key);
            let first = keys.next()?;
            if keys.next().is_some() {
                return None;
            }
            first
        }
    };
    Some(ForeignKey::new(
        local.name.clone(),
        local_col.name.clone(),
        target.name.clone(),
        target_col.name.clone(),
    ))
}

enum ProbeError {
    Timeout,
    Sql(rusqlite::Error),
}

/// Returns up to five distinct non-NULL values, or `None` when the column
/// has more than five (or none at all).
fn probe_values(
    conn: &Connection,
    table: &str,
    column: &str,
    timeout: Duration,
) -> Result<Option<Vec<String>>, ProbeError> {
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() > deadline));
    let result = (|| {
        let sql = format!(
            "SELECT DISTINCT {col} FROM {tbl} WHERE {col} IS NOT NULL LIMIT {}",
            MAX_SAMPLE_VALUES + 1,
            col = quote_ident(column),
            tbl = quote_ident(table),
        );
        let mut stmt = conn.prepare(&sql)?;
        let mut rows = stmt.query([])?;
        let mut values = Vec::new();
        let mut has_blob = false;
        while let Some(row) = rows.next()? {
            match row.get_ref(0)? {
                ValueRef::Null => {}
                ValueRef::Integer(i) => values.push(i.to_string()),
                ValueRef::Real(f) => values.push(f.to_string()),
                ValueRef::Text(t) => values.push(single_line(&String::from_utf8_lossy(t))),
                ValueRef::Blob(_) => has_blob = true,
            }
        }
        Ok::<_, rusqlite::Error>((values, has_blob))
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    match result {
        Ok((values, has_blob)) => {
            if has_blob || values.is_empty() || values.len() > MAX_SAMPLE_VALUES {
                Ok(None)
            } else {
                Ok(Some(values))
            }
        }
        Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == rusqlite::ErrorCode::OperationInterrupted => {
            Err(ProbeError::Timeout)
        }
        Err(e) => Err(ProbeError::Sql(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difficulty_labels() {
        assert_eq!("Moderate".parse::<Difficulty>().unwrap(), Difficulty::Moderate);
        assert!("hard".parse::<Difficulty>().is_err());
    }

    #[test]
    fn question_records_default_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.json");
        fs::write(
            &path,
            r#"[{"question_id": 7, "question": " q? ", "SQL": "SELECT 1", "db_id": "d"},
                {"question": "second", "evidence": "e", "SQL": "SELECT 2", "db_id": "d", "difficulty": "challenging"}]"#,
        )
        .unwrap();
        let qs = read_questions(&path).unwrap();
        assert_eq!(qs[0].question_id, 7);
        assert_eq!(qs[0].question, "q?");
        assert_eq!(qs[0].external_knowledge, "");
        assert_eq!(qs[0].difficulty, Difficulty::Simple);
        assert_eq!(qs[1].question_id, 1);
        assert_eq!(qs[1].difficulty, Difficulty::Challenging);
    }

    #[test]
    fn malformed_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.json");
        fs::write(&path, r#"[{"question": "q", "db_id": "d"}]"#).unwrap();
        assert!(matches!(read_questions(&path), Err(IngestError::MalformedRecord { .. })));
        fs::write(&path, r#"[{"question": "   ", "SQL": "SELECT 1", "db_id": "d"}]"#).unwrap();
        assert!(matches!(read_questions(&path), Err(IngestError::MalformedRecord { .. })));
        fs::write(&path, r#"[{"question": "q", "SQL": "SELECT 1", "db_id": "d", "difficulty": "hard"}]"#).unwrap();
        assert!(matches!(read_questions(&path), Err(IngestError::MalformedRecord { .. })));
    }

    #[test]
    fn descriptions_decode_lossily() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"original_column_name,column_name,column_description\nPhone,phone,phone number\xff of school\n".to_vec();
        bytes.extend_from_slice(b"Zip,,\"postal\ncode\"\n");
        fs::write(dir.path().join("schools.csv"), bytes).unwrap();
        let d = load_descriptions(dir.path()).unwrap();
        assert_eq!(d.get("Schools", "phone"), Some("phone number\u{fffd} of school"));
        assert_eq!(d.get("schools", "Zip"), Some("postal code"));
    }

    #[test]
    fn description_without_required_header_fails() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("t.csv"), "name,desc\na,b\n").unwrap();
        assert!(matches!(
            load_descriptions(dir.path()),
            Err(IngestError::MetadataDecodeError { .. })
        ));
    }

    #[test]
    fn garbage_file_is_not_a_database() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sqlite");
        fs::write(&path, b"this is definitely not sqlite, just some text padding it out to a page").unwrap();
        assert!(matches!(
            introspect_database(&path, None),
            Err(IngestError::NotADatabase { .. })
        ));
        assert!(matches!(
            introspect_database(&dir.path().join("absent.sqlite"), None),
            Err(IngestError::NotADatabase { .. })
        ));
    }
}
