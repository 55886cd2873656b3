//! Execution accuracy.
//!
//! Predicted and gold queries run against the instance's SQLite file (opened
//! read-only) and match when their result rows are equal as sets. Reals are
//! compared after rounding to six decimals, and a real with an integral value
//! equals the integer of that value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{Difficulty, TaskInstance};

pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(30);
pub const TIMEOUT_ERROR: &str = "timeout";
const REAL_SCALE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{outcomes} outcomes for {instances} instances")]
    CountMismatch { outcomes: usize, instances: usize },
    #[error("outcome for question {outcome} is aligned with instance {instance}")]
    OutcomeMismatch { outcome: i64, instance: i64 },
}

/// A result cell normalised for comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellValue {
    Null,
    /// Numbers scaled by 10^6 and rounded.
    Number(i128),
    /// Reals too large to scale, kept in exponent notation.
    HugeReal(String),
    Text(String),
    Blob(Vec<u8>),
}

impl CellValue {
    fn from_ref(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => CellValue::Null,
            ValueRef::Integer(i) => CellValue::Number(i as i128 * REAL_SCALE as i128),
            ValueRef::Real(r) => {
                let scaled = (r * REAL_SCALE).round();
                if scaled.is_finite() && scaled.abs() < 1e36 {
                    CellValue::Number(scaled as i128)
                } else {
                    CellValue::HugeReal(format!("{r:e}"))
                }
            }
            ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Null => f.write_str("NULL"),
            CellValue::Number(n) => {
                let whole = n / REAL_SCALE as i128;
                let frac = (n % REAL_SCALE as i128).abs();
                if frac == 0 {
                    write!(f, "{whole}")
                } else {
                    let sign = if *n < 0 && whole == 0 { "-" } else { "" };
                    let digits = format!("{frac:06}");
                    write!(f, "{sign}{whole}.{}", digits.trim_end_matches('0'))
                }
            }
            CellValue::HugeReal(s) => f.write_str(s),
            CellValue::Text(s) => write!(f, "{s:?}"),
            CellValue::Blob(b) => write!(f, "<blob {} bytes>", b.len()),
        }
    }
}

pub type ResultRow = Vec<CellValue>;
pub type ResultSet = BTreeSet<ResultRow>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub question_id: i64,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_error: Option<String>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl EvalOutcome {
    /// Outcome for a prediction that never reached execution.
    pub fn failed(question_id: i64, error: impl Into<String>) -> Self {
        EvalOutcome {
            question_id,
            matched: false,
            predicted_error: Some(error.into()),
            gold_error: None,
            elapsed: Duration::ZERO,
        }
    }
}

/// Opens a database that rejects writes.
pub fn open_read_only(path: &Path) -> Result<Connection, String> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )
    .map_err(|e| e.to_string())?;
    conn.execute_batch("PRAGMA query_only = ON;").map_err(|e| e.to_string())?;
    Ok(conn)
}

/// Runs one statement and collects its rows, giving up after `timeout`.
pub fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> Result<ResultSet, String> {
    let deadline = Instant::now() + timeout;
    conn.progress_handler(1000, Some(move || Instant::now() > deadline));
    let result = (|| {
        let mut stmt = conn.prepare(sql)?;
        let width = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out = ResultSet::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(width);
            for i in 0..width {
                cells.push(CellValue::from_ref(row.get_ref(i)?));
            }
            out.insert(cells);
        }
        Ok::<_, rusqlite::Error>(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result.map_err(|e| {
        if Instant::now() > deadline {
            TIMEOUT_ERROR.to_string()
        } else {
            e.to_string()
        }
    })
}

/// Executes both queries and compares their result sets.
pub fn execute_and_compare(question_id: i64, predicted: &str, gold: &str, database: &Path, timeout: Duration) -> EvalOutcome {
    let started = Instant::now();
    let mut outcome = EvalOutcome {
        question_id,
        matched: false,
        predicted_error: None,
        gold_error: None,
        elapsed: Duration::ZERO,
    };
    match open_read_only(database) {
        Err(e) => {
            outcome.predicted_error = Some(e.clone());
            outcome.gold_error = Some(e);
        }
        Ok(conn) => {
            let predicted_rows = run_query(&conn, predicted, timeout);
            let gold_rows = run_query(&conn, gold, timeout);
            if let Err(e) = &gold_rows {
                tracing::warn!(question_id, error = %e, "gold query failed");
            }
            match (predicted_rows, gold_rows) {
                (Ok(p), Ok(g)) => outcome.matched = p == g,
                (p, g) => {
                    outcome.predicted_error = p.err();
                    outcome.gold_error = g.err();
                }
            }
        }
    }
    outcome.elapsed = started.elapsed();
    outcome
}

/// One prediction to score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalJob {
    pub question_id: i64,
    pub predicted: String,
    pub gold: String,
    pub database: PathBuf,
}

/// Scores jobs in parallel on the current rayon pool; output order follows
/// input order.
pub fn evaluate_jobs(jobs: &[EvalJob], timeout: Duration) -> Vec<EvalOutcome> {
    jobs.par_iter()
        .map(|j| execute_and_compare(j.question_id, &j.predicted, &j.gold, &j.database, timeout))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub total: usize,
    pub matched: usize,
}

impl BucketCount {
    pub fn percentage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 * 100.0 / self.total as f64
        }
    }
}

/// Execution accuracy per difficulty, in percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExBreakdown {
    pub simple: f64,
    pub moderate: f64,
    pub challenging: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ex_by_split: ExBreakdown,
    pub counts: BTreeMap<String, BucketCount>,
    pub outcomes: Vec<EvalOutcome>,
}

impl EvalReport {
    /// Table row in the order simple, moderate, challenging, sum.
    pub fn row(&self) -> [f64; 4] {
        let ex = &self.ex_by_split;
        [ex.simple, ex.moderate, ex.challenging, ex.sum]
    }
}

/// Aggregates outcomes aligned one-to-one with `instances`.
pub fn aggregate(outcomes: Vec<EvalOutcome>, instances: &[TaskInstance]) -> Result<EvalReport, EvalError> {
    if outcomes.len() != instances.len() {
        return Err(EvalError::CountMismatch {
            outcomes: outcomes.len(),
            instances: instances.len(),
        });
    }
    let mut counts: BTreeMap<String, BucketCount> = Difficulty::ALL
        .iter()
        .map(|d| (d.as_str().to_string(), BucketCount::default()))
        .collect();
    let mut all = BucketCount::default();
    for (outcome, instance) in outcomes.iter().zip(instances) {
        if outcome.question_id != instance.question_id {
            return Err(EvalError::OutcomeMismatch {
                outcome: outcome.question_id,
                instance: instance.question_id,
            });
        }
        let bucket = counts.get_mut(instance.difficulty.as_str()).expect("all difficulties present");
        bucket.total += 1;
        all.total += 1;
        if outcome.matched {
            bucket.matched += 1;
            all.matched += 1;
        }
    }
    let pct = |d: Difficulty| counts[d.as_str()].percentage();
    let ex_by_split = ExBreakdown {
        simple: pct(Difficulty::Simple),
        moderate: pct(Difficulty::Moderate),
        challenging: pct(Difficulty::Challenging),
        sum: all.percentage(),
    };
    counts.insert("sum".to_string(), all);
    Ok(EvalReport {
        ex_by_split,
        counts,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (1), (2);
             CREATE TABLE r(x REAL, s TEXT); INSERT INTO r VALUES (0.1234564, '1'), (2.0, 'b');",
        )
        .unwrap();
        (dir, path)
    }

    fn run(p: &str, g: &str, db: &Path) -> EvalOutcome {
        execute_and_compare(1, p, g, db, DEFAULT_EXEC_TIMEOUT)
    }

    #[test]
    fn basic_matching() {
        let (_d, db) = fixture();
        assert!(run("SELECT a FROM t", "SELECT a FROM t", &db).matched);
        assert!(!run("SELECT 1", "SELECT 2", &db).matched);
        assert!(run("SELECT a FROM t ORDER BY a", "SELECT a FROM t ORDER BY a DESC", &db).matched);
        assert!(run("SELECT 1 UNION ALL SELECT 1", "SELECT 1", &db).matched);
    }

    #[test]
    fn numeric_normalisation() {
        let (_d, db) = fixture();
        assert!(run("SELECT 2.0", "SELECT 2", &db).matched);
        assert!(run("SELECT x FROM r WHERE s = 'b'", "SELECT 2", &db).matched);
        assert!(run("SELECT x FROM r WHERE s = '1'", "SELECT 0.123456", &db).matched);
        assert!(!run("SELECT '1'", "SELECT 1", &db).matched);
        assert!(!run("SELECT 1, 2", "SELECT 2, 1", &db).matched);
    }

    #[test]
    fn errors_are_recorded() {
        let (_d, db) = fixture();
        let o = run("SELEC a FROM t", "SELECT a FROM t", &db);
        assert!(!o.matched && o.predicted_error.is_some() && o.gold_error.is_none());
        let o = run("SELECT a FROM t", "SELECT nope FROM t", &db);
        assert!(!o.matched && o.gold_error.is_some());
        let o = run("DELETE FROM t", "SELECT a FROM t", &db);
        assert!(!o.matched && o.predicted_error.is_some());
        assert!(run("SELECT count(*) FROM t", "SELECT 2", &db).matched);
    }

    #[test]
    fn timeout_is_reported() {
        let (_d, db) = fixture();
        let slow = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT max(x) FROM c";
        let o = execute_and_compare(1, slow, "SELECT 1", &db, Duration::from_millis(50));
        assert_eq!(o.predicted_error.as_deref(), Some(TIMEOUT_ERROR));
        assert!(!o.matched);
    }

    fn instance(id: i64, difficulty: Difficulty) -> TaskInstance {
        TaskInstance {
            question_id: id,
            question: String::new(),
            external_knowledge: String::new(),
            gold_sql: String::new(),
            database_id: "db".into(),
            difficulty,
        }
    }

    #[test]
    fn aggregate_buckets() {
        let mut instances = Vec::new();
        let mut outcomes = Vec::new();
        let plan = [(Difficulty::Simple, 4, 3), (Difficulty::Moderate, 4, 1), (Difficulty::Challenging, 2, 0)];
        let mut id = 0;
        for (d, total, matched) in plan {
            for i in 0..total {
                instances.push(instance(id, d));
                let mut o = EvalOutcome::failed(id, "x");
                o.matched = i < matched;
                outcomes.push(o);
                id += 1;
            }
        }
        let report = aggregate(outcomes, &instances).unwrap();
        assert_eq!(report.row(), [75.0, 25.0, 0.0, 40.0]);
        assert_eq!(report.counts["sum"].total, 10);
        assert!(matches!(
            aggregate(vec![], &instances),
            Err(EvalError::CountMismatch { outcomes: 0, instances: 10 })
        ));
    }

    #[test]
    fn cell_display() {
        assert_eq!(CellValue::Number(1_500_000).to_string(), "1.5");
        assert_eq!(CellValue::Number(-500_000).to_string(), "-0.5");
        assert_eq!(CellValue::Number(3_000_000).to_string(), "3");
    }
}
