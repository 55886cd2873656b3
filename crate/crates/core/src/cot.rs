//! Multi-step chain-of-thought inference.
//!
//! COT-SP asks for tables, then columns, then the query. COT-SK inserts a
//! skeleton step before the query. In PRED modes the later steps only see
//! the tables and columns the model picked; FULL modes always show the whole
//! catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::LazyLock;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::TaskInstance;
use crate::budget::{partition_columns, truncate_target, BudgetError, TokenBudget, TokenCounter};
use crate::gateway::{extract_sql, Completer, GatewayError};
use crate::prompt::{derive_seed, knowledge_line, question_line, PromptBundle, PromptError, PromptRole, CUE, FORMAT_LINE, TABLES_LINE};
use crate::schema::{
    format_header_with, render_catalog, render_schema_format_header, ColumnFilter, DatabaseCatalog, SchemaError,
    SchemaVariant,
};
use crate::skeleton::{extract_skeleton, SqlSkeleton};

pub const STEP_BY_STEP_LINE: &str = "Please generate the SQL script STEP BY STEP.";
pub const USED_TABLES_LINE: &str = "### Here are SQLite SQL tables that will be used, with their properties:";
const DETAILED_COLUMN_LINE: &str = "# COLUMN_NAME: TYPE, (DESCRIPTION), (VALUE1, VALUE2, ...)";

#[derive(Debug, Error)]
pub enum CotError {
    #[error("chain-of-thought mode `none` has no steps; use the zero-shot path")]
    ModeNone,
    #[error("mode {0} does not belong to this template")]
    WrongTemplate(CotMode),
    #[error("no SQL skeleton found in step response: {0:?}")]
    SkeletonParseFailure(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CotMode {
    #[default]
    None,
    CotSpPred,
    CotSpFull,
    CotSkPred,
    CotSkFull,
}

impl CotMode {
    pub const ALL: [CotMode; 5] = [
        CotMode::None,
        CotMode::CotSpPred,
        CotMode::CotSpFull,
        CotMode::CotSkPred,
        CotMode::CotSkFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CotMode::None => "none",
            CotMode::CotSpPred => "cot_sp_pred",
            CotMode::CotSpFull => "cot_sp_full",
            CotMode::CotSkPred => "cot_sk_pred",
            CotMode::CotSkFull => "cot_sk_full",
        }
    }

    pub fn is_pred(self) -> bool {
        matches!(self, CotMode::CotSpPred | CotMode::CotSkPred)
    }

    pub fn uses_skeleton(self) -> bool {
        matches!(self, CotMode::CotSkPred | CotMode::CotSkFull)
    }

    pub fn step_count(self) -> usize {
        match self {
            CotMode::None => 1,
            CotMode::CotSpPred | CotMode::CotSpFull => 3,
            CotMode::CotSkPred | CotMode::CotSkFull => 4,
        }
    }
}

impl fmt::Display for CotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        CotMode::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| format!("unknown chain-of-thought mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotOptions {
    /// In PRED modes, also restrict the column-finding step to the
    /// predicted tables.
    pub restrict_step2: bool,
    pub budget: TokenBudget,
    pub seed: u64,
}

impl Default for CotOptions {
    fn default() -> Self {
        CotOptions {
            restrict_step2: true,
            budget: TokenBudget::default(),
            seed: 0,
        }
    }
}

/// Columns picked for one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub table: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotStep {
    pub prompt: PromptBundle,
    pub response: String,
}

/// Everything one chain-of-thought run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotTrace {
    pub question_id: i64,
    pub database_id: String,
    pub mode: CotMode,
    pub predicted_tables: Vec<String>,
    pub predicted_columns: Vec<ColumnGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SqlSkeleton>,
    pub steps: Vec<CotStep>,
    pub final_sql: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Result of parsing a table list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableParse {
    /// Catalog names in catalog order.
    pub tables: Vec<String>,
    /// Names that matched nothing in the catalog.
    pub dropped: Vec<String>,
    /// True when the names came from scanning free text.
    pub scanned: bool,
}

/// Result of parsing a column list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnParse {
    pub groups: Vec<ColumnGroup>,
    pub dropped: Vec<String>,
    pub scanned: bool,
}

impl ColumnParse {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

fn find_label(text: &str, label: &str) -> Option<usize> {
    let lower = text.to_ascii_lowercase();
    lower.find(&label.to_ascii_lowercase()).map(|i| i + label.len())
}

/// Text between `(` and its matching `)` (or the end).
fn paren_block(text: &str) -> Option<&str> {
    let open = text.find('(')?;
    let inner = &text[open + 1..];
    Some(inner.find(')').map_or(inner, |close| &inner[..close]))
}

fn clean_name(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '"' | '`' | '\'' | '[' | ']' | '.' | '*' | '-' | ':') || c.is_whitespace())
        .to_string()
}

fn split_items(block: &str) -> Vec<String> {
    block
        .split(|c: char| matches!(c, ',' | '\n' | ';'))
        .map(clean_name)
        .filter(|s| !s.is_empty())
        .collect()
}

fn word_regex(name: &str) -> Regex {
    Regex::new(&format!(r"(?i)(^|[^A-Za-z0-9_]){}($|[^A-Za-z0-9_])", regex::escape(name))).expect("escaped pattern")
}

fn in_catalog_order(catalog: &DatabaseCatalog, found: &BTreeSet<String>) -> Vec<String> {
    catalog
        .tables
        .iter()
        .filter(|t| found.contains(&t.name))
        .map(|t| t.name.clone())
        .collect()
}

/// Table names from a step response, de-duplicated in catalog order.
pub fn parse_table_list(response: &str, catalog: &DatabaseCatalog) -> Vec<String> {
    parse_table_list_detailed(response, catalog).tables
}

/// Reads the block after `Tables:` (or a bare leading parenthesised block).
/// When there is none, or it names no catalog table, scans the text for
/// catalog table names.
pub fn parse_table_list_detailed(response: &str, catalog: &DatabaseCatalog) -> TableParse {
    let block = match find_label(response, "tables:") {
        Some(at) => {
            let rest = &response[at..];
            if rest.trim_start().starts_with('(') {
                paren_block(rest)
            } else {
                Some(rest.split("\n\n").next().unwrap_or(rest))
            }
        }
        None if response.trim_start().starts_with('(') => paren_block(response),
        None => None,
    };
    let mut out = TableParse::default();
    let mut found = BTreeSet::new();
    if let Some(block) = block {
        for item in split_items(block) {
            if let Some(t) = catalog.table(&item) {
                found.insert(t.name.clone());
                continue;
            }
            let words: Vec<String> = item.split_whitespace().map(clean_name).collect();
            let matched: Vec<String> = words
                .iter()
                .filter_map(|w| catalog.table(w).map(|t| t.name.clone()))
                .collect();
            if matched.is_empty() {
                out.dropped.push(item);
            } else {
                found.extend(matched);
            }
        }
    }
    if found.is_empty() {
        for table in &catalog.tables {
            if word_regex(&table.name).is_match(response) {
                found.insert(table.name.clone());
            }
        }
        out.scanned = !found.is_empty();
    }
    out.tables = in_catalog_order(catalog, &found);
    out
}

/// Column groups from a step response, limited to `allowed` tables when
/// that list is non-empty.
pub fn parse_column_list(response: &str, catalog: &DatabaseCatalog, allowed: &[String]) -> ColumnParse {
    let allowed_lower: BTreeSet<String> = allowed.iter().map(|t| t.to_lowercase()).collect();
    let table_ok = |name: &str| allowed_lower.is_empty() || allowed_lower.contains(&name.to_lowercase());
    let mut picked: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut out = ColumnParse::default();

    let add = |table: &str, column: &str, picked: &mut BTreeMap<String, BTreeSet<String>>| -> bool {
        let Some(spec) = catalog.table(table).filter(|t| table_ok(&t.name)) else { return false };
        let Some(col) = spec.column(column) else { return false };
        picked.entry(spec.name.clone()).or_default().insert(col.name.clone());
        true
    };

    let body = find_label(response, "columns:").map(|at| &response[at..]);
    if let Some(body) = body {
        static GROUP: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"([^\s:(),;]+)\s*:\s*\(([^)]*)\)?").expect("static pattern"));
        for caps in GROUP.captures_iter(body) {
            let table = clean_name(&caps[1]);
            for item in split_items(caps.get(2).map_or("", |m| m.as_str())) {
                let ok = match item.split_once('.') {
                    Some((t, c)) => add(&clean_name(t), &clean_name(c), &mut picked),
                    None => add(&table, &item, &mut picked),
                };
                if !ok {
                    out.dropped.push(format!("{table}.{item}"));
                }
            }
        }
    }
    if picked.is_empty() {
        static DOTTED: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)").expect("static pattern"));
        for caps in DOTTED.captures_iter(response) {
            add(&caps[1], &caps[2], &mut picked);
        }
        if picked.is_empty() {
            for table in catalog.tables.iter().filter(|t| table_ok(&t.name)) {
                for column in &table.columns {
                    if word_regex(&column.name).is_match(response) {
                        picked.entry(table.name.clone()).or_default().insert(column.name.clone());
                    }
                }
            }
        }
        out.scanned = !picked.is_empty();
    }
    out.groups = catalog
        .tables
        .iter()
        .filter_map(|t| {
            let cols = picked.get(&t.name)?;
            Some(ColumnGroup {
                table: t.name.clone(),
                columns: t.columns.iter().filter(|c| cols.contains(&c.name)).map(|c| c.name.clone()).collect(),
            })
        })
        .collect();
    out
}

/// Normalises a skeleton step response: the first statement (from its first
/// `SELECT` when present) is reduced to its skeleton.
pub fn parse_skeleton_response(response: &str) -> Result<SqlSkeleton, CotError> {
    let fail = || CotError::SkeletonParseFailure(response.to_string());
    let text = response.replace("```sql", "\n").replace("```", "\n");
    let start = word_regex("SELECT").find(&text).map_or(0, |m| {
        // the match may include one leading separator character
        let s = m.as_str();
        m.start() + (s.len() - s.trim_start_matches(|c: char| !c.is_ascii_alphabetic()).len())
    });
    let statement = &text[start..];
    let statement = statement.split(';').next().unwrap_or(statement);
    let statement = statement
        .split("\n\n")
        .find(|chunk| !chunk.trim().is_empty())
        .unwrap_or("");
    let skeleton = extract_skeleton(statement).map_err(|_| fail())?;
    if skeleton.keyword_count() == 0 {
        return Err(fail());
    }
    Ok(skeleton)
}

/// The slot text listing related tables.
pub fn tables_related(tables: &[String]) -> String {
    tables.join(", ")
}

/// The slot text listing related columns per table.
pub fn columns_related(groups: &[ColumnGroup]) -> String {
    groups
        .iter()
        .map(|g| format!("{}: ({})", g.table, g.columns.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepKind {
    Tables,
    Columns,
    SqlFromColumns,
    Skeleton,
    SqlFromSkeleton,
}

struct StepSlots<'a> {
    tables: &'a str,
    columns: &'a str,
    skeleton: &'a str,
}

fn render_step(kind: StepKind, instance: &TaskInstance, schema: &DatabaseCatalog, slots: &StepSlots<'_>) -> String {
    let mut text = String::new();
    text.push_str(FORMAT_LINE);
    text.push('\n');
    if kind == StepKind::Tables {
        text.push_str(&render_schema_format_header(SchemaVariant::CD));
        text.push_str(TABLES_LINE);
        text.push('\n');
        text.push_str(&render_catalog(schema, SchemaVariant::CD));
    } else {
        text.push_str(&format_header_with(&[DETAILED_COLUMN_LINE]));
        text.push_str(USED_TABLES_LINE);
        text.push('\n');
        text.push_str(&render_catalog(schema, SchemaVariant::CVDT));
    }
    text.push_str(&question_line(&instance.question));
    text.push_str(&knowledge_line(&instance.external_knowledge));
    text.push_str(STEP_BY_STEP_LINE);
    text.push('\n');
    match kind {
        StepKind::Tables => {
            text.push_str("Find the required tables based on the QUESTION.\n");
        }
        StepKind::Columns => {
            text.push_str(&format!("Given the tables:\n{}.\n", slots.tables));
            text.push_str("From the given tables, find the required columns based on the QUESTION.\n");
        }
        StepKind::SqlFromColumns => {
            text.push_str(&format!("Given the tables and columns used in the SQL query:\n{}.\n", slots.columns));
            text.push_str("### Complete sqlite SQL query based on the given tables and columns\n");
            text.push_str(CUE);
        }
        StepKind::Skeleton => {
            text.push_str(&format!("Given the tables and columns:\n{}.\n", slots.columns));
            text.push_str(
                "Based on the given the tables and columns, write the skeleton of the SQL query corresponding to the question.\n",
            );
        }
        StepKind::SqlFromSkeleton => {
            text.push_str(&format!(
                "Given the tables and columns:\n{},\nand sql skeleton:\n{}.\n",
                slots.columns, slots.skeleton
            ));
            text.push_str("### Complete sqlite SQL query based on the given tables, columns and sql_skeleton\n");
            text.push_str(CUE);
        }
    }
    text
}

struct Runner<'a> {
    instance: &'a TaskInstance,
    completer: &'a dyn Completer,
    counter: &'a dyn TokenCounter,
    options: &'a CotOptions,
    steps: Vec<CotStep>,
}

impl Runner<'_> {
    /// Renders a step within budget, sends it, and records both sides.
    fn step(
        &mut self,
        kind: StepKind,
        schema: &DatabaseCatalog,
        slots: &StepSlots<'_>,
        keep: &[ColumnGroup],
    ) -> Result<String, CotError> {
        let index = self.steps.len() + 1;
        let mut partition = partition_columns(schema, None, &self.instance.question)?;
        for group in keep {
            for column in &group.columns {
                let key = (group.table.clone(), column.clone());
                partition.non_target.remove(&key);
                partition.target.insert(key);
            }
        }
        let seed = derive_seed(derive_seed(self.options.seed, self.instance.question_id), index as i64);
        let (kept, record) = truncate_target(
            schema,
            &partition,
            self.options.budget.prompt_limit(),
            |c| self.counter.count(&render_step(kind, self.instance, c, slots)),
            seed,
        )?;
        let mut prompt = PromptBundle::new(
            render_step(kind, self.instance, &kept, slots),
            PromptRole::CotStep(index),
            self.counter,
        );
        if record.is_truncated() {
            prompt.truncation = Some(record);
        }
        let response = self.completer.complete(&prompt)?;
        self.steps.push(CotStep {
            prompt,
            response: response.clone(),
        });
        Ok(response)
    }
}

fn restrict_to_tables(catalog: &DatabaseCatalog, tables: &[String]) -> Result<DatabaseCatalog, SchemaError> {
    catalog.filtered(&ColumnFilter::tables(catalog, tables.iter().map(String::as_str)))
}

fn restrict_to_columns(
    catalog: &DatabaseCatalog,
    tables: &[String],
    groups: &[ColumnGroup],
) -> Result<DatabaseCatalog, SchemaError> {
    let mut filter = ColumnFilter::new();
    for table in tables {
        match groups.iter().find(|g| &g.table == table) {
            Some(group) => {
                filter.keep_table(table);
                for column in &group.columns {
                    filter.keep_column(table, column);
                }
            }
            None => {
                if let Some(spec) = catalog.table(table) {
                    filter.keep_table(&spec.name);
                    for column in &spec.columns {
                        filter.keep_column(&spec.name, &column.name);
                    }
                }
            }
        }
    }
    catalog.filtered(&filter)
}

/// Runs the chain-of-thought template selected by `mode`.
pub fn run_cot(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    completer: &dyn Completer,
    counter: &dyn TokenCounter,
    mode: CotMode,
    options: &CotOptions,
) -> Result<CotTrace, CotError> {
    if mode == CotMode::None {
        return Err(CotError::ModeNone);
    }
    if instance.database_id != catalog.database_id {
        return Err(PromptError::DatabaseMismatch {
            instance: instance.database_id.clone(),
            catalog: catalog.database_id.clone(),
        }
        .into());
    }
    let mut warnings = Vec::new();
    let mut runner = Runner {
        instance,
        completer,
        counter,
        options,
        steps: Vec::new(),
    };
    let no_slots = StepSlots {
        tables: "",
        columns: "",
        skeleton: "",
    };

    let response = runner.step(StepKind::Tables, catalog, &no_slots, &[])?;
    let tables = parse_table_list_detailed(&response, catalog);
    for name in &tables.dropped {
        warnings.push(format!("step 1 named unknown table `{name}`"));
    }
    let pred_tables = mode.is_pred() && !tables.tables.is_empty();
    if mode.is_pred() && tables.tables.is_empty() {
        warnings.push("no tables parsed from step 1; using the full schema".to_string());
    }
    let related_tables = if tables.tables.is_empty() {
        catalog.tables.iter().map(|t| t.name.clone()).collect()
    } else {
        tables.tables.clone()
    };

    let step2_schema = if pred_tables && options.restrict_step2 {
        restrict_to_tables(catalog, &related_tables)?
    } else {
        catalog.clone()
    };
    let tables_slot = tables_related(&related_tables);
    let slots = StepSlots {
        tables: &tables_slot,
        columns: "",
        skeleton: "",
    };
    let response = runner.step(StepKind::Columns, &step2_schema, &slots, &[])?;
    let allowed: &[String] = if pred_tables { &related_tables } else { &[] };
    let columns = parse_column_list(&response, catalog, allowed);
    for name in &columns.dropped {
        warnings.push(format!("step 2 named unknown column `{name}`"));
    }
    if pred_tables && columns.is_empty() {
        warnings.push("no columns parsed from step 2; using whole predicted tables".to_string());
    }

    let later_schema = if pred_tables {
        restrict_to_columns(catalog, &related_tables, &columns.groups)?
    } else {
        catalog.clone()
    };
    let columns_slot = if columns.is_empty() {
        tables_slot.clone()
    } else {
        columns_related(&columns.groups)
    };

    let mut skeleton = None;
    let final_response = if mode.uses_skeleton() {
        let slots = StepSlots {
            tables: &tables_slot,
            columns: &columns_slot,
            skeleton: "",
        };
        let response = runner.step(StepKind::Skeleton, &later_schema, &slots, &columns.groups)?;
        let parsed = parse_skeleton_response(&response)?;
        let skeleton_text = parsed.as_str().to_string();
        skeleton = Some(parsed);
        let slots = StepSlots {
            tables: &tables_slot,
            columns: &columns_slot,
            skeleton: &skeleton_text,
        };
        runner.step(StepKind::SqlFromSkeleton, &later_schema, &slots, &columns.groups)?
    } else {
        let slots = StepSlots {
            tables: &tables_slot,
            columns: &columns_slot,
            skeleton: "",
        };
        runner.step(StepKind::SqlFromColumns, &later_schema, &slots, &columns.groups)?
    };
    let final_sql = extract_sql(&final_response, CUE)?;
    for w in &warnings {
        tracing::warn!(question_id = instance.question_id, "{w}");
    }
    Ok(CotTrace {
        question_id: instance.question_id,
        database_id: instance.database_id.clone(),
        mode,
        predicted_tables: tables.tables,
        predicted_columns: columns.groups,
        skeleton,
        steps: runner.steps,
        final_sql,
        warnings,
    })
}

/// COT-SP: tables, columns, query.
pub fn run_cot_sp(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    completer: &dyn Completer,
    counter: &dyn TokenCounter,
    mode: CotMode,
    options: &CotOptions,
) -> Result<CotTrace, CotError> {
    match mode {
        CotMode::None => Err(CotError::ModeNone),
        CotMode::CotSpPred | CotMode::CotSpFull => run_cot(instance, catalog, completer, counter, mode, options),
        other => Err(CotError::WrongTemplate(other)),
    }
}

/// COT-SK: tables, columns, skeleton, query.
pub fn run_cot_sk(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    completer: &dyn Completer,
    counter: &dyn TokenCounter,
    mode: CotMode,
    options: &CotOptions,
) -> Result<CotTrace, CotError> {
    match mode {
        CotMode::None => Err(CotError::ModeNone),
        CotMode::CotSkPred | CotMode::CotSkFull => run_cot(instance, catalog, completer, counter, mode, options),
        other => Err(CotError::WrongTemplate(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnSpec, ColumnType, ForeignKey, TableSpec};

    fn catalog() -> DatabaseCatalog {
        DatabaseCatalog {
            database_id: "movie_platform".into(),
            tables: vec![
                TableSpec::new(
                    "movies",
                    vec![
                        ColumnSpec::new("movie_id", ColumnType::Int).primary_key(),
                        ColumnSpec::new("movie_title", ColumnType::Text),
                        ColumnSpec::new("movie_release_year", ColumnType::Int),
                    ],
                ),
                TableSpec::new(
                    "ratings",
                    vec![
                        ColumnSpec::new("movie_id", ColumnType::Int),
                        ColumnSpec::new("rating_score", ColumnType::Int),
                    ],
                ),
            ],
            foreign_keys: vec![ForeignKey::new("ratings", "movie_id", "movies", "movie_id")],
        }
    }

    #[test]
    fn table_list_block() {
        let c = catalog();
        assert_eq!(parse_table_list("Tables: (movies\n ratings)", &c), vec!["movies", "ratings"]);
        assert_eq!(parse_table_list("Tables: (ratings, movies, ratings)", &c), vec!["movies", "ratings"]);
        assert_eq!(parse_table_list("(Movies)", &c), vec!["movies"]);
        assert_eq!(parse_table_list("We need the movies table.", &c), vec!["movies"]);
        assert!(parse_table_list("zzq blorp", &c).is_empty());
        let detailed = parse_table_list_detailed("Tables: (movies\n users)", &c);
        assert_eq!(detailed.tables, vec!["movies"]);
        assert_eq!(detailed.dropped, vec!["users"]);
        assert!(!detailed.scanned);
    }

    #[test]
    fn column_list_block() {
        let c = catalog();
        let parsed = parse_column_list(
            "Columns: movies: (movie_title\n                movie_release_year)\nratings: (rating_score, bogus)",
            &c,
            &[],
        );
        assert_eq!(
            parsed.groups,
            vec![
                ColumnGroup {
                    table: "movies".into(),
                    columns: vec!["movie_title".into(), "movie_release_year".into()]
                },
                ColumnGroup {
                    table: "ratings".into(),
                    columns: vec!["rating_score".into()]
                },
            ]
        );
        assert_eq!(parsed.dropped, vec!["ratings.bogus"]);
        let only_movies = parse_column_list("Columns: ratings: (rating_score)", &c, &["movies".to_string()]);
        assert!(only_movies.is_empty());
        let scanned = parse_column_list("use movies.movie_title please", &c, &[]);
        assert!(scanned.scanned);
        assert_eq!(scanned.groups[0].columns, vec!["movie_title"]);
    }

    #[test]
    fn skeleton_responses() {
        assert_eq!(parse_skeleton_response("SELECT _ FROM _ WHERE _").unwrap().as_str(), "SELECT _ FROM _ WHERE _");
        assert_eq!(
            parse_skeleton_response("SELECT movie_title FROM movies WHERE year = 1945").unwrap().as_str(),
            "SELECT _ FROM _ WHERE _"
        );
        assert_eq!(
            parse_skeleton_response("The skeleton is:\n```sql\nSELECT _ FROM _;\n```").unwrap().as_str(),
            "SELECT _ FROM _"
        );
        assert!(matches!(parse_skeleton_response("no idea"), Err(CotError::SkeletonParseFailure(_))));
    }

    #[test]
    fn mode_names_roundtrip() {
        for mode in CotMode::ALL {
            assert_eq!(mode.as_str().parse::<CotMode>().unwrap(), mode);
        }
        assert_eq!("cot-sk-pred".parse::<CotMode>().unwrap(), CotMode::CotSkPred);
    }

    #[test]
    fn slot_rendering() {
        assert_eq!(tables_related(&["movies".into(), "ratings".into()]), "movies, ratings");
        let groups = vec![
            ColumnGroup {
                table: "movies".into(),
                columns: vec!["a".into(), "b".into()],
            },
            ColumnGroup {
                table: "ratings".into(),
                columns: vec!["c".into()],
            },
        ];
        assert_eq!(columns_related(&groups), "movies: (a, b); ratings: (c)");
    }
}
