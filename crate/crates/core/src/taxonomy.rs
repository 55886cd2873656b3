//! Failure taxonomy for wrong predictions.
//!
//! Every failed prediction gets exactly one of eleven labels, picked by a
//! fixed cascade over a token-level reading of the predicted and gold
//! queries. Identifiers are compared case-insensitively after table aliases
//! are resolved to their base tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eval::EvalOutcome;
use crate::schema::DatabaseCatalog;
use crate::skeleton::{tokenize, SqlToken, TokenKind};

/// Leaf error labels in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    TablesNotExist,
    ColumnsNotExist,
    WrongTables,
    WrongColumns,
    WrongWhere,
    JoinWrongTables,
    JoinWrongColumns,
    SetOperation,
    WrongSubQuery,
    SyntaxError,
    GroupByError,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 11] = [
        ErrorCategory::TablesNotExist,
        ErrorCategory::ColumnsNotExist,
        ErrorCategory::WrongTables,
        ErrorCategory::WrongColumns,
        ErrorCategory::WrongWhere,
        ErrorCategory::JoinWrongTables,
        ErrorCategory::JoinWrongColumns,
        ErrorCategory::SetOperation,
        ErrorCategory::WrongSubQuery,
        ErrorCategory::SyntaxError,
        ErrorCategory::GroupByError,
    ];

    /// Top-level group the label belongs to.
    pub fn group(self) -> &'static str {
        use ErrorCategory::*;
        match self {
            TablesNotExist | ColumnsNotExist | WrongTables | WrongColumns | WrongWhere => "Wrong schema linking",
            JoinWrongTables | JoinWrongColumns => "Incorrect JOIN operation",
            SetOperation | WrongSubQuery => "Inaccurate nested structure",
            SyntaxError | GroupByError => "Other",
        }
    }

    pub fn label(self) -> &'static str {
        use ErrorCategory::*;
        match self {
            TablesNotExist => "Tables not exist",
            ColumnsNotExist => "Columns not exist",
            WrongTables | JoinWrongTables => "Wrong tables",
            WrongColumns | JoinWrongColumns => "Wrong columns",
            WrongWhere => "Wrong where statement",
            SetOperation => "Set operation",
            WrongSubQuery => "Wrong sub-query",
            SyntaxError => "Syntax error",
            GroupByError => "Group-by error",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.group(), self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabel {
    pub category: ErrorCategory,
    pub detail: String,
}

impl ErrorLabel {
    pub fn new(category: ErrorCategory, detail: impl Into<String>) -> Self {
        ErrorLabel {
            category,
            detail: detail.into(),
        }
    }
}

const SYNTAX_MARKERS: &[&str] = &[
    "syntax error",
    "incomplete input",
    "unrecognized token",
    "multiple statements",
    "multiplestatement",
];

/// Words that show up as identifiers but never name a column.
const NON_COLUMN_WORDS: &[&str] = &[
    "true", "false", "current_date", "current_time", "current_timestamp", "collate", "nocase", "rtrim", "binary",
    "glob", "escape", "regexp", "match", "over", "partition", "rows", "range", "preceding", "following",
    "unbounded", "current", "row", "filter", "recursive", "nulls", "first", "last", "integer", "real", "text",
    "numeric", "blob", "rowid", "date", "datetime", "indexed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Clause {
    None,
    Select,
    From,
    On,
    Using,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
}

/// What the classifier reads off one query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryShape {
    pub tables: BTreeSet<String>,
    pub unknown_tables: BTreeSet<String>,
    pub unknown_columns: BTreeSet<String>,
    pub has_join: bool,
    pub join_columns: BTreeSet<String>,
    pub set_operations: Vec<String>,
    pub subqueries: usize,
    pub select_columns: BTreeSet<String>,
    pub group_by: Vec<String>,
}

fn lower(t: &SqlToken) -> String {
    t.unquoted().to_lowercase()
}

fn is_ident(tokens: &[SqlToken], i: usize) -> bool {
    tokens.get(i).map_or(false, |t| t.kind == TokenKind::Identifier)
}

fn is_punct(tokens: &[SqlToken], i: usize, p: &str) -> bool {
    tokens.get(i).map_or(false, |t| t.is_punct(p))
}

fn is_kw(tokens: &[SqlToken], i: usize, w: &str) -> bool {
    tokens.get(i).map_or(false, |t| t.is_keyword(w))
}

fn matching_paren(tokens: &[SqlToken], open: usize) -> usize {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth = depth.saturating_sub(1);
            if depth == 0 {
                return i;
            }
        }
    }
    tokens.len()
}

/// Reads tables, columns, joins and nesting from a query.
pub fn analyze(sql: &str, catalog: &DatabaseCatalog) -> Result<QueryShape, crate::skeleton::SqlError> {
    let tokens = tokenize(sql)?;
    let n = tokens.len();
    let mut shape = QueryShape::default();
    let mut not_column = vec![false; n];

    // common table expressions
    let mut ctes: BTreeSet<String> = BTreeSet::new();
    if is_kw(&tokens, 0, "WITH") {
        let mut j = 1;
        if tokens.get(j).map_or(false, |t| t.text.eq_ignore_ascii_case("recursive")) {
            not_column[j] = true;
            j += 1;
        }
        while is_ident(&tokens, j) {
            ctes.insert(lower(&tokens[j]));
            not_column[j] = true;
            j += 1;
            if is_punct(&tokens, j, "(") {
                let close = matching_paren(&tokens, j);
                for flag in not_column.iter_mut().take(close.min(n)).skip(j) {
                    *flag = true;
                }
                j = close + 1;
            }
            if !is_kw(&tokens, j, "AS") {
                break;
            }
            j += 1;
            if is_punct(&tokens, j, "(") {
                j = matching_paren(&tokens, j) + 1;
            }
            if is_punct(&tokens, j, ",") {
                j += 1;
            } else {
                break;
            }
        }
    }

    // table references and aliases; None marks derived tables and CTEs
    let mut aliases: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut opaque_sources = false;
    for i in 0..n {
        let from = tokens[i].is_keyword("FROM");
        if tokens[i].is_keyword("JOIN") {
            shape.has_join = true;
        }
        if !(from || tokens[i].is_keyword("JOIN")) {
            continue;
        }
        let mut j = i + 1;
        loop {
            if !is_ident(&tokens, j) {
                if is_punct(&tokens, j, "(") {
                    opaque_sources = true;
                }
                break;
            }
            if is_punct(&tokens, j + 1, ".") && is_ident(&tokens, j + 2) {
                not_column[j] = true;
                j += 2;
            }
            not_column[j] = true;
            let name = lower(&tokens[j]);
            let resolved = if let Some(t) = catalog.table(&name) {
                let canonical = t.name.to_lowercase();
                shape.tables.insert(canonical.clone());
                Some(canonical)
            } else if ctes.contains(&name) {
                opaque_sources = true;
                None
            } else {
                shape.unknown_tables.insert(tokens[j].unquoted());
                None
            };
            aliases.insert(name, resolved.clone());
            j += 1;
            if is_kw(&tokens, j, "AS") {
                j += 1;
            }
            if is_ident(&tokens, j) && !is_punct(&tokens, j + 1, ".") && !is_punct(&tokens, j + 1, "(") {
                not_column[j] = true;
                aliases.insert(lower(&tokens[j]), resolved);
                j += 1;
            }
            if from && is_punct(&tokens, j, ",") {
                shape.has_join = true;
                j += 1;
                continue;
            }
            break;
        }
    }
    // aliases of parenthesised sources and select-list aliases
    let mut select_aliases: BTreeSet<String> = BTreeSet::new();
    for i in 0..n {
        if tokens[i].is_punct(")") {
            let j = if is_kw(&tokens, i + 1, "AS") { i + 2 } else { i + 1 };
            if is_ident(&tokens, j) && !is_punct(&tokens, j + 1, ".") && !is_punct(&tokens, j + 1, "(") {
                not_column[j] = true;
                aliases.entry(lower(&tokens[j])).or_insert(None);
                select_aliases.insert(lower(&tokens[j]));
            }
        }
        if i > 0 && tokens[i - 1].is_keyword("AS") && is_ident(&tokens, i) && !not_column[i] {
            not_column[i] = true;
            select_aliases.insert(lower(&tokens[i]));
        }
    }

    let catalog_has_column = |name: &str| catalog.tables.iter().any(|t| t.column(name).is_some());
    let mut clause_stack: Vec<Clause> = Vec::new();
    let mut clause = Clause::None;
    let mut i = 0;
    while i < n {
        let t = &tokens[i];
        let depth = clause_stack.len();
        match t.kind {
            TokenKind::Keyword => {
                let word = t.text.to_ascii_uppercase();
                match word.as_str() {
                    "SELECT" => clause = Clause::Select,
                    "FROM" | "JOIN" => clause = Clause::From,
                    "ON" => clause = Clause::On,
                    "USING" => clause = Clause::Using,
                    "WHERE" => clause = Clause::Where,
                    "GROUP" if is_kw(&tokens, i + 1, "BY") => clause = Clause::GroupBy,
                    "HAVING" => clause = Clause::Having,
                    "ORDER" if is_kw(&tokens, i + 1, "BY") => clause = Clause::OrderBy,
                    "LIMIT" => clause = Clause::Limit,
                    "UNION" | "INTERSECT" | "EXCEPT" => {
                        let mut op = word.to_lowercase();
                        if is_kw(&tokens, i + 1, "ALL") {
                            op.push_str(" all");
                        }
                        shape.set_operations.push(op);
                        clause = Clause::None;
                    }
                    "BY" => {}
                    _ => {
                        if depth == 0 && clause == Clause::GroupBy {
                            shape.group_by.push(word.to_lowercase());
                        }
                    }
                }
                i += 1;
                continue;
            }
            TokenKind::Punctuation if t.text == "(" => {
                if is_kw(&tokens, i + 1, "SELECT") || is_kw(&tokens, i + 1, "WITH") {
                    shape.subqueries += 1;
                }
                clause_stack.push(clause);
                // keep the clause for plain parentheses
                i += 1;
                continue;
            }
            TokenKind::Punctuation if t.text == ")" => {
                clause = clause_stack.pop().unwrap_or(Clause::None);
                i += 1;
                continue;
            }
            _ => {}
        }

        let mut key: Option<String> = None;
        if t.kind == TokenKind::Identifier && !not_column[i] {
            let name = lower(t);
            if is_punct(&tokens, i + 1, "(") || NON_COLUMN_WORDS.contains(&name.as_str()) {
                // function call or reserved word
            } else if is_punct(&tokens, i + 1, ".") {
                let column = tokens.get(i + 2).map(|c| c.unquoted().to_lowercase()).unwrap_or_default();
                if let Some(flag) = not_column.get_mut(i + 2) {
                    *flag = true;
                }
                let qualifier_table = match aliases.get(&name) {
                    Some(resolved) => resolved.clone().map(Some),
                    None => catalog.table(&name).map(|t| Some(t.name.to_lowercase())),
                };
                match qualifier_table {
                    Some(Some(table)) => {
                        let exists = column == "*"
                            || catalog.table(&table).map_or(false, |spec| spec.column(&column).is_some());
                        if !exists {
                            shape.unknown_columns.insert(format!("{table}.{column}"));
                        }
                        key = Some(format!("{table}.{column}"));
                    }
                    Some(None) => key = Some(format!("{name}.{column}")),
                    None => {
                        shape.unknown_tables.insert(t.unquoted());
                    }
                }
                i += 2;
            } else if t.text.starts_with('"') && !catalog_has_column(&name) {
                // a double-quoted string literal
            } else if select_aliases.contains(&name) || aliases.contains_key(&name) || ctes.contains(&name) {
                // alias, not a column
            } else {
                let owner = catalog
                    .tables
                    .iter()
                    .filter(|spec| shape.tables.contains(&spec.name.to_lowercase()))
                    .find(|spec| spec.column(&name).is_some());
                match owner {
                    Some(spec) => key = Some(format!("{}.{name}", spec.name.to_lowercase())),
                    None if opaque_sources => key = Some(name.clone()),
                    None if shape.tables.is_empty() && catalog_has_column(&name) => key = Some(name.clone()),
                    None => {
                        shape.unknown_columns.insert(name.clone());
                        key = Some(name.clone());
                    }
                }
            }
        }
        match (clause, key) {
            (Clause::Select, Some(k)) if depth == 0 => {
                shape.select_columns.insert(k);
            }
            (Clause::On | Clause::Using, Some(k)) => {
                shape.join_columns.insert(k);
            }
            (Clause::GroupBy, Some(k)) if depth == 0 => shape.group_by.push(k),
            (Clause::GroupBy, None) if depth == 0 && !t.is_punct(",") => shape.group_by.push(t.text.to_lowercase()),
            _ => {}
        }
        i += 1;
    }
    Ok(shape)
}

fn looks_like_syntax_error(message: &str) -> bool {
    let lower = message.to_lowercase();
    SYNTAX_MARKERS.iter().any(|m| lower.contains(m))
}

fn join_names(names: &BTreeSet<String>) -> String {
    names.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn set_diff(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> String {
    format!("predicted {{{}}} vs gold {{{}}}", join_names(pred), join_names(gold))
}

/// Labels a failed prediction; matched outcomes get no label.
pub fn classify(predicted: &str, gold: &str, catalog: &DatabaseCatalog, outcome: &EvalOutcome) -> Option<ErrorLabel> {
    use ErrorCategory::*;
    if outcome.matched {
        return None;
    }
    let pred = match analyze(predicted, catalog) {
        Ok(shape) => shape,
        Err(e) => return Some(ErrorLabel::new(SyntaxError, e.to_string())),
    };
    if let Some(message) = outcome.predicted_error.as_deref().filter(|m| looks_like_syntax_error(m)) {
        return Some(ErrorLabel::new(SyntaxError, message));
    }
    if !pred.unknown_tables.is_empty() {
        return Some(ErrorLabel::new(
            TablesNotExist,
            format!("unknown table(s): {}", join_names(&pred.unknown_tables)),
        ));
    }
    if !pred.unknown_columns.is_empty() {
        return Some(ErrorLabel::new(
            ColumnsNotExist,
            format!("unknown column(s): {}", join_names(&pred.unknown_columns)),
        ));
    }
    let gold = analyze(gold, catalog).unwrap_or_default();
    if (pred.has_join || gold.has_join) && pred.tables != gold.tables {
        return Some(ErrorLabel::new(JoinWrongTables, set_diff(&pred.tables, &gold.tables)));
    }
    if pred.has_join && gold.has_join && pred.join_columns != gold.join_columns {
        return Some(ErrorLabel::new(JoinWrongColumns, set_diff(&pred.join_columns, &gold.join_columns)));
    }
    if !gold.set_operations.is_empty() && pred.set_operations != gold.set_operations {
        return Some(ErrorLabel::new(
            SetOperation,
            format!("predicted {:?} vs gold {:?}", pred.set_operations, gold.set_operations),
        ));
    }
    if gold.subqueries > 0 && pred.subqueries != gold.subqueries {
        return Some(ErrorLabel::new(
            WrongSubQuery,
            format!("predicted {} sub-queries vs gold {}", pred.subqueries, gold.subqueries),
        ));
    }
    if pred.tables != gold.tables {
        return Some(ErrorLabel::new(WrongTables, set_diff(&pred.tables, &gold.tables)));
    }
    if pred.select_columns != gold.select_columns {
        return Some(ErrorLabel::new(WrongColumns, set_diff(&pred.select_columns, &gold.select_columns)));
    }
    if pred.group_by != gold.group_by {
        return Some(ErrorLabel::new(
            GroupByError,
            format!("predicted [{}] vs gold [{}]", pred.group_by.join(" "), gold.group_by.join(" ")),
        ));
    }
    let detail = outcome
        .predicted_error
        .clone()
        .unwrap_or_else(|| "result rows differ".to_string());
    Some(ErrorLabel::new(WrongWhere, detail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub category: ErrorCategory,
    pub group: String,
    pub label: String,
    pub count: usize,
    /// Share of all queries, in percent.
    pub proportion: f64,
}

/// Failure counts over all queries, one row per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTable {
    pub total_queries: usize,
    pub rows: Vec<FailureRow>,
}

impl FailureTable {
    pub fn failed(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn error_rate(&self) -> f64 {
        if self.total_queries == 0 {
            0.0
        } else {
            self.failed() as f64 * 100.0 / self.total_queries as f64
        }
    }

    pub fn row(&self, category: ErrorCategory) -> &FailureRow {
        self.rows.iter().find(|r| r.category == category).expect("every category has a row")
    }
}

impl fmt::Display for FailureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<30} {:<24} {:>8} {:>8}", "group", "error category", "count", "share")?;
        let mut last_group = "";
        for row in &self.rows {
            let group = if row.group == last_group { "" } else { row.group.as_str() };
            last_group = &row.group;
            writeln!(f, "{:<30} {:<24} {:>8} {:>7.2}%", group, row.label, row.count, row.proportion)?;
        }
        write!(f, "{:<30} {:<24} {:>8} {:>7.2}%", "total", "", self.failed(), self.error_rate())
    }
}

/// Counts labels; proportions are over `total_queries`, not over failures.
pub fn tabulate<'a, I>(labels: I, total_queries: usize) -> FailureTable
where
    I: IntoIterator<Item = &'a ErrorLabel>,
{
    let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    for label in labels {
        *counts.entry(label.category).or_default() += 1;
    }
    let rows = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let count = counts.get(&category).copied().unwrap_or(0);
            FailureRow {
                category,
                group: category.group().to_string(),
                label: category.label().to_string(),
                count,
                proportion: if total_queries == 0 {
                    0.0
                } else {
                    count as f64 * 100.0 / total_queries as f64
                },
            }
        })
        .collect();
    FailureTable { total_queries, rows }
}
