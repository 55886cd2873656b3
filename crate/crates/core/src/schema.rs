//! Catalog data model and the commented schema block rendered into prompts.
//!
//! A catalog renders as one block per table followed by the foreign keys:
//!
//! ```text
//! # movies (
//! #   movie_id: int, (id of the movie), PRIMARY_KEY
//! #   movie_title: text, (title of the movie)
//! # )
//! # FOREIGN KEYS:
//! # ratings.movie_id=movies.movie_id
//! ```
//!
//! Which elements appear on a column line is chosen by [`SchemaVariant`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("column filter names unknown table `{0}`")]
    UnknownTableInFilter(String),
    #[error("column filter names unknown column `{table}.{column}`")]
    UnknownColumnInFilter { table: String, column: String },
    #[error("unknown schema variant `{0}`")]
    UnknownVariant(String),
}

/// Column type vocabulary used in schema blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Int,
    Date,
    Datetime,
    Real,
    Varchar,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Int => "int",
            ColumnType::Date => "date",
            ColumnType::Datetime => "datetime",
            ColumnType::Real => "real",
            ColumnType::Varchar => "varchar",
        }
    }

    /// Maps a SQLite declared type onto the vocabulary.
    ///
    /// Matching is case-insensitive and by substring; anything unmatched
    /// (including an empty declaration) is `text`.
    pub fn from_declared(declared: &str) -> ColumnType {
        let decl = declared.to_ascii_lowercase();
        if decl.contains("datetime") || decl.contains("timestamp") {
            ColumnType::Datetime
        } else if decl.contains("date") {
            ColumnType::Date
        } else if decl.contains("varchar") {
            ColumnType::Varchar
        } else if decl.contains("int") {
            ColumnType::Int
        } else if ["real", "floa", "doub", "numeric", "decimal"]
            .iter()
            .any(|needle| decl.contains(needle))
        {
            ColumnType::Real
        } else {
            ColumnType::Text
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: ColumnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Distinct sample values; present only for columns with 1..=5 distinct values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(default)]
    pub is_primary_key: bool,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, type_name: ColumnType) -> Self {
        ColumnSpec {
            name: name.into(),
            type_name,
            description: None,
            values: None,
            is_primary_key: false,
        }
    }

    pub fn with_description(mut self, description: impl AsRef<str>) -> Self {
        let text = single_line(description.as_ref());
        self.description = if text.is_empty() { None } else { Some(text) };
        self
    }

    pub fn with_values<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let values: Vec<String> = values.into_iter().map(Into::into).collect();
        self.values = if values.is_empty() || values.len() > MAX_SAMPLE_VALUES {
            None
        } else {
            Some(values)
        };
        self
    }

    pub fn primary_key(mut self) -> Self {
        self.is_primary_key = true;
        self
    }
}

/// Upper bound on the number of distinct values listed for a column.
pub const MAX_SAMPLE_VALUES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>) -> Self {
        TableSpec {
            name: name.into(),
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

impl ForeignKey {
    pub fn new(
        table: impl Into<String>,
        column: impl Into<String>,
        ref_table: impl Into<String>,
        ref_column: impl Into<String>,
    ) -> Self {
        ForeignKey {
            table: table.into(),
            column: column.into(),
            ref_table: ref_table.into(),
            ref_column: ref_column.into(),
        }
    }
}

/// A `(table, column)` pair identifying one column of a catalog.
pub type ColumnRef = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseCatalog {
    pub database_id: String,
    pub tables: Vec<TableSpec>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl DatabaseCatalog {
    pub fn new(database_id: impl Into<String>) -> Self {
        DatabaseCatalog {
            database_id: database_id.into(),
            tables: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table(table)
            .map_or(false, |t| t.column(column).is_some())
    }

    /// Every column in catalog order.
    pub fn column_refs(&self) -> Vec<ColumnRef> {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(move |c| (t.name.clone(), c.name.clone())))
            .collect()
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Columns that are primary keys or an endpoint of a foreign key.
    pub fn key_columns(&self) -> BTreeSet<ColumnRef> {
        let mut keys = BTreeSet::new();
        for table in &self.tables {
            for column in table.columns.iter().filter(|c| c.is_primary_key) {
                keys.insert((table.name.clone(), column.name.clone()));
            }
        }
        for fk in &self.foreign_keys {
            keys.insert((fk.table.clone(), fk.column.clone()));
            keys.insert((fk.ref_table.clone(), fk.ref_column.clone()));
        }
        keys
    }

    /// Checks the structural invariants: unique names, FK endpoints present.
    pub fn validate(&self) -> Result<(), String> {
        let mut table_names = BTreeSet::new();
        for table in &self.tables {
            if table.name.is_empty() {
                return Err("empty table name".into());
            }
            if !table_names.insert(table.name.to_ascii_lowercase()) {
                return Err(format!("duplicate table `{}`", table.name));
            }
            let mut column_names = BTreeSet::new();
            for column in &table.columns {
                if !column_names.insert(column.name.to_ascii_lowercase()) {
                    return Err(format!("duplicate column `{}.{}`", table.name, column.name));
                }
                if let Some(values) = &column.values {
                    if values.is_empty() || values.len() > MAX_SAMPLE_VALUES {
                        return Err(format!(
                            "column `{}.{}` lists {} values",
                            table.name,
                            column.name,
                            values.len()
                        ));
                    }
                }
            }
        }
        for fk in &self.foreign_keys {
            if !self.has_column(&fk.table, &fk.column) || !self.has_column(&fk.ref_table, &fk.ref_column) {
                return Err(format!(
                    "foreign key {}.{}={}.{} has a missing endpoint",
                    fk.table, fk.column, fk.ref_table, fk.ref_column
                ));
            }
        }
        Ok(())
    }

    /// Returns a copy holding only the columns kept by `filter`.
    ///
    /// Tables absent from the filter are dropped; foreign keys survive only
    /// when both endpoints do.
    pub fn filtered(&self, filter: &ColumnFilter) -> Result<DatabaseCatalog, SchemaError> {
        for (table, columns) in &filter.keep {
            let spec = self
                .table(table)
                .ok_or_else(|| SchemaError::UnknownTableInFilter(table.clone()))?;
            for column in columns {
                if spec.column(column).is_none() {
                    return Err(SchemaError::UnknownColumnInFilter {
                        table: table.clone(),
                        column: column.clone(),
                    });
                }
            }
        }
        let lookup: BTreeMap<String, BTreeSet<String>> = filter
            .keep
            .iter()
            .map(|(t, cols)| {
                (
                    t.to_ascii_lowercase(),
                    cols.iter().map(|c| c.to_ascii_lowercase()).collect(),
                )
            })
            .collect();
        let tables = self
            .tables
            .iter()
            .filter_map(|table| {
                let kept = lookup.get(&table.name.to_ascii_lowercase())?;
                Some(TableSpec {
                    name: table.name.clone(),
                    columns: table
                        .columns
                        .iter()
                        .filter(|c| kept.contains(&c.name.to_ascii_lowercase()))
                        .cloned()
                        .collect(),
                })
            })
            .collect();
        let mut out = DatabaseCatalog {
            database_id: self.database_id.clone(),
            tables,
            foreign_keys: Vec::new(),
        };
        out.foreign_keys = self
            .foreign_keys
            .iter()
            .filter(|fk| out.has_column(&fk.table, &fk.column) && out.has_column(&fk.ref_table, &fk.ref_column))
            .cloned()
            .collect();
        Ok(out)
    }

    /// Removes one column in place, along with any foreign key touching it.
    pub fn remove_column(&mut self, table: &str, column: &str) -> bool {
        let Some(spec) = self
            .tables
            .iter_mut()
            .find(|t| t.name.eq_ignore_ascii_case(table))
        else {
            return false;
        };
        let before = spec.columns.len();
        spec.columns.retain(|c| !c.name.eq_ignore_ascii_case(column));
        if spec.columns.len() == before {
            return false;
        }
        self.foreign_keys.retain(|fk| {
            !(fk.table.eq_ignore_ascii_case(table) && fk.column.eq_ignore_ascii_case(column))
                && !(fk.ref_table.eq_ignore_ascii_case(table) && fk.ref_column.eq_ignore_ascii_case(column))
        });
        true
    }
}

/// Selects which columns of a catalog are rendered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnFilter {
    keep: BTreeMap<String, BTreeSet<String>>,
}

impl ColumnFilter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps every column of the named tables.
    pub fn tables<'a, I>(catalog: &DatabaseCatalog, tables: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut filter = ColumnFilter::new();
        for name in tables {
            if let Some(table) = catalog.table(name) {
                filter.keep_table(&table.name);
                for column in &table.columns {
                    filter.keep_column(&table.name, &column.name);
                }
            }
        }
        filter
    }

    pub fn keep_table(&mut self, table: &str) -> &mut Self {
        self.keep.entry(table.to_string()).or_default();
        self
    }

    pub fn keep_column(&mut self, table: &str, column: &str) -> &mut Self {
        self.keep
            .entry(table.to_string())
            .or_default()
            .insert(column.to_string());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

/// The nine column-definition layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemaVariant {
    #[serde(rename = "C_N")]
    CN,
    #[serde(rename = "C_T")]
    CT,
    #[serde(rename = "C_D")]
    CD,
    #[serde(rename = "C_V")]
    CV,
    #[serde(rename = "C_P")]
    CP,
    #[serde(rename = "C_VD")]
    CVD,
    #[serde(rename = "C_VDT")]
    CVDT,
    #[serde(rename = "C_VDP")]
    CVDP,
    #[serde(rename = "C_A")]
    CA,
}

/// Elements a variant places on each column line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnElements {
    pub type_name: bool,
    pub description: bool,
    pub values: bool,
    pub primary_key: bool,
}

impl ColumnElements {
    fn any(self) -> bool {
        self.type_name || self.description || self.values || self.primary_key
    }
}

impl SchemaVariant {
    pub const ALL: [SchemaVariant; 9] = [
        SchemaVariant::CN,
        SchemaVariant::CT,
        SchemaVariant::CD,
        SchemaVariant::CV,
        SchemaVariant::CP,
        SchemaVariant::CVD,
        SchemaVariant::CVDT,
        SchemaVariant::CVDP,
        SchemaVariant::CA,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SchemaVariant::CN => "C_N",
            SchemaVariant::CT => "C_T",
            SchemaVariant::CD => "C_D",
            SchemaVariant::CV => "C_V",
            SchemaVariant::CP => "C_P",
            SchemaVariant::CVD => "C_VD",
            SchemaVariant::CVDT => "C_VDT",
            SchemaVariant::CVDP => "C_VDP",
            SchemaVariant::CA => "C_A",
        }
    }

    pub fn elements(self) -> ColumnElements {
        let (type_name, description, values, primary_key) = match self {
            SchemaVariant::CN => (false, false, false, false),
            SchemaVariant::CT => (true, false, false, false),
            SchemaVariant::CD => (false, true, false, false),
            SchemaVariant::CV => (false, false, true, false),
            SchemaVariant::CP => (false, false, false, true),
            SchemaVariant::CVD => (false, true, true, false),
            SchemaVariant::CVDT => (true, true, true, false),
            SchemaVariant::CVDP => (false, true, true, true),
            SchemaVariant::CA => (true, true, true, true),
        };
        ColumnElements {
            type_name,
            description,
            values,
            primary_key,
        }
    }
}

impl fmt::Display for SchemaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SchemaVariant {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase().replace('-', "_");
        SchemaVariant::ALL
            .into_iter()
            .find(|v| v.tag() == wanted || v.tag().replace('_', "") == wanted)
            .ok_or_else(|| SchemaError::UnknownVariant(s.to_string()))
    }
}

/// Collapses every whitespace run (including newlines) into one space.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_value(value: &str) -> String {
    if value.contains(',') || value.contains('"') {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Renders one column line, without the trailing newline.
pub fn render_column(column: &ColumnSpec, variant: SchemaVariant) -> String {
    let elements = variant.elements();
    if !elements.any() {
        return format!("#   {}", column.name);
    }
    let mut parts: Vec<String> = Vec::with_capacity(4);
    if elements.type_name {
        parts.push(column.type_name.as_str().to_string());
    }
    if elements.description {
        if let Some(description) = &column.description {
            parts.push(format!("({description})"));
        }
    }
    if elements.values {
        if let Some(values) = &column.values {
            let joined: Vec<String> = values.iter().map(|v| render_value(v)).collect();
            parts.push(format!("({})", joined.join(", ")));
        }
    }
    if elements.primary_key && column.is_primary_key {
        parts.push("PRIMARY_KEY".to_string());
    }
    if parts.is_empty() {
        format!("#   {}:", column.name)
    } else {
        format!("#   {}: {}", column.name, parts.join(", "))
    }
}

/// Renders the schema block for `catalog`, optionally restricted by `keep`.
pub fn render_schema(
    catalog: &DatabaseCatalog,
    variant: SchemaVariant,
    keep: Option<&ColumnFilter>,
) -> Result<String, SchemaError> {
    match keep {
        Some(filter) => Ok(render_catalog(&catalog.filtered(filter)?, variant)),
        None => Ok(render_catalog(catalog, variant)),
    }
}

/// Renders an already-filtered catalog. Infallible counterpart of [`render_schema`].
pub fn render_catalog(catalog: &DatabaseCatalog, variant: SchemaVariant) -> String {
    if catalog.tables.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for table in &catalog.tables {
        out.push_str("# ");
        out.push_str(&table.name);
        out.push_str(" (\n");
        for column in &table.columns {
            out.push_str(&render_column(column, variant));
            out.push('\n');
        }
        out.push_str("# )\n");
    }
    out.push_str("# FOREIGN KEYS:\n");
    for fk in &catalog.foreign_keys {
        out.push_str(&format!(
            "# {}.{}={}.{}\n",
            fk.table, fk.column, fk.ref_table, fk.ref_column
        ));
    }
    out
}

/// The generic format block describing how a variant lays out tables.
pub fn render_schema_format_header(variant: SchemaVariant) -> String {
    let column_lines: &[&str] = match variant {
        SchemaVariant::CN => &["# COLUMN_NAME"],
        SchemaVariant::CT => &["# COLUMN_NAME: TYPE"],
        SchemaVariant::CD => &["# COLUMN_NAME: DESCRIPTION"],
        SchemaVariant::CV => &["# COLUMN_NAME: (ENUM_VALUE, ENUM_VALUE2, ...)"],
        SchemaVariant::CP => &["# COLUMN_NAME: PRIMARY_KEY", "# COLUMN_NAME:"],
        SchemaVariant::CVD => &["# COLUMN_NAME: (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...)"],
        SchemaVariant::CVDT => &["# COLUMN_NAME: TYPE, (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...)"],
        SchemaVariant::CVDP => &[
            "# COLUMN_NAME: (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...), PRIMARY_KEY",
            "# COLUMN_NAME: (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...)",
        ],
        SchemaVariant::CA => &[
            "# COLUMN_NAME: TYPE, (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...), PRIMARY_KEY",
            "# COLUMN_NAME: TYPE, (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...)",
        ],
    };
    format_header_with(column_lines)
}

pub(crate) fn format_header_with(column_lines: &[&str]) -> String {
    let mut out = String::from("# TABLE_NAME (\n");
    for line in column_lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("# )\n# FOREIGN KEYS:\n# TABLE_NAME1.COLUMN_NAME1 = TABLE_NAME2.COLUMN_NAME2\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn movies() -> DatabaseCatalog {
        DatabaseCatalog {
            database_id: "movie_platform".into(),
            tables: vec![
                TableSpec::new(
                    "movies",
                    vec![
                        ColumnSpec::new("movie_id", ColumnType::Int)
                            .with_description("id of the movie")
                            .primary_key(),
                        ColumnSpec::new("movie_release_year", ColumnType::Int)
                            .with_description("year of release"),
                        ColumnSpec::new("genre", ColumnType::Text).with_values(["drama", "comedy"]),
                    ],
                ),
                TableSpec::new(
                    "ratings",
                    vec![
                        ColumnSpec::new("movie_id", ColumnType::Int),
                        ColumnSpec::new("score", ColumnType::Real),
                    ],
                ),
            ],
            foreign_keys: vec![ForeignKey::new("ratings", "movie_id", "movies", "movie_id")],
        }
    }

    #[test]
    fn cvdt_line_matches_listing_shape() {
        let text = render_schema(&movies(), SchemaVariant::CVDT, None).unwrap();
        assert!(text.contains("#   movie_release_year: int, (year of release)\n"));
        assert!(text.contains("#   genre: text, (drama, comedy)\n"));
    }

    #[test]
    fn cn_lines_are_bare_names() {
        let text = render_schema(&movies(), SchemaVariant::CN, None).unwrap();
        for line in text.lines().filter(|l| l.starts_with("#   ")) {
            assert!(!line.contains(':'), "{line}");
            assert!(!line.contains('('), "{line}");
        }
        assert!(text.contains("#   score\n"));
    }

    #[test]
    fn cp_non_key_has_no_dangling_separator() {
        let text = render_schema(&movies(), SchemaVariant::CP, None).unwrap();
        assert!(text.contains("#   movie_id: PRIMARY_KEY\n"));
        assert!(text.contains("#   score:\n"));
    }

    #[test]
    fn empty_catalog_renders_nothing() {
        let catalog = DatabaseCatalog::new("empty");
        for variant in SchemaVariant::ALL {
            assert_eq!(render_schema(&catalog, variant, None).unwrap(), "");
        }
    }

    #[test]
    fn filter_drops_foreign_keys_with_missing_endpoint() {
        let catalog = movies();
        let mut filter = ColumnFilter::tables(&catalog, ["movies"]);
        filter.keep_column("ratings", "score");
        let text = render_schema(&catalog, SchemaVariant::CN, Some(&filter)).unwrap();
        assert!(text.ends_with("# FOREIGN KEYS:\n"));
        assert!(text.contains("# ratings (\n#   score\n# )\n"));
        assert!(!text.contains("ratings.movie_id=movies.movie_id"));
    }

    #[test]
    fn unknown_filter_column_is_rejected() {
        let catalog = movies();
        let mut filter = ColumnFilter::new();
        filter.keep_column("movies", "nope");
        assert_eq!(
            render_schema(&catalog, SchemaVariant::CN, Some(&filter)),
            Err(SchemaError::UnknownColumnInFilter {
                table: "movies".into(),
                column: "nope".into()
            })
        );
    }

    #[test]
    fn values_with_commas_are_quoted() {
        let column = ColumnSpec::new("city", ColumnType::Text).with_values(["Paris, FR", "Oslo"]);
        assert_eq!(
            render_column(&column, SchemaVariant::CV),
            "#   city: (\"Paris, FR\", Oslo)"
        );
    }

    #[test]
    fn declared_types_normalize() {
        assert_eq!(ColumnType::from_declared("INTEGER"), ColumnType::Int);
        assert_eq!(ColumnType::from_declared("DATETIME"), ColumnType::Datetime);
        assert_eq!(ColumnType::from_declared("date"), ColumnType::Date);
        assert_eq!(ColumnType::from_declared("VARCHAR(255)"), ColumnType::Varchar);
        assert_eq!(ColumnType::from_declared("REAL"), ColumnType::Real);
        assert_eq!(ColumnType::from_declared("float"), ColumnType::Real);
        assert_eq!(ColumnType::from_declared(""), ColumnType::Text);
        assert_eq!(ColumnType::from_declared("BLOB"), ColumnType::Text);
    }

    #[test]
    fn headers_for_key_bearing_variants_have_two_forms() {
        let header = render_schema_format_header(SchemaVariant::CP);
        assert!(header.contains("# COLUMN_NAME: PRIMARY_KEY\n# COLUMN_NAME:\n"));
        let header = render_schema_format_header(SchemaVariant::CA);
        assert!(header.contains("TYPE, (DESCRIPTION), (ENUM_VALUE, ENUM_VALUE2, ...), PRIMARY_KEY"));
        let header = render_schema_format_header(SchemaVariant::CV);
        assert!(header.contains("# COLUMN_NAME: (ENUM_VALUE, ENUM_VALUE2, ...)\n"));
    }

    #[test]
    fn variant_tags_parse() {
        for variant in SchemaVariant::ALL {
            assert_eq!(variant.tag().parse::<SchemaVariant>().unwrap(), variant);
        }
        assert_eq!("cvdt".parse::<SchemaVariant>().unwrap(), SchemaVariant::CVDT);
        assert!("C_X".parse::<SchemaVariant>().is_err());
    }
}
