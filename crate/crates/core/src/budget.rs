//! Token counting and context-budget enforcement.
//!
//! Two truncation strategies live here. Target truncation removes random
//! non-essential columns from a single schema until the prompt fits.
//! Example truncation spreads the token excess over the target and every
//! few-shot example in proportion to softmax truncation rates, so the least
//! similar examples give up the most columns.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ColumnRef, DatabaseCatalog};
use crate::skeleton::{tokenize, SqlError, TokenKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("prompt needs {needed} tokens even after removing every removable column (limit {limit})")]
    UnsatisfiableBudget { needed: usize, limit: usize },
    #[error("similarity {0} is not positive")]
    NonpositiveSimilarity(f64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid budget: max_context {max_context} must exceed response_reserve {response_reserve} > 0")]
    InvalidBudget {
        max_context: usize,
        response_reserve: usize,
    },
    #[error(transparent)]
    Sql(#[from] SqlError),
}

/// Counts tokens in prompt text.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Dependency-free counter: every maximal run of word characters is one
/// token, every other non-whitespace character is its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SegmentCounter;

impl TokenCounter for SegmentCounter {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        let mut step = |word: bool, space: bool| {
            if word {
                count += usize::from(!in_word);
                in_word = true;
            } else {
                in_word = false;
                count += usize::from(!space);
            }
        };
        if text.is_ascii() {
            for &b in text.as_bytes() {
                step(b.is_ascii_alphanumeric() || b == b'_', b.is_ascii_whitespace() || b == 0x0b);
            }
        } else {
            for c in text.chars() {
                step(c.is_alphanumeric() || c == '_', c.is_whitespace());
            }
        }
        count
    }
}

impl<T: TokenCounter + ?Sized> TokenCounter for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

impl<T: TokenCounter + ?Sized> TokenCounter for std::sync::Arc<T> {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_context: usize,
    pub response_reserve: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget {
            max_context: 2048,
            response_reserve: 200,
        }
    }
}

impl TokenBudget {
    pub fn new(max_context: usize, response_reserve: usize) -> Result<Self, BudgetError> {
        let budget = TokenBudget {
            max_context,
            response_reserve,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.response_reserve == 0 || self.max_context <= self.response_reserve {
            return Err(BudgetError::InvalidBudget {
                max_context: self.max_context,
                response_reserve: self.response_reserve,
            });
        }
        Ok(())
    }

    /// Largest prompt that still leaves room for the response.
    pub fn prompt_limit(&self) -> usize {
        self.max_context - self.response_reserve
    }
}

/// Split of a catalog's columns into those a query needs and the rest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnPartition {
    pub target: BTreeSet<ColumnRef>,
    pub non_target: BTreeSet<ColumnRef>,
}

impl ColumnPartition {
    /// Partition with every column in the target set.
    pub fn all_target(catalog: &DatabaseCatalog) -> Self {
        ColumnPartition {
            target: catalog.column_refs().into_iter().collect(),
            non_target: BTreeSet::new(),
        }
    }

    pub fn is_target(&self, table: &str, column: &str) -> bool {
        self.target.contains(&(table.to_string(), column.to_string()))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "by", "with", "from", "and", "or",
    "is", "are", "was", "were", "be", "been", "it", "its", "this", "that", "these", "those",
    "what", "which", "who", "whom", "whose", "how", "many", "much", "list", "please", "give",
    "show", "name", "names", "all", "each", "per", "as", "do", "does", "did", "there", "their",
    "than", "more", "most", "less", "least", "top", "among", "between", "into", "has", "have",
    "had", "not", "no", "yes", "if", "else", "when", "where", "then", "any", "some", "id",
];

fn normalize_word(word: &str) -> Option<String> {
    let lower = word.to_lowercase();
    if lower.chars().count() < 2 || STOPWORDS.contains(&lower.as_str()) {
        return None;
    }
    let stem = if lower.len() > 3 && lower.ends_with('s') && !lower.ends_with("ss") {
        lower[..lower.len() - 1].to_string()
    } else {
        lower
    };
    Some(stem)
}

fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter_map(normalize_word)
        .collect()
}

/// Divides the catalog's columns into target and non-target sets.
///
/// With a reference query, target columns are the ones the query names (in
/// a table the query also names). Without one, a column is a target when
/// its name or description shares a content word with the question. Key
/// columns are always targets.
pub fn partition_columns(
    catalog: &DatabaseCatalog,
    reference_sql: Option<&str>,
    question: &str,
) -> Result<ColumnPartition, BudgetError> {
    let mut target: BTreeSet<ColumnRef> = catalog.key_columns();
    match reference_sql {
        Some(sql) => {
            let identifiers: BTreeSet<String> = tokenize(sql)?
                .into_iter()
                .filter(|t| t.kind == TokenKind::Identifier)
                .map(|t| t.unquoted().to_lowercase())
                .collect();
            for table in &catalog.tables {
                if !identifiers.contains(&table.name.to_lowercase()) {
                    continue;
                }
                for column in &table.columns {
                    if identifiers.contains(&column.name.to_lowercase()) {
                        target.insert((table.name.clone(), column.name.clone()));
                    }
                }
            }
        }
        None => {
            let question_words = content_words(question);
            for table in &catalog.tables {
                for column in &table.columns {
                    let mut words = content_words(&column.name);
                    if let Some(description) = &column.description {
                        words.extend(content_words(description));
                    }
                    if !words.is_disjoint(&question_words) {
                        target.insert((table.name.clone(), column.name.clone()));
                    }
                }
            }
        }
    }
    let non_target = catalog
        .column_refs()
        .into_iter()
        .filter(|c| !target.contains(c))
        .collect();
    Ok(ColumnPartition { target, non_target })
}

/// Columns removed from one prompt section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRemovals {
    pub section: String,
    pub columns: Vec<ColumnRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub sections: Vec<SectionRemovals>,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

impl TruncationRecord {
    pub fn total_removed(&self) -> usize {
        self.sections.iter().map(|s| s.columns.len()).sum()
    }

    pub fn removed_in(&self, section: &str) -> usize {
        self.sections
            .iter()
            .filter(|s| s.section == section)
            .map(|s| s.columns.len())
            .sum()
    }

    pub fn is_truncated(&self) -> bool {
        self.total_removed() > 0
    }
}

/// Label used for the target schema in truncation records.
pub const TARGET_SECTION: &str = "target";

pub fn example_section_label(index: usize) -> String {
    format!("example_{}", index + 1)
}

/// Removes random non-target columns, one at a time, until `measure` of the
/// remaining catalog is within `limit`.
pub fn truncate_target<F>(
    catalog: &DatabaseCatalog,
    partition: &ColumnPartition,
    limit: usize,
    mut measure: F,
    seed: u64,
) -> Result<(DatabaseCatalog, TruncationRecord), BudgetError>
where
    F: FnMut(&DatabaseCatalog) -> usize,
{
    let tokens_before = measure(catalog);
    let mut record = TruncationRecord {
        sections: vec![SectionRemovals {
            section: TARGET_SECTION.to_string(),
            columns: Vec::new(),
        }],
        tokens_before,
        tokens_after: tokens_before,
    };
    if tokens_before <= limit {
        return Ok((catalog.clone(), record));
    }
    let mut removable = removable_columns(catalog, partition);
    let mut floor = catalog.clone();
    for (table, column) in &removable {
        floor.remove_column(table, column);
    }
    let needed = measure(&floor);
    if needed > limit {
        return Err(BudgetError::UnsatisfiableBudget { needed, limit });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    removable.shuffle(&mut rng);
    let without = |n: usize| {
        let mut c = catalog.clone();
        for (table, column) in &removable[..n] {
            c.remove_column(table, column);
        }
        c
    };
    let n = shortest_prefix(removable.len(), |n| measure(&without(n)) <= limit).unwrap_or(removable.len());
    let current = without(n);
    record.tokens_after = measure(&current);
    record.sections[0].columns = removable[..n].to_vec();
    Ok((current, record))
}

/// Smallest `n` in `1..=len` for which `reached(n)` holds, given that
/// `reached` is monotone in `n`.
fn shortest_prefix(len: usize, mut reached: impl FnMut(usize) -> bool) -> Option<usize> {
    let (mut lo, mut hi) = (1usize, len);
    if len == 0 || !reached(hi) {
        return None;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

fn removable_columns(catalog: &DatabaseCatalog, partition: &ColumnPartition) -> Vec<ColumnRef> {
    catalog
        .column_refs()
        .into_iter()
        .filter(|c| partition.non_target.contains(c) && !partition.target.contains(c))
        .collect()
}

/// Truncation rates for the target (index 0) and each example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationPlan {
    pub rates: Vec<f64>,
    pub temperature: f64,
}

/// Floor applied to similarities before inversion.
pub const MIN_SIMILARITY: f64 = 1e-6;

/// Replaces non-positive similarities by [`MIN_SIMILARITY`], logging each one.
pub fn clamp_similarities(similarities: &[f64]) -> Vec<f64> {
    similarities
        .iter()
        .map(|&s| {
            if s > MIN_SIMILARITY {
                s
            } else {
                tracing::warn!(similarity = s, "clamping non-positive similarity before truncation planning");
                MIN_SIMILARITY
            }
        })
        .collect()
}

/// Softmax of `1/γ` over the target's own similarity (1) followed by the
/// example similarities, at temperature `temperature`.
pub fn plan_example_truncation(similarities: &[f64], temperature: f64) -> Result<TruncationPlan, BudgetError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(BudgetError::InvalidTemperature(temperature));
    }
    if let Some(&bad) = similarities.iter().find(|s| !(**s > 0.0)) {
        return Err(BudgetError::NonpositiveSimilarity(bad));
    }
    let logits: Vec<f64> = std::iter::once(1.0)
        .chain(similarities.iter().copied())
        .map(|s| (1.0 / s) / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(TruncationPlan {
        rates: exps.into_iter().map(|e| e / total).collect(),
        temperature,
    })
}

/// One schema section of a few-shot prompt.
#[derive(Debug, Clone)]
pub struct Section {
    pub label: String,
    pub catalog: DatabaseCatalog,
    pub partition: ColumnPartition,
}

/// Apportions the token excess over `limit` across sections by the plan's
/// rates and removes random non-target columns from each until its quota is
/// shed. Sections that run out of removable columns hand their leftover to
/// the rest, by renormalized rates.
///
/// `sections[0]` is the target; `plan.rates` must have one rate per section.
/// `measure` renders the whole prompt from the current section catalogs.
pub fn truncate_examples<F>(
    sections: Vec<Section>,
    plan: &TruncationPlan,
    limit: usize,
    mut measure: F,
    seed: u64,
) -> Result<(Vec<DatabaseCatalog>, TruncationRecord), BudgetError>
where
    F: FnMut(&[DatabaseCatalog]) -> usize,
{
    assert_eq!(
        sections.len(),
        plan.rates.len(),
        "one truncation rate per prompt section"
    );
    let mut catalogs: Vec<DatabaseCatalog> = sections.iter().map(|s| s.catalog.clone()).collect();
    let tokens_before = measure(&catalogs);
    let mut record = TruncationRecord {
        sections: sections
            .iter()
            .map(|s| SectionRemovals {
                section: s.label.clone(),
                columns: Vec::new(),
            })
            .collect(),
        tokens_before,
        tokens_after: tokens_before,
    };
    if tokens_before <= limit {
        return Ok((catalogs, record));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<ColumnRef>> = sections
        .iter()
        .map(|s| {
            let mut cols = removable_columns(&s.catalog, &s.partition);
            cols.shuffle(&mut rng);
            cols.reverse(); // popped from the back
            cols
        })
        .collect();

    let mut tokens = tokens_before;
    while tokens > limit {
        let mut active: Vec<usize> = (0..queues.len()).filter(|&i| !queues[i].is_empty()).collect();
        // highest rate sheds first, so overshoot lands on the least similar sections
        active.sort_by(|&a, &b| plan.rates[b].total_cmp(&plan.rates[a]).then(a.cmp(&b)));
        if active.is_empty() {
            return Err(BudgetError::UnsatisfiableBudget { needed: tokens, limit });
        }
        let excess = (tokens - limit) as f64;
        let rate_total: f64 = active.iter().map(|&i| plan.rates[i]).sum();
        for &i in &active {
            if tokens <= limit {
                break;
            }
            let quota = (excess * plan.rates[i] / rate_total).ceil().max(1.0) as usize;
            let queue = std::mem::take(&mut queues[i]);
            let order: Vec<ColumnRef> = queue.iter().rev().cloned().collect();
            let base = catalogs[i].clone();
            let mut probed: Option<(usize, usize)> = None;
            let mut probe = |catalogs: &mut Vec<DatabaseCatalog>, n: usize| {
                if probed.map_or(true, |(m, _)| m != n) {
                    catalogs[i] = base.clone();
                    for (table, column) in &order[..n] {
                        catalogs[i].remove_column(table, column);
                    }
                    probed = Some((n, measure(catalogs)));
                }
                probed.map_or(0, |(_, t)| t)
            };
            let n = shortest_prefix(order.len(), |n| tokens.saturating_sub(probe(&mut catalogs, n)) >= quota)
                .unwrap_or(order.len());
            tokens = probe(&mut catalogs, n);
            record.sections[i].columns.extend(order[..n].iter().cloned());
            queues[i] = order[n..].iter().rev().cloned().collect();
        }
    }
    record.tokens_after = tokens;
    Ok((catalogs, record))
}
