//! Prompt assembly: zero-shot open prompts, few-shot prompts with example
//! schemas, and prompt/completion pairs for supervised fine-tuning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchmarkSplit, TaskInstance};
use crate::budget::{
    clamp_similarities, example_section_label, partition_columns, plan_example_truncation, truncate_examples,
    truncate_target, BudgetError, Section, TokenBudget, TokenCounter, TruncationRecord, TARGET_SECTION,
};
use crate::schema::{render_catalog, render_schema_format_header, single_line, DatabaseCatalog, SchemaVariant};

pub const RULE_LINE: &str = "### Complete sqlite SQL query only and with no explanation";
pub const FORMAT_LINE: &str = "### SQLite SQL tables are requested to be represented in the following format.";
pub const TABLES_LINE: &str = "### Here are SQLite SQL tables, with their properties:";
pub const USING_LINE: &str = "### Using valid SQLite, answer the following questions for the tables provided above.";
/// Completion cue every SQL-producing prompt ends with.
pub const CUE: &str = "SELECT";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("instance targets database `{instance}` but catalog is `{catalog}`")]
    DatabaseMismatch { instance: String, catalog: String },
    #[error("few-shot example {0} has an empty gold SQL")]
    EmptyExampleSql(i64),
    #[error("no catalog for database `{0}`")]
    UnknownDatabase(String),
    #[error("max_context {0} is below the 256-token minimum for fine-tuning pairs")]
    BudgetTooSmall(usize),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "step", rename_all = "snake_case")]
pub enum PromptRole {
    ZeroShot,
    FewShot,
    CotStep(usize),
    SftPair,
}

/// A rendered prompt with its token count and any truncation applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub token_count: usize,
    pub role: PromptRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationRecord>,
}

impl PromptBundle {
    pub fn new(text: String, role: PromptRole, counter: &dyn TokenCounter) -> Self {
        PromptBundle {
            token_count: counter.count(&text),
            text,
            role,
            truncation: None,
        }
    }
}

/// A few-shot example ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleBlock {
    pub instance: TaskInstance,
    /// Example schema, already truncated when budgeting applies.
    pub catalog: DatabaseCatalog,
    /// Average similarity to the target.
    pub similarity: f64,
}

/// Single-line text ending in exactly one period.
pub(crate) fn sentence(text: &str) -> String {
    let line = single_line(text);
    if line.ends_with('.') {
        line
    } else {
        format!("{line}.")
    }
}

pub(crate) fn question_line(question: &str) -> String {
    format!("### Question: {}\n", sentence(question))
}

/// The external-knowledge line, or nothing when there is no knowledge.
pub(crate) fn knowledge_line(knowledge: &str) -> String {
    if knowledge.trim().is_empty() {
        String::new()
    } else {
        format!("### Note that: {}\n", sentence(knowledge))
    }
}

fn check_database(instance: &TaskInstance, catalog: &DatabaseCatalog) -> Result<(), PromptError> {
    if instance.database_id != catalog.database_id {
        return Err(PromptError::DatabaseMismatch {
            instance: instance.database_id.clone(),
            catalog: catalog.database_id.clone(),
        });
    }
    Ok(())
}

/// Text of the zero-shot prompt for an (already filtered) catalog.
pub fn render_open_prompt(instance: &TaskInstance, catalog: &DatabaseCatalog, variant: SchemaVariant) -> String {
    let mut text = String::new();
    text.push_str(RULE_LINE);
    text.push('\n');
    text.push_str(FORMAT_LINE);
    text.push('\n');
    text.push_str(&render_schema_format_header(variant));
    text.push_str(TABLES_LINE);
    text.push('\n');
    text.push_str(&render_catalog(catalog, variant));
    text.push_str(&question_line(&instance.question));
    text.push_str(&knowledge_line(&instance.external_knowledge));
    text.push_str(CUE);
    text
}

pub fn build_open_prompt(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    variant: SchemaVariant,
    counter: &dyn TokenCounter,
) -> Result<PromptBundle, PromptError> {
    check_database(instance, catalog)?;
    Ok(PromptBundle::new(
        render_open_prompt(instance, catalog, variant),
        PromptRole::ZeroShot,
        counter,
    ))
}

/// Zero-shot prompt with target column truncation to fit the prompt limit.
pub fn build_open_prompt_budgeted(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    variant: SchemaVariant,
    counter: &dyn TokenCounter,
    budget: &TokenBudget,
    seed: u64,
) -> Result<PromptBundle, PromptError> {
    check_database(instance, catalog)?;
    let partition = partition_columns(catalog, None, &instance.question)?;
    let (kept, record) = truncate_target(
        catalog,
        &partition,
        budget.prompt_limit(),
        |c| counter.count(&render_open_prompt(instance, c, variant)),
        seed,
    )?;
    let mut bundle = PromptBundle::new(
        render_open_prompt(instance, &kept, variant),
        PromptRole::ZeroShot,
        counter,
    );
    bundle.truncation = Some(record);
    Ok(bundle)
}

/// Text of the few-shot prompt for already truncated catalogs.
pub fn render_few_shot_prompt(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    examples: &[(&TaskInstance, &DatabaseCatalog)],
    variant: SchemaVariant,
) -> String {
    let mut text = String::new();
    text.push_str(RULE_LINE);
    text.push('\n');
    text.push_str(FORMAT_LINE);
    text.push('\n');
    text.push_str(&render_schema_format_header(variant));
    text.push('\n');
    for (example, example_catalog) in examples {
        text.push_str(TABLES_LINE);
        text.push('\n');
        text.push_str(&render_catalog(example_catalog, variant));
        text.push_str(&question_line(&example.question));
        text.push_str(&knowledge_line(&example.external_knowledge));
        text.push_str(USING_LINE);
        text.push('\n');
        text.push_str(&single_line(&example.gold_sql));
        text.push_str("\n\n");
    }
    text.push_str(TABLES_LINE);
    text.push('\n');
    text.push_str(&render_catalog(catalog, variant));
    text.push_str(USING_LINE);
    text.push('\n');
    text.push_str(&question_line(&instance.question));
    text.push_str(&knowledge_line(&instance.external_knowledge));
    text.push_str(CUE);
    text
}

fn check_examples(examples: &[ExampleBlock]) -> Result<(), PromptError> {
    match examples.iter().find(|e| e.instance.gold_sql.trim().is_empty()) {
        Some(bad) => Err(PromptError::EmptyExampleSql(bad.instance.question_id)),
        None => Ok(()),
    }
}

pub fn build_few_shot_prompt(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    examples: &[ExampleBlock],
    variant: SchemaVariant,
    counter: &dyn TokenCounter,
) -> Result<PromptBundle, PromptError> {
    check_database(instance, catalog)?;
    check_examples(examples)?;
    let pairs: Vec<(&TaskInstance, &DatabaseCatalog)> = examples.iter().map(|e| (&e.instance, &e.catalog)).collect();
    Ok(PromptBundle::new(
        render_few_shot_prompt(instance, catalog, &pairs, variant),
        PromptRole::FewShot,
        counter,
    ))
}

/// Few-shot prompt with example column truncation.
///
/// Rates come from the examples' similarities at `temperature`; the target
/// partition is derived from the question, each example's from its gold SQL.
#[allow(clippy::too_many_arguments)]
pub fn build_few_shot_prompt_budgeted(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    examples: &[ExampleBlock],
    variant: SchemaVariant,
    counter: &dyn TokenCounter,
    budget: &TokenBudget,
    temperature: f64,
    seed: u64,
) -> Result<PromptBundle, PromptError> {
    check_database(instance, catalog)?;
    check_examples(examples)?;
    let similarities: Vec<f64> = examples.iter().map(|e| e.similarity).collect();
    let plan = plan_example_truncation(&clamp_similarities(&similarities), temperature)?;

    let mut sections = Vec::with_capacity(examples.len() + 1);
    sections.push(Section {
        label: TARGET_SECTION.to_string(),
        partition: partition_columns(catalog, None, &instance.question)?,
        catalog: catalog.clone(),
    });
    for (i, example) in examples.iter().enumerate() {
        sections.push(Section {
            label: example_section_label(i),
            partition: partition_columns(&example.catalog, Some(&example.instance.gold_sql), &example.instance.question)?,
            catalog: example.catalog.clone(),
        });
    }
    let render = |catalogs: &[DatabaseCatalog]| {
        let pairs: Vec<(&TaskInstance, &DatabaseCatalog)> = examples
            .iter()
            .zip(&catalogs[1..])
            .map(|(e, c)| (&e.instance, c))
            .collect();
        render_few_shot_prompt(instance, &catalogs[0], &pairs, variant)
    };
    let (kept, record) = truncate_examples(sections, &plan, budget.prompt_limit(), |c| counter.count(&render(c)), seed)?;
    let mut bundle = PromptBundle::new(render(&kept), PromptRole::FewShot, counter);
    bundle.truncation = Some(record);
    Ok(bundle)
}

/// One fine-tuning pair: the prompt ends with the cue, the completion
/// continues it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub prompt: String,
    pub completion: String,
}

/// Completion text continuing a prompt that already ends with the cue.
pub fn completion_for(gold_sql: &str) -> String {
    let sql = single_line(gold_sql);
    let sql = sql.trim_end_matches(';').trim_end();
    let head = sql.get(..CUE.len());
    let boundary = sql[CUE.len().min(sql.len())..]
        .chars()
        .next()
        .map_or(true, |c| !(c.is_alphanumeric() || c == '_'));
    if head.map_or(false, |h| h.eq_ignore_ascii_case(CUE)) && boundary {
        let rest = &sql[CUE.len()..];
        if rest.starts_with(' ') || rest.is_empty() {
            rest.to_string()
        } else {
            format!(" {rest}")
        }
    } else {
        format!(" {sql}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub question_id: i64,
    pub pair: SftPair,
    pub prompt_tokens: usize,
    pub total_tokens: usize,
    pub truncation: TruncationRecord,
}

/// Builds the fine-tuning pair for one instance. The prompt is truncated so
/// that prompt plus completion fits `budget.max_context`.
pub fn build_sft_pair(
    instance: &TaskInstance,
    catalog: &DatabaseCatalog,
    variant: SchemaVariant,
    counter: &dyn TokenCounter,
    budget: &TokenBudget,
    seed: u64,
) -> Result<SftRecord, PromptError> {
    check_database(instance, catalog)?;
    if budget.max_context < 256 {
        return Err(PromptError::BudgetTooSmall(budget.max_context));
    }
    let completion = completion_for(&instance.gold_sql);
    let partition = partition_columns(catalog, Some(&instance.gold_sql), &instance.question)?;
    let (kept, record) = truncate_target(
        catalog,
        &partition,
        budget.max_context,
        |c| {
            let mut text = render_open_prompt(instance, c, variant);
            text.push_str(&completion);
            counter.count(&text)
        },
        seed,
    )?;
    let prompt = render_open_prompt(instance, &kept, variant);
    let prompt_tokens = counter.count(&prompt);
    let total_tokens = counter.count(&format!("{prompt}{completion}"));
    Ok(SftRecord {
        question_id: instance.question_id,
        pair: SftPair { prompt, completion },
        prompt_tokens,
        total_tokens,
        truncation: record,
    })
}

/// Derives a per-item seed from the run seed.
pub fn derive_seed(seed: u64, item: i64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (item as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fine-tuning pairs for every instance of a split, in split order.
pub fn emit_sft_dataset<'a>(
    split: &'a BenchmarkSplit,
    variant: SchemaVariant,
    budget: TokenBudget,
    counter: &'a dyn TokenCounter,
    seed: u64,
) -> impl Iterator<Item = Result<SftRecord, PromptError>> + 'a {
    split.instances.iter().map(move |instance| {
        let catalog = split
            .catalog(&instance.database_id)
            .ok_or_else(|| PromptError::UnknownDatabase(instance.database_id.clone()))?;
        build_sft_pair(
            instance,
            catalog,
            variant,
            counter,
            &budget,
            derive_seed(seed, instance.question_id),
        )
    })
}
