use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use opensql::budget::{SegmentCounter, TokenBudget};
use opensql::cot::CotMode;
use opensql::gateway::GatewayMode;
use opensql::pipeline::{
    build_prompt_for, cmd_prep_sft, cmd_run, cmd_serialize_schema, curate_for, ingest_summary, read_report, RunConfig, Services,
};
use opensql::schema::SchemaVariant;

#[derive(Parser)]
#[command(name = "opensql", version, about = "Text-to-SQL prompting and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a split and print what was found.
    IngestCheck(ConfigArgs),
    /// Write every database schema in all nine variants.
    SerializeSchema(ConfigArgs),
    /// Print the prompt a run would send for one question.
    BuildPrompt(QuestionArgs),
    /// Print the examples curated for one question.
    Curate(QuestionArgs),
    /// Predict, execute and score a whole split.
    Run(ConfigArgs),
    /// Write fine-tuning pairs as JSONL.
    PrepSft(ConfigArgs),
    /// Print a report written by `run`.
    Report {
        /// Path to report.json.
        path: PathBuf,
    },
}

#[derive(Args)]
struct QuestionArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    question_id: i64,
    /// Draft SQL used for curation instead of asking the model.
    #[arg(long)]
    draft_sql: Option<String>,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark_root: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    variant: Option<SchemaVariant>,
    #[arg(long)]
    mode: Option<CotMode>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    pool_root: Option<PathBuf>,
    #[arg(long)]
    pool_split: Option<String>,
    #[arg(long)]
    max_context: Option<usize>,
    #[arg(long)]
    response_reserve: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    truncation_seed: Option<u64>,
    #[arg(long)]
    restrict_step2: Option<bool>,
    #[arg(long, env = "OPENSQL_ENDPOINT_URL")]
    endpoint_url: Option<String>,
    #[arg(long, env = "OPENSQL_MODEL")]
    model: Option<String>,
    #[arg(long, env = "OPENSQL_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long)]
    sampling_temperature: Option<f64>,
    #[arg(long, env = "OPENSQL_EMBEDDING_URL")]
    embedding_url: Option<String>,
    #[arg(long)]
    embedding_model: Option<String>,
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    #[arg(long, value_parser = parse_gateway_mode)]
    gateway_mode: Option<GatewayMode>,
    #[arg(long)]
    replay_store: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    exec_timeout_secs: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
}

fn parse_gateway_mode(s: &str) -> Result<GatewayMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "live" => Ok(GatewayMode::Live),
        "record" => Ok(GatewayMode::Record),
        "replay" => Ok(GatewayMode::Replay),
        other => Err(format!("unknown gateway mode `{other}` (live, record, replay)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => {
                let root = self
                    .benchmark_root
                    .clone()
                    .context("either --config or --benchmark-root is required")?;
                RunConfig::new(root)
            }
        };
        macro_rules! set {
            ($flag:ident => $field:expr) => {
                if let Some(v) = &self.$flag {
                    $field = v.clone();
                }
            };
            ($flag:ident => some $field:expr) => {
                if let Some(v) = &self.$flag {
                    $field = Some(v.clone());
                }
            };
        }
        set!(benchmark_root => config.benchmark_root);
        set!(split => config.split);
        set!(variant => config.variant);
        set!(mode => config.mode);
        set!(shots => config.shots);
        set!(pool_root => some config.pool_root);
        set!(pool_split => some config.pool_split);
        set!(temperature => config.temperature);
        set!(truncation_seed => config.truncation_seed);
        set!(restrict_step2 => config.restrict_step2);
        set!(endpoint_url => config.endpoint.base_url);
        set!(model => config.endpoint.model_id);
        set!(api_key => some config.endpoint.api_key);
        set!(sampling_temperature => config.endpoint.sampling_temperature);
        set!(embedding_cache => some config.embedding_cache);
        set!(gateway_mode => config.gateway_mode);
        set!(replay_store => some config.replay_store);
        set!(output_dir => config.output_dir);
        set!(workers => config.workers);
        set!(exec_timeout_secs => config.exec_timeout_secs);
        set!(limit => some config.limit);
        if self.max_context.is_some() || self.response_reserve.is_some() {
            config.budget = TokenBudget {
                max_context: self.max_context.unwrap_or(config.budget.max_context),
                response_reserve: self.response_reserve.unwrap_or(config.budget.response_reserve),
            };
        }
        if let Some(url) = &self.embedding_url {
            let mut endpoint = config
                .embedding_endpoint
                .take()
                .unwrap_or_else(|| opensql::gateway::LlmEndpoint::new(url.clone(), config.endpoint.model_id.clone()));
            endpoint.base_url = url.clone();
            endpoint.api_key = config.endpoint.api_key.clone();
            config.embedding_endpoint = Some(endpoint);
        }
        if let (Some(model), Some(endpoint)) = (&self.embedding_model, config.embedding_endpoint.as_mut()) {
            endpoint.model_id = model.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::IngestCheck(args) => {
            let config = args.resolve()?;
            let split = config.load_split()?;
            println!("{}", ingest_summary(&split));
        }
        Command::SerializeSchema(args) => {
            let config = args.resolve()?;
            let split = config.load_split()?;
            let written = cmd_serialize_schema(&split, &config.output_dir)?;
            println!("wrote {} schema files under {}", written.len(), config.output_dir.join("schemas").display());
        }
        Command::BuildPrompt(q) => {
            let config = q.config.resolve()?;
            config.validate()?;
            let split = config.load_split()?;
            let services = Services::from_config(&config)?;
            let bundle = build_prompt_for(&config, &split, &services, q.question_id, q.draft_sql)?;
            print!("{}", bundle.text);
            eprintln!("\n[{} tokens]", bundle.token_count);
        }
        Command::Curate(q) => {
            let config = q.config.resolve()?;
            if config.shots == 0 {
                bail!("curate needs --shots > 0 and --pool-split");
            }
            config.validate()?;
            let split = config.load_split()?;
            let services = Services::from_config(&config)?;
            let (curated, chosen) = curate_for(&config, &split, &services, q.question_id, q.draft_sql)?;
            for (triple, instance) in curated.selected.iter().zip(&chosen) {
                println!(
                    "{}\t{}\tq={:.4}\td={:.4}\ts={:.4}\ta={:.4}",
                    instance.question_id, instance.database_id, triple.gamma_q, triple.gamma_d, triple.gamma_s, triple.gamma_a
                );
            }
        }
        Command::Run(args) => {
            let config = args.resolve()?;
            let outputs = cmd_run(&config)?;
            println!("{}", outputs.report);
            println!("report: {}", outputs.report_path.display());
            println!("traces: {}", outputs.traces_path.display());
            println!("config: {}", outputs.config_path.display());
        }
        Command::PrepSft(args) => {
            let config = args.resolve()?;
            let split = config.load_split()?;
            let counter = Arc::new(SegmentCounter);
            let summary = cmd_prep_sft(&config, &split, counter.as_ref())?;
            println!("wrote {} pairs to {}", summary.written, summary.path.display());
            for (qid, reason) in &summary.skipped {
                println!("skipped {qid}: {reason}");
            }
            println!("{}", summary.stats);
        }
        Command::Report { path } => {
            let report = read_report(&path)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
