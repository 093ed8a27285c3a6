//! Pipeline stages as subcommands over plain-file artifacts.
//!
//! ```text
//! <out>/corpus.jsonl
//! <out>/<model>/records.jsonl  profiles.jsonl  parse_report.json
//! <out>/<model>/distributions.csv  tests.csv  scores.csv  polarity.csv
//! <out>/report/...
//! ```

mod config;

pub use config::{AuditConfig, DataPaths, ModelConfig};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::DateTime;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::aggregate::{load_distributions, save_distributions, tally_all};
use crate::corpus::{build_corpus, load_corpus, save_corpus, total_generations, PromptSpec};
use crate::gateway::{
    run_corpus, Clock, Dialect, GatewayError, HttpChatProvider, Provider, RecordStore, RunOptions, RunSummary,
    SyntheticProvider, TokenBucket,
};
use crate::parser::{batch_parse, load_profiles, write_profiles, ParseReport, RefusalPhrases};
use crate::report::{build_bundle, export, path_component, ExportFormat, ReportInputs, ReportMetadata};
use crate::sentiment::{load_polarity, polarity_by_cell, save_polarity, Lexicon};
use crate::stats::{compute_scores, load_scores, load_tests, run_tests, save_scores, save_tests};
use crate::taxonomy::{
    builtin_names, builtin_references, load_names, load_reference, load_synonyms, standard_axes, NameEntry,
    ReferenceDistribution, SynonymMap, Taxonomy,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("incomplete replay: {0}")]
    IncompleteReplay(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Provider(_) => 3,
            CliError::IncompleteReplay(_) => 4,
            CliError::Io(..) | CliError::Internal(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::ProviderAuth(_) | GatewayError::BudgetExceeded(_) => CliError::Provider(e.to_string()),
            GatewayError::Store(_) | GatewayError::InvalidParams(_) | GatewayError::Corpus(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "bias-audit",
    version,
    about = "Demographic bias audits for text-generation models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Audit configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Only this model.
    #[arg(long, global = true, value_name = "ID")]
    pub model: Option<String>,
    /// Only models served by this provider.
    #[arg(long, global = true, value_name = "NAME")]
    pub provider: Option<String>,
    /// Seed for synthetic providers; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Use stored records only; fail if any are missing.
    #[arg(long, global = true)]
    pub replay: bool,
    /// Print the request counts of `run` without calling providers.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the prompt corpus.
    Corpus,
    /// Generate records for each model.
    Run,
    /// Parse records into profiles.
    Parse,
    /// Tally, test and score profiles.
    Analyze,
    /// Render tables and summaries.
    Report,
    /// All stages in order.
    Audit,
}

/// Selection and overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub provider: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunFlags {
    pub replay: bool,
    pub dry_run: bool,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: AuditConfig,
    models: Vec<ModelConfig>,
}

impl Pipeline {
    pub fn new(mut config: AuditConfig, overrides: &Overrides) -> Result<Self, CliError> {
        if let Some(out) = &overrides.out {
            config.out_dir = out.clone();
        }
        if overrides.seed.is_some() {
            config.seed = overrides.seed;
        }
        config.validate()?;
        let models: Vec<ModelConfig> = config
            .models
            .iter()
            .filter(|m| overrides.model.as_ref().is_none_or(|id| &m.model_id == id))
            .filter(|m| {
                overrides
                    .provider
                    .as_ref()
                    .is_none_or(|p| m.provider.eq_ignore_ascii_case(p))
            })
            .cloned()
            .collect();
        if models.is_empty() {
            return Err(CliError::Validation(
                "no configured model matches --model/--provider".into(),
            ));
        }
        Ok(Pipeline { config, models })
    }

    pub fn models(&self) -> &[ModelConfig] {
        &self.models
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.out_dir().join("corpus.jsonl")
    }

    pub fn model_dir(&self, model_id: &str) -> PathBuf {
        self.out_dir().join(path_component(model_id))
    }

    pub fn records_path(&self, model_id: &str) -> PathBuf {
        self.model_dir(model_id).join("records.jsonl")
    }

    pub fn profiles_path(&self, model_id: &str) -> PathBuf {
        self.model_dir(model_id).join("profiles.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir().join("report")
    }

    fn names(&self) -> Result<Vec<NameEntry>, CliError> {
        match &self.config.data.names {
            Some(p) => load_names(p).map_err(validation),
            None => Ok(builtin_names()),
        }
    }

    fn references(&self) -> Result<Vec<ReferenceDistribution>, CliError> {
        match &self.config.data.reference {
            Some(p) => load_reference(p).map_err(validation),
            None => Ok(builtin_references()),
        }
    }

    fn taxonomy(&self) -> Result<Taxonomy, CliError> {
        let synonyms = match &self.config.data.synonyms {
            Some(p) => load_synonyms(p).map_err(validation)?,
            None => SynonymMap::builtin(),
        };
        Ok(Taxonomy::with_synonyms(synonyms))
    }

    fn refusals(&self) -> Result<RefusalPhrases, CliError> {
        match &self.config.data.refusals {
            Some(p) => RefusalPhrases::load(p).map_err(|e| CliError::io(p, e)),
            None => Ok(RefusalPhrases::default()),
        }
    }

    fn lexicon(&self) -> Result<Lexicon, CliError> {
        match &self.config.data.lexicon {
            Some(p) => Lexicon::load(p).map_err(validation),
            None => Ok(Lexicon::builtin()),
        }
    }

    fn require(path: &Path, what: &str, stage: &str) -> Result<(), CliError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(CliError::Validation(format!(
                "missing {what} ({}); run `{stage}` first",
                path.display()
            )))
        }
    }

    fn load_specs(&self) -> Result<Vec<PromptSpec>, CliError> {
        let path = self.corpus_path();
        Self::require(&path, "corpus", "corpus")?;
        load_corpus(&path).map_err(validation)
    }

    fn create_dir(path: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
    }

    /// Builds the corpus and writes `corpus.jsonl`.
    pub fn corpus(&self) -> Result<Vec<PromptSpec>, CliError> {
        let specs = build_corpus(
            &self.names()?,
            &standard_axes(),
            &self.config.plan,
            &self.config.template()?,
        )
        .map_err(validation)?;
        Self::create_dir(self.out_dir())?;
        save_corpus(self.corpus_path(), &specs).map_err(validation)?;
        println!(
            "corpus: {} prompts, {} generations per model -> {}",
            specs.len(),
            total_generations(&specs),
            self.corpus_path().display()
        );
        Ok(specs)
    }

    fn provider(&self, model: &ModelConfig, specs: &[PromptSpec]) -> Result<Box<dyn Provider>, CliError> {
        if model.is_synthetic() {
            let mut synth = model.synthetic.clone().unwrap_or_default();
            synth.seed = self.config.seed.expect("validated: synthetic models have a seed");
            synth
                .check_coverage(specs)
                .map_err(|e| CliError::Validation(format!("model {}: {e}", model.model_id)))?;
            let provider = SyntheticProvider::new(synth).map_err(validation)?;
            return Ok(Box::new(provider));
        }
        let dialect: Dialect = model
            .dialect
            .as_deref()
            .unwrap_or(&model.provider)
            .parse()
            .map_err(CliError::Validation)?;
        let api_model = model.api_model.clone().unwrap_or_else(|| model.model_id.clone());
        let mut provider = HttpChatProvider::from_env(&model.provider, dialect, api_model)
            .map_err(|e| CliError::Provider(format!("model {}: {e}", model.model_id)))?;
        if let Some(endpoint) = &model.endpoint {
            provider = provider.with_endpoint(endpoint.clone());
        }
        Ok(Box::new(provider))
    }

    /// Generates records for every selected model.
    pub fn run(&self, flags: RunFlags) -> Result<Vec<(String, RunSummary)>, CliError> {
        let specs = self.load_specs()?;
        let template = self.config.template()?;
        let mut out = Vec::new();
        for model in &self.models {
            let path = self.records_path(&model.model_id);
            let store = if path.exists() {
                Some(RecordStore::open(&path).map_err(validation)?)
            } else {
                None
            };
            let missing: u64 = specs
                .iter()
                .flat_map(|s| (0..s.replicates).map(move |r| (s, r)))
                .filter(|(s, r)| store.as_ref().is_none_or(|st| !st.contains(&s.id, &model.model_id, *r)))
                .count() as u64;
            let planned = total_generations(&specs);
            if flags.dry_run {
                println!(
                    "{}: {planned} requests planned, {} already stored, {missing} to send",
                    model.model_id,
                    planned - missing
                );
                out.push((
                    model.model_id.clone(),
                    RunSummary {
                        planned,
                        skipped: planned - missing,
                        ..Default::default()
                    },
                ));
                continue;
            }
            if flags.replay {
                if missing > 0 {
                    return Err(CliError::IncompleteReplay(format!(
                        "{}: {missing} of {planned} records missing from {}",
                        model.model_id,
                        path.display()
                    )));
                }
                println!("{}: replaying {planned} stored records", model.model_id);
                out.push((
                    model.model_id.clone(),
                    RunSummary {
                        planned,
                        skipped: planned,
                        ..Default::default()
                    },
                ));
                continue;
            }
            drop(store);
            let provider = self.provider(model, &specs)?;
            Self::create_dir(&self.model_dir(&model.model_id))?;
            let mut store = RecordStore::open(&path).map_err(validation)?;
            let options = RunOptions {
                concurrency: self.config.concurrency,
                rate_limiter: (!model.is_synthetic()).then(|| {
                    Arc::new(TokenBucket::per_minute(
                        model.rate_limit_rpm,
                        self.config.concurrency as u32,
                    ))
                }),
                max_requests: model.max_requests,
                template: template.clone(),
                clock: if model.is_synthetic() {
                    Clock::Fixed(DateTime::UNIX_EPOCH)
                } else {
                    Clock::System
                },
                ..RunOptions::default()
            };
            let summary = run_corpus(&specs, &model.model_id, &model.params, &provider, &mut store, &options)?;
            println!(
                "{}: {} written, {} skipped, {} failures, {} requests",
                model.model_id, summary.written, summary.skipped, summary.failures, summary.requests
            );
            out.push((model.model_id.clone(), summary));
        }
        Ok(out)
    }

    /// Parses each model's records into `profiles.jsonl`.
    pub fn parse(&self) -> Result<Vec<(String, ParseReport)>, CliError> {
        let taxonomy = self.taxonomy()?;
        let refusals = self.refusals()?;
        let mut out = Vec::new();
        for model in &self.models {
            let records_path = self.records_path(&model.model_id);
            Self::require(&records_path, &format!("records for {}", model.model_id), "run")?;
            let records = RecordStore::read_all(&records_path).map_err(validation)?;
            let (profiles, report) = batch_parse(&records, &taxonomy, &refusals);
            let path = self.profiles_path(&model.model_id);
            let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_profiles(file, &profiles).map_err(|e| CliError::io(&path, e))?;
            let report_path = self.model_dir(&model.model_id).join("parse_report.json");
            let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
            std::fs::write(&report_path, json).map_err(|e| CliError::io(&report_path, e))?;
            println!(
                "{}: {} profiles, {} refusals, {} unparseable, {} with unmapped values, {} transport failures",
                model.model_id,
                report.profiles,
                report.refusals,
                report.unparseable,
                report.with_unmapped,
                report.transport_failures
            );
            out.push((model.model_id.clone(), report));
        }
        Ok(out)
    }

    /// Tallies, tests and scores each model; writes the analysis CSVs.
    pub fn analyze(&self) -> Result<(), CliError> {
        let specs = self.load_specs()?;
        let references = self.references()?;
        let lexicon = self.lexicon()?;
        let thresholds = self.config.thresholds();
        for model in &self.models {
            let profiles_path = self.profiles_path(&model.model_id);
            Self::require(&profiles_path, &format!("profiles for {}", model.model_id), "parse")?;
            let profiles = load_profiles(&profiles_path).map_err(validation)?;
            let records = RecordStore::read_all(self.records_path(&model.model_id)).map_err(validation)?;
            let dir = self.model_dir(&model.model_id);

            let tables = tally_all(&profiles, &specs).map_err(validation)?;
            save_distributions(dir.join("distributions.csv"), &tables).map_err(validation)?;
            let tests = run_tests(&tables, &references, &thresholds).map_err(validation)?;
            save_tests(dir.join("tests.csv"), &tests).map_err(validation)?;
            let scores = compute_scores(&tables, &tests, self.config.epsilon).map_err(validation)?;
            save_scores(dir.join("scores.csv"), &scores).map_err(validation)?;
            let polarity = polarity_by_cell(&records, &profiles, &specs, &lexicon);
            save_polarity(dir.join("polarity.csv"), &polarity).map_err(validation)?;
            for s in &scores {
                let stereo = s.stereotype.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
                println!(
                    "{} {} {}: stereotype {stereo}, deviation {} ({}/{})",
                    model.model_id, s.mode, s.category, s.deviation, s.deviation.significant, s.deviation.total
                );
            }
        }
        Ok(())
    }

    /// Builds and exports the report for the selected models.
    pub fn report(&self) -> Result<Vec<PathBuf>, CliError> {
        let (mut tables, mut tests, mut scores, mut polarity) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut metadata = ReportMetadata::new(self.config.epsilon, &self.config.star_thresholds);
        metadata.corpus_plan = Some(self.config.plan);
        metadata.template_id = Some(self.config.template()?.id);
        for model in &self.models {
            let dir = self.model_dir(&model.model_id);
            let dist_path = dir.join("distributions.csv");
            Self::require(&dist_path, &format!("analysis for {}", model.model_id), "analyze")?;
            tables.extend(load_distributions(&dist_path).map_err(validation)?);
            tests.extend(load_tests(dir.join("tests.csv")).map_err(validation)?);
            scores.extend(load_scores(dir.join("scores.csv")).map_err(validation)?);
            polarity.extend(load_polarity(dir.join("polarity.csv")).map_err(validation)?);
            for record in RecordStore::read_all(self.records_path(&model.model_id)).map_err(validation)? {
                let t = record.created_at;
                metadata.records_from = Some(metadata.records_from.map_or(t, |f| f.min(t)));
                metadata.records_to = Some(metadata.records_to.map_or(t, |f| f.max(t)));
            }
            metadata.models.push(model.model_id.clone());
        }
        let bundle = build_bundle(
            ReportInputs {
                distributions: &tables,
                tests: &tests,
                scores: &scores,
                polarity: &polarity,
                top_occupations: self.config.top_occupations,
            },
            metadata,
        )
        .map_err(validation)?;
        let formats = self
            .config
            .formats
            .iter()
            .map(|f| f.parse::<ExportFormat>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(validation)?;
        let dir = self.report_dir();
        let written = export(&bundle, &dir, &formats).map_err(validation)?;
        println!("report: {} files -> {}", written.len(), dir.display());
        Ok(written)
    }

    /// corpus, run (or replay), parse, analyze, report.
    pub fn audit(&self, flags: RunFlags) -> Result<Vec<PathBuf>, CliError> {
        self.corpus()?;
        self.run(RunFlags {
            dry_run: false,
            ..flags
        })?;
        self.parse()?;
        self.analyze()?;
        self.report()
    }
}

/// Runs one command line; returns the process exit code.
pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let config = AuditConfig::load(path)?;
    let overrides = Overrides {
        model: cli.model.clone(),
        provider: cli.provider.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let pipeline = Pipeline::new(config, &overrides)?;
    let flags = RunFlags {
        replay: cli.replay,
        dry_run: cli.dry_run,
    };
    match cli.command {
        Command::Corpus => pipeline.corpus().map(drop),
        Command::Run => pipeline.run(flags).map(drop),
        Command::Parse => pipeline.parse().map(drop),
        Command::Analyze => pipeline.analyze(),
        Command::Report => pipeline.report().map(drop),
        Command::Audit if flags.dry_run => {
            pipeline.corpus()?;
            pipeline.run(flags).map(drop)
        }
        Command::Audit => pipeline.audit(flags).map(drop),
    }
}

/// Entry point for the binary: parses `args`, runs, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
