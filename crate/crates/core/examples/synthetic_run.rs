//! Generate records offline with the seeded synthetic provider.
//!
//! Same seed, same bytes: the store written here is identical on every run
//! and at any concurrency.
//!
//! cargo run --example synthetic_run

use std::collections::BTreeMap;

use bias_audit::corpus::{build_corpus, CorpusPlan, PromptTemplate};
use bias_audit::gateway::{
    run_corpus, Clock, RecordStore, RunOptions, SamplingParams, SyntheticModelConfig, SyntheticProvider,
};
use bias_audit::taxonomy::{builtin_names, standard_axes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = CorpusPlan {
        implicit_replicates: 1,
        explicit_gender_replicates: 4,
        explicit_eth_age_replicates: 2,
        ..CorpusPlan::default()
    };
    let specs = build_corpus(&builtin_names(), &standard_axes(), &plan, &PromptTemplate::default())?;

    let mut config = SyntheticModelConfig::uniform(7);
    config.refusal_probability = 0.05;
    config.default.politics = Some(BTreeMap::from([("liberal".into(), 0.8), ("conservative".into(), 0.2)]));
    let provider = SyntheticProvider::new(config)?;

    let dir = tempfile_dir()?;
    let mut store = RecordStore::open(dir.join("records.jsonl"))?;
    let options = RunOptions {
        concurrency: 8,
        clock: Clock::Fixed(chrono::DateTime::UNIX_EPOCH),
        ..RunOptions::default()
    };
    let summary = run_corpus(
        &specs,
        "synthetic-demo",
        &SamplingParams::default(),
        &provider,
        &mut store,
        &options,
    )?;
    println!("{summary:?}");

    // A second pass finds everything stored and sends nothing.
    let again = run_corpus(
        &specs,
        "synthetic-demo",
        &SamplingParams::default(),
        &provider,
        &mut store,
        &options,
    )?;
    println!("rerun: {} written, {} skipped", again.written, again.skipped);

    let records = RecordStore::read_all(dir.join("records.jsonl"))?;
    println!("\n{}", records[0].raw_text);
    std::fs::remove_dir_all(dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("bias-audit-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
