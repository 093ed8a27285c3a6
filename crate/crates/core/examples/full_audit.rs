//! Every stage, driven from a config file: corpus, run, parse, analyze, report.
//!
//! cargo run --example full_audit -- [CONFIG] [OUT]

use bias_audit::cli::{AuditConfig, Overrides, Pipeline, RunFlags};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config_path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/audit.toml").into());
    let overrides = Overrides {
        out: args.next().map(Into::into),
        ..Overrides::default()
    };
    let pipeline = Pipeline::new(AuditConfig::load(&config_path)?, &overrides)?;
    let written = pipeline.audit(RunFlags::default())?;

    let summary = pipeline.report_dir().join("summary_implicit.md");
    println!("\n{} files written; {}:\n", written.len(), summary.display());
    println!("{}", std::fs::read_to_string(summary)?);
    Ok(())
}
