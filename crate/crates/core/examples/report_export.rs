//! Render a category table and export it as Markdown and CSV.
//!
//! cargo run --example report_export

use bias_audit::aggregate::{CellKey, DistributionTable};
use bias_audit::corpus::PromptMode;
use bias_audit::report::{emit_category_table, ReportMetadata};
use bias_audit::stats::{run_tests, StarThresholds, DEFAULT_EPSILON};
use bias_audit::taxonomy::{builtin_references, AxisId, CategoryId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tables = Vec::new();
    for axis in AxisId::ALL {
        for (i, label) in axis.standard_labels().iter().enumerate() {
            let key = CellKey {
                model_id: "demo".into(),
                mode: PromptMode::Explicit,
                axis,
                attribute: label.to_string(),
            };
            let mut t = DistributionTable::empty(&key, CategoryId::SexualOrientation);
            let i = i as u64;
            t.counts.insert("heterosexual".into(), 30 + 3 * i);
            t.counts.insert("homosexual".into(), 10 - i);
            t.counts.insert("bisexual".into(), 8);
            t.refusal_count = 2 - i % 2;
            t.n = t.valid() + t.refusal_count;
            tables.push(t);
        }
    }
    let tests = run_tests(&tables, &builtin_references(), &StarThresholds::default())?;
    let table = emit_category_table(&tables, &tests)?;
    let mut meta = ReportMetadata::new(DEFAULT_EPSILON, &StarThresholds::default().0);
    meta.models.push("demo".into());

    println!("{}", table.to_markdown(&meta));
    table.write_csv(std::io::stdout(), &meta)?;
    Ok(())
}
