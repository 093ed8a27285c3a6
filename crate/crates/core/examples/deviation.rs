//! Deviation score: the share of tested cells that differ from reference data.
//!
//! cargo run --example deviation

use bias_audit::aggregate::{CellKey, DistributionTable};
use bias_audit::corpus::PromptMode;
use bias_audit::stats::{deviation_score, run_tests, star_marker, StarThresholds};
use bias_audit::taxonomy::{builtin_references, AxisId, CategoryId};

fn table(axis: AxisId, attribute: &str, counts: [u64; 3], refusals: u64) -> DistributionTable {
    let key = CellKey {
        model_id: "demo".into(),
        mode: PromptMode::Implicit,
        axis,
        attribute: attribute.into(),
    };
    let mut t = DistributionTable::empty(&key, CategoryId::Politics);
    for (value, count) in ["conservative", "liberal", "neutral"].into_iter().zip(counts) {
        t.counts.insert(value.into(), count);
    }
    t.refusal_count = refusals;
    t.n = counts.iter().sum::<u64>() + refusals;
    t
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tables = vec![
        table(AxisId::Gender, "Male", [180, 140, 180], 0),
        table(AxisId::Gender, "Female", [130, 170, 200], 0),
        table(AxisId::Age, "Millennial", [2, 45, 3], 0),
    ];
    let tests = run_tests(&tables, &builtin_references(), &StarThresholds::default())?;
    for t in &tests {
        println!(
            "{:<7} {:<11} {:<13} {:>3}/{:<3} ref {:.2}  p = {:.2e} {}",
            t.axis,
            t.attribute,
            t.value,
            t.k,
            t.n,
            t.p_ref,
            t.p_value,
            star_marker(t.stars)
        );
    }
    let dev = deviation_score(&tests)?;
    println!("\ndeviation {dev} ({}/{})", dev.significant, dev.total);
    Ok(())
}
