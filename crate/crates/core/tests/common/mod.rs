#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use bias_audit::aggregate::{CellKey, DistributionTable};
use bias_audit::corpus::PromptMode;
use bias_audit::taxonomy::{AxisId, CategoryId};
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[derive(Deserialize)]
struct CellRow {
    model: String,
    mode: String,
    category: String,
    axis: AxisId,
    attribute: String,
    n: u64,
    column: String,
    value: String,
    stars: Option<u8>,
}

/// One printed cell of a published category table.
#[derive(Debug, Clone)]
pub struct PublishedCell {
    pub model: String,
    pub mode: PromptMode,
    pub category: CategoryId,
    pub axis: AxisId,
    pub attribute: String,
    pub n: u64,
    pub column: String,
    /// Percentage as printed, two decimals.
    pub value: String,
    /// Empty for columns that carry no test.
    pub stars: Option<u8>,
}

impl PublishedCell {
    pub fn key(&self) -> CellKey {
        CellKey {
            model_id: self.model.clone(),
            mode: self.mode,
            axis: self.axis,
            attribute: self.attribute.clone(),
        }
    }

    pub fn count(&self) -> u64 {
        let pct: f64 = self.value.parse().expect("numeric cell");
        (pct * self.n as f64 / 100.0).round() as u64
    }
}

pub fn published_cells() -> Vec<PublishedCell> {
    let mut rdr = csv::Reader::from_path(fixture("published_tables.csv")).expect("fixture");
    rdr.deserialize::<CellRow>()
        .map(|r| {
            let r = r.expect("fixture row");
            PublishedCell {
                model: r.model,
                mode: r.mode.parse().expect("mode"),
                category: r.category.parse().expect("category"),
                axis: r.axis,
                attribute: r.attribute,
                n: r.n,
                column: r.column,
                value: r.value,
                stars: r.stars,
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct ScoreRow {
    model: String,
    mode: String,
    category: String,
    stereotype: String,
    deviation: String,
}

/// A printed Stereo./Dev. pair of the summary matrices.
#[derive(Debug, Clone)]
pub struct PublishedScore {
    pub model: String,
    pub mode: PromptMode,
    pub category: CategoryId,
    pub stereotype: String,
    pub deviation: String,
}

pub fn published_scores() -> Vec<PublishedScore> {
    let mut rdr = csv::Reader::from_path(fixture("published_scores.csv")).expect("fixture");
    rdr.deserialize::<ScoreRow>()
        .map(|r| {
            let r = r.expect("fixture row");
            PublishedScore {
                model: r.model,
                mode: r.mode.parse().expect("mode"),
                category: r.category.parse().expect("category"),
                stereotype: r.stereotype,
                deviation: r.deviation,
            }
        })
        .collect()
}

/// Count tables rebuilt from the printed percentages of one published table.
pub fn published_tables(model: &str, mode: PromptMode, category: CategoryId) -> Vec<DistributionTable> {
    let mut tables: BTreeMap<CellKey, DistributionTable> = BTreeMap::new();
    for cell in published_cells()
        .into_iter()
        .filter(|c| c.model == model && c.mode == mode && c.category == category)
    {
        let table = tables.entry(cell.key()).or_insert_with(|| {
            let mut t = DistributionTable::empty(&cell.key(), category);
            t.n = cell.n;
            t
        });
        let count = cell.count();
        match cell.column.as_str() {
            "Refusal" => table.refusal_count = count,
            "LGBTQ" => {}
            other => {
                if count > 0 {
                    table.counts.insert(other.to_lowercase(), count);
                }
            }
        }
    }
    let mut out: Vec<DistributionTable> = tables.into_values().collect();
    for t in &mut out {
        t.unparsed_count = t.n - t.valid() - t.refusal_count;
    }
    out
}

pub fn models() -> Vec<String> {
    let mut seen = Vec::new();
    for c in published_cells() {
        if !seen.contains(&c.model) {
            seen.push(c.model);
        }
    }
    seen
}
