//! Appendix-style tables, summary matrices, and their file exports.
//!
//! Tables are built into a format-neutral [`RenderedTable`] first; the CSV,
//! Markdown and JSONL writers only lay out what is already there, so the
//! formats cannot disagree on a cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{group_lgbtq, rank_occupations, CellKey, DistributionTable};
use crate::corpus::{CorpusPlan, PromptMode};
use crate::sentiment::PolarityStats;
use crate::stats::{star_marker, BiasScores, DeviationScore, TestResult, SIGNIFICANCE_LEVEL};
use crate::taxonomy::{display_label, display_value, AxisId, CategoryId};

pub const REFUSAL_POLICY: &str = "n counts every returned generation including refusals and unparsed ones; \
binomial tests use the full n; KL distributions use category values only; transport failures are excluded";

pub const DEFAULT_TOP_OCCUPATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot join tests to tables for {cell}: {detail}")]
    JoinFailure { cell: String, detail: String },
    #[error("summary is missing {category} for {model_id} ({mode})")]
    MissingCell {
        model_id: String,
        mode: PromptMode,
        category: CategoryId,
    },
    #[error("unknown export format {0:?} (expected csv, markdown or jsonl)")]
    UnknownFormat(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Settings and provenance embedded in every export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub epsilon: f64,
    pub star_thresholds: Vec<f64>,
    pub significance_level: f64,
    pub refusal_policy: String,
    pub corpus_plan: Option<CorpusPlan>,
    pub template_id: Option<String>,
    pub models: Vec<String>,
    /// Earliest and latest `created_at` among the records analysed.
    pub records_from: Option<DateTime<Utc>>,
    pub records_to: Option<DateTime<Utc>>,
}

impl ReportMetadata {
    pub fn new(epsilon: f64, star_thresholds: &[f64]) -> Self {
        ReportMetadata {
            tool: concat!("bias-audit ", env!("CARGO_PKG_VERSION")).to_string(),
            epsilon,
            star_thresholds: star_thresholds.to_vec(),
            significance_level: SIGNIFICANCE_LEVEL,
            refusal_policy: REFUSAL_POLICY.to_string(),
            corpus_plan: None,
            template_id: None,
            models: Vec::new(),
            records_from: None,
            records_to: None,
        }
    }

    fn json(&self) -> String {
        serde_json::to_string(self).expect("metadata serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableKind {
    Category(CategoryId),
    Occupation,
    Polarity,
}

impl TableKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            TableKind::Category(c) => c.as_str(),
            TableKind::Occupation => "occupation",
            TableKind::Polarity => "polarity",
        }
    }

    fn title(self) -> &'static str {
        match self {
            TableKind::Category(c) => c.display_name(),
            TableKind::Occupation => "Occupation",
            TableKind::Polarity => "Polarity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    /// A percentage; `stars` is `None` for columns that are not tested.
    Pct {
        value: f64,
        stars: Option<u8>,
    },
    /// A statistic printed to two decimals; `None` prints as n/a.
    Stat(Option<f64>),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Pct { value, stars } => format!("{value:.2}{}", star_marker(stars.unwrap_or(0))),
            Cell::Stat(Some(v)) => format!("{v:.2}"),
            Cell::Stat(None) => "n/a".to_string(),
            Cell::Text(t) => t.clone(),
        }
    }

    /// (value, stars) fields of the long CSV format.
    fn csv_fields(&self) -> (String, String) {
        match self {
            Cell::Pct { value, stars } => (format!("{value:.2}"), stars.map(|s| s.to_string()).unwrap_or_default()),
            Cell::Stat(v) => (v.map(|v| format!("{v:.2}")).unwrap_or_default(), String::new()),
            Cell::Text(t) => (t.clone(), String::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedRow {
    pub axis: AxisId,
    pub attribute: String,
    /// Printed in the row label when set: "Male (n=500)".
    pub n: Option<u64>,
    pub cells: Vec<Cell>,
}

impl RenderedRow {
    pub fn label(&self) -> String {
        let label = display_label(self.axis, &self.attribute);
        match self.n {
            Some(n) => format!("{label} (n={n})"),
            None => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedTable {
    pub model_id: String,
    pub mode: PromptMode,
    pub kind: TableKind,
    pub columns: Vec<String>,
    pub rows: Vec<RenderedRow>,
}

impl RenderedTable {
    pub fn cell(&self, attribute: &str, column: &str) -> Option<&Cell> {
        let col = self.columns.iter().position(|c| c == column)?;
        self.rows
            .iter()
            .find(|r| r.attribute == attribute)
            .map(|r| &r.cells[col])
    }

    pub fn to_markdown(&self, metadata: &ReportMetadata) -> String {
        let mut out = String::new();
        writeln!(out, "<!-- bias-audit metadata {} -->", metadata.json()).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "### {}: {} ({})", self.model_id, self.kind.title(), self.mode).unwrap();
        writeln!(out).unwrap();
        let header: Vec<&str> = ["Axis", "Attribute"]
            .into_iter()
            .chain(self.columns.iter().map(String::as_str))
            .collect();
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        let align: Vec<&str> = (0..header.len()).map(|i| if i < 2 { "---" } else { "---:" }).collect();
        writeln!(out, "|{}|", align.join("|")).unwrap();
        let mut last_axis = None;
        for row in &self.rows {
            let axis = if last_axis == Some(row.axis) {
                String::new()
            } else {
                format!("**{}**", row.axis.display_name())
            };
            last_axis = Some(row.axis);
            let cells: Vec<String> = row.cells.iter().map(|c| c.render().replace('|', "\\|")).collect();
            writeln!(out, "| {} | {} | {} |", axis, row.label(), cells.join(" | ")).unwrap();
        }
        out
    }

    pub fn write_csv(&self, mut writer: impl Write, metadata: &ReportMetadata) -> Result<(), ReportError> {
        let io = |e| ReportError::Io(PathBuf::from("<csv>"), e);
        writeln!(writer, "# bias-audit metadata {}", metadata.json()).map_err(io)?;
        writeln!(
            writer,
            "# table {} {} {}",
            self.model_id,
            self.mode,
            self.kind.file_stem()
        )
        .map_err(io)?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["axis", "attribute", "n", "column", "value", "stars"])?;
        for row in &self.rows {
            for (column, cell) in self.columns.iter().zip(&row.cells) {
                let (value, stars) = cell.csv_fields();
                let n = row.n.map(|n| n.to_string()).unwrap_or_default();
                csv.write_record([row.axis.as_str(), &row.attribute, &n, column, &value, &stars])?;
            }
        }
        csv.flush().map_err(io)?;
        Ok(())
    }
}

fn check_single_cell<'a>(tables: &[&'a DistributionTable]) -> Result<(&'a str, PromptMode, CategoryId), ReportError> {
    let first = tables.first().ok_or_else(|| ReportError::JoinFailure {
        cell: "<none>".into(),
        detail: "no distribution tables".into(),
    })?;
    let head = (first.model_id.as_str(), first.mode, first.category);
    for t in tables {
        if (t.model_id.as_str(), t.mode, t.category) != head {
            return Err(ReportError::JoinFailure {
                cell: t.key().to_string(),
                detail: format!(
                    "table mixes {}/{}/{} into {}/{}/{}",
                    t.model_id, t.mode, t.category, head.0, head.1, head.2
                ),
            });
        }
    }
    Ok(head)
}

fn sorted<'a>(tables: &[&'a DistributionTable]) -> Vec<&'a DistributionTable> {
    let mut out = tables.to_vec();
    out.sort_by_key(|t| t.key());
    out
}

/// Appendix table for one (model, mode, closed category).
///
/// Tested columns carry the stars of the matching test result; the Refusal
/// column never does. An Unparsed column appears only when some row has
/// unparsed responses.
pub fn emit_category_table(tables: &[DistributionTable], tests: &[TestResult]) -> Result<RenderedTable, ReportError> {
    let refs: Vec<&DistributionTable> = tables.iter().collect();
    let (model_id, mode, category) = check_single_cell(&refs)?;
    let tables = sorted(&refs);

    let mut by_cell: HashMap<(CellKey, &str), &TestResult> = HashMap::new();
    for test in tests
        .iter()
        .filter(|t| t.model_id == model_id && t.mode == mode && t.category == category)
    {
        if by_cell.insert((test.key(), test.value.as_str()), test).is_some() {
            return Err(ReportError::JoinFailure {
                cell: test.key().to_string(),
                detail: format!("duplicate test for {}", test.value),
            });
        }
    }
    let mut used = BTreeSet::new();
    let mut stars_for = |table: &DistributionTable, value: &str, count: u64| -> Result<u8, ReportError> {
        let key = table.key();
        let test = by_cell
            .get(&(key.clone(), value))
            .ok_or_else(|| ReportError::JoinFailure {
                cell: key.to_string(),
                detail: format!("no test result for {value}"),
            })?;
        if test.k != count || test.n != table.n {
            return Err(ReportError::JoinFailure {
                cell: key.to_string(),
                detail: format!(
                    "test for {value} has k={} n={}, table has {count}/{}",
                    test.k, test.n, table.n
                ),
            });
        }
        used.insert((key, value.to_string()));
        Ok(test.stars)
    };

    let show_unparsed = tables.iter().any(|t| t.unparsed_count > 0);
    let mut columns: Vec<String> = match category {
        CategoryId::SexualOrientation => ["Heterosexual", "LGBTQ", "Homosexual", "Bisexual", "Other"]
            .map(String::from)
            .to_vec(),
        _ => category.canonical_values().iter().map(|v| display_value(v)).collect(),
    };
    if show_unparsed {
        columns.push("Unparsed".into());
    }
    columns.push("Refusal".into());

    let mut rows = Vec::new();
    for table in &tables {
        let mut cells = Vec::new();
        if category == CategoryId::SexualOrientation {
            let grouped = group_lgbtq(table).map_err(|e| ReportError::JoinFailure {
                cell: table.key().to_string(),
                detail: e.to_string(),
            })?;
            for (i, (value, count)) in grouped.columns().into_iter().enumerate() {
                let stars = if i < 2 {
                    Some(stars_for(table, value, count)?)
                } else {
                    None
                };
                cells.push(Cell::Pct {
                    value: table.percentage(count),
                    stars,
                });
            }
        } else {
            for value in category.canonical_values() {
                let count = table.count(value);
                let stars = stars_for(table, value, count)?;
                cells.push(Cell::Pct {
                    value: table.percentage(count),
                    stars: Some(stars),
                });
            }
        }
        if show_unparsed {
            cells.push(Cell::Pct {
                value: table.unparsed_pct(),
                stars: None,
            });
        }
        cells.push(Cell::Pct {
            value: table.refusal_pct(),
            stars: None,
        });
        rows.push(RenderedRow {
            axis: table.axis,
            attribute: table.attribute.clone(),
            n: Some(table.n),
            cells,
        });
    }
    if let Some(((key, value), _)) = by_cell
        .iter()
        .find(|(k, _)| !used.contains(&(k.0.clone(), k.1.to_string())))
    {
        return Err(ReportError::JoinFailure {
            cell: key.to_string(),
            detail: format!("test for {value} has no table row"),
        });
    }
    Ok(RenderedTable {
        model_id: model_id.to_string(),
        mode,
        kind: TableKind::Category(category),
        columns,
        rows,
    })
}

/// Most frequent occupations per cell, `k` per row.
pub fn emit_occupation_table(tables: &[DistributionTable], k: usize) -> Result<RenderedTable, ReportError> {
    let refs: Vec<&DistributionTable> = tables.iter().collect();
    let (model_id, mode, _) = check_single_cell(&refs)?;
    let rows = sorted(&refs)
        .into_iter()
        .map(|t| RenderedRow {
            axis: t.axis,
            attribute: t.attribute.clone(),
            n: None,
            cells: vec![
                Cell::Text(rank_occupations(t, k).to_string()),
                Cell::Pct {
                    value: t.refusal_pct(),
                    stars: None,
                },
            ],
        })
        .collect();
    Ok(RenderedTable {
        model_id: model_id.to_string(),
        mode,
        kind: TableKind::Occupation,
        columns: vec!["Most Popular Occupations".into(), "Refusal".into()],
        rows,
    })
}

/// Median and standard deviation of polarity per cell.
pub fn emit_polarity_table(stats: &[PolarityStats]) -> Result<RenderedTable, ReportError> {
    let first = stats.first().ok_or_else(|| ReportError::JoinFailure {
        cell: "<none>".into(),
        detail: "no polarity statistics".into(),
    })?;
    let mut sorted: Vec<&PolarityStats> = stats.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let rows = sorted
        .into_iter()
        .map(|s| RenderedRow {
            axis: s.key.axis,
            attribute: s.key.attribute.clone(),
            n: None,
            cells: vec![
                Cell::Stat(s.median),
                Cell::Stat(s.std),
                Cell::Pct {
                    value: s.refusal_pct,
                    stars: None,
                },
            ],
        })
        .collect();
    Ok(RenderedTable {
        model_id: first.key.model_id.clone(),
        mode: first.key.mode,
        kind: TableKind::Polarity,
        columns: vec!["Median".into(), "Standard Deviation".into(), "Refusal".into()],
        rows,
    })
}

/// One row of a summary matrix: per model, (stereotype, deviation).
pub type SummaryRow = (CategoryId, Vec<(Option<f64>, DeviationScore)>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMatrix {
    pub mode: PromptMode,
    pub models: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn fmt_stereo(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".to_string())
}

impl SummaryMatrix {
    pub fn to_markdown(&self, metadata: &ReportMetadata) -> String {
        let mut out = String::new();
        writeln!(out, "<!-- bias-audit metadata {} -->", metadata.json()).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "### Bias scores ({})", self.mode).unwrap();
        writeln!(out).unwrap();
        let mut header = vec!["Category".to_string()];
        for m in &self.models {
            header.push(format!("{m} Stereo."));
            header.push(format!("{m} Dev."));
        }
        writeln!(out, "| {} |", header.join(" | ")).unwrap();
        let align: Vec<&str> = (0..header.len()).map(|i| if i == 0 { "---" } else { "---:" }).collect();
        writeln!(out, "|{}|", align.join("|")).unwrap();
        for (category, entries) in &self.rows {
            let mut cells = vec![category.display_name().to_string()];
            for (stereo, dev) in entries {
                cells.push(fmt_stereo(*stereo));
                cells.push(dev.to_string());
            }
            writeln!(out, "| {} |", cells.join(" | ")).unwrap();
        }
        out
    }

    pub fn write_csv(&self, mut writer: impl Write, metadata: &ReportMetadata) -> Result<(), ReportError> {
        let io = |e| ReportError::Io(PathBuf::from("<csv>"), e);
        writeln!(writer, "# bias-audit metadata {}", metadata.json()).map_err(io)?;
        writeln!(writer, "# summary {}", self.mode).map_err(io)?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["category", "model", "stereotype", "deviation", "significant", "total"])?;
        for (category, entries) in &self.rows {
            for (model, (stereo, dev)) in self.models.iter().zip(entries) {
                let stereo = stereo.map(|v| format!("{v:.3}")).unwrap_or_default();
                csv.write_record([
                    category.as_str(),
                    model,
                    &stereo,
                    &dev.to_string(),
                    &dev.significant.to_string(),
                    &dev.total.to_string(),
                ])?;
            }
        }
        csv.flush().map_err(io)?;
        Ok(())
    }
}

/// Stereotype and deviation per closed category and model for one mode.
pub fn emit_summary(scores: &[BiasScores], models: &[String], mode: PromptMode) -> Result<SummaryMatrix, ReportError> {
    let index: BTreeMap<(&str, CategoryId), &BiasScores> = scores
        .iter()
        .filter(|s| s.mode == mode)
        .map(|s| ((s.model_id.as_str(), s.category), s))
        .collect();
    let mut rows = Vec::new();
    for category in CategoryId::CLOSED {
        let mut entries = Vec::new();
        for model in models {
            let s = index
                .get(&(model.as_str(), category))
                .ok_or_else(|| ReportError::MissingCell {
                    model_id: model.clone(),
                    mode,
                    category,
                })?;
            entries.push((s.stereotype, s.deviation));
        }
        rows.push((category, entries));
    }
    Ok(SummaryMatrix {
        mode,
        models: models.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: ReportMetadata,
    pub tables: Vec<RenderedTable>,
    pub summaries: Vec<SummaryMatrix>,
}

/// Everything the report is built from.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub distributions: &'a [DistributionTable],
    pub tests: &'a [TestResult],
    pub scores: &'a [BiasScores],
    pub polarity: &'a [PolarityStats],
    pub top_occupations: usize,
}

/// Builds every table for every (model, mode) present, plus one summary per mode.
pub fn build_bundle(inputs: ReportInputs<'_>, mut metadata: ReportMetadata) -> Result<ReportBundle, ReportError> {
    let mut groups: BTreeMap<(String, PromptMode), BTreeMap<CategoryId, Vec<DistributionTable>>> = BTreeMap::new();
    for t in inputs.distributions {
        groups
            .entry((t.model_id.clone(), t.mode))
            .or_default()
            .entry(t.category)
            .or_default()
            .push(t.clone());
    }
    let mut polarity: BTreeMap<(String, PromptMode), Vec<PolarityStats>> = BTreeMap::new();
    for p in inputs.polarity {
        polarity
            .entry((p.key.model_id.clone(), p.key.mode))
            .or_default()
            .push(p.clone());
    }

    let mut tables = Vec::new();
    for ((model_id, mode), by_category) in &groups {
        for category in CategoryId::CLOSED {
            if let Some(cat_tables) = by_category.get(&category) {
                tables.push(emit_category_table(cat_tables, inputs.tests)?);
            }
        }
        if let Some(occ) = by_category.get(&CategoryId::Occupation) {
            tables.push(emit_occupation_table(occ, inputs.top_occupations)?);
        }
        if let Some(stats) = polarity.get(&(model_id.clone(), *mode)) {
            tables.push(emit_polarity_table(stats)?);
        }
    }

    let mut summaries = Vec::new();
    for mode in PromptMode::ALL {
        let models: Vec<String> = inputs
            .scores
            .iter()
            .filter(|s| s.mode == mode)
            .map(|s| s.model_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !models.is_empty() {
            summaries.push(emit_summary(inputs.scores, &models, mode)?);
        }
    }
    if metadata.models.is_empty() {
        metadata.models = groups
            .keys()
            .map(|(m, _)| m.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
    }
    Ok(ReportBundle {
        metadata,
        tables,
        summaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExportFormat {
    Csv,
    Markdown,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "md" | "markdown" => Ok(ExportFormat::Markdown),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// File-system safe form of a model id.
pub fn path_component(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ReportError::Io(parent.to_path_buf(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| ReportError::Io(path.to_path_buf(), e))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Writes the bundle under `dir` as
/// `<model>/<mode>/<table>.{csv,md}`, `summary_<mode>.{csv,md}`,
/// `tables.jsonl` and `metadata.jsonl`. Returns the files written.
pub fn export(
    bundle: &ReportBundle,
    dir: impl AsRef<Path>,
    formats: &[ExportFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    let formats: BTreeSet<ExportFormat> = formats.iter().copied().collect();
    let meta = &bundle.metadata;
    let mut written = Vec::new();
    let mut meta_line = meta.json();
    meta_line.push('\n');
    write_file(&dir.join("metadata.jsonl"), meta_line.as_bytes(), &mut written)?;

    for table in &bundle.tables {
        let base = dir
            .join(path_component(&table.model_id))
            .join(table.mode.as_str())
            .join(table.kind.file_stem());
        if formats.contains(&ExportFormat::Csv) {
            let mut buf = Vec::new();
            table.write_csv(&mut buf, meta)?;
            write_file(&base.with_extension("csv"), &buf, &mut written)?;
        }
        if formats.contains(&ExportFormat::Markdown) {
            write_file(
                &base.with_extension("md"),
                table.to_markdown(meta).as_bytes(),
                &mut written,
            )?;
        }
    }
    for summary in &bundle.summaries {
        let base = dir.join(format!("summary_{}", summary.mode));
        if formats.contains(&ExportFormat::Csv) {
            let mut buf = Vec::new();
            summary.write_csv(&mut buf, meta)?;
            write_file(&base.with_extension("csv"), &buf, &mut written)?;
        }
        if formats.contains(&ExportFormat::Markdown) {
            write_file(
                &base.with_extension("md"),
                summary.to_markdown(meta).as_bytes(),
                &mut written,
            )?;
        }
    }
    if formats.contains(&ExportFormat::Jsonl) {
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &serde_json::json!({ "metadata": meta }))?;
        buf.push(b'\n');
        for table in &bundle.tables {
            serde_json::to_writer(&mut buf, &serde_json::json!({ "table": table }))?;
            buf.push(b'\n');
        }
        for summary in &bundle.summaries {
            serde_json::to_writer(&mut buf, &serde_json::json!({ "summary": summary }))?;
            buf.push(b'\n');
        }
        write_file(&dir.join("tables.jsonl"), &buf, &mut written)?;
    }
    Ok(written)
}

/// Like [`export`], with format names validated before anything is written.
pub fn export_named(
    bundle: &ReportBundle,
    dir: impl AsRef<Path>,
    formats: &[&str],
) -> Result<Vec<PathBuf>, ReportError> {
    let parsed = formats
        .iter()
        .map(|f| f.parse())
        .collect::<Result<Vec<ExportFormat>, _>>()?;
    export(bundle, dir, &parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StarThresholds;

    fn table(attribute: &str, counts: &[(&str, u64)], refusals: u64, category: CategoryId) -> DistributionTable {
        let key = CellKey {
            model_id: "m".into(),
            mode: PromptMode::Implicit,
            axis: if attribute == "Male" || attribute == "Female" {
                AxisId::Gender
            } else {
                AxisId::EthnicityRace
            },
            attribute: attribute.into(),
        };
        let mut t = DistributionTable::empty(&key, category);
        for (v, c) in counts {
            t.counts.insert(v.to_string(), *c);
        }
        t.refusal_count = refusals;
        t.n = t.valid() + refusals;
        t
    }

    fn test_for(t: &DistributionTable, value: &str, k: u64, p_value: f64) -> TestResult {
        TestResult {
            model_id: t.model_id.clone(),
            mode: t.mode,
            axis: t.axis,
            attribute: t.attribute.clone(),
            category: t.category,
            value: value.into(),
            k,
            n: t.n,
            p_ref: 0.5,
            p_value,
            stars: StarThresholds::default().stars(p_value).unwrap(),
        }
    }

    fn politics() -> (Vec<DistributionTable>, Vec<TestResult>) {
        let male = table(
            "Male",
            &[("conservative", 21), ("liberal", 469), ("neutral", 10)],
            0,
            CategoryId::Politics,
        );
        let white = table(
            "White",
            &[("conservative", 9), ("liberal", 37), ("neutral", 1)],
            3,
            CategoryId::Politics,
        );
        let tests = vec![
            test_for(&male, "conservative", 21, 1e-9),
            test_for(&male, "liberal", 469, 1e-9),
            test_for(&male, "neutral", 10, 0.2),
            test_for(&white, "conservative", 9, 0.03),
            test_for(&white, "liberal", 37, 0.005),
            test_for(&white, "neutral", 1, 1e-5),
        ];
        (vec![white, male], tests)
    }

    #[test]
    fn category_table_cells() {
        let (tables, tests) = politics();
        let t = emit_category_table(&tables, &tests).unwrap();
        assert_eq!(t.columns, ["Conservative", "Liberal", "Neutral", "Refusal"]);
        assert_eq!(t.rows[0].label(), "Male (n=500)");
        assert_eq!(t.cell("Male", "Liberal").unwrap().render(), "93.80***");
        assert_eq!(t.cell("Male", "Neutral").unwrap().render(), "2.00");
        assert_eq!(t.cell("White", "Conservative").unwrap().render(), "18.00*");
        assert_eq!(t.cell("White", "Liberal").unwrap().render(), "74.00**");
        assert_eq!(t.cell("White", "Refusal").unwrap().render(), "6.00");
        assert_eq!(t.cell("Male", "Refusal").unwrap().render(), "0.00");
    }

    #[test]
    fn join_failures() {
        let (tables, mut tests) = politics();
        tests.pop();
        assert!(matches!(
            emit_category_table(&tables, &tests),
            Err(ReportError::JoinFailure { .. })
        ));
        let (tables, mut tests) = politics();
        tests[0].k += 1;
        assert!(matches!(
            emit_category_table(&tables, &tests),
            Err(ReportError::JoinFailure { .. })
        ));
        let (tables, mut tests) = politics();
        let mut extra = tests[0].clone();
        extra.attribute = "Female".into();
        tests.push(extra);
        assert!(matches!(
            emit_category_table(&tables, &tests),
            Err(ReportError::JoinFailure { .. })
        ));
    }

    #[test]
    fn orientation_columns() {
        let t = table(
            "Hispanic",
            &[("heterosexual", 0), ("homosexual", 23), ("bisexual", 27), ("other", 0)],
            0,
            CategoryId::SexualOrientation,
        );
        let tests = vec![test_for(&t, "heterosexual", 0, 1e-12), test_for(&t, "lgbtq", 50, 1e-12)];
        let r = emit_category_table(&[t], &tests).unwrap();
        assert_eq!(
            r.columns,
            ["Heterosexual", "LGBTQ", "Homosexual", "Bisexual", "Other", "Refusal"]
        );
        let cells: Vec<String> = r.rows[0].cells.iter().map(Cell::render).collect();
        assert_eq!(cells, ["0.00***", "100.00***", "46.00", "54.00", "0.00", "0.00"]);
    }

    #[test]
    fn unparsed_column_only_when_needed() {
        let (mut tables, tests) = politics();
        tables[0].n += 1;
        tables[0].unparsed_count = 1;
        let mut tests = tests;
        for t in tests.iter_mut().filter(|t| t.attribute == "White") {
            t.n += 1;
        }
        let r = emit_category_table(&tables, &tests).unwrap();
        assert_eq!(r.columns, ["Conservative", "Liberal", "Neutral", "Unparsed", "Refusal"]);
    }

    fn score(model: &str, category: CategoryId, stereo: f64, sig: u64, total: u64) -> BiasScores {
        BiasScores {
            model_id: model.into(),
            mode: PromptMode::Implicit,
            category,
            stereotype: Some(stereo),
            per_axis_max_kl: BTreeMap::new(),
            deviation: DeviationScore {
                significant: sig,
                total,
            },
            epsilon: 1e-6,
        }
    }

    #[test]
    fn summary_formatting() {
        let scores: Vec<BiasScores> = CategoryId::CLOSED
            .iter()
            .map(|c| {
                if *c == CategoryId::Politics {
                    score("claude", *c, 5.219, 36, 36)
                } else {
                    score("claude", *c, 0.0, 35, 36)
                }
            })
            .collect();
        let s = emit_summary(&scores, &["claude".into()], PromptMode::Implicit).unwrap();
        let md = s.to_markdown(&ReportMetadata::new(1e-6, &[0.05]));
        assert!(md.contains("| Politics | 5.219 | 1.000 |"));
        assert!(md.contains("| Religion | 0.000 | 0.972 |"));
        assert!(matches!(
            emit_summary(&scores[..3], &["claude".into()], PromptMode::Implicit),
            Err(ReportError::MissingCell {
                category: CategoryId::SocioeconomicStatus,
                ..
            })
        ));
    }

    #[test]
    fn export_is_deterministic_and_validates_first() {
        let (tables, tests) = politics();
        let bundle = build_bundle(
            ReportInputs {
                distributions: &tables,
                tests: &tests,
                scores: &[],
                polarity: &[],
                top_occupations: 5,
            },
            ReportMetadata::new(1e-6, &[0.05, 0.01, 0.001]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_named(&bundle, dir.path().join("bad"), &["csv", "pdf"]),
            Err(ReportError::UnknownFormat(_))
        ));
        assert!(!dir.path().join("bad").exists());
        let a = export_named(&bundle, dir.path().join("a"), &["csv", "md", "jsonl"]).unwrap();
        let b = export_named(&bundle, dir.path().join("b"), &["csv", "md", "jsonl"]).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let csv = std::fs::read_to_string(dir.path().join("a/m/implicit/politics.csv")).unwrap();
        assert!(csv.contains("\nGender,Male,500,Liberal,93.80,3\n"));
        assert!(csv.contains("\nGender,Male,500,Refusal,0.00,\n"));
        let md = std::fs::read_to_string(dir.path().join("a/m/implicit/politics.md")).unwrap();
        assert!(md.contains("| **Gender** | Male (n=500) | 4.20*** | 93.80*** | 2.00 | 0.00 |"));
    }
}
