//! Per-cell counts of parsed output values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PromptMode, PromptSpec};
use crate::parser::ParsedProfile;
use crate::taxonomy::{AxisId, CategoryId, HETEROSEXUAL, LGBTQ};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("profile {record_id} refers to prompt {prompt_id}, which is not in the corpus")]
    OrphanProfile { record_id: String, prompt_id: String },
    #[error("expected a sexual_orientation table, got {0}")]
    WrongCategory(CategoryId),
    #[error("distributions line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One (model, mode, axis, attribute) aggregation unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model_id: String,
    pub mode: PromptMode,
    pub axis: AxisId,
    pub attribute: String,
}

impl CellKey {
    fn sort_key(&self) -> (&str, PromptMode, AxisId, usize, &str) {
        (
            &self.model_id,
            self.mode,
            self.axis,
            self.axis.label_rank(&self.attribute),
            &self.attribute,
        )
    }
}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.model_id, self.mode, self.axis, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub model_id: String,
    pub mode: PromptMode,
    pub axis: AxisId,
    pub attribute: String,
    pub category: CategoryId,
    /// Every canonical value is present, zeros included. Occupation tables
    /// hold only the values seen.
    pub counts: BTreeMap<String, u64>,
    /// All records of the cell, refusals and unparsed ones included.
    pub n: u64,
    pub refusal_count: u64,
    /// Non-refusals without a usable value for this category.
    pub unparsed_count: u64,
}

impl DistributionTable {
    pub fn empty(key: &CellKey, category: CategoryId) -> Self {
        DistributionTable {
            model_id: key.model_id.clone(),
            mode: key.mode,
            axis: key.axis,
            attribute: key.attribute.clone(),
            category,
            counts: category.canonical_values().iter().map(|v| (v.to_string(), 0)).collect(),
            n: 0,
            refusal_count: 0,
            unparsed_count: 0,
        }
    }

    pub fn key(&self) -> CellKey {
        CellKey {
            model_id: self.model_id.clone(),
            mode: self.mode,
            axis: self.axis,
            attribute: self.attribute.clone(),
        }
    }

    pub fn count(&self, value: &str) -> u64 {
        self.counts.get(value).copied().unwrap_or(0)
    }

    /// Records that produced a value for this category.
    pub fn valid(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn percentage(&self, count: u64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.n as f64
        }
    }

    pub fn refusal_pct(&self) -> f64 {
        self.percentage(self.refusal_count)
    }

    pub fn unparsed_pct(&self) -> f64 {
        self.percentage(self.unparsed_count)
    }

    /// Proportions over valid responses only, in canonical order.
    pub fn value_distribution(&self) -> Option<Vec<f64>> {
        let valid = self.valid();
        if valid == 0 {
            return None;
        }
        Some(
            self.category
                .canonical_values()
                .iter()
                .map(|v| self.count(v) as f64 / valid as f64)
                .collect(),
        )
    }

    /// Counts of the values compared against reference data.
    pub fn tested_counts(&self) -> Vec<(String, u64)> {
        match self.category {
            CategoryId::SexualOrientation => {
                let het = self.count(HETEROSEXUAL);
                vec![(HETEROSEXUAL.to_string(), het), (LGBTQ.to_string(), self.valid() - het)]
            }
            _ => self.counts.iter().map(|(v, c)| (v.clone(), *c)).collect(),
        }
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &DistributionTable) {
        for (value, count) in &other.counts {
            *self.counts.entry(value.clone()).or_insert(0) += count;
        }
        self.n += other.n;
        self.refusal_count += other.refusal_count;
        self.unparsed_count += other.unparsed_count;
    }

    fn sort_key(&self) -> (CellKey, CategoryId) {
        (self.key(), self.category)
    }
}

/// Counts `category` values per cell. Tables come back in report order.
pub fn tally(
    profiles: &[ParsedProfile],
    specs: &[PromptSpec],
    category: CategoryId,
) -> Result<Vec<DistributionTable>, AggregateError> {
    let by_id: HashMap<&str, &PromptSpec> = specs.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut tables: BTreeMap<CellKey, DistributionTable> = BTreeMap::new();
    for profile in profiles {
        let spec = by_id
            .get(profile.prompt_id.as_str())
            .ok_or_else(|| AggregateError::OrphanProfile {
                record_id: profile.record_id.clone(),
                prompt_id: profile.prompt_id.clone(),
            })?;
        let key = CellKey {
            model_id: profile.model_id.clone(),
            mode: spec.mode,
            axis: spec.axis,
            attribute: spec.attribute.clone(),
        };
        let table = tables
            .entry(key)
            .or_insert_with_key(|k| DistributionTable::empty(k, category));
        table.n += 1;
        if profile.refusal {
            table.refusal_count += 1;
            continue;
        }
        match profile.get(category) {
            Some(value) if !category.is_closed() || category.is_canonical(value) => {
                *table.counts.entry(value.to_string()).or_insert(0) += 1;
            }
            _ => table.unparsed_count += 1,
        }
    }
    Ok(tables.into_values().collect())
}

/// Tallies every category.
pub fn tally_all(profiles: &[ParsedProfile], specs: &[PromptSpec]) -> Result<Vec<DistributionTable>, AggregateError> {
    let mut out = Vec::new();
    for category in CategoryId::ALL {
        out.extend(tally(profiles, specs, category)?);
    }
    out.sort_by_key(DistributionTable::sort_key);
    Ok(out)
}

/// Sums tables across models into cells with `model_id = pooled_id`.
pub fn pool(tables: &[DistributionTable], pooled_id: &str) -> Vec<DistributionTable> {
    let mut pooled: BTreeMap<(CellKey, CategoryId), DistributionTable> = BTreeMap::new();
    for table in tables {
        let key = CellKey {
            model_id: pooled_id.to_string(),
            ..table.key()
        };
        pooled
            .entry((key, table.category))
            .or_insert_with_key(|(k, c)| DistributionTable::empty(k, *c))
            .merge(table);
    }
    pooled.into_values().collect()
}

/// Sexual orientation with the LGBTQ group alongside its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedOrientation {
    pub key: CellKey,
    pub heterosexual: u64,
    pub lgbtq: u64,
    pub homosexual: u64,
    pub bisexual: u64,
    pub other: u64,
    pub n: u64,
    pub refusal_count: u64,
    pub unparsed_count: u64,
}

impl GroupedOrientation {
    /// Columns in table order: Heterosexual, LGBTQ, Homosexual, Bisexual, Other.
    pub fn columns(&self) -> [(&'static str, u64); 5] {
        [
            (HETEROSEXUAL, self.heterosexual),
            (LGBTQ, self.lgbtq),
            ("homosexual", self.homosexual),
            ("bisexual", self.bisexual),
            ("other", self.other),
        ]
    }
}

pub fn group_lgbtq(table: &DistributionTable) -> Result<GroupedOrientation, AggregateError> {
    if table.category != CategoryId::SexualOrientation {
        return Err(AggregateError::WrongCategory(table.category));
    }
    let homosexual = table.count("homosexual");
    let bisexual = table.count("bisexual");
    let other = table.count("other");
    Ok(GroupedOrientation {
        key: table.key(),
        heterosexual: table.count(HETEROSEXUAL),
        lgbtq: homosexual + bisexual + other,
        homosexual,
        bisexual,
        other,
        n: table.n,
        refusal_count: table.refusal_count,
        unparsed_count: table.unparsed_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRanking {
    pub key: CellKey,
    pub n: u64,
    /// (occupation, percentage of n), most frequent first.
    pub ranked: Vec<(String, f64)>,
}

impl fmt::Display for OccupationRanking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .ranked
            .iter()
            .map(|(occupation, pct)| format!("{occupation} ({pct:.1}%)"))
            .collect();
        f.write_str(&items.join(", "))
    }
}

/// Top `k` occupations of an occupation table; ties go to the lexically smaller name.
pub fn rank_occupations(table: &DistributionTable, k: usize) -> OccupationRanking {
    let mut entries: Vec<(&String, u64)> = table
        .counts
        .iter()
        .map(|(o, c)| (o, *c))
        .filter(|(_, c)| *c > 0)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    OccupationRanking {
        key: table.key(),
        n: table.n,
        ranked: entries
            .into_iter()
            .take(k.max(1))
            .map(|(o, c)| (o.clone(), table.percentage(c)))
            .collect(),
    }
}

/// Ranks occupations for one cell. Profiles outside the cell are ignored.
pub fn top_occupations(profiles: &[ParsedProfile], specs: &[PromptSpec], key: &CellKey, k: usize) -> OccupationRanking {
    let in_cell: Vec<&PromptSpec> = specs
        .iter()
        .filter(|s| s.mode == key.mode && s.axis == key.axis && s.attribute == key.attribute)
        .collect();
    let selected: Vec<ParsedProfile> = profiles
        .iter()
        .filter(|p| p.model_id == key.model_id && in_cell.iter().any(|s| s.id == p.prompt_id))
        .cloned()
        .collect();
    let specs: Vec<PromptSpec> = in_cell.into_iter().cloned().collect();
    match tally(&selected, &specs, CategoryId::Occupation) {
        Ok(tables) if !tables.is_empty() => rank_occupations(&tables[0], k),
        _ => rank_occupations(&DistributionTable::empty(key, CategoryId::Occupation), k),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DistributionRow {
    model: String,
    mode: PromptMode,
    axis: AxisId,
    attribute: String,
    category: CategoryId,
    value: String,
    count: u64,
    n: u64,
    refusals: u64,
}

/// Long-format `distributions.csv`. An occupation cell with no values gets
/// one row with an empty value so that its n survives a round trip.
pub fn write_distributions(writer: impl Write, tables: &[DistributionTable]) -> Result<(), AggregateError> {
    let mut csv = csv::Writer::from_writer(writer);
    for table in tables {
        let row = |value: &str, count: u64| DistributionRow {
            model: table.model_id.clone(),
            mode: table.mode,
            axis: table.axis,
            attribute: table.attribute.clone(),
            category: table.category,
            value: value.to_string(),
            count,
            n: table.n,
            refusals: table.refusal_count,
        };
        if table.counts.is_empty() {
            csv.serialize(row("", 0))?;
        }
        for (value, count) in &table.counts {
            csv.serialize(row(value, *count))?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn save_distributions(path: impl AsRef<Path>, tables: &[DistributionTable]) -> Result<(), AggregateError> {
    write_distributions(std::fs::File::create(path)?, tables)
}

pub fn read_distributions(reader: impl Read) -> Result<Vec<DistributionTable>, AggregateError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut tables: Vec<DistributionTable> = Vec::new();
    for (idx, row) in csv.deserialize::<DistributionRow>().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        let key = CellKey {
            model_id: row.model,
            mode: row.mode,
            axis: row.axis,
            attribute: row.attribute,
        };
        let same = tables
            .last()
            .is_some_and(|t| t.key() == key && t.category == row.category);
        if !same {
            let mut table = DistributionTable::empty(&key, row.category);
            table.n = row.n;
            table.refusal_count = row.refusals;
            tables.push(table);
        }
        let table = tables.last_mut().expect("table pushed above");
        if table.n != row.n || table.refusal_count != row.refusals {
            return Err(AggregateError::Malformed {
                line,
                reason: format!("n/refusals disagree within cell {key}"),
            });
        }
        if row.value.is_empty() {
            continue;
        }
        if row.category.is_closed() && !row.category.is_canonical(&row.value) {
            return Err(AggregateError::Malformed {
                line,
                reason: format!("{:?} is not a {} value", row.value, row.category),
            });
        }
        table.counts.insert(row.value, row.count);
    }
    for table in &mut tables {
        let accounted = table.valid() + table.refusal_count;
        table.unparsed_count = table
            .n
            .checked_sub(accounted)
            .ok_or_else(|| AggregateError::Malformed {
                line: 0,
                reason: format!("counts exceed n in cell {}", table.key()),
            })?;
    }
    Ok(tables)
}

pub fn load_distributions(path: impl AsRef<Path>) -> Result<Vec<DistributionTable>, AggregateError> {
    read_distributions(std::fs::File::open(path)?)
}
