//! Demographic axes, output categories, and the data files that describe them.
//!
//! Everything in here is immutable once loaded. The loaders validate their
//! input fully so that later stages can index into the data without
//! re-checking.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for reference proportions summing to one.
pub const REFERENCE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("line {line}: malformed row ({column}): {reason}")]
    MalformedRow { line: u64, column: String, reason: String },
    #[error("line {line}: duplicate entry {key}")]
    DuplicateEntry { line: u64, key: String },
    #[error("line {line}: unknown attribute {attribute:?} on axis {axis:?}")]
    UnknownAttribute { line: u64, axis: String, attribute: String },
    #[error("{axis}/{attribute}/{category}: proportions sum to {sum} (off by {deviation:e})")]
    SumNotOne {
        axis: AxisId,
        attribute: String,
        category: CategoryId,
        sum: f64,
        deviation: f64,
    },
    #[error("line {line}: {value:?} is not a canonical {category} value")]
    UnknownCanonicalValue { line: u64, category: String, value: String },
    #[error("{axis}/{attribute}/{category}: missing proportion for {value:?}")]
    MissingCell {
        axis: AxisId,
        attribute: String,
        category: CategoryId,
        value: String,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn malformed(line: u64, column: &str, reason: impl Into<String>) -> TaxonomyError {
    TaxonomyError::MalformedRow {
        line,
        column: column.to_string(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Axes and input attributes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AxisId {
    Gender,
    EthnicityRace,
    Age,
}

impl AxisId {
    pub const ALL: [AxisId; 3] = [AxisId::Gender, AxisId::EthnicityRace, AxisId::Age];

    pub fn as_str(self) -> &'static str {
        match self {
            AxisId::Gender => "Gender",
            AxisId::EthnicityRace => "EthnicityRace",
            AxisId::Age => "Age",
        }
    }

    /// Heading used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            AxisId::Gender => "Gender",
            AxisId::EthnicityRace => "Ethnicity/Race",
            AxisId::Age => "Age",
        }
    }

    /// Canonical attribute labels in table order.
    pub fn standard_labels(self) -> &'static [&'static str] {
        match self {
            AxisId::Gender => &["Male", "Female"],
            AxisId::EthnicityRace => &["Neutral", "White", "Black", "Hispanic", "Asian"],
            AxisId::Age => &[
                "BabyBoomer",
                "GenerationX",
                "Millennial",
                "GenerationZ",
                "GenerationAlpha",
            ],
        }
    }

    /// Position of `label` in the standard order; unknown labels sort last.
    pub fn label_rank(self, label: &str) -> usize {
        self.standard_labels()
            .iter()
            .position(|l| *l == label)
            .unwrap_or(usize::MAX)
    }
}

impl fmt::Display for AxisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for AxisId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "gender" => Ok(AxisId::Gender),
            "ethnicityrace" | "ethnicity" | "race" => Ok(AxisId::EthnicityRace),
            "age" => Ok(AxisId::Age),
            _ => Err(format!("unknown axis {s:?}")),
        }
    }
}

/// One demographic cell, e.g. EthnicityRace/Hispanic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAttribute {
    pub axis: AxisId,
    pub label: String,
    /// Phrases used as the subject of explicit prompts.
    pub explicit_descriptors: Vec<String>,
    pub birth_year_range: Option<(u16, u16)>,
}

impl InputAttribute {
    /// Human-readable row label ("Baby Boomer", "Generation X", ...).
    pub fn display_label(&self) -> String {
        display_label(self.axis, &self.label)
    }
}

/// Row label for an attribute as printed in tables.
pub fn display_label(axis: AxisId, label: &str) -> String {
    match (axis, label) {
        (AxisId::Age, "BabyBoomer") => "Baby Boomer".into(),
        (AxisId::Age, "GenerationX") => "Generation X".into(),
        (AxisId::Age, "GenerationZ") => "Generation Z".into(),
        (AxisId::Age, "GenerationAlpha") => "Generation Alpha".into(),
        _ => label.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicAxis {
    pub id: AxisId,
    pub attributes: Vec<InputAttribute>,
}

impl DemographicAxis {
    /// The fixed attribute set for `id`, with default explicit descriptors.
    pub fn standard(id: AxisId) -> Self {
        let gendered = |prefix: &str| -> Vec<String> {
            if prefix.is_empty() {
                vec!["a man".into(), "a woman".into()]
            } else {
                vec![format!("a {prefix} man"), format!("a {prefix} woman")]
            }
        };
        let attributes = match id {
            AxisId::Gender => vec![
                attr(id, "Male", vec!["a man".into()], None),
                attr(id, "Female", vec!["a woman".into()], None),
            ],
            AxisId::EthnicityRace => vec![
                attr(id, "Neutral", gendered(""), None),
                attr(id, "White", gendered("White"), None),
                attr(id, "Black", gendered("Black"), None),
                attr(id, "Hispanic", gendered("Hispanic"), None),
                attr(id, "Asian", gendered("Asian"), None),
            ],
            AxisId::Age => vec![
                attr(id, "BabyBoomer", gendered("Baby Boomer"), Some((1946, 1964))),
                attr(id, "GenerationX", gendered("Generation X"), Some((1965, 1980))),
                attr(id, "Millennial", gendered("Millennial"), Some((1981, 1996))),
                attr(id, "GenerationZ", gendered("Generation Z"), Some((1997, 2012))),
                attr(id, "GenerationAlpha", gendered("Generation Alpha"), Some((2013, 2023))),
            ],
        };
        DemographicAxis { id, attributes }
    }

    pub fn attribute(&self, label: &str) -> Option<&InputAttribute> {
        self.attributes.iter().find(|a| a.label == label)
    }
}

fn attr(
    axis: AxisId,
    label: &str,
    explicit_descriptors: Vec<String>,
    birth_year_range: Option<(u16, u16)>,
) -> InputAttribute {
    InputAttribute {
        axis,
        label: label.to_string(),
        explicit_descriptors,
        birth_year_range,
    }
}

/// Gender, ethnicity/race and age with their standard attributes.
pub fn standard_axes() -> Vec<DemographicAxis> {
    AxisId::ALL.into_iter().map(DemographicAxis::standard).collect()
}

// ---------------------------------------------------------------------------
// Names

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NameGender {
    Male,
    Female,
    Any,
}

impl NameGender {
    pub fn as_str(self) -> &'static str {
        match self {
            NameGender::Male => "Male",
            NameGender::Female => "Female",
            NameGender::Any => "Any",
        }
    }
}

impl FromStr for NameGender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(NameGender::Male),
            "female" | "f" => Ok(NameGender::Female),
            "any" | "" => Ok(NameGender::Any),
            other => Err(format!("unknown name gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub axis: AxisId,
    pub attribute: String,
    pub gender_of_name: NameGender,
    pub source_note: String,
}

const NAMES_HEADER: [&str; 5] = ["name", "axis", "attribute", "gender_of_name", "source_note"];

pub const BUILTIN_NAMES: &str = include_str!("../data/names.csv");

/// The bundled name list.
pub fn builtin_names() -> Vec<NameEntry> {
    read_names(BUILTIN_NAMES.as_bytes()).expect("bundled names are valid")
}

/// Loads and validates a names CSV file.
pub fn load_names(path: impl AsRef<Path>) -> Result<Vec<NameEntry>, TaxonomyError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_names(file)
}

pub fn read_names(reader: impl Read) -> Result<Vec<NameEntry>, TaxonomyError> {
    let axes = standard_axes();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut header_checked = false;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if !header_checked {
            header_checked = true;
            check_header(&row, &NAMES_HEADER, line)?;
            continue;
        }
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != NAMES_HEADER.len() {
            return Err(malformed(
                line,
                "row",
                format!("expected {} fields, found {}", NAMES_HEADER.len(), row.len()),
            ));
        }
        let name = row[0].to_string();
        if name.is_empty() {
            return Err(malformed(line, "name", "empty name"));
        }
        let axis: AxisId = row[1].parse().map_err(|_| TaxonomyError::UnknownAttribute {
            line,
            axis: row[1].to_string(),
            attribute: row[2].to_string(),
        })?;
        let attribute = row[2].to_string();
        let known = axes
            .iter()
            .find(|a| a.id == axis)
            .and_then(|a| a.attribute(&attribute))
            .is_some();
        if !known {
            return Err(TaxonomyError::UnknownAttribute {
                line,
                axis: row[1].to_string(),
                attribute,
            });
        }
        let gender_of_name: NameGender = row[3]
            .parse()
            .map_err(|e: String| malformed(line, "gender_of_name", e))?;
        let key = (name.clone(), axis, attribute.clone(), gender_of_name);
        if !seen.insert(key) {
            return Err(TaxonomyError::DuplicateEntry {
                line,
                key: format!("{name},{axis},{attribute},{}", gender_of_name.as_str()),
            });
        }
        entries.push(NameEntry {
            name,
            axis,
            attribute,
            gender_of_name,
            source_note: row[4].to_string(),
        });
    }

    if entries.is_empty() {
        log::warn!("0 names loaded");
    } else {
        for ((axis, attribute), count) in name_counts(&entries) {
            log::info!("{axis}/{attribute}: {count} names");
        }
    }
    Ok(entries)
}

/// Number of names per (axis, attribute).
pub fn name_counts(names: &[NameEntry]) -> BTreeMap<(AxisId, String), usize> {
    let mut counts = BTreeMap::new();
    for entry in names {
        *counts.entry((entry.axis, entry.attribute.clone())).or_insert(0) += 1;
    }
    counts
}

fn check_header(row: &csv::StringRecord, expected: &[&str], line: u64) -> Result<(), TaxonomyError> {
    let found: Vec<&str> = row.iter().collect();
    if found != expected {
        return Err(malformed(
            line,
            "header",
            format!("expected `{}`, found `{}`", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Output categories

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryId {
    Politics,
    Religion,
    SexualOrientation,
    SocioeconomicStatus,
    Occupation,
}

impl CategoryId {
    pub const ALL: [CategoryId; 5] = [
        CategoryId::Politics,
        CategoryId::Religion,
        CategoryId::SexualOrientation,
        CategoryId::SocioeconomicStatus,
        CategoryId::Occupation,
    ];

    /// The four categories with a closed value set.
    pub const CLOSED: [CategoryId; 4] = [
        CategoryId::Politics,
        CategoryId::Religion,
        CategoryId::SexualOrientation,
        CategoryId::SocioeconomicStatus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryId::Politics => "politics",
            CategoryId::Religion => "religion",
            CategoryId::SexualOrientation => "sexual_orientation",
            CategoryId::SocioeconomicStatus => "socioeconomic_status",
            CategoryId::Occupation => "occupation",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            CategoryId::Politics => "Politics",
            CategoryId::Religion => "Religion",
            CategoryId::SexualOrientation => "Sexual Orientation",
            CategoryId::SocioeconomicStatus => "Socioeconomic Status",
            CategoryId::Occupation => "Occupation",
        }
    }

    /// Key used in the attributes block of a generation.
    pub fn attribute_heading(self) -> &'static str {
        match self {
            CategoryId::Politics => "Political Affiliation",
            other => other.display_name(),
        }
    }

    /// Canonical values in table order. Empty for the open Occupation category.
    pub fn canonical_values(self) -> &'static [&'static str] {
        match self {
            CategoryId::Politics => &["conservative", "liberal", "neutral"],
            CategoryId::Religion => &["buddhist", "christian", "hindu", "jewish", "muslim", "unaffiliated"],
            CategoryId::SexualOrientation => &["heterosexual", "homosexual", "bisexual", "other"],
            CategoryId::SocioeconomicStatus => &["lower-class", "middle-class", "upper-class"],
            CategoryId::Occupation => &[],
        }
    }

    pub fn is_closed(self) -> bool {
        self != CategoryId::Occupation
    }

    pub fn is_canonical(self, value: &str) -> bool {
        self.canonical_values().contains(&value)
    }

    /// Values carried by reference distributions. Sexual orientation is
    /// compared against real-world data only in the grouped form.
    pub fn reference_values(self) -> &'static [&'static str] {
        match self {
            CategoryId::SexualOrientation => &[HETEROSEXUAL, LGBTQ],
            other => other.canonical_values(),
        }
    }
}

pub const HETEROSEXUAL: &str = "heterosexual";
pub const LGBTQ: &str = "lgbtq";

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for CategoryId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "politics" | "political" | "politicalaffiliation" => Ok(CategoryId::Politics),
            "religion" => Ok(CategoryId::Religion),
            "sexualorientation" => Ok(CategoryId::SexualOrientation),
            "socioeconomicstatus" | "ses" => Ok(CategoryId::SocioeconomicStatus),
            "occupation" => Ok(CategoryId::Occupation),
            _ => Err(format!("unknown category {s:?}")),
        }
    }
}

/// Title-cased column label for a canonical value ("middle-class" -> "Middle-class").
pub fn display_value(value: &str) -> String {
    if value == LGBTQ {
        return "LGBTQ".to_string();
    }
    let mut chars = value.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Lookup key: lowercase, every run of non-alphanumerics collapsed to one space.
pub fn lookup_key(raw: &str) -> String {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalize_occupation(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .map(|w| w.trim_matches('-').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Raw-string to canonical-value mapping, keyed by [`lookup_key`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymMap {
    entries: BTreeMap<(CategoryId, String), String>,
}

impl SynonymMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a synonym. Closed categories only accept canonical targets, and a
    /// canonical value may not be redirected to a different one.
    pub fn insert(&mut self, category: CategoryId, raw: &str, canonical: &str) -> Result<(), String> {
        let key = lookup_key(raw);
        if key.is_empty() {
            return Err("empty raw value".into());
        }
        let target = if category.is_closed() {
            if !category.is_canonical(canonical) {
                return Err(format!("{canonical:?} is not a canonical {category} value"));
            }
            canonical.to_string()
        } else {
            let t = normalize_occupation(canonical);
            if t.is_empty() {
                return Err("empty canonical value".into());
            }
            t
        };
        if let Some(own) = category.canonical_values().iter().find(|v| lookup_key(v) == key) {
            if *own != target {
                return Err(format!("canonical value {own:?} cannot map to {target:?}"));
            }
        }
        self.entries.insert((category, key), target);
        Ok(())
    }

    pub fn get(&self, category: CategoryId, raw: &str) -> Option<&str> {
        self.entries.get(&(category, lookup_key(raw))).map(String::as_str)
    }

    /// Raw keys that map to `canonical` within `category`.
    pub fn synonyms_of<'a>(&'a self, category: CategoryId, canonical: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |((c, _), v)| *c == category && v.as_str() == canonical)
            .map(|((_, k), _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, &str, &str)> {
        self.entries.iter().map(|((c, k), v)| (*c, k.as_str(), v.as_str()))
    }

    /// The synonym table shipped with the crate.
    pub fn builtin() -> Self {
        read_synonyms(BUILTIN_SYNONYMS.as_bytes()).expect("builtin synonyms are valid")
    }
}

pub const BUILTIN_SYNONYMS: &str = include_str!("../data/synonyms.csv");

const SYNONYMS_HEADER: [&str; 3] = ["category", "raw", "canonical"];

pub fn load_synonyms(path: impl AsRef<Path>) -> Result<SynonymMap, TaxonomyError> {
    read_synonyms(std::fs::File::open(path.as_ref())?)
}

pub fn read_synonyms(reader: impl Read) -> Result<SynonymMap, TaxonomyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut map = SynonymMap::new();
    let mut header_checked = false;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if !header_checked {
            header_checked = true;
            check_header(&row, &SYNONYMS_HEADER, line)?;
            continue;
        }
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 3 {
            return Err(malformed(
                line,
                "row",
                format!("expected 3 fields, found {}", row.len()),
            ));
        }
        let category: CategoryId = row[0].parse().map_err(|e: String| malformed(line, "category", e))?;
        map.insert(category, &row[1], &row[2])
            .map_err(|reason| TaxonomyError::UnknownCanonicalValue {
                line,
                category: category.to_string(),
                value: format!("{} ({reason})", &row[2]),
            })?;
    }
    Ok(map)
}

/// Category definitions plus the active synonym table.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub axes: Vec<DemographicAxis>,
    pub synonyms: SynonymMap,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::standard()
    }
}

impl Taxonomy {
    /// Standard axes with the builtin synonym table.
    pub fn standard() -> Self {
        Taxonomy {
            axes: standard_axes(),
            synonyms: SynonymMap::builtin(),
        }
    }

    pub fn with_synonyms(synonyms: SynonymMap) -> Self {
        Taxonomy {
            axes: standard_axes(),
            synonyms,
        }
    }

    pub fn axis(&self, id: AxisId) -> Option<&DemographicAxis> {
        self.axes.iter().find(|a| a.id == id)
    }

    /// Maps a raw model answer onto a canonical value.
    ///
    /// Returns `None` (unmapped) rather than failing so that batch callers can
    /// count misses. Occupation values are normalized free text.
    pub fn normalize_value(&self, category: CategoryId, raw: &str) -> Option<String> {
        normalize_value(&self.synonyms, category, raw)
    }
}

pub fn normalize_value(synonyms: &SynonymMap, category: CategoryId, raw: &str) -> Option<String> {
    if raw.trim().is_empty() {
        return None;
    }
    if let Some(hit) = synonyms.get(category, raw) {
        return Some(hit.to_string());
    }
    if category.is_closed() {
        let key = lookup_key(raw);
        category
            .canonical_values()
            .iter()
            .find(|v| lookup_key(v) == key)
            .map(|v| v.to_string())
    } else {
        let occupation = normalize_occupation(raw);
        (!occupation.is_empty()).then_some(occupation)
    }
}

// ---------------------------------------------------------------------------
// Reference distributions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    pub axis: AxisId,
    pub attribute: String,
    pub category: CategoryId,
    /// Keyed by the category's reference values.
    pub proportions: BTreeMap<String, f64>,
    pub source_citation: String,
}

impl ReferenceDistribution {
    pub fn proportion(&self, value: &str) -> Option<f64> {
        self.proportions.get(value).copied()
    }
}

const REFERENCE_HEADER: [&str; 6] = [
    "axis",
    "attribute",
    "category",
    "value",
    "proportion",
    "source_citation",
];

pub const BUILTIN_REFERENCE: &str = include_str!("../data/reference.csv");

/// The bundled reference distributions.
pub fn builtin_references() -> Vec<ReferenceDistribution> {
    read_reference(BUILTIN_REFERENCE.as_bytes()).expect("bundled references are valid")
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<Vec<ReferenceDistribution>, TaxonomyError> {
    read_reference(std::fs::File::open(path.as_ref())?)
}

pub fn read_reference(reader: impl Read) -> Result<Vec<ReferenceDistribution>, TaxonomyError> {
    let axes = standard_axes();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut order: Vec<(AxisId, String, CategoryId)> = Vec::new();
    let mut grouped: BTreeMap<(AxisId, String, CategoryId), ReferenceDistribution> = BTreeMap::new();
    let mut header_checked = false;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if !header_checked {
            header_checked = true;
            check_header(&row, &REFERENCE_HEADER, line)?;
            continue;
        }
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != REFERENCE_HEADER.len() {
            return Err(malformed(
                line,
                "row",
                format!("expected {} fields, found {}", REFERENCE_HEADER.len(), row.len()),
            ));
        }
        let unknown_attribute = || TaxonomyError::UnknownAttribute {
            line,
            axis: row[0].to_string(),
            attribute: row[1].to_string(),
        };
        let axis: AxisId = row[0].parse().map_err(|_| unknown_attribute())?;
        let attribute = row[1].to_string();
        if axes
            .iter()
            .find(|a| a.id == axis)
            .and_then(|a| a.attribute(&attribute))
            .is_none()
        {
            return Err(unknown_attribute());
        }
        let category: CategoryId = row[2].parse().map_err(|e: String| malformed(line, "category", e))?;
        let value = row[3].to_string();
        if !category.reference_values().contains(&value.as_str()) {
            return Err(TaxonomyError::UnknownCanonicalValue {
                line,
                category: category.to_string(),
                value,
            });
        }
        let proportion = parse_proportion(&row[4]).map_err(|reason| malformed(line, "proportion", reason))?;

        let key = (axis, attribute.clone(), category);
        let dist = grouped.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            ReferenceDistribution {
                axis,
                attribute: attribute.clone(),
                category,
                proportions: BTreeMap::new(),
                source_citation: row[5].to_string(),
            }
        });
        if dist.proportions.insert(value.clone(), proportion).is_some() {
            return Err(TaxonomyError::DuplicateEntry {
                line,
                key: format!("{axis},{attribute},{category},{value}"),
            });
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let dist = grouped.remove(&key).expect("grouped by key");
        validate_reference(&dist)?;
        out.push(dist);
    }
    Ok(out)
}

fn parse_proportion(raw: &str) -> Result<f64, String> {
    if let Some((_, frac)) = raw.split_once('.') {
        if frac.len() > 9 {
            return Err(format!("{raw:?} has more than 9 fractional digits"));
        }
    }
    let value: f64 = raw.parse().map_err(|_| format!("{raw:?} is not a decimal"))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(format!("{value} is outside [0, 1]"));
    }
    Ok(value)
}

/// Checks value keys, ranges and the unit sum.
pub fn validate_reference(dist: &ReferenceDistribution) -> Result<(), TaxonomyError> {
    for value in dist.category.reference_values() {
        if !dist.proportions.contains_key(*value) {
            return Err(TaxonomyError::MissingCell {
                axis: dist.axis,
                attribute: dist.attribute.clone(),
                category: dist.category,
                value: value.to_string(),
            });
        }
    }
    for (value, p) in &dist.proportions {
        if !dist.category.reference_values().contains(&value.as_str()) {
            return Err(TaxonomyError::UnknownCanonicalValue {
                line: 0,
                category: dist.category.to_string(),
                value: value.clone(),
            });
        }
        if !(0.0..=1.0).contains(p) {
            return Err(malformed(0, "proportion", format!("{p} is outside [0, 1]")));
        }
    }
    let sum: f64 = dist.proportions.values().sum();
    if (sum - 1.0).abs() > REFERENCE_SUM_TOLERANCE {
        return Err(TaxonomyError::SumNotOne {
            axis: dist.axis,
            attribute: dist.attribute.clone(),
            category: dist.category,
            sum,
            deviation: sum - 1.0,
        });
    }
    Ok(())
}

/// Formats a proportion with at most nine fractional digits and no trailing zeros.
pub fn format_proportion(p: f64) -> String {
    let s = format!("{p:.9}");
    let s = s.trim_end_matches('0');
    let s = s.trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn save_reference(path: impl AsRef<Path>, dists: &[ReferenceDistribution]) -> Result<(), TaxonomyError> {
    let file = std::fs::File::create(path.as_ref())?;
    write_reference(file, dists)
}

pub fn write_reference(writer: impl Write, dists: &[ReferenceDistribution]) -> Result<(), TaxonomyError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(REFERENCE_HEADER)?;
    for dist in dists {
        for value in dist.category.reference_values() {
            if let Some(p) = dist.proportions.get(*value) {
                wtr.write_record([
                    dist.axis.as_str(),
                    dist.attribute.as_str(),
                    dist.category.as_str(),
                    value,
                    format_proportion(*p).as_str(),
                    dist.source_citation.as_str(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Index of reference distributions by (axis, attribute, category).
pub fn index_references(
    dists: &[ReferenceDistribution],
) -> BTreeMap<(AxisId, String, CategoryId), &ReferenceDistribution> {
    dists
        .iter()
        .map(|d| ((d.axis, d.attribute.clone(), d.category), d))
        .collect()
}

/// Every (axis, attribute) pair of the standard axes.
pub fn standard_cells() -> BTreeSet<(AxisId, String)> {
    AxisId::ALL
        .iter()
        .flat_map(|a| a.standard_labels().iter().map(move |l| (*a, l.to_string())))
        .collect()
}
