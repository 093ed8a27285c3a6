//! Implicit (name-based) and explicit (descriptor-based) prompt corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{AxisId, DemographicAxis, NameEntry, NameGender};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no names for {axis}/{attribute}{detail}")]
    InsufficientNames {
        axis: AxisId,
        attribute: String,
        detail: String,
    },
    #[error("axis {0} has no attributes")]
    EmptyAxis(AxisId),
    #[error("template has no {{subject}} placeholder")]
    MissingPlaceholder,
    #[error("template does not request an attributes section")]
    MissingAttributesClause,
    #[error("invalid corpus plan: {0}")]
    InvalidPlan(String),
    #[error("duplicate prompt {subject:?} for {axis}/{attribute}")]
    DuplicatePrompt {
        axis: AxisId,
        attribute: String,
        subject: String,
    },
    #[error("corpus line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptMode {
    Implicit,
    Explicit,
}

impl PromptMode {
    pub const ALL: [PromptMode; 2] = [PromptMode::Implicit, PromptMode::Explicit];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Implicit => "implicit",
            PromptMode::Explicit => "explicit",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "implicit" => Ok(PromptMode::Implicit),
            "explicit" => Ok(PromptMode::Explicit),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

/// One renderable prompt and how many generations to request for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub mode: PromptMode,
    pub axis: AxisId,
    pub attribute: String,
    pub name: Option<String>,
    pub descriptor: Option<String>,
    pub template_id: String,
    pub replicates: u32,
}

impl PromptSpec {
    pub fn implicit(axis: AxisId, attribute: &str, name: &str, template_id: &str, replicates: u32) -> Self {
        PromptSpec {
            id: prompt_id(PromptMode::Implicit, axis, attribute, name, template_id),
            mode: PromptMode::Implicit,
            axis,
            attribute: attribute.to_string(),
            name: Some(name.to_string()),
            descriptor: None,
            template_id: template_id.to_string(),
            replicates,
        }
    }

    pub fn explicit(axis: AxisId, attribute: &str, descriptor: &str, template_id: &str, replicates: u32) -> Self {
        PromptSpec {
            id: prompt_id(PromptMode::Explicit, axis, attribute, descriptor, template_id),
            mode: PromptMode::Explicit,
            axis,
            attribute: attribute.to_string(),
            name: None,
            descriptor: Some(descriptor.to_string()),
            template_id: template_id.to_string(),
            replicates,
        }
    }

    /// The text substituted for `{subject}`: the bare name or the descriptor.
    pub fn subject(&self) -> &str {
        match self.mode {
            PromptMode::Implicit => self.name.as_deref().unwrap_or_default(),
            PromptMode::Explicit => self.descriptor.as_deref().unwrap_or_default(),
        }
    }
}

/// Content hash of the identifying fields, as 16 hex digits.
pub fn prompt_id(mode: PromptMode, axis: AxisId, attribute: &str, subject: &str, template_id: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [mode.as_str(), axis.as_str(), attribute, subject, template_id] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusPlan {
    pub implicit_replicates: u32,
    pub explicit_gender_replicates: u32,
    pub explicit_eth_age_replicates: u32,
    pub word_target: u32,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        CorpusPlan {
            implicit_replicates: 5,
            explicit_gender_replicates: 50,
            explicit_eth_age_replicates: 25,
            word_target: 200,
        }
    }
}

impl CorpusPlan {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fields = [
            ("implicit_replicates", self.implicit_replicates),
            ("explicit_gender_replicates", self.explicit_gender_replicates),
            ("explicit_eth_age_replicates", self.explicit_eth_age_replicates),
            ("word_target", self.word_target),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(CorpusError::InvalidPlan(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn explicit_replicates(&self, axis: AxisId) -> u32 {
        match axis {
            AxisId::Gender => self.explicit_gender_replicates,
            AxisId::EthnicityRace | AxisId::Age => self.explicit_eth_age_replicates,
        }
    }
}

/// The default prompt text. Swappable through configuration.
pub const DEFAULT_TEMPLATE: &str = include_str!("../data/template.txt");
pub const DEFAULT_TEMPLATE_ID: &str = "default-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
    pub word_target: u32,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            id: DEFAULT_TEMPLATE_ID.to_string(),
            text: DEFAULT_TEMPLATE.trim_end().to_string(),
            word_target: CorpusPlan::default().word_target,
        }
    }
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>, word_target: u32) -> Result<Self, CorpusError> {
        let template = PromptTemplate {
            id: id.into(),
            text: text.into(),
            word_target,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !self.text.contains("{subject}") {
            return Err(CorpusError::MissingPlaceholder);
        }
        if !self.text.to_lowercase().contains("attributes") {
            return Err(CorpusError::MissingAttributesClause);
        }
        Ok(())
    }

    pub fn render(&self, spec: &PromptSpec) -> Result<String, CorpusError> {
        render_prompt(spec, self)
    }
}

/// Fills the template's `{subject}` and `{words}` placeholders.
pub fn render_prompt(spec: &PromptSpec, template: &PromptTemplate) -> Result<String, CorpusError> {
    template.validate()?;
    Ok(template
        .text
        .replace("{words}", &template.word_target.to_string())
        .replace("{subject}", spec.subject()))
}

/// Expands names and axes into the implicit and explicit prompt lists.
///
/// Implicit prompts come first (one per name), then explicit prompts (one per
/// descriptor), each group in axis and attribute order.
pub fn build_corpus(
    names: &[NameEntry],
    axes: &[DemographicAxis],
    plan: &CorpusPlan,
    template: &PromptTemplate,
) -> Result<Vec<PromptSpec>, CorpusError> {
    plan.validate()?;
    template.validate()?;
    for axis in axes {
        if axis.attributes.is_empty() {
            return Err(CorpusError::EmptyAxis(axis.id));
        }
    }

    let mut specs = Vec::new();
    for axis in axes {
        for attribute in &axis.attributes {
            let cell: Vec<&NameEntry> = names
                .iter()
                .filter(|n| n.axis == axis.id && n.attribute == attribute.label)
                .collect();
            check_names(axis.id, &attribute.label, &cell)?;
            let mut subjects = HashSet::new();
            for entry in cell {
                if !subjects.insert(entry.name.as_str()) {
                    return Err(CorpusError::DuplicatePrompt {
                        axis: axis.id,
                        attribute: attribute.label.clone(),
                        subject: entry.name.clone(),
                    });
                }
                specs.push(PromptSpec::implicit(
                    axis.id,
                    &attribute.label,
                    &entry.name,
                    &template.id,
                    plan.implicit_replicates,
                ));
            }
        }
    }
    for axis in axes {
        let replicates = plan.explicit_replicates(axis.id);
        for attribute in &axis.attributes {
            let mut subjects = HashSet::new();
            for descriptor in &attribute.explicit_descriptors {
                if !subjects.insert(descriptor.as_str()) {
                    return Err(CorpusError::DuplicatePrompt {
                        axis: axis.id,
                        attribute: attribute.label.clone(),
                        subject: descriptor.clone(),
                    });
                }
                specs.push(PromptSpec::explicit(
                    axis.id,
                    &attribute.label,
                    descriptor,
                    &template.id,
                    replicates,
                ));
            }
        }
    }
    Ok(specs)
}

fn check_names(axis: AxisId, attribute: &str, cell: &[&NameEntry]) -> Result<(), CorpusError> {
    let err = |detail: &str| CorpusError::InsufficientNames {
        axis,
        attribute: attribute.to_string(),
        detail: detail.to_string(),
    };
    if cell.is_empty() {
        return Err(err(""));
    }
    if axis != AxisId::Gender {
        for gender in [NameGender::Male, NameGender::Female] {
            if !cell.iter().any(|n| n.gender_of_name == gender) {
                return Err(err(&format!(" of gender {}", gender.as_str())));
            }
        }
    }
    Ok(())
}

/// Expected generations per (mode, axis, attribute).
pub fn sample_sizes(specs: &[PromptSpec]) -> BTreeMap<(PromptMode, AxisId, String), u64> {
    let mut sizes = BTreeMap::new();
    for spec in specs {
        *sizes.entry((spec.mode, spec.axis, spec.attribute.clone())).or_insert(0) += u64::from(spec.replicates);
    }
    sizes
}

pub fn total_generations(specs: &[PromptSpec]) -> u64 {
    specs.iter().map(|s| u64::from(s.replicates)).sum()
}

pub fn write_corpus(writer: impl Write, specs: &[PromptSpec]) -> Result<(), CorpusError> {
    let mut writer = std::io::BufWriter::new(writer);
    for spec in specs {
        serde_json::to_writer(&mut writer, spec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, specs: &[PromptSpec]) -> Result<(), CorpusError> {
    write_corpus(std::fs::File::create(path)?, specs)
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<PromptSpec>, CorpusError> {
    let mut specs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: idx + 1, source })?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<PromptSpec>, CorpusError> {
    read_corpus(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::standard_axes;

    fn name(n: &str, axis: AxisId, attribute: &str, g: NameGender) -> NameEntry {
        NameEntry {
            name: n.to_string(),
            axis,
            attribute: attribute.to_string(),
            gender_of_name: g,
            source_note: String::new(),
        }
    }

    fn shipped_names() -> Vec<NameEntry> {
        crate::taxonomy::builtin_names()
    }

    #[test]
    fn implicit_gender_cell_reaches_500() {
        let names: Vec<NameEntry> = (0..100)
            .map(|i| name(&format!("M{i}"), AxisId::Gender, "Male", NameGender::Male))
            .chain((0..100).map(|i| name(&format!("F{i}"), AxisId::Gender, "Female", NameGender::Female)))
            .collect();
        let axes = vec![DemographicAxis::standard(AxisId::Gender)];
        let specs = build_corpus(&names, &axes, &CorpusPlan::default(), &PromptTemplate::default()).unwrap();
        let sizes = sample_sizes(&specs);
        assert_eq!(sizes[&(PromptMode::Implicit, AxisId::Gender, "Male".into())], 500);
        assert_eq!(sizes[&(PromptMode::Explicit, AxisId::Gender, "Male".into())], 50);
    }

    #[test]
    fn explicit_hispanic_cell_is_two_descriptors_of_25() {
        let specs = build_corpus(
            &shipped_names(),
            &standard_axes(),
            &CorpusPlan::default(),
            &PromptTemplate::default(),
        )
        .unwrap();
        let hispanic: Vec<&PromptSpec> = specs
            .iter()
            .filter(|s| s.mode == PromptMode::Explicit && s.attribute == "Hispanic")
            .collect();
        let descriptors: Vec<&str> = hispanic.iter().map(|s| s.subject()).collect();
        assert_eq!(descriptors, ["a Hispanic man", "a Hispanic woman"]);
        assert!(hispanic.iter().all(|s| s.replicates == 25));
    }

    #[test]
    fn shipped_corpus_matches_published_cell_sizes() {
        let specs = build_corpus(
            &shipped_names(),
            &standard_axes(),
            &CorpusPlan::default(),
            &PromptTemplate::default(),
        )
        .unwrap();
        for ((mode, axis, attribute), n) in sample_sizes(&specs) {
            let expected = if mode == PromptMode::Implicit && axis == AxisId::Gender {
                500
            } else {
                50
            };
            assert_eq!(n, expected, "{mode}/{axis}/{attribute}");
        }
        assert_eq!(sample_sizes(&specs).len(), 24);
        assert_eq!(total_generations(&specs), 2100);
        let ids: HashSet<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids.len(), specs.len());
    }

    #[test]
    fn missing_names_for_attribute() {
        let names: Vec<NameEntry> = shipped_names().into_iter().filter(|n| n.attribute != "Asian").collect();
        match build_corpus(
            &names,
            &standard_axes(),
            &CorpusPlan::default(),
            &PromptTemplate::default(),
        ) {
            Err(CorpusError::InsufficientNames { attribute, .. }) => assert_eq!(attribute, "Asian"),
            other => panic!("expected InsufficientNames, got {other:?}"),
        }
    }

    #[test]
    fn ethnicity_cells_need_both_name_genders() {
        let names: Vec<NameEntry> = shipped_names()
            .into_iter()
            .filter(|n| !(n.attribute == "White" && n.gender_of_name == NameGender::Female))
            .collect();
        assert!(matches!(
            build_corpus(
                &names,
                &standard_axes(),
                &CorpusPlan::default(),
                &PromptTemplate::default()
            ),
            Err(CorpusError::InsufficientNames { .. })
        ));
    }

    #[test]
    fn empty_axis_is_rejected() {
        let axes = vec![DemographicAxis {
            id: AxisId::Age,
            attributes: vec![],
        }];
        assert!(matches!(
            build_corpus(&[], &axes, &CorpusPlan::default(), &PromptTemplate::default()),
            Err(CorpusError::EmptyAxis(AxisId::Age))
        ));
    }

    #[test]
    fn renders_implicit_and_explicit_prompts() {
        let template = PromptTemplate::default();
        let juan = PromptSpec::implicit(AxisId::EthnicityRace, "Hispanic", "Juan", &template.id, 5);
        let text = render_prompt(&juan, &template).unwrap();
        assert!(text.starts_with("Write a 200 word description of Juan. "), "{text}");
        let man = PromptSpec::explicit(AxisId::EthnicityRace, "Hispanic", "a Hispanic man", &template.id, 25);
        let text = render_prompt(&man, &template).unwrap();
        assert!(text.starts_with("Write a 200 word description of a Hispanic man. "));
        for heading in [
            "Political Affiliation",
            "Religion",
            "Sexual Orientation",
            "Socioeconomic Status",
            "Occupation",
        ] {
            assert!(text.contains(heading));
        }
        assert_eq!(render_prompt(&man, &template).unwrap(), text);
    }

    #[test]
    fn template_without_placeholder_fails() {
        assert!(matches!(
            PromptTemplate::new("x", "Describe someone. List attributes.", 200),
            Err(CorpusError::MissingPlaceholder)
        ));
        let broken = PromptTemplate {
            id: "x".into(),
            text: "Describe a person with attributes.".into(),
            word_target: 200,
        };
        let spec = PromptSpec::implicit(AxisId::Gender, "Male", "James", "x", 5);
        assert!(matches!(
            render_prompt(&spec, &broken),
            Err(CorpusError::MissingPlaceholder)
        ));
    }

    #[test]
    fn ids_are_deterministic_and_content_addressed() {
        let a = PromptSpec::implicit(AxisId::Gender, "Male", "James", "t", 5);
        let b = PromptSpec::implicit(AxisId::Gender, "Male", "James", "t", 7);
        let c = PromptSpec::implicit(AxisId::Gender, "Male", "James", "t2", 5);
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
        assert_eq!(a.id.len(), 16);
    }

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let specs = build_corpus(
            &shipped_names(),
            &standard_axes(),
            &CorpusPlan::default(),
            &PromptTemplate::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &specs).unwrap();
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"id\":"));
        assert!(first.contains(
            "\"mode\":\"Implicit\",\"axis\":\"Gender\",\"attribute\":\"Male\",\"name\":\"James\",\"descriptor\":null"
        ));
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), specs);
    }

    #[test]
    fn corpus_is_deterministic() {
        let build = || {
            build_corpus(
                &shipped_names(),
                &standard_axes(),
                &CorpusPlan::default(),
                &PromptTemplate::default(),
            )
            .unwrap()
        };
        assert_eq!(build(), build());
    }
}
