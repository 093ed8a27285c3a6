//! A seeded stand-in model with known output distributions.
//!
//! Every draw is keyed by (seed, prompt id, replicate index), so a generation
//! does not depend on the order or parallelism in which it is requested.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::provider::{Capabilities, Completion, CompletionRequest, Provider, ProviderError};
use crate::corpus::PromptSpec;
use crate::taxonomy::{display_value, AxisId, CategoryId};

const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

pub const SYNTHETIC_REFUSAL_TEXT: &str =
    "I can't write a description that assigns demographic attributes to a specific person.";

pub const DEFAULT_SYNTHETIC_TEMPLATE: &str = "{Subject} works as a {occupation}. Friends describe this person as \
thoughtful, reliable and kind, someone who enjoys good books, long walks and time with family.";

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("no {category} distribution configured for {axis}/{attribute}")]
    MissingDistribution {
        axis: AxisId,
        attribute: String,
        category: CategoryId,
    },
    #[error("invalid synthetic config: {0}")]
    Invalid(String),
}

/// Output distributions for one cell. Unset fields fall back to the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellDistributions {
    pub politics: Option<BTreeMap<String, f64>>,
    pub religion: Option<BTreeMap<String, f64>>,
    pub sexual_orientation: Option<BTreeMap<String, f64>>,
    pub socioeconomic_status: Option<BTreeMap<String, f64>>,
    pub occupations: Option<BTreeMap<String, f64>>,
    pub refusal_probability: Option<f64>,
}

impl CellDistributions {
    pub fn get(&self, category: CategoryId) -> Option<&BTreeMap<String, f64>> {
        match category {
            CategoryId::Politics => self.politics.as_ref(),
            CategoryId::Religion => self.religion.as_ref(),
            CategoryId::SexualOrientation => self.sexual_orientation.as_ref(),
            CategoryId::SocioeconomicStatus => self.socioeconomic_status.as_ref(),
            CategoryId::Occupation => self.occupations.as_ref(),
        }
    }

    pub fn set(&mut self, category: CategoryId, dist: BTreeMap<String, f64>) {
        let slot = match category {
            CategoryId::Politics => &mut self.politics,
            CategoryId::Religion => &mut self.religion,
            CategoryId::SexualOrientation => &mut self.sexual_orientation,
            CategoryId::SocioeconomicStatus => &mut self.socioeconomic_status,
            CategoryId::Occupation => &mut self.occupations,
        };
        *slot = Some(dist);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOverride {
    pub axis: AxisId,
    pub attribute: String,
    #[serde(flatten)]
    pub distributions: CellDistributions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModelConfig {
    pub seed: u64,
    pub refusal_probability: f64,
    pub default: CellDistributions,
    pub cells: Vec<CellOverride>,
    /// Description body; `{subject}`, `{Subject}` and `{occupation}` are
    /// substituted. The attributes block is always appended.
    pub text_template: String,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        SyntheticModelConfig {
            seed: 0,
            refusal_probability: 0.0,
            default: CellDistributions::default(),
            cells: Vec::new(),
            text_template: DEFAULT_SYNTHETIC_TEMPLATE.to_string(),
        }
    }
}

fn point_or_map(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl SyntheticModelConfig {
    /// Uniform closed-category distributions and a small occupation pool.
    pub fn uniform(seed: u64) -> Self {
        let mut config = SyntheticModelConfig {
            seed,
            ..SyntheticModelConfig::default()
        };
        for category in CategoryId::CLOSED {
            let values = category.canonical_values();
            let p = 1.0 / values.len() as f64;
            config
                .default
                .set(category, values.iter().map(|v| (v.to_string(), p)).collect());
        }
        config.default.occupations = Some(point_or_map(&[
            ("teacher", 0.25),
            ("software engineer", 0.25),
            ("nurse", 0.25),
            ("graphic designer", 0.25),
        ]));
        config
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        check_probability("refusal_probability", self.refusal_probability)?;
        validate_cell(&self.default, "default")?;
        for cell in &self.cells {
            validate_cell(&cell.distributions, &format!("{}/{}", cell.axis, cell.attribute))?;
        }
        if !self.text_template.contains("{subject}") && !self.text_template.contains("{Subject}") {
            return Err(SyntheticError::Invalid(
                "text_template has no {subject} placeholder".into(),
            ));
        }
        Ok(())
    }

    fn cell(&self, axis: AxisId, attribute: &str) -> Option<&CellDistributions> {
        self.cells
            .iter()
            .find(|c| c.axis == axis && c.attribute == attribute)
            .map(|c| &c.distributions)
    }

    /// The distribution in force for a cell and category.
    pub fn distribution(
        &self,
        axis: AxisId,
        attribute: &str,
        category: CategoryId,
    ) -> Result<&BTreeMap<String, f64>, SyntheticError> {
        self.cell(axis, attribute)
            .and_then(|c| c.get(category))
            .or_else(|| self.default.get(category))
            .ok_or_else(|| SyntheticError::MissingDistribution {
                axis,
                attribute: attribute.to_string(),
                category,
            })
    }

    pub fn refusal_probability(&self, axis: AxisId, attribute: &str) -> f64 {
        self.cell(axis, attribute)
            .and_then(|c| c.refusal_probability)
            .unwrap_or(self.refusal_probability)
    }

    /// Fails if any spec's cell lacks a distribution.
    pub fn check_coverage(&self, specs: &[PromptSpec]) -> Result<(), SyntheticError> {
        for spec in specs {
            for category in CategoryId::ALL {
                self.distribution(spec.axis, &spec.attribute, category)?;
            }
        }
        Ok(())
    }
}

fn check_probability(name: &str, p: f64) -> Result<(), SyntheticError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SyntheticError::Invalid(format!("{name} {p} is outside [0, 1]")));
    }
    Ok(())
}

fn validate_cell(cell: &CellDistributions, label: &str) -> Result<(), SyntheticError> {
    if let Some(p) = cell.refusal_probability {
        check_probability(&format!("{label} refusal_probability"), p)?;
    }
    for category in CategoryId::ALL {
        let Some(dist) = cell.get(category) else { continue };
        if dist.is_empty() {
            return Err(SyntheticError::Invalid(format!(
                "{label} {category}: empty distribution"
            )));
        }
        for (value, p) in dist {
            if category.is_closed() && !category.is_canonical(value) {
                return Err(SyntheticError::Invalid(format!(
                    "{label} {category}: {value:?} is not a canonical value"
                )));
            }
            if !(p.is_finite() && *p >= 0.0) {
                return Err(SyntheticError::Invalid(format!("{label} {category}: bad weight {p}")));
            }
        }
        let sum: f64 = dist.values().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(SyntheticError::Invalid(format!(
                "{label} {category}: weights sum to {sum}"
            )));
        }
    }
    Ok(())
}

fn keyed_rng(seed: u64, prompt_id: &str, replicate_index: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(prompt_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(replicate_index.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn draw<'a>(rng: &mut ChaCha8Rng, category: CategoryId, dist: &'a BTreeMap<String, f64>) -> &'a str {
    let u: f64 = rng.random();
    // closed categories draw in canonical order, occupations in key order
    let ordered: Vec<(&'a str, f64)> = if category.is_closed() {
        category
            .canonical_values()
            .iter()
            .filter_map(|v| dist.get_key_value(*v).map(|(k, p)| (k.as_str(), *p)))
            .collect()
    } else {
        dist.iter().map(|(k, p)| (k.as_str(), *p)).collect()
    };
    let mut acc = 0.0;
    for (value, p) in &ordered {
        acc += p;
        if u < acc {
            return value;
        }
    }
    ordered
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map(|(v, _)| *v)
        .expect("distribution has positive mass")
}

/// Values the provider writes for one generation; `None` means a refusal.
/// Lets callers check a parser against the ground truth.
pub fn sample_profile(
    spec: &PromptSpec,
    config: &SyntheticModelConfig,
    replicate_index: u32,
) -> Result<Option<BTreeMap<CategoryId, String>>, SyntheticError> {
    let mut rng = keyed_rng(config.seed, &spec.id, replicate_index);
    let refusal_p = config.refusal_probability(spec.axis, &spec.attribute);
    let u: f64 = rng.random();
    let mut values = BTreeMap::new();
    for category in CategoryId::ALL {
        let dist = config.distribution(spec.axis, &spec.attribute, category)?;
        values.insert(category, draw(&mut rng, category, dist).to_string());
    }
    Ok((u >= refusal_p).then_some(values))
}

/// Renders the synthetic response for one replicate of `spec`.
pub fn synthetic_generate(
    spec: &PromptSpec,
    config: &SyntheticModelConfig,
    replicate_index: u32,
) -> Result<String, SyntheticError> {
    let Some(values) = sample_profile(spec, config, replicate_index)? else {
        return Ok(SYNTHETIC_REFUSAL_TEXT.to_string());
    };
    let subject = spec.subject();
    let capitalized = display_value(subject);
    let occupation = &values[&CategoryId::Occupation];
    let mut text = config
        .text_template
        .replace("{Subject}", &capitalized)
        .replace("{subject}", subject)
        .replace("{occupation}", occupation);
    text.push_str("\n\nAttributes:\n");
    for category in CategoryId::ALL {
        text.push_str(&format!(
            "- {}: {}\n",
            category.attribute_heading(),
            display_value(&values[&category])
        ));
    }
    Ok(text)
}

/// Provider wrapper around [`synthetic_generate`]. Makes no network calls.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    config: SyntheticModelConfig,
}

impl SyntheticProvider {
    pub fn new(config: SyntheticModelConfig) -> Result<Self, SyntheticError> {
        config.validate()?;
        Ok(SyntheticProvider { config })
    }

    pub fn config(&self) -> &SyntheticModelConfig {
        &self.config
    }
}

impl Provider for SyntheticProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        synthetic_generate(request.spec, &self.config, request.replicate_index)
            .map(Completion::text)
            .map_err(|e| ProviderError::Permanent(e.to_string()))
    }
}
