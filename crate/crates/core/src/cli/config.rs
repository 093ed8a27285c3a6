use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::corpus::{CorpusPlan, PromptTemplate, DEFAULT_TEMPLATE_ID};
use crate::gateway::{SamplingParams, SyntheticModelConfig};
use crate::stats::{StarThresholds, DEFAULT_EPSILON};

/// Data files. Unset paths fall back to the bundled copies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub names: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub refusals: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    /// `synthetic`, or a hosted provider name such as `openai`.
    pub provider: String,
    /// Request shape for hosted providers; defaults from the provider name.
    #[serde(default)]
    pub dialect: Option<String>,
    /// Model name sent to the provider; defaults to `model_id`.
    #[serde(default)]
    pub api_model: Option<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default = "default_rpm")]
    pub rate_limit_rpm: u32,
    #[serde(default)]
    pub max_requests: Option<u64>,
    #[serde(default)]
    pub synthetic: Option<SyntheticModelConfig>,
}

fn default_rpm() -> u32 {
    60
}

impl ModelConfig {
    pub fn is_synthetic(&self) -> bool {
        self.provider.eq_ignore_ascii_case("synthetic")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub data: DataPaths,
    pub models: Vec<ModelConfig>,
    pub plan: CorpusPlan,
    pub concurrency: usize,
    /// Seed for synthetic providers.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub epsilon: f64,
    pub star_thresholds: Vec<f64>,
    pub top_occupations: usize,
    pub formats: Vec<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            data: DataPaths::default(),
            models: Vec::new(),
            plan: CorpusPlan::default(),
            concurrency: 4,
            seed: None,
            out_dir: PathBuf::from("out"),
            epsilon: DEFAULT_EPSILON,
            star_thresholds: StarThresholds::default().0,
            top_occupations: crate::report::DEFAULT_TOP_OCCUPATIONS,
            formats: vec!["csv".into(), "markdown".into(), "jsonl".into()],
        }
    }
}

impl AuditConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = AuditConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.names,
            &mut d.reference,
            &mut d.synonyms,
            &mut d.refusals,
            &mut d.lexicon,
            &mut d.template,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        resolve(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        let d = &self.data;
        for (name, path) in [
            ("names", &d.names),
            ("reference", &d.reference),
            ("synonyms", &d.synonyms),
            ("refusals", &d.refusals),
            ("lexicon", &d.lexicon),
            ("template", &d.template),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return invalid(format!("data.{name}: {} does not exist", p.display()));
                }
            }
        }
        if self.concurrency == 0 {
            return invalid("concurrency must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return invalid(format!("epsilon {} must be non-negative", self.epsilon));
        }
        if self.top_occupations == 0 {
            return invalid("top_occupations must be at least 1".into());
        }
        StarThresholds(self.star_thresholds.clone())
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.plan.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        for f in &self.formats {
            f.parse::<crate::report::ExportFormat>()
                .map_err(|e| CliError::Validation(e.to_string()))?;
        }
        if self.models.is_empty() {
            return invalid("no models configured".into());
        }
        let mut seen = HashSet::new();
        for m in &self.models {
            if !seen.insert(m.model_id.as_str()) {
                return invalid(format!("model {} is listed twice", m.model_id));
            }
            if m.model_id.trim().is_empty() {
                return invalid("model_id must not be empty".into());
            }
            m.params
                .validate()
                .map_err(|e| CliError::Validation(format!("model {}: {e}", m.model_id)))?;
            if m.is_synthetic() {
                if self.seed.is_none() {
                    return invalid(format!("model {} is synthetic and no seed is set", m.model_id));
                }
                let synth = m.synthetic.as_ref().ok_or_else(|| {
                    CliError::Validation(format!("model {}: missing [models.synthetic] block", m.model_id))
                })?;
                synth
                    .validate()
                    .map_err(|e| CliError::Validation(format!("model {}: {e}", m.model_id)))?;
            } else {
                let dialect = m.dialect.as_deref().unwrap_or(&m.provider);
                dialect
                    .parse::<crate::gateway::Dialect>()
                    .map_err(|e| CliError::Validation(format!("model {}: {e}", m.model_id)))?;
            }
        }
        Ok(())
    }

    pub fn template(&self) -> Result<PromptTemplate, CliError> {
        match &self.data.template {
            None => Ok(PromptTemplate {
                word_target: self.plan.word_target,
                ..PromptTemplate::default()
            }),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| DEFAULT_TEMPLATE_ID.to_string());
                PromptTemplate::new(id, text.trim_end(), self.plan.word_target)
                    .map_err(|e| CliError::Validation(e.to_string()))
            }
        }
    }

    pub fn thresholds(&self) -> StarThresholds {
        StarThresholds(self.star_thresholds.clone())
    }
}
