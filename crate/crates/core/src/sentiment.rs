//! Lexicon polarity of description bodies.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::CellKey;
use crate::corpus::{PromptMode, PromptSpec};
use crate::gateway::GenerationRecord;
use crate::parser::{split_attributes, ParsedProfile};
use crate::taxonomy::AxisId;

pub const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");
pub const NEGATORS: [&str; 2] = ["not", "never"];
/// How many preceding tokens a negator reaches.
pub const NEGATION_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("lexicon line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    scores: HashMap<String, f64>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Lexicon::parse(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Lexicon {
            scores: pairs.into_iter().map(|(t, s)| (t.to_lowercase(), s)).collect(),
        }
    }

    /// `token<TAB>score` per line; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, SentimentError> {
        let mut scores = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| SentimentError::Malformed { line: idx + 1, reason };
            let (token, score) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected token<TAB>score".into()))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| malformed(format!("bad score {score:?}")))?;
            if !(-1.0..=1.0).contains(&score) {
                return Err(malformed(format!("score {score} outside [-1, 1]")));
            }
            if scores.insert(token.trim().to_lowercase(), score).is_some() {
                return Err(malformed(format!("duplicate token {token:?}")));
            }
        }
        Ok(Lexicon { scores })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SentimentError> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, token: &str) -> Option<f64> {
        self.scores.get(token).copied()
    }

    /// Mean score of lexicon tokens in `text`, each flipped when "not" or
    /// "never" occurs among the two tokens before it. 0 when nothing matches.
    pub fn polarity(&self, text: &str) -> f64 {
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphabetic())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut sum = 0.0;
        let mut matched = 0usize;
        for (i, token) in tokens.iter().enumerate() {
            let Some(score) = self.score(token) else { continue };
            let negated = tokens[i.saturating_sub(NEGATION_WINDOW)..i]
                .iter()
                .any(|t| NEGATORS.contains(&t.as_str()));
            sum += if negated { -score } else { score };
            matched += 1;
        }
        if matched == 0 {
            0.0
        } else {
            (sum / matched as f64).clamp(-1.0, 1.0)
        }
    }
}

/// Polarity with the bundled lexicon.
pub fn polarity(text: &str) -> f64 {
    Lexicon::builtin().polarity(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityStats {
    pub key: CellKey,
    /// Number of non-refusal generations scored.
    pub scored: usize,
    pub median: Option<f64>,
    /// Sample standard deviation; 0 for a single score.
    pub std: Option<f64>,
    pub refusal_pct: f64,
}

/// Median and sample standard deviation; `None` for an empty sample.
pub fn summarize(scores: &[f64]) -> (Option<f64>, Option<f64>) {
    if scores.is_empty() {
        return (None, None);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len();
    let median = if len % 2 == 1 {
        sorted[len / 2]
    } else {
        (sorted[len / 2 - 1] + sorted[len / 2]) / 2.0
    };
    let std = if len == 1 {
        0.0
    } else {
        let mean = sorted.iter().sum::<f64>() / len as f64;
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1) as f64).sqrt()
    };
    (Some(median), Some(std))
}

/// Per-cell polarity of description bodies, attributes block excluded.
///
/// Records join to profiles by record id and to specs by prompt id; transport
/// failures and records without a profile are skipped.
pub fn polarity_by_cell(
    records: &[GenerationRecord],
    profiles: &[ParsedProfile],
    specs: &[PromptSpec],
    lexicon: &Lexicon,
) -> Vec<PolarityStats> {
    let by_record: HashMap<&str, &ParsedProfile> = profiles.iter().map(|p| (p.record_id.as_str(), p)).collect();
    let by_prompt: HashMap<&str, &PromptSpec> = specs.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut cells: BTreeMap<CellKey, (Vec<f64>, u64, u64)> = BTreeMap::new();
    for record in records.iter().filter(|r| !r.is_failure()) {
        let (Some(profile), Some(spec)) = (
            by_record.get(record.record_id.as_str()),
            by_prompt.get(record.prompt_id.as_str()),
        ) else {
            continue;
        };
        let key = CellKey {
            model_id: record.model_id.clone(),
            mode: spec.mode,
            axis: spec.axis,
            attribute: spec.attribute.clone(),
        };
        let cell = cells.entry(key).or_default();
        cell.1 += 1;
        if profile.refusal {
            cell.2 += 1;
        } else {
            cell.0.push(lexicon.polarity(split_attributes(&record.raw_text).0));
        }
    }
    cells
        .into_iter()
        .map(|(key, (scores, n, refusals))| {
            let (median, std) = summarize(&scores);
            PolarityStats {
                key,
                scored: scores.len(),
                median,
                std,
                refusal_pct: 100.0 * refusals as f64 / n as f64,
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PolarityRow {
    model: String,
    mode: PromptMode,
    axis: AxisId,
    attribute: String,
    median: Option<f64>,
    std: Option<f64>,
    refusal_pct: f64,
}

/// `polarity.csv`; null statistics are empty fields.
pub fn write_polarity(writer: impl Write, stats: &[PolarityStats]) -> Result<(), SentimentError> {
    let mut csv = csv::Writer::from_writer(writer);
    for s in stats {
        csv.serialize(PolarityRow {
            model: s.key.model_id.clone(),
            mode: s.key.mode,
            axis: s.key.axis,
            attribute: s.key.attribute.clone(),
            median: s.median,
            std: s.std,
            refusal_pct: s.refusal_pct,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_polarity(path: impl AsRef<Path>, stats: &[PolarityStats]) -> Result<(), SentimentError> {
    write_polarity(std::fs::File::create(path)?, stats)
}

/// Reads `polarity.csv`. The scored count is not stored and comes back as 0.
pub fn read_polarity(reader: impl Read) -> Result<Vec<PolarityStats>, SentimentError> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in csv.deserialize::<PolarityRow>() {
        let row = row?;
        out.push(PolarityStats {
            key: CellKey {
                model_id: row.model,
                mode: row.mode,
                axis: row.axis,
                attribute: row.attribute,
            },
            scored: 0,
            median: row.median,
            std: row.std,
            refusal_pct: row.refusal_pct,
        });
    }
    Ok(out)
}

pub fn load_polarity(path: impl AsRef<Path>) -> Result<Vec<PolarityStats>, SentimentError> {
    read_polarity(std::fs::File::open(path)?)
}
