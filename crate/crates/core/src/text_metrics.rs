//! Text-similarity primitives: unigram tokenization, ROUGE-1, embedding
//! cosine similarity and the candidate score used to rank recovered prompts.
//!
//! Everything here is pure and deterministic. The tokenizer is versioned
//! because ROUGE values computed under different tokenizers are not
//! comparable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag of the tokenization rule below.
pub const TOKENIZER_VERSION: &str = "unigram-v1";

/// Multiset of lowercased unigram tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    counts: BTreeMap<String, usize>,
    total: usize,
}

impl TokenBag {
    pub fn count(&self, token: &str) -> usize {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total_count(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Distinct token types with their multiplicities, in lexical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts.iter().map(|(t, c)| (t.as_str(), *c))
    }

    /// Size of the multiset intersection with `other`.
    pub fn overlap(&self, other: &TokenBag) -> usize {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(t, c)| (*c).min(large.count(t)))
            .sum()
    }

    fn push(&mut self, token: String) {
        *self.counts.entry(token).or_insert(0) += 1;
        self.total += 1;
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits `text` into lowercased tokens, in order of appearance.
///
/// A token is a maximal run of letters and digits; an apostrophe is kept
/// only when it sits between two letters/digits of the same run
/// (`don't`, `rock'n'roll`). Every other character separates tokens.
pub fn token_sequence(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            // Some capitals lowercase to a letter plus a combining mark.
            current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn tokenize(text: &str) -> TokenBag {
    let mut bag = TokenBag::default();
    for token in token_sequence(text) {
        bag.push(token);
    }
    bag
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// ROUGE-1 of `candidate` against `reference`.
pub fn rouge1(candidate: &str, reference: &str) -> RougeScore {
    rouge1_bags(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge1_bags(candidate: &TokenBag, reference: &TokenBag) -> RougeScore {
    RougeScore::from_counts(
        candidate.overlap(reference),
        candidate.total_count(),
        reference.total_count(),
    )
}

/// A dense embedding tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("embedding vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(
                "embedding vector has non-finite values".into(),
            ));
        }
        Ok(EmbeddingVector {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.model_id != b.model_id {
        return Err(Error::IncompatibleEmbedding {
            left: a.model_id.clone(),
            right: b.model_id.clone(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let norm_a = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::DegenerateInput("zero-norm embedding".into()));
    }
    Ok(dot / (norm_a * norm_b))
}

/// How the per-answer ROUGE scores of one candidate collapse to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ScoreVariant {
    /// Average of the mean and the maximum.
    #[default]
    #[serde(rename = "GA")]
    MeanMax,
    /// Maximum only.
    #[serde(rename = "GAm")]
    Max,
    /// Mean only.
    #[serde(rename = "GAa")]
    Mean,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 3] =
        [ScoreVariant::MeanMax, ScoreVariant::Max, ScoreVariant::Mean];

    pub fn label(self) -> &'static str {
        match self {
            ScoreVariant::MeanMax => "GA",
            ScoreVariant::Max => "GAm",
            ScoreVariant::Mean => "GAa",
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(ScoreVariant::MeanMax),
            "gam" => Ok(ScoreVariant::Max),
            "gaa" => Ok(ScoreVariant::Mean),
            other => Err(Error::Config(format!("unknown score variant `{other}`"))),
        }
    }
}

/// Mean and max of a non-empty score sequence.
pub fn mean_and_max(per_answer: &[f64]) -> Result<(f64, f64)> {
    if per_answer.is_empty() {
        return Err(Error::Precondition("score sequence is empty".into()));
    }
    if let Some(bad) = per_answer.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Precondition(format!(
            "score {bad} is outside [0, 1]"
        )));
    }
    let mean = per_answer.iter().sum::<f64>() / per_answer.len() as f64;
    let max = per_answer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Summation rounding can push the mean a hair above the max.
    Ok((mean.min(max), max))
}

pub fn combined_score(per_answer: &[f64], variant: ScoreVariant) -> Result<f64> {
    let (mean, max) = mean_and_max(per_answer)?;
    Ok(combine(mean, max, variant))
}

pub(crate) fn combine(mean: f64, max: f64, variant: ScoreVariant) -> f64 {
    match variant {
        ScoreVariant::MeanMax => (mean + max) / 2.0,
        ScoreVariant::Max => max,
        ScoreVariant::Mean => mean,
    }
}
