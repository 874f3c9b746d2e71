use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text_metrics::ScoreVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// ROUGE-1 F1 of the probe response against each answer, in answer order.
    pub per_answer: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub combined: f64,
}

/// A hypothesis for the hidden prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub probe_response: Option<String>,
    pub breakdown: Option<ScoreBreakdown>,
    pub born_iteration: u32,
    pub parent_index: Option<usize>,
}

impl Candidate {
    pub fn new(text: impl Into<String>) -> Self {
        Candidate {
            text: text.into(),
            probe_response: None,
            breakdown: None,
            born_iteration: 0,
            parent_index: None,
        }
    }

    pub fn is_scored(&self) -> bool {
        self.breakdown.is_some()
    }

    /// Combined score, zero while unscored.
    pub fn combined(&self) -> f64 {
        self.breakdown.as_ref().map_or(0.0, |b| b.combined)
    }
}

/// Index of the highest combined score; the lowest index wins ties.
pub fn best_index(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.combined() > candidates[b].combined()) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub candidates: Vec<Candidate>,
    pub variant: ScoreVariant,
    pub iteration: u32,
}

impl Population {
    pub fn best_index(&self) -> usize {
        best_index(&self.candidates).expect("population is never empty")
    }

    pub fn best(&self) -> &Candidate {
        &self.candidates[self.best_index()]
    }

    pub fn best_score(&self) -> f64 {
        self.best().combined()
    }

    /// Candidates born in this population's iteration, i.e. children that
    /// replaced their parents.
    pub fn replacements(&self) -> usize {
        if self.iteration == 0 {
            return 0;
        }
        self.candidates
            .iter()
            .filter(|c| c.born_iteration == self.iteration)
            .count()
    }

    pub(crate) fn ensure_scored(&self, n: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Precondition("population is empty".into()));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            match &c.breakdown {
                None => {
                    return Err(Error::Precondition(format!("candidate {i} is unscored")));
                }
                Some(b) if b.per_answer.len() != n => {
                    return Err(Error::Precondition(format!(
                        "candidate {i} has {} scores for {n} answers",
                        b.per_answer.len()
                    )));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(combined: f64) -> Candidate {
        Candidate {
            breakdown: Some(ScoreBreakdown {
                per_answer: vec![combined],
                mean: combined,
                max: combined,
                combined,
            }),
            ..Candidate::new("c")
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = vec![scored(0.3), scored(0.9), scored(0.9)];
        assert_eq!(best_index(&c), Some(1));
        assert_eq!(best_index(&[scored(0.0)]), Some(0));
        assert_eq!(best_index(&[]), None);
    }

    #[test]
    fn unscored_population_rejected() {
        let p = Population {
            candidates: vec![scored(0.2), Candidate::new("x")],
            variant: ScoreVariant::MeanMax,
            iteration: 0,
        };
        assert!(p.ensure_scored(1).is_err());
        let p = Population {
            candidates: vec![scored(0.2)],
            variant: ScoreVariant::MeanMax,
            iteration: 0,
        };
        assert!(p.ensure_scored(1).is_ok());
        assert!(p.ensure_scored(2).is_err());
    }
}
