//! Prompt recovery methods.
//!
//! * one answer, one shot: infer the prompt from a single response;
//! * many answers, one shot: infer it from the whole answer set;
//! * many answers, many shots: sample `m` inferences, probe each against
//!   the target and keep the best scoring one;
//! * genetic: start from the scored `m` inferences and repeatedly ask the
//!   model to explain how each probe differs from the answers, summarise
//!   that, and revise the candidate. A child replaces its parent only when
//!   it scores strictly higher.

mod candidate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use candidate::{best_index, Candidate, Population, ScoreBreakdown};

use crate::error::{Error, Result};
use crate::gateway::{AnswerSet, GenerationParams, Session};
use crate::templates::PromptTemplateSet;
use crate::text_metrics::{combine, mean_and_max, rouge1_bags, tokenize, ScoreVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "1A1S")]
    OneAnswerOneShot,
    #[serde(rename = "5A1S")]
    ManyAnswersOneShot,
    #[serde(rename = "5A5S")]
    ManyAnswersManyShots,
    #[serde(rename = "GA")]
    Genetic,
    #[serde(rename = "GAm")]
    GeneticMax,
    #[serde(rename = "GAa")]
    GeneticMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OneAnswerOneShot,
        Method::ManyAnswersOneShot,
        Method::ManyAnswersManyShots,
        Method::Genetic,
        Method::GeneticMax,
        Method::GeneticMean,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::OneAnswerOneShot => "1A1S",
            Method::ManyAnswersOneShot => "5A1S",
            Method::ManyAnswersManyShots => "5A5S",
            Method::Genetic => "GA",
            Method::GeneticMax => "GAm",
            Method::GeneticMean => "GAa",
        }
    }

    pub fn is_genetic(self) -> bool {
        matches!(
            self,
            Method::Genetic | Method::GeneticMax | Method::GeneticMean
        )
    }

    /// The genetic method that scores with `variant`.
    pub fn genetic(variant: ScoreVariant) -> Self {
        match variant {
            ScoreVariant::MeanMax => Method::Genetic,
            ScoreVariant::Max => Method::GeneticMax,
            ScoreVariant::Mean => Method::GeneticMean,
        }
    }

    /// Scoring variant used by this method; `configured` applies to the
    /// methods that do not fix one.
    pub fn variant(self, configured: ScoreVariant) -> ScoreVariant {
        match self {
            Method::GeneticMax => ScoreVariant::Max,
            Method::GeneticMean => ScoreVariant::Mean,
            _ => configured,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// Answers per prompt.
    pub n: usize,
    /// Population size.
    pub m: usize,
    /// Iterations.
    pub k: usize,
    pub variant: ScoreVariant,
    pub params: GenerationParams,
    /// Stop before `k` iterations once an iteration replaces nothing.
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            n: 5,
            m: 5,
            k: 3,
            variant: ScoreVariant::MeanMax,
            params: GenerationParams::default(),
            early_stop: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        self.params.validate()
    }
}

/// Outcome of a finished genetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Candidate,
    /// Population after initialisation and after every iteration.
    pub trace: Vec<Population>,
}

/// A genetic run that failed part way; `trace` holds the populations
/// completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("genetic run failed after {} snapshot(s): {error}", trace.len())]
pub struct GaFailure {
    #[source]
    pub error: Error,
    pub trace: Vec<Population>,
}

/// Result of any recovery method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub method: Method,
    pub text: String,
    /// The selected candidate for the scored methods.
    pub best: Option<Candidate>,
    pub trace: Vec<Population>,
}

/// Runs recovery methods against the target model behind a [`Session`].
pub struct Inverter<'s, 'g> {
    session: &'s Session<'g>,
    templates: &'s PromptTemplateSet,
}

impl<'s, 'g> Inverter<'s, 'g> {
    pub fn new(session: &'s Session<'g>, templates: &'s PromptTemplateSet) -> Self {
        Inverter { session, templates }
    }

    pub fn rpe_1a1s(&self, answer: &str, params: &GenerationParams) -> Result<String> {
        if answer.is_empty() {
            return Err(Error::Precondition("answer is empty".into()));
        }
        let query = self.templates.infer_one(answer)?;
        self.session.complete(&query, params, 0)
    }

    /// `m` sampled inferences from the whole answer set, in sample order.
    pub fn infer_candidates(
        &self,
        answers: &AnswerSet,
        m: usize,
        params: &GenerationParams,
    ) -> Result<Vec<String>> {
        if answers.answers.is_empty() {
            return Err(Error::Precondition("answer set is empty".into()));
        }
        if m == 0 {
            return Err(Error::Precondition("m must be at least 1".into()));
        }
        let query = self.templates.infer_many(&answers.answers, m)?;
        let indices: Vec<u32> = (0..m as u32).collect();
        self.session
            .par_map(&indices, |_, &i| self.session.complete(&query, params, i))
            .into_iter()
            .map(|r| r.map(|text| text.trim().to_string()))
            .collect()
    }

    pub fn rpe_5a1s(&self, answers: &AnswerSet, params: &GenerationParams) -> Result<String> {
        Ok(self.infer_candidates(answers, 1, params)?.remove(0))
    }

    /// Probes `candidate` once and scores the probe against every answer.
    pub fn score_candidate(
        &self,
        mut candidate: Candidate,
        answers: &AnswerSet,
        variant: ScoreVariant,
        params: &GenerationParams,
    ) -> Result<Candidate> {
        let n = answers.n();
        if n == 0 {
            return Err(Error::Precondition("answer set is empty".into()));
        }
        let per_answer = if candidate.text.trim().is_empty() {
            candidate.probe_response = None;
            vec![0.0; n]
        } else {
            let probe = self.session.complete(&candidate.text, params, 0)?;
            let probe_bag = tokenize(&probe);
            let scores = answers
                .answers
                .iter()
                .map(|a| rouge1_bags(&probe_bag, &tokenize(a)).f1)
                .collect();
            candidate.probe_response = Some(probe);
            scores
        };
        let (mean, max) = mean_and_max(&per_answer)?;
        candidate.breakdown = Some(ScoreBreakdown {
            combined: combine(mean, max, variant),
            per_answer,
            mean,
            max,
        });
        Ok(candidate)
    }

    fn score_all(
        &self,
        candidates: Vec<Candidate>,
        answers: &AnswerSet,
        variant: ScoreVariant,
        params: &GenerationParams,
    ) -> Result<Vec<Candidate>> {
        self.session
            .par_map(&candidates, |_, c| {
                self.score_candidate(c.clone(), answers, variant, params)
            })
            .into_iter()
            .collect()
    }

    pub fn rpe_5a5s(
        &self,
        answers: &AnswerSet,
        m: usize,
        variant: ScoreVariant,
        params: &GenerationParams,
    ) -> Result<Candidate> {
        let texts = self.infer_candidates(answers, m, params)?;
        let scored = self.score_all(
            texts.into_iter().map(Candidate::new).collect(),
            answers,
            variant,
            params,
        )?;
        let best = best_index(&scored).expect("m >= 1");
        Ok(scored.into_iter().nth(best).expect("index in range"))
    }

    pub fn ga_initialize(&self, answers: &AnswerSet, config: &GaConfig) -> Result<Population> {
        config.validate()?;
        let texts = self.infer_candidates(answers, config.m, &config.params)?;
        let candidates = self.score_all(
            texts.into_iter().map(Candidate::new).collect(),
            answers,
            config.variant,
            &config.params,
        )?;
        Ok(Population {
            candidates,
            variant: config.variant,
            iteration: 0,
        })
    }

    /// Differences, summary and revision for one candidate, then the score
    /// of the revised prompt.
    fn offspring(
        &self,
        parent: &Candidate,
        index: usize,
        answers: &AnswerSet,
        config: &GaConfig,
        iteration: u32,
    ) -> Result<Candidate> {
        let params = &config.params;
        let probe = parent.probe_response.as_deref().unwrap_or("");
        let diff = self.session.complete(
            &self.templates.diff(probe, &answers.answers)?,
            params,
            iteration,
        )?;
        let summary =
            self.session
                .complete(&self.templates.summarize(diff.trim())?, params, iteration)?;
        let child_text = self.session.complete(
            &self.templates.mutate(&parent.text, summary.trim())?,
            params,
            iteration,
        )?;
        let child = Candidate {
            text: child_text.trim().to_string(),
            probe_response: None,
            breakdown: None,
            born_iteration: iteration,
            parent_index: Some(index),
        };
        self.score_candidate(child, answers, config.variant, params)
    }

    pub fn ga_iterate(
        &self,
        population: &Population,
        answers: &AnswerSet,
        config: &GaConfig,
    ) -> Result<Population> {
        population.ensure_scored(answers.n())?;
        let iteration = population.iteration + 1;
        let children = self.session.par_map(&population.candidates, |i, parent| {
            self.offspring(parent, i, answers, config, iteration)
        });
        // Reduction runs in index order after every child is back.
        let candidates = population
            .candidates
            .iter()
            .zip(children)
            .map(|(parent, child)| match child {
                Ok(child) if child.combined() > parent.combined() => child,
                Ok(_) => parent.clone(),
                Err(e) => {
                    log::warn!("offspring failed, parent kept: {e}");
                    parent.clone()
                }
            })
            .collect();
        Ok(Population {
            candidates,
            variant: population.variant,
            iteration,
        })
    }

    pub fn ga_run(&self, answers: &AnswerSet, config: &GaConfig) -> Result<GaOutcome, GaFailure> {
        let mut trace = Vec::with_capacity(config.k + 1);
        let mut population = self
            .ga_initialize(answers, config)
            .map_err(|error| GaFailure {
                error,
                trace: Vec::new(),
            })?;
        trace.push(population.clone());
        for _ in 0..config.k {
            let next = match self.ga_iterate(&population, answers, config) {
                Ok(p) => p,
                Err(error) => return Err(GaFailure { error, trace }),
            };
            let replaced = next.replacements();
            trace.push(next.clone());
            population = next;
            if config.early_stop && replaced == 0 {
                break;
            }
        }
        let best = population.best().clone();
        Ok(GaOutcome { best, trace })
    }

    /// Runs `method` on `answers`.
    pub fn recover(
        &self,
        method: Method,
        answers: &AnswerSet,
        config: &GaConfig,
    ) -> Result<Recovery> {
        config.validate()?;
        let params = &config.params;
        let variant = method.variant(config.variant);
        let (text, best, trace) = match method {
            Method::OneAnswerOneShot => {
                let first = answers
                    .answers
                    .first()
                    .ok_or_else(|| Error::Precondition("answer set is empty".into()))?;
                (
                    self.rpe_1a1s(first, params)?.trim().to_string(),
                    None,
                    Vec::new(),
                )
            }
            Method::ManyAnswersOneShot => (self.rpe_5a1s(answers, params)?, None, Vec::new()),
            Method::ManyAnswersManyShots => {
                let best = self.rpe_5a5s(answers, config.m, variant, params)?;
                (best.text.clone(), Some(best), Vec::new())
            }
            Method::Genetic | Method::GeneticMax | Method::GeneticMean => {
                let config = GaConfig {
                    variant,
                    ..config.clone()
                };
                let outcome = self.ga_run(answers, &config).map_err(|f| f.error)?;
                (outcome.best.text.clone(), Some(outcome.best), outcome.trace)
            }
        };
        Ok(Recovery {
            method,
            text,
            best,
            trace,
        })
    }
}
