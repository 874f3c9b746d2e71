//! Offline target whose outputs are a known function of the prompt.
//!
//! A plain prompt is answered with its sorted, de-duplicated keywords
//! followed by the tag `#i` for sample index `i`, so
//! `"write two AI startup ideas"` yields `"ai ideas startup two write #0"`.
//!
//! Queries rendered from the recovery templates are recognised by shape and
//! answered by a noisy but deterministic simulation of a model doing that
//! task:
//!
//! * inference keeps each keyword with probability `1 - (1 - notice_rate)^n`
//!   for `n` visible responses and adds a few distractor words;
//! * a difference query lists missing and extra keywords, each reported
//!   with probability `report_rate`;
//! * a summary keeps each listed item with probability `summary_rate`;
//! * a mutation applies each suggested change with probability `apply_rate`.
//!
//! All randomness is drawn from a ChaCha stream keyed by
//! (seed, prompt, sample index).

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{CompletionBackend, CompletionRequest};
use crate::error::Result;
use crate::templates::{split_responses, PromptTemplateSet};
use crate::text_metrics::token_sequence;

const DISTRACTORS: [&str; 12] = [
    "detailed",
    "customer",
    "service",
    "data",
    "analytics",
    "cybersecurity",
    "explain",
    "list",
    "provide",
    "example",
    "innovative",
    "solutions",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticProfile {
    pub notice_rate: f64,
    pub max_distractors_single: usize,
    pub max_distractors_multi: usize,
    pub report_rate: f64,
    pub summary_rate: f64,
    pub apply_rate: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            notice_rate: 0.35,
            max_distractors_single: 3,
            max_distractors_multi: 1,
            report_rate: 0.7,
            summary_rate: 0.85,
            apply_rate: 0.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTarget {
    templates: PromptTemplateSet,
    profile: SyntheticProfile,
}

fn tag_pattern() -> &'static Regex {
    static TAG: OnceLock<Regex> = OnceLock::new();
    TAG.get_or_init(|| Regex::new(r"#\d+").unwrap())
}

/// Sorted distinct keywords of `text`, ignoring sample tags.
pub(crate) fn keywords(text: &str) -> BTreeSet<String> {
    token_sequence(&tag_pattern().replace_all(text, " "))
        .into_iter()
        .collect()
}

fn listed(text: &str, label: &str) -> Vec<String> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(label))
        .map(token_sequence)
        .unwrap_or_default()
}

impl SyntheticTarget {
    pub fn new(templates: PromptTemplateSet) -> Self {
        Self::with_profile(templates, SyntheticProfile::default())
    }

    pub fn with_profile(templates: PromptTemplateSet, profile: SyntheticProfile) -> Self {
        SyntheticTarget { templates, profile }
    }

    /// The answer to a prompt that is not a recovery query.
    pub fn plain_answer(prompt: &str, sample_index: u32) -> String {
        let words: Vec<String> = keywords(prompt).into_iter().collect();
        if words.is_empty() {
            format!("#{sample_index}")
        } else {
            format!("{} #{sample_index}", words.join(" "))
        }
    }

    fn rng(request: &CompletionRequest<'_>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(request.params.seed.unwrap_or(0).to_le_bytes());
        h.update(request.sample_index.to_le_bytes());
        h.update(request.prompt.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn infer(&self, responses: &[String], rng: &mut ChaCha8Rng) -> String {
        let mut union = BTreeSet::new();
        for r in responses {
            union.extend(keywords(r));
        }
        let n = responses.len().max(1) as i32;
        let keep = 1.0 - (1.0 - self.profile.notice_rate).powi(n);
        let mut words: Vec<String> = union
            .iter()
            .filter(|_| rng.random_bool(keep))
            .cloned()
            .collect();
        let max = if n == 1 {
            self.profile.max_distractors_single
        } else {
            self.profile.max_distractors_multi
        };
        let count = rng.random_range(0..=max);
        for _ in 0..count {
            let word = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
            if !union.contains(word) && !words.iter().any(|w| w == word) {
                words.push(word.to_string());
            }
        }
        words.join(" ")
    }

    fn diff(&self, response: &str, answers: &str, rng: &mut ChaCha8Rng) -> String {
        let probe = keywords(response);
        let mut reference = BTreeSet::new();
        for a in split_responses(answers) {
            reference.extend(keywords(&a));
        }
        let rate = self.profile.report_rate;
        let missing: Vec<&str> = reference
            .difference(&probe)
            .filter(|_| rng.random_bool(rate))
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = probe
            .difference(&reference)
            .filter(|_| rng.random_bool(rate))
            .map(String::as_str)
            .collect();
        format!("missing: {}\nextra: {}", missing.join(" "), extra.join(" "))
    }

    fn summarize(&self, differences: &str, rng: &mut ChaCha8Rng) -> String {
        let rate = self.profile.summary_rate;
        let add: Vec<String> = listed(differences, "missing:")
            .into_iter()
            .filter(|_| rng.random_bool(rate))
            .collect();
        let remove: Vec<String> = listed(differences, "extra:")
            .into_iter()
            .filter(|_| rng.random_bool(rate))
            .collect();
        format!("add: {}\nremove: {}", add.join(" "), remove.join(" "))
    }

    fn mutate(&self, candidate: &str, summary: &str, rng: &mut ChaCha8Rng) -> String {
        let rate = self.profile.apply_rate;
        let remove: BTreeSet<String> = listed(summary, "remove:")
            .into_iter()
            .filter(|_| rng.random_bool(rate))
            .collect();
        let mut words: Vec<String> = Vec::new();
        for w in token_sequence(candidate) {
            if !remove.contains(&w) && !words.contains(&w) {
                words.push(w);
            }
        }
        for w in listed(summary, "add:") {
            if rng.random_bool(rate) && !words.contains(&w) {
                words.push(w);
            }
        }
        words.join(" ")
    }

    fn rewrite(prompt: &str, substitutions: &str) -> String {
        static LINE: OnceLock<Regex> = OnceLock::new();
        let line =
            LINE.get_or_init(|| Regex::new(r#"(?m)^- replace "(.*)" with "(.*)"$"#).unwrap());
        let mut out = prompt.to_string();
        for caps in line.captures_iter(substitutions) {
            let (target, replacement) = (&caps[1], &caps[2]);
            if !target.is_empty() && out.contains(target) {
                out = out.replace(target, replacement);
            } else {
                out.push(' ');
                out.push_str(replacement);
            }
        }
        out
    }

    fn respond(&self, name: &str, v: &HashMap<String, String>, rng: &mut ChaCha8Rng) -> String {
        match name {
            "infer_one" => self.infer(std::slice::from_ref(&v["answer"]), rng),
            "infer_many" => self.infer(&split_responses(&v["answers"]), rng),
            "diff" => self.diff(&v["response"], &v["answers"], rng),
            "summarize" => self.summarize(&v["differences"], rng),
            "mutate" => self.mutate(&v["candidate"], &v["summary"], rng),
            "rewrite" => Self::rewrite(&v["prompt"], &v["substitutions"]),
            other => unreachable!("unhandled template section {other}"),
        }
    }
}

impl CompletionBackend for SyntheticTarget {
    fn backend_id(&self) -> String {
        format!("synthetic-v1:{}", &self.templates.digest()[..16])
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        for template in self.templates.iter() {
            if let Some(values) = template.capture(request.prompt) {
                let mut rng = Self::rng(request);
                return Ok(self.respond(template.name(), &values, &mut rng));
            }
        }
        Ok(Self::plain_answer(request.prompt, request.sample_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GenerationParams;

    fn ask(target: &SyntheticTarget, prompt: &str, i: u32) -> String {
        target
            .complete(&CompletionRequest {
                prompt,
                params: &GenerationParams::default(),
                sample_index: i,
            })
            .unwrap()
    }

    #[test]
    fn plain_prompt_rule() {
        let t = SyntheticTarget::new(PromptTemplateSet::builtin());
        assert_eq!(
            ask(&t, "write two AI startup ideas", 0),
            "ai ideas startup two write #0"
        );
        assert_eq!(
            ask(&t, "write two AI startup ideas", 1),
            "ai ideas startup two write #1"
        );
        assert_eq!(ask(&t, "", 2), "#2");
    }

    #[test]
    fn keywords_ignore_tags() {
        let k: Vec<_> = keywords("b a #3 a").into_iter().collect();
        assert_eq!(k, vec!["a", "b"]);
    }

    #[test]
    fn inference_only_uses_answer_words_and_distractors() {
        let set = PromptTemplateSet::builtin();
        let t = SyntheticTarget::new(set.clone());
        let answers: Vec<String> = (0..5)
            .map(|i| SyntheticTarget::plain_answer("plan a trip to rome", i))
            .collect();
        let query = set.infer_many(&answers, 5).unwrap();
        for i in 0..10 {
            let guess = ask(&t, &query, i);
            for w in token_sequence(&guess) {
                assert!(
                    keywords("plan a trip to rome").contains(&w)
                        || DISTRACTORS.contains(&w.as_str()),
                    "unexpected word {w}"
                );
            }
        }
        assert_eq!(ask(&t, &query, 3), ask(&t, &query, 3));
    }

    #[test]
    fn full_rates_make_a_perfect_repair() {
        let set = PromptTemplateSet::builtin();
        let profile = SyntheticProfile {
            report_rate: 1.0,
            summary_rate: 1.0,
            apply_rate: 1.0,
            ..Default::default()
        };
        let t = SyntheticTarget::with_profile(set.clone(), profile);
        let answers: Vec<String> = (0..2)
            .map(|i| SyntheticTarget::plain_answer("red green blue", i))
            .collect();
        let probe = SyntheticTarget::plain_answer("red yellow", 0);
        let diff = ask(&t, &set.diff(&probe, &answers).unwrap(), 0);
        assert_eq!(diff, "missing: blue green\nextra: yellow");
        let summary = ask(&t, &set.summarize(&diff).unwrap(), 0);
        assert_eq!(summary, "add: blue green\nremove: yellow");
        let child = ask(&t, &set.mutate("red yellow", &summary).unwrap(), 0);
        assert_eq!(child, "red blue green");
    }

    #[test]
    fn rewrite_substitutes_or_appends() {
        let set = PromptTemplateSet::builtin();
        let t = SyntheticTarget::new(set.clone());
        let subs = vec![(
            "a new energy drink".to_string(),
            "a new financial software".to_string(),
        )];
        let q = set
            .rewrite(
                "Create an advertising campaign for a new energy drink.",
                &subs,
            )
            .unwrap();
        assert_eq!(
            ask(&t, &q, 0),
            "Create an advertising campaign for a new financial software."
        );
        let subs = vec![("missing".to_string(), "extra words".to_string())];
        let q = set.rewrite("Base prompt", &subs).unwrap();
        assert_eq!(ask(&t, &q, 0), "Base prompt extra words");
    }
}
