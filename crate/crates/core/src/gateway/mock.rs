//! Scripted offline backend.
//!
//! Prompts are matched against registered patterns; the longest matching
//! literal wins and responses cycle by sample index. Prompts that match
//! nothing go to the configured [`Fallback`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionBackend, CompletionRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchPattern {
    /// The whole prompt equals the literal.
    #[serde(rename = "exact")]
    Exact(String),
    /// The prompt contains the literal.
    #[serde(rename = "contains")]
    Substring(String),
}

impl MatchPattern {
    fn literal(&self) -> &str {
        match self {
            MatchPattern::Exact(s) | MatchPattern::Substring(s) => s,
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        match self {
            MatchPattern::Exact(s) => prompt == s,
            MatchPattern::Substring(s) => prompt.contains(s.as_str()),
        }
    }
}

/// What an unmatched prompt gets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Unscripted-prompt error.
    #[default]
    Strict,
    /// The prompt itself.
    Echo,
    Fixed(String),
    /// A pool entry chosen by hashing (prompt, seed, sample index).
    Hashed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(flatten)]
    pub pattern: MatchPattern,
    pub responses: Vec<String>,
}

/// On-disk form of a mock configuration (JSON).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub scripts: Vec<ScriptEntry>,
}

#[derive(Debug)]
pub struct ScriptedMock {
    scripts: RwLock<Vec<ScriptEntry>>,
    fallback: Fallback,
    calls: AtomicU64,
}

impl ScriptedMock {
    pub fn new(fallback: Fallback) -> Self {
        ScriptedMock {
            scripts: RwLock::new(Vec::new()),
            fallback,
            calls: AtomicU64::new(0),
        }
    }

    pub fn strict() -> Self {
        Self::new(Fallback::Strict)
    }

    pub fn from_script(script: MockScript) -> Result<Self> {
        let mock = Self::new(script.fallback);
        for entry in script.scripts {
            mock.register(entry.pattern, entry.responses)?;
        }
        Ok(mock)
    }

    pub fn register(&self, pattern: MatchPattern, responses: Vec<String>) -> Result<()> {
        if responses.is_empty() {
            return Err(Error::Config(format!(
                "script for {pattern:?} has no responses"
            )));
        }
        if let Fallback::Hashed(pool) = &self.fallback {
            if pool.is_empty() {
                return Err(Error::Config("hashed fallback pool is empty".into()));
            }
        }
        let mut scripts = self.scripts.write().expect("script lock poisoned");
        if scripts.iter().any(|s| s.pattern == pattern) {
            return Err(Error::Config(format!(
                "duplicate script pattern {pattern:?}"
            )));
        }
        scripts.push(ScriptEntry { pattern, responses });
        Ok(())
    }

    /// Backend calls served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, prompt: &str, sample_index: u32) -> Option<String> {
        let scripts = self.scripts.read().expect("script lock poisoned");
        // Longest literal wins; exact beats substring at equal length; then
        // registration order.
        scripts
            .iter()
            .filter(|s| s.pattern.matches(prompt))
            .max_by(|a, b| {
                let rank = |s: &ScriptEntry| {
                    (
                        s.pattern.literal().len(),
                        matches!(s.pattern, MatchPattern::Exact(_)),
                    )
                };
                rank(a).cmp(&rank(b)).then(std::cmp::Ordering::Greater)
            })
            .map(|s| s.responses[sample_index as usize % s.responses.len()].clone())
    }
}

impl CompletionBackend for ScriptedMock {
    fn backend_id(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(hit) = self.lookup(request.prompt, request.sample_index) {
            return Ok(hit);
        }
        match &self.fallback {
            Fallback::Strict => Err(Error::UnscriptedPrompt(request.prompt.to_string())),
            Fallback::Echo => Ok(request.prompt.to_string()),
            Fallback::Fixed(text) => Ok(text.clone()),
            Fallback::Hashed(pool) if pool.is_empty() => {
                Err(Error::Config("hashed fallback pool is empty".into()))
            }
            Fallback::Hashed(pool) => {
                let mut h = Sha256::new();
                h.update(request.prompt.as_bytes());
                h.update(request.params.seed.unwrap_or(0).to_le_bytes());
                h.update(request.sample_index.to_le_bytes());
                let digest = h.finalize();
                let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
                Ok(pool[(word % pool.len() as u64) as usize].clone())
            }
        }
    }
}
