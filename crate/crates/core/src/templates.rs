//! Query templates sent to the model during recovery.
//!
//! File format: an optional preamble of `#` comments and a `version = N`
//! line, followed by `[section]` blocks. Placeholders are written `{name}`;
//! `{{` and `}}` produce literal braces. Every section has a fixed set of
//! allowed placeholders and an unknown one is rejected when the file loads.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.tpl");

/// The template sections and the placeholders each one accepts.
pub const SECTIONS: [(&str, &[&str]); 6] = [
    ("infer_one", &["answer"]),
    ("infer_many", &["answers", "n", "m"]),
    ("diff", &["response", "answers"]),
    ("summarize", &["differences"]),
    ("mutate", &["candidate", "summary"]),
    ("rewrite", &["prompt", "substitutions"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug)]
pub struct Template {
    name: String,
    segments: Vec<Segment>,
    matcher: OnceLock<Regex>,
}

impl Clone for Template {
    fn clone(&self) -> Self {
        Template {
            name: self.name.clone(),
            segments: self.segments.clone(),
            matcher: OnceLock::new(),
        }
    }
}

impl Template {
    pub fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut key = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(k) if k.is_ascii_alphanumeric() || k == '_' => key.push(k),
                            _ => {
                                return Err(Error::Template(format!(
                                    "[{name}]: malformed placeholder near `{{{key}`"
                                )))
                            }
                        }
                    }
                    if !allowed.contains(&key.as_str()) {
                        return Err(Error::Template(format!(
                            "[{name}]: unknown placeholder `{{{key}}}` (allowed: {})",
                            allowed.join(", ")
                        )));
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(key));
                }
                '}' => {
                    return Err(Error::Template(format!("[{name}]: unmatched `}}`")));
                }
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Template {
            name: name.to_string(),
            segments,
            matcher: OnceLock::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p.as_str()),
            Segment::Literal(_) => None,
        })
    }

    /// Substitutes every placeholder; a placeholder without a value is an error.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => {
                    let value = values
                        .iter()
                        .find(|(k, _)| k == p)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| {
                            Error::Template(format!("[{}]: no value for `{{{p}}}`", self.name))
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Recovers placeholder values from a string this template rendered.
    ///
    /// Returns `None` when `text` does not have the template's shape.
    pub fn capture(&self, text: &str) -> Option<HashMap<String, String>> {
        let regex = self.matcher.get_or_init(|| {
            let mut pattern = String::from("(?s)^");
            for segment in &self.segments {
                match segment {
                    Segment::Literal(l) => pattern.push_str(&regex::escape(l)),
                    Segment::Placeholder(_) => pattern.push_str("(.*?)"),
                }
            }
            pattern.push('$');
            Regex::new(&pattern).expect("escaped template pattern is valid")
        });
        let caps = regex.captures(text)?;
        let mut values = HashMap::new();
        for (i, name) in self.placeholders().enumerate() {
            let value = caps.get(i + 1).map_or("", |m| m.as_str());
            values
                .entry(name.to_string())
                .or_insert_with(|| value.to_string());
        }
        Some(values)
    }
}

/// The full set of query templates plus the digest of their source.
#[derive(Debug, Clone)]
pub struct PromptTemplateSet {
    pub version: u32,
    digest: String,
    templates: Vec<Template>,
}

impl PromptTemplateSet {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(source: &str) -> Result<Self> {
        let mut version = 1;
        let mut bodies: Vec<(String, Vec<&str>)> = Vec::new();
        for (lineno, line) in source.lines().enumerate() {
            let trimmed = line.trim_end();
            if let Some(name) = trimmed
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '_'))
            {
                if bodies.iter().any(|(n, _)| n == name) {
                    return Err(Error::Template(format!("duplicate section [{name}]")));
                }
                bodies.push((name.to_string(), Vec::new()));
                continue;
            }
            match bodies.last_mut() {
                Some((_, lines)) => lines.push(line),
                None => {
                    if trimmed.is_empty() || trimmed.starts_with('#') {
                        continue;
                    }
                    let value = trimmed
                        .strip_prefix("version")
                        .map(str::trim_start)
                        .and_then(|r| r.strip_prefix('='))
                        .map(str::trim)
                        .ok_or_else(|| {
                            Error::Template(format!(
                                "line {}: expected `version = N` or a [section]",
                                lineno + 1
                            ))
                        })?;
                    version = value.parse().map_err(|_| {
                        Error::Template(format!("line {}: bad version `{value}`", lineno + 1))
                    })?;
                }
            }
        }

        let mut templates = Vec::with_capacity(SECTIONS.len());
        for (name, allowed) in SECTIONS {
            let (_, lines) = bodies
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Template(format!("missing section [{name}]")))?;
            let body = lines.join("\n");
            templates.push(Template::parse(
                name,
                body.trim_matches('\n').trim_end(),
                allowed,
            )?);
        }
        if let Some((extra, _)) = bodies
            .iter()
            .find(|(n, _)| !SECTIONS.iter().any(|(s, _)| s == n))
        {
            return Err(Error::Template(format!("unknown section [{extra}]")));
        }

        Ok(PromptTemplateSet {
            version,
            digest: hex::encode(Sha256::digest(source.as_bytes())),
            templates,
        })
    }

    /// Hex SHA-256 of the template source.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn get(&self, name: &str) -> &Template {
        self.templates
            .iter()
            .find(|t| t.name == name)
            .unwrap_or_else(|| panic!("no template section named `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.iter()
    }

    pub fn infer_one(&self, answer: &str) -> Result<String> {
        self.get("infer_one").render(&[("answer", answer)])
    }

    pub fn infer_many(&self, answers: &[String], m: usize) -> Result<String> {
        let block = render_responses(answers);
        let n = answers.len().to_string();
        let m = m.to_string();
        self.get("infer_many")
            .render(&[("answers", &block), ("n", &n), ("m", &m)])
    }

    pub fn diff(&self, response: &str, answers: &[String]) -> Result<String> {
        let block = render_responses(answers);
        self.get("diff")
            .render(&[("response", response), ("answers", &block)])
    }

    pub fn summarize(&self, differences: &str) -> Result<String> {
        self.get("summarize")
            .render(&[("differences", differences)])
    }

    pub fn mutate(&self, candidate: &str, summary: &str) -> Result<String> {
        self.get("mutate")
            .render(&[("candidate", candidate), ("summary", summary)])
    }

    pub fn rewrite(&self, prompt: &str, substitutions: &[(String, String)]) -> Result<String> {
        let mut lines = String::new();
        for (target, replacement) in substitutions {
            let _ = writeln!(lines, "- replace \"{target}\" with \"{replacement}\"");
        }
        self.get("rewrite")
            .render(&[("prompt", prompt), ("substitutions", lines.trim_end())])
    }
}

/// Renders a list of responses as numbered blocks.
pub fn render_responses(items: &[String]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "Response {}:\n{}", i + 1, item);
    }
    out
}

/// Inverse of [`render_responses`] for texts that do not themselves contain
/// a `Response N:` header line.
pub fn split_responses(block: &str) -> Vec<String> {
    static HEADER: OnceLock<Regex> = OnceLock::new();
    let header = HEADER.get_or_init(|| Regex::new(r"(?m)^Response \d+:\n").unwrap());
    let mut starts: Vec<(usize, usize)> = header
        .find_iter(block)
        .map(|m| (m.start(), m.end()))
        .collect();
    if starts.is_empty() {
        return vec![block.to_string()];
    }
    starts.push((block.len(), block.len()));
    starts
        .windows(2)
        .map(|w| {
            let body = &block[w[0].1..w[1].0];
            body.strip_suffix("\n\n").unwrap_or(body).to_string()
        })
        .collect()
}
