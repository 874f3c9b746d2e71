//! Backend configuration file (TOML) and gateway construction.
//!
//! ```toml
//! backend = "live"            # live | mock | synthetic
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-3.5-turbo"
//! parallelism = 4
//! cache_dir = "cache"
//! mock_script = "script.json" # mock backend only
//! ```
//!
//! The API credential is read from `OPENAI_API_KEY`, never from the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    Fallback, Gateway, HashEmbedder, LiveBackend, MockScript, ResponseCache, ScriptedMock,
    SyntheticTarget,
};
use crate::templates::PromptTemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Mock,
    #[default]
    Synthetic,
}

impl BackendKind {
    pub fn is_offline(self) -> bool {
        !matches!(self, BackendKind::Live)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::Mock => "mock",
            BackendKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(BackendKind::Live),
            "mock" => Ok(BackendKind::Mock),
            "synthetic" => Ok(BackendKind::Synthetic),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

fn default_base_url() -> String {
    DEFAULT_BASE_URL.to_string()
}

fn default_parallelism() -> usize {
    1
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: BackendKind::default(),
            base_url: default_base_url(),
            model: None,
            parallelism: default_parallelism(),
            cache_dir: None,
            mock_script: None,
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build(&self, templates: &PromptTemplateSet) -> Result<Gateway> {
        let builder = match self.backend {
            BackendKind::Live => {
                let live = Arc::new(LiveBackend::from_env(&self.base_url));
                Gateway::builder(live.clone()).embedder(live)
            }
            BackendKind::Mock => {
                let script = match &self.mock_script {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                        serde_json::from_str(&text)?
                    }
                    None => MockScript {
                        fallback: Fallback::Echo,
                        scripts: Vec::new(),
                    },
                };
                Gateway::builder(Arc::new(ScriptedMock::from_script(script)?))
                    .embedder(Arc::new(HashEmbedder))
            }
            BackendKind::Synthetic => {
                Gateway::builder(Arc::new(SyntheticTarget::new(templates.clone())))
                    .embedder(Arc::new(HashEmbedder))
            }
        };
        let builder = builder.parallelism(self.parallelism);
        match &self.cache_dir {
            Some(dir) => builder.cache(ResponseCache::open(dir)?).build(),
            None => builder.build(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml() {
        let cfg: GatewayConfig = toml::from_str(
            "backend = \"mock\"\nparallelism = 3\ncache_dir = \"c\"\nmodel = \"m\"\n",
        )
        .unwrap();
        assert_eq!(cfg.backend, BackendKind::Mock);
        assert_eq!(cfg.parallelism, 3);
        assert_eq!(cfg.base_url, DEFAULT_BASE_URL);
        assert!(toml::from_str::<GatewayConfig>("bogus = 1").is_err());
    }

    #[test]
    fn default_mock_echoes() {
        let cfg = GatewayConfig {
            backend: BackendKind::Mock,
            ..Default::default()
        };
        let gw = cfg.build(&PromptTemplateSet::builtin()).unwrap();
        let out = gw.complete("hello", &Default::default(), 0).unwrap();
        assert_eq!(out, "hello");
    }
}
