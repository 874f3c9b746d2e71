//! Recovered-versus-original evaluation and benchmark runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::corpus::PromptRecord;
use crate::engine::{GaConfig, Inverter, Method};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, Session, HASH_EMBED_MODEL};
use crate::templates::PromptTemplateSet;
use crate::text_metrics::{cosine_similarity, rouge1};

/// Embedding models used for cosine similarity against a live endpoint.
pub const LIVE_EMBEDDING_MODELS: [&str; 2] = ["text-embedding-ada-002", "text-embedding-3-large"];

/// Embedding models used offline.
pub const OFFLINE_EMBEDDING_MODELS: [&str; 1] = [HASH_EMBED_MODEL];

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn ser_round6<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*x))
}

fn ser_round6_map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (k, round6(*v))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub rouge1_f1: f64,
    pub cosine_by_model: BTreeMap<String, f64>,
}

/// ROUGE-1 F1 of `recovered` against `original`, plus cosine similarity
/// under each embedding model. A model whose embedding fails is left out
/// of the map.
pub fn evaluate_pair(
    session: &Session<'_>,
    original: &str,
    recovered: &str,
    embedding_models: &[String],
) -> Result<PairMetrics> {
    if original.is_empty() {
        return Err(Error::Precondition("original prompt is empty".into()));
    }
    let rouge1_f1 = rouge1(recovered, original).f1;
    let mut cosine_by_model = BTreeMap::new();
    for model in embedding_models {
        let cosine = session
            .embed(original, model)
            .and_then(|a| Ok((a, session.embed(recovered, model)?)))
            .and_then(|(a, b)| cosine_similarity(&a, &b));
        match cosine {
            Ok(c) => {
                cosine_by_model.insert(model.clone(), c.clamp(-1.0, 1.0));
            }
            Err(e) => log::warn!("no cosine under {model}: {e}"),
        }
    }
    Ok(PairMetrics {
        rouge1_f1,
        cosine_by_model,
    })
}

/// One benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub prompt_id: String,
    pub method: Method,
    pub recovered_text: String,
    #[serde(serialize_with = "ser_round6")]
    pub rouge1_f1: f64,
    #[serde(serialize_with = "ser_round6_map")]
    pub cosine_by_model: BTreeMap<String, f64>,
    /// Completion requests issued for this row, cache hits included.
    pub n_backend_calls: u64,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub ga: GaConfig,
    pub embedding_models: Vec<String>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            ga: GaConfig::default(),
            embedding_models: OFFLINE_EMBEDDING_MODELS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

fn run_one(
    gateway: &Gateway,
    templates: &PromptTemplateSet,
    record: &PromptRecord,
    method: Method,
    config: &BenchmarkConfig,
) -> ResultRecord {
    let started = Instant::now();
    let session = gateway.session();
    let outcome = (|| {
        let answers = session.generate(&record.text, &config.ga.params, config.ga.n)?;
        let recovery = Inverter::new(&session, templates).recover(method, &answers, &config.ga)?;
        let metrics = evaluate_pair(
            &session,
            &record.text,
            &recovery.text,
            &config.embedding_models,
        )?;
        Ok::<_, Error>((recovery.text, metrics))
    })();
    let (recovered_text, rouge1_f1, cosine_by_model, error) = match outcome {
        Ok((text, metrics)) => (text, metrics.rouge1_f1, metrics.cosine_by_model, None),
        Err(e) => (String::new(), 0.0, BTreeMap::new(), Some(e.to_string())),
    };
    ResultRecord {
        prompt_id: record.id.clone(),
        method,
        recovered_text,
        rouge1_f1,
        cosine_by_model,
        n_backend_calls: session.requests(),
        wall_time_ms: started.elapsed().as_millis() as u64,
        error,
    }
}

/// Runs `method` on every record. Failures are captured per row and never
/// abort the run; output order equals input order.
pub fn run_benchmark(
    gateway: &Gateway,
    templates: &PromptTemplateSet,
    records: &[PromptRecord],
    method: Method,
    config: &BenchmarkConfig,
) -> Result<Vec<ResultRecord>> {
    if records.is_empty() {
        return Err(Error::Precondition("prompt set is empty".into()));
    }
    config.ga.validate()?;
    Ok(gateway.par_map(records, |_, record| {
        run_one(gateway, templates, record, method, config)
    }))
}

pub fn write_results(path: &Path, results: &[ResultRecord]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(serialize_with = "ser_round6")]
    pub mean: f64,
    /// Population standard deviation.
    #[serde(serialize_with = "ser_round6")]
    pub stdev: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            stdev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Records that contributed metrics.
    pub count: usize,
    pub errored: usize,
    pub rouge1_f1: Option<Stat>,
    pub cosine_by_model: BTreeMap<String, Stat>,
    pub n_backend_calls: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub errored: usize,
    pub methods: BTreeMap<Method, MethodSummary>,
}

impl Summary {
    pub fn mean_rouge(&self, method: Method) -> Option<f64> {
        self.methods.get(&method)?.rouge1_f1.map(|s| s.mean)
    }
}

pub fn aggregate(results: &[ResultRecord]) -> Summary {
    let mut grouped: BTreeMap<Method, Vec<&ResultRecord>> = BTreeMap::new();
    for r in results {
        grouped.entry(r.method).or_default().push(r);
    }
    let mut methods = BTreeMap::new();
    for (method, rows) in grouped {
        let ok: Vec<&ResultRecord> = rows.iter().copied().filter(|r| !r.is_error()).collect();
        let rouge: Vec<f64> = ok.iter().map(|r| r.rouge1_f1).collect();
        let calls: Vec<f64> = ok.iter().map(|r| r.n_backend_calls as f64).collect();
        let mut by_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &ok {
            for (model, c) in &r.cosine_by_model {
                by_model.entry(model.clone()).or_default().push(*c);
            }
        }
        methods.insert(
            method,
            MethodSummary {
                count: ok.len(),
                errored: rows.len() - ok.len(),
                rouge1_f1: Stat::of(&rouge),
                cosine_by_model: by_model
                    .into_iter()
                    .filter_map(|(m, v)| Stat::of(&v).map(|s| (m, s)))
                    .collect(),
                n_backend_calls: Stat::of(&calls),
            },
        );
    }
    let errored = results.iter().filter(|r| r.is_error()).count();
    Summary {
        count: results.len() - errored,
        errored,
        methods,
    }
}
