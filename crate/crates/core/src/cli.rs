//! Command-line entry points: `invert`, `benchmark`, `report`, `usecase`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BackendKind, GatewayConfig};
use crate::corpus::{bundled_fixtures, load_prompt_set, sample_split, PromptRecord};
use crate::engine::{GaConfig, Inverter, Method};
use crate::eval::{
    aggregate, read_results, run_benchmark, write_results, BenchmarkConfig, ResultRecord, Summary,
    LIVE_EMBEDDING_MODELS, OFFLINE_EMBEDDING_MODELS,
};
use crate::gateway::{AnswerSet, Gateway};
use crate::templates::PromptTemplateSet;
use crate::text_metrics::ScoreVariant;

#[derive(Debug, Parser)]
#[command(
    name = "revprompt",
    version,
    about = "Recover hidden prompts from language-model outputs"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Backend configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    /// Mock script (JSON) for `--backend mock`.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub template_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Answers per prompt.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Candidates per population.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Genetic iterations.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub variant: Option<ScoreVariant>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub max_tokens: Option<u32>,
    /// Stop the genetic loop once an iteration replaces nothing.
    #[arg(long, global = true)]
    pub early_stop: bool,
    /// Output directory (or file for `report`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover the prompt behind a set of answers.
    Invert(InvertArgs),
    /// Run methods over a prompt set and write results, summary and manifest.
    Benchmark(BenchmarkArgs),
    /// Summarise a results file.
    Report(ReportArgs),
    /// Recover a template prompt from reference text and regenerate with substitutions.
    Usecase(UsecaseArgs),
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Answers file: a JSON array of strings, or texts separated by lines of `---`.
    #[arg(long, conflicts_with = "prompt", required_unless_present = "prompt")]
    pub answers: Option<PathBuf>,
    /// Generate the answers from this prompt instead.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, default_value = "ga")]
    pub method: Method,
    /// Write the candidates/populations as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Prompt set (JSONL). Defaults to the bundled fixtures.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1a1s,5a5s,ga")]
    pub methods: Vec<Method>,
    /// Evaluate a seeded random subset of this size.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub embedding_models: Option<Vec<String>>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Print the summary as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct UsecaseArgs {
    /// Reference text; repeat for several references.
    #[arg(long, required = true)]
    pub reference: Vec<PathBuf>,
    /// One substitution set: `target=replacement` pairs separated by `;`.
    /// Repeat for several sets.
    #[arg(long = "set")]
    pub sets: Vec<String>,
}

/// Failure of a command with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub gateway: GatewayConfig,
    pub ga: GaConfig,
    pub template_file: Option<PathBuf>,
}

impl RunSettings {
    pub fn resolve(global: &GlobalArgs) -> Result<Self, CliError> {
        let mut gateway = match &global.config {
            Some(path) => GatewayConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
            None => GatewayConfig::default(),
        };
        if let Some(b) = global.backend {
            gateway.backend = b;
        }
        if let Some(url) = &global.base_url {
            gateway.base_url = url.clone();
        }
        if let Some(model) = &global.model {
            gateway.model = Some(model.clone());
        }
        if let Some(p) = global.parallelism {
            gateway.parallelism = p;
        }
        if let Some(dir) = &global.cache_dir {
            gateway.cache_dir = Some(dir.clone());
        }
        if let Some(script) = &global.mock_script {
            gateway.mock_script = Some(script.clone());
        }
        if gateway.parallelism == 0 {
            return Err(CliError::Usage("--parallelism must be at least 1".into()));
        }

        let mut ga = GaConfig::default();
        if let Some(model) = &gateway.model {
            ga.params.model_id = model.clone();
        }
        ga.n = global.n.unwrap_or(ga.n);
        ga.m = global.m.unwrap_or(ga.m);
        ga.k = global.k.unwrap_or(ga.k);
        ga.variant = global.variant.unwrap_or(ga.variant);
        ga.early_stop = global.early_stop;
        ga.params.seed = global.seed.or(ga.params.seed);
        ga.params.temperature = global.temperature.unwrap_or(ga.params.temperature);
        ga.params.max_tokens = global.max_tokens.unwrap_or(ga.params.max_tokens);
        ga.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        Ok(RunSettings {
            gateway,
            ga,
            template_file: global.template_file.clone(),
        })
    }

    pub fn templates(&self) -> anyhow::Result<PromptTemplateSet> {
        match &self.template_file {
            Some(path) => PromptTemplateSet::load(path)
                .with_context(|| format!("loading templates from {}", path.display())),
            None => Ok(PromptTemplateSet::builtin()),
        }
    }

    pub fn gateway(&self, templates: &PromptTemplateSet) -> anyhow::Result<Gateway> {
        Ok(self.gateway.build(templates)?)
    }
}

/// Record of a benchmark run, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub settings: RunSettings,
    pub template_digest: String,
    pub prompt_set: Option<PathBuf>,
    pub prompt_set_digest: String,
    pub sample: Option<usize>,
    pub sample_seed: u64,
    pub methods: Vec<Method>,
    pub embedding_models: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Invert(args) => cmd_invert(&cli.global, &args),
        Command::Benchmark(args) => cmd_benchmark(&cli.global, &args).map(|_| ()),
        Command::Report(args) => cmd_report(&cli.global, &args),
        Command::Usecase(args) => cmd_usecase(&cli.global, &args).map(|_| ()),
    }
}

/// Reads an answers file: a JSON array of strings, or plain text blocks
/// separated by lines containing only `---`.
pub fn read_answers_file(path: &Path) -> anyhow::Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let answers: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let mut blocks = vec![String::new()];
        for line in text.lines() {
            if line.trim() == "---" {
                blocks.push(String::new());
            } else {
                let current = blocks.last_mut().unwrap();
                if !current.is_empty() {
                    current.push('\n');
                }
                current.push_str(line);
            }
        }
        blocks
            .into_iter()
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty())
            .collect()
    };
    if answers.is_empty() {
        bail!("{} contains no answers", path.display());
    }
    Ok(answers)
}

pub fn cmd_invert(global: &GlobalArgs, args: &InvertArgs) -> Result<(), CliError> {
    let settings = RunSettings::resolve(global)?;
    let templates = settings.templates()?;
    let gateway = settings.gateway(&templates)?;
    let session = gateway.session();
    let answers = match (&args.answers, &args.prompt) {
        (Some(path), _) => {
            AnswerSet::observed(read_answers_file(path)?, settings.ga.params.clone())
                .map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, Some(prompt)) => session
            .generate(prompt, &settings.ga.params, settings.ga.n)
            .map_err(anyhow::Error::from)?,
        (None, None) => return Err(CliError::Usage("pass --answers or --prompt".into())),
    };
    let recovery = Inverter::new(&session, &templates)
        .recover(args.method, &answers, &settings.ga)
        .map_err(anyhow::Error::from)?;
    if let Some(path) = &args.trace {
        let json = serde_json::to_string_pretty(&recovery).map_err(anyhow::Error::from)?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("writing trace {}", path.display()))?;
    }
    println!("{}", recovery.text);
    Ok(())
}

/// Output of a benchmark command.
#[derive(Debug)]
pub struct BenchmarkOutput {
    pub out_dir: PathBuf,
    pub results: Vec<ResultRecord>,
    pub summary: Summary,
    pub manifest: RunManifest,
}

struct BenchmarkPlan {
    settings: RunSettings,
    prompt_set: Option<PathBuf>,
    sample: Option<usize>,
    sample_seed: u64,
    methods: Vec<Method>,
    embedding_models: Vec<String>,
}

fn load_records(plan: &BenchmarkPlan) -> anyhow::Result<(Vec<PromptRecord>, String)> {
    let (records, raw) = match &plan.prompt_set {
        Some(path) => {
            let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            (load_prompt_set(path)?, raw)
        }
        None => (
            bundled_fixtures(),
            crate::corpus::BUNDLED_FIXTURES.as_bytes().to_vec(),
        ),
    };
    let records = match plan.sample {
        Some(count) => sample_split(&records, count, plan.sample_seed)?,
        None => records,
    };
    Ok((records, sha256_hex(&raw)))
}

pub fn cmd_benchmark(
    global: &GlobalArgs,
    args: &BenchmarkArgs,
) -> Result<BenchmarkOutput, CliError> {
    let plan = match &args.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            let manifest: RunManifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            BenchmarkPlan {
                settings: manifest.settings,
                prompt_set: manifest.prompt_set,
                sample: manifest.sample,
                sample_seed: manifest.sample_seed,
                methods: manifest.methods,
                embedding_models: manifest.embedding_models,
            }
        }
        None => {
            let settings = RunSettings::resolve(global)?;
            let embedding_models = args.embedding_models.clone().unwrap_or_else(|| {
                let defaults: &[&str] = if settings.gateway.backend.is_offline() {
                    &OFFLINE_EMBEDDING_MODELS
                } else {
                    &LIVE_EMBEDDING_MODELS
                };
                defaults.iter().map(|s| s.to_string()).collect()
            });
            BenchmarkPlan {
                settings,
                prompt_set: args.prompts.clone(),
                sample: args.sample,
                sample_seed: args.sample_seed,
                methods: args.methods.clone(),
                embedding_models,
            }
        }
    };
    if plan.methods.is_empty() {
        return Err(CliError::Usage("no methods selected".into()));
    }
    let out_dir = global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("benchmark-out"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let started_at = now();
    let templates = plan.settings.templates()?;
    let gateway = plan.settings.gateway(&templates)?;
    let (records, prompt_set_digest) = load_records(&plan)?;
    let config = BenchmarkConfig {
        ga: plan.settings.ga.clone(),
        embedding_models: plan.embedding_models.clone(),
    };

    let mut results = Vec::with_capacity(records.len() * plan.methods.len());
    for &method in &plan.methods {
        results.extend(
            run_benchmark(&gateway, &templates, &records, method, &config)
                .map_err(anyhow::Error::from)?,
        );
    }
    let summary = aggregate(&results);
    write_results(&out_dir.join(RESULTS_FILE), &results).map_err(anyhow::Error::from)?;
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        settings: plan.settings,
        template_digest: templates.digest().to_string(),
        prompt_set: plan.prompt_set,
        prompt_set_digest,
        sample: plan.sample,
        sample_seed: plan.sample_seed,
        methods: plan.methods,
        embedding_models: plan.embedding_models,
        started_at,
        finished_at: now(),
        artifacts: vec![
            RESULTS_FILE.into(),
            SUMMARY_FILE.into(),
            MANIFEST_FILE.into(),
        ],
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;

    let stats = gateway.stats();
    eprintln!(
        "{} result(s), {} errored; {} request(s), {} backend call(s); wrote {}",
        results.len(),
        summary.errored,
        stats.requests,
        stats.backend_calls,
        out_dir.display()
    );
    Ok(BenchmarkOutput {
        out_dir,
        results,
        summary,
        manifest,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn render_summary_table(summary: &Summary) -> String {
    let mut out = format!(
        "{:<6} {:>5} {:>7} {:>10} {:>10}  cosine\n",
        "method", "count", "errored", "rouge1_f1", "stdev"
    );
    for (method, s) in &summary.methods {
        let (mean, stdev) = s.rouge1_f1.map_or(("-".to_string(), "-".to_string()), |r| {
            (format!("{:.4}", r.mean), format!("{:.4}", r.stdev))
        });
        let cosine: Vec<String> = s
            .cosine_by_model
            .iter()
            .map(|(m, c)| format!("{m}={:.4}", c.mean))
            .collect();
        out.push_str(&format!(
            "{:<6} {:>5} {:>7} {:>10} {:>10}  {}\n",
            method.label(),
            s.count,
            s.errored,
            mean,
            stdev,
            cosine.join(" ")
        ));
    }
    out
}

pub fn cmd_report(global: &GlobalArgs, args: &ReportArgs) -> Result<(), CliError> {
    let results = read_results(&args.results).map_err(anyhow::Error::from)?;
    let summary = aggregate(&results);
    if let Some(path) = &global.out {
        write_json(path, &summary)?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?
        );
    } else {
        print!("{}", render_summary_table(&summary));
    }
    Ok(())
}

/// Parses `target=replacement;target=replacement`.
pub fn parse_substitution_set(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    text.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|pair| {
            let (target, replacement) = pair.split_once('=').ok_or_else(|| {
                anyhow!("substitution `{pair}` is not of the form target=replacement")
            })?;
            Ok((target.trim().to_string(), replacement.trim().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsecaseOutput {
    pub recovered_prompt: String,
    pub rewritten_prompts: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn cmd_usecase(global: &GlobalArgs, args: &UsecaseArgs) -> Result<UsecaseOutput, CliError> {
    let mut settings = RunSettings::resolve(global)?;
    let sets = args
        .sets
        .iter()
        .map(|s| parse_substitution_set(s))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut references = Vec::new();
    for path in &args.reference {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if text.trim().is_empty() {
            return Err(CliError::Usage(format!("{} is empty", path.display())));
        }
        references.push(text.trim().to_string());
    }
    settings.ga.n = references.len();

    let out_dir = global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("usecase-out"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let write = |name: &str, text: &str| -> anyhow::Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))
    };

    let templates = settings.templates()?;
    let gateway = settings.gateway(&templates)?;
    let session = gateway.session();
    let params = &settings.ga.params;
    let answers = AnswerSet::observed(references, params.clone()).map_err(anyhow::Error::from)?;
    let recovery = Inverter::new(&session, &templates)
        .recover(Method::genetic(settings.ga.variant), &answers, &settings.ga)
        .map_err(anyhow::Error::from)?;
    let recovered_prompt = recovery.text;
    write("recovered_prompt.txt", &recovered_prompt)?;
    println!("recovered prompt:\n{recovered_prompt}\n");

    let sets = if sets.is_empty() {
        vec![Vec::new()]
    } else {
        sets
    };
    let mut output = UsecaseOutput {
        recovered_prompt: recovered_prompt.clone(),
        rewritten_prompts: Vec::new(),
        outputs: Vec::new(),
    };
    for (i, set) in sets.iter().enumerate() {
        let prompt = if set.is_empty() {
            recovered_prompt.clone()
        } else {
            let query = templates
                .rewrite(&recovered_prompt, set)
                .map_err(anyhow::Error::from)?;
            session
                .complete(&query, params, 0)
                .map_err(anyhow::Error::from)?
                .trim()
                .to_string()
        };
        write(&format!("prompt_{}.txt", i + 1), &prompt)?;
        let generated = session
            .complete(&prompt, params, 0)
            .map_err(anyhow::Error::from)?;
        write(&format!("output_{}.txt", i + 1), &generated)?;
        println!(
            "[{}] prompt:\n{prompt}\n\n[{}] output:\n{generated}\n",
            i + 1,
            i + 1
        );
        output.rewritten_prompts.push(prompt);
        output.outputs.push(generated);
    }
    write_json(&out_dir.join("usecase.json"), &output)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_sets_parse() {
        let set =
            parse_substitution_set("product = financial software; audience=investors").unwrap();
        assert_eq!(
            set,
            vec![
                ("product".to_string(), "financial software".to_string()),
                ("audience".to_string(), "investors".to_string()),
            ]
        );
        assert!(parse_substitution_set("nonsense").is_err());
        assert!(parse_substitution_set("").unwrap().is_empty());
    }

    #[test]
    fn answers_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("a.json");
        std::fs::write(&json, r#"["one", "two"]"#).unwrap();
        assert_eq!(read_answers_file(&json).unwrap(), vec!["one", "two"]);
        let txt = dir.path().join("a.txt");
        std::fs::write(&txt, "first\nline\n---\nsecond\n").unwrap();
        assert_eq!(
            read_answers_file(&txt).unwrap(),
            vec!["first\nline", "second"]
        );
        let empty = dir.path().join("e.txt");
        std::fs::write(&empty, "---\n").unwrap();
        assert!(read_answers_file(&empty).is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::try_parse_from([
            "revprompt",
            "--backend",
            "mock",
            "--n",
            "3",
            "--k",
            "0",
            "--variant",
            "gam",
            "invert",
            "--prompt",
            "x",
        ])
        .unwrap();
        let s = RunSettings::resolve(&cli.global).unwrap();
        assert_eq!(s.gateway.backend, BackendKind::Mock);
        assert_eq!((s.ga.n, s.ga.m, s.ga.k), (3, 5, 0));
        assert_eq!(s.ga.variant, ScoreVariant::Max);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let cli =
            Cli::try_parse_from(["revprompt", "--m", "0", "invert", "--prompt", "x"]).unwrap();
        let err = RunSettings::resolve(&cli.global).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(
            Cli::try_parse_from(["revprompt", "invert", "--method", "nope", "--prompt", "x"])
                .is_err()
        );
    }
}
