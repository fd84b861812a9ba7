//! Run configuration: one TOML file, overridable key by key from the command
//! line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cops_core::cognition::ProviderConfig;
use cops_core::eval::{default_fractions, Averaging, EvalOptions, PimpAggregation};
use cops_core::pipeline::PipelineConfig;
use cops_core::synthgen::GenConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    #[default]
    Mock,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub log: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Normalized artifacts written by `ingest`. Defaults to `<out>/ingest`.
    pub work: Option<PathBuf>,
    /// Per-user memory stores. Defaults to `<out>/memory`.
    pub memory: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Optional prompt-template directory replacing the built-in prompts.
    pub prompts: Option<PathBuf>,
    /// JSONL log of every completion exchanged with the provider.
    pub completion_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub input_budget: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    pub concurrency: usize,
    /// Rule file for the mock provider (kind = mock, or the cache's inner
    /// provider).
    pub mock_rules: Option<PathBuf>,
    /// Replay cache file (kind = cached).
    pub cache: Option<PathBuf>,
    /// What answers cache misses. Without it misses are errors.
    pub cache_inner: Option<ProviderKind>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        let base = ProviderConfig::default();
        Self {
            kind: ProviderKind::default(),
            endpoint: base.endpoint,
            model: base.model,
            temperature: base.temperature,
            max_output_tokens: base.max_output_tokens,
            input_budget: base.input_budget,
            timeout_secs: base.timeout_secs,
            retries: base.retries,
            concurrency: base.concurrency,
            mock_rules: None,
            cache: None,
            cache_inner: None,
        }
    }
}

impl ProviderSection {
    pub fn client_config(&self) -> ProviderConfig {
        ProviderConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            input_budget: self.input_budget,
            timeout_secs: self.timeout_secs,
            retries: self.retries,
            concurrency: self.concurrency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// History fractions for `sweep`.
    pub fractions: Vec<f64>,
    pub pimp: PimpAggregation,
    pub averaging: Averaging,
    /// Also score the original order and P-Click in `eval`.
    pub baselines: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fractions: default_fractions(),
            pimp: PimpAggregation::Micro,
            averaging: Averaging::Query,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub paths: Paths,
    pub provider: ProviderSection,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub synth: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: 1,
            paths: Paths::default(),
            provider: ProviderSection::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalSection::default(),
            synth: GenConfig::default(),
        }
    }
}

/// Keys holding paths; relative values in a config file are taken relative
/// to that file.
const PATH_KEYS: &[(&str, &str)] = &[
    ("paths", "log"),
    ("paths", "corpus"),
    ("paths", "work"),
    ("paths", "memory"),
    ("paths", "out"),
    ("paths", "prompts"),
    ("paths", "completion_log"),
    ("provider", "mock_rules"),
    ("provider", "cache"),
];

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `file` (or starts from defaults), applies `--set key=value`
    /// pairs, then the dedicated flags.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut table = match file {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let mut t: toml::Table = toml::from_str(&raw)
                    .map_err(|e| CliError::Usage(format!("bad config {}: {}", path.display(), one_line(&e.to_string()))))?;
                let base = path.parent().unwrap_or(Path::new("."));
                resolve_paths(&mut t, base);
                t
            }
            None => toml::Table::new(),
        };
        for kv in &overrides.set {
            apply_set(&mut table, kv)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("bad config: {}", one_line(&e.to_string()))))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            cfg.jobs = jobs;
        }
        if let Some(out) = &overrides.out {
            cfg.paths.out = Some(out.clone());
        }
        if cfg.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        cfg.pipeline.validate()?;
        cfg.provider.client_config().validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn work_dir(&self) -> PathBuf {
        self.paths.work.clone().unwrap_or_else(|| self.out_dir().join("ingest"))
    }

    pub fn memory_dir(&self) -> PathBuf {
        self.paths.memory.clone().unwrap_or_else(|| self.out_dir().join("memory"))
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            jobs: self.jobs,
            pimp: self.eval.pimp,
            averaging: self.eval.averaging,
        }
    }

    /// A configured path that must exist.
    pub fn require(&self, what: &str, path: &Option<PathBuf>) -> CliResult<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::Usage(format!("paths.{what} is not configured")))?;
        if !p.exists() {
            return Err(CliError::Usage(format!("paths.{what} {} does not exist", p.display())));
        }
        Ok(p)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn resolve_paths(table: &mut toml::Table, base: &Path) {
    for (section, key) in PATH_KEYS {
        let Some(toml::Value::Table(sec)) = table.get_mut(*section) else {
            continue;
        };
        if let Some(toml::Value::String(s)) = sec.get_mut(*key) {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    }
}

/// `a.b.c=value`: the value is read as a TOML literal when it parses as one
/// and as a bare string otherwise.
fn apply_set(table: &mut toml::Table, kv: &str) -> CliResult<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad key in --set {kv:?}")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Usage(format!("--set {key}: {part} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
