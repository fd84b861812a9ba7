use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// Sampling temperature used unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    Rewrite,
    Retrieve,
    ModelUser,
    SummarizeExplicit,
    SummarizeImplicit,
    Rank,
    Compress,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 7] = [
        PromptFamily::Rewrite,
        PromptFamily::Retrieve,
        PromptFamily::ModelUser,
        PromptFamily::SummarizeExplicit,
        PromptFamily::SummarizeImplicit,
        PromptFamily::Rank,
        PromptFamily::Compress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptFamily::Rewrite => "rewrite",
            PromptFamily::Retrieve => "retrieve",
            PromptFamily::ModelUser => "model_user",
            PromptFamily::SummarizeExplicit => "summarize_explicit",
            PromptFamily::SummarizeImplicit => "summarize_implicit",
            PromptFamily::Rank => "rank",
            PromptFamily::Compress => "compress",
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    /// Upper bound on the estimated prompt size, in tokens.
    pub input_budget: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Requests allowed in flight at once; extra callers queue in FIFO order.
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "gpt-3.5-turbo".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: 512,
            input_budget: 4096,
            timeout_secs: 60,
            retries: 2,
            concurrency: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.input_budget == 0 {
            return Err(Error::Config("input budget must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("provider concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, throttling, server-side failures.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Failed(String),
    #[error("prompt estimate {estimate} exceeds the input budget of {budget} tokens")]
    OverBudget { estimate: usize, budget: usize },
    #[error("provider misconfigured: {0}")]
    Misconfigured(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub family: PromptFamily,
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_output_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Seconds, as reported by the provider.
    pub latency: f64,
}

pub trait Provider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub provider: String,
    pub family: PromptFamily,
    pub prompt: String,
    pub reply: String,
    pub latency: f64,
    pub prompt_tokens: usize,
    pub reply_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub trait TraceSink: Send + Sync {
    fn record(&self, record: CompletionRecord);
}

#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<CompletionRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<CompletionRecord> {
        self.records.lock().expect("sink poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TraceSink for MemorySink {
    fn record(&self, record: CompletionRecord) {
        self.records.lock().expect("sink poisoned").push(record);
    }
}

/// Appends one JSON object per completion to a file.
pub struct JsonlSink {
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl TraceSink for JsonlSink {
    fn record(&self, record: CompletionRecord) {
        let mut out = self.out.lock().expect("sink poisoned");
        if let Ok(line) = serde_json::to_string(&record) {
            if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
                log::warn!("failed to append completion record");
            }
        }
    }
}
