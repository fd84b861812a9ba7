//! Replay cache in front of another provider, stored as JSONL keyed by a
//! SHA-256 of the prompt family and text. Hits never reach the inner provider.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::provider::{Completion, CompletionRequest, PromptFamily, Provider, ProviderError};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    family: PromptFamily,
    reply: String,
    latency: f64,
}

pub fn prompt_key(family: PromptFamily, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(family.name().as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

pub struct CachedProvider {
    inner: Option<Arc<dyn Provider>>,
    path: PathBuf,
    entries: Mutex<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl CachedProvider {
    /// Opens (or creates) the cache file. With `inner = None` the cache is
    /// replay-only and misses are errors.
    pub fn open(path: &Path, inner: Option<Arc<dyn Provider>>) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::json(path, &e))?;
                entries.insert(entry.key.clone(), entry);
            }
        }
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, entry: &CacheEntry) {
        let mut writer = self.writer.lock().expect("cache poisoned");
        if writer.is_none() {
            match OpenOptions::new().create(true).append(true).open(&self.path) {
                Ok(f) => *writer = Some(f),
                Err(e) => {
                    log::warn!("cannot open completion cache {}: {e}", self.path.display());
                    return;
                }
            }
        }
        if let (Some(f), Ok(line)) = (writer.as_mut(), serde_json::to_string(entry)) {
            if writeln!(f, "{line}").is_err() {
                log::warn!("failed to append to completion cache");
            }
        }
    }
}

impl Provider for CachedProvider {
    fn id(&self) -> String {
        match &self.inner {
            Some(p) => format!("cached:{}", p.id()),
            None => "cached".into(),
        }
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let key = prompt_key(request.family, request.prompt);
        if let Some(hit) = self.entries.lock().expect("cache poisoned").get(&key) {
            return Ok(Completion {
                text: hit.reply.clone(),
                latency: hit.latency,
            });
        }
        let Some(inner) = &self.inner else {
            return Err(ProviderError::Failed(format!(
                "cache miss for {} prompt {key}",
                request.family
            )));
        };
        let completion = inner.complete(request)?;
        let entry = CacheEntry {
            key: key.clone(),
            family: request.family,
            reply: completion.text.clone(),
            latency: completion.latency,
        };
        self.append(&entry);
        self.entries.lock().expect("cache poisoned").insert(key, entry);
        Ok(completion)
    }
}
