use std::sync::{Arc, Condvar, Mutex};

use super::prompts::PromptTemplates;
use super::provider::{
    CompletionRecord, CompletionRequest, PromptFamily, Provider, ProviderConfig, ProviderError,
    TraceSink,
};
use crate::text::estimate_tokens;

/// A successful reply with the provider-reported latency.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub latency: f64,
}

/// Accumulates model latency and degradation notes across the calls made on
/// behalf of one pipeline stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meter {
    pub latency: f64,
    pub calls: usize,
    pub failures: usize,
    pub degradations: Vec<String>,
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn degrade(&mut self, what: impl Into<String>) {
        let what = what.into();
        if !self.degradations.contains(&what) {
            self.degradations.push(what);
        }
    }

    pub fn absorb(&mut self, other: Meter) {
        self.latency += other.latency;
        self.calls += other.calls;
        self.failures += other.failures;
        for d in other.degradations {
            self.degrade(d);
        }
    }
}

/// Counting semaphore that admits waiters strictly in arrival order.
struct FifoGate {
    capacity: usize,
    state: Mutex<GateState>,
    turn: Condvar,
}

struct GateState {
    next_ticket: u64,
    serving: u64,
    active: usize,
}

impl FifoGate {
    fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            state: Mutex::new(GateState {
                next_ticket: 0,
                serving: 0,
                active: 0,
            }),
            turn: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut st = self.state.lock().expect("gate poisoned");
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while !(st.serving == ticket && st.active < self.capacity) {
            st = self.turn.wait(st).expect("gate poisoned");
        }
        st.serving += 1;
        st.active += 1;
        self.turn.notify_all();
        GatePass { gate: self }
    }
}

struct GatePass<'a> {
    gate: &'a FifoGate,
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut st = self.gate.state.lock().expect("gate poisoned");
        st.active -= 1;
        self.gate.turn.notify_all();
    }
}

/// Shared handle to a provider plus everything wrapped around each call.
#[derive(Clone)]
pub struct CognitiveUnit {
    provider: Arc<dyn Provider>,
    config: ProviderConfig,
    templates: Arc<PromptTemplates>,
    gate: Arc<FifoGate>,
    sink: Option<Arc<dyn TraceSink>>,
}

impl CognitiveUnit {
    pub fn new(provider: Arc<dyn Provider>, config: ProviderConfig) -> Self {
        let gate = Arc::new(FifoGate::new(config.concurrency));
        Self {
            provider,
            config,
            templates: Arc::new(PromptTemplates::default()),
            gate,
            sink: None,
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn TraceSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn input_budget(&self) -> usize {
        self.config.input_budget
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    /// Sends one prompt. Over-budget prompts are rejected before sending;
    /// transient failures are retried up to the configured count.
    pub fn complete(
        &self,
        family: PromptFamily,
        prompt: &str,
        meter: &mut Meter,
    ) -> Result<Reply, ProviderError> {
        let estimate = estimate_tokens(prompt);
        if estimate > self.config.input_budget {
            meter.failures += 1;
            return Err(ProviderError::OverBudget {
                estimate,
                budget: self.config.input_budget,
            });
        }
        let request = CompletionRequest {
            family,
            prompt,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
        };
        let mut attempt = 0;
        let outcome = loop {
            let result = {
                let _pass = self.gate.acquire();
                self.provider.complete(&request)
            };
            match result {
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    log::debug!("retrying {family} completion after: {e}");
                    attempt += 1;
                }
                other => break other,
            }
        };
        meter.calls += 1;
        if let Some(sink) = &self.sink {
            let (reply, latency, error) = match &outcome {
                Ok(c) => (c.text.clone(), c.latency, None),
                Err(e) => (String::new(), 0.0, Some(e.to_string())),
            };
            sink.record(CompletionRecord {
                provider: self.provider.id(),
                family,
                prompt: prompt.to_string(),
                reply_tokens: estimate_tokens(&reply),
                reply,
                latency,
                prompt_tokens: estimate,
                error,
            });
        }
        match outcome {
            Ok(c) => {
                meter.latency += c.latency.max(0.0);
                Ok(Reply {
                    text: c.text,
                    latency: c.latency.max(0.0),
                })
            }
            Err(e) => {
                meter.failures += 1;
                Err(e)
            }
        }
    }
}
