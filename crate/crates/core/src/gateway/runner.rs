use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use chrono::{DateTime, Utc};

use super::provider::{CompletionRequest, Provider, ProviderError};
use super::rate_limit::TokenBucket;
use super::store::RecordStore;
use super::{record_id, GatewayError, GenerationRecord, SamplingParams};
use crate::corpus::{render_prompt, PromptSpec, PromptTemplate};

/// Capped exponential backoff for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Wait before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(31));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Source of `created_at` timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Every record gets this timestamp, which keeps stores reproducible.
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub rate_limiter: Option<Arc<TokenBucket>>,
    /// Upper bound on provider calls, retries included.
    pub max_requests: Option<u64>,
    pub template: PromptTemplate,
    pub clock: Clock,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            concurrency: 4,
            retry: RetryPolicy::default(),
            rate_limiter: None,
            max_requests: None,
            template: PromptTemplate::default(),
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub planned: u64,
    pub skipped: u64,
    pub written: u64,
    pub failures: u64,
    pub requests: u64,
}

struct Job<'a> {
    spec: &'a PromptSpec,
    replicate_index: u32,
    prompt: String,
}

enum Outcome {
    Record(GenerationRecord),
    Aborted,
    Failed(GatewayError),
}

struct Shared<'a> {
    provider: &'a dyn Provider,
    model_id: &'a str,
    params: SamplingParams,
    options: &'a RunOptions,
    requests: AtomicU64,
    abort: AtomicBool,
}

impl Shared<'_> {
    fn execute(&self, job: &Job<'_>) -> Outcome {
        let request = CompletionRequest {
            prompt: &job.prompt,
            params: &self.params,
            spec: job.spec,
            replicate_index: job.replicate_index,
        };
        let mut attempt = 0;
        let failure = loop {
            if self.abort.load(Ordering::SeqCst) {
                return Outcome::Aborted;
            }
            let issued = self.requests.fetch_add(1, Ordering::SeqCst);
            if let Some(budget) = self.options.max_requests {
                if issued >= budget {
                    self.requests.fetch_sub(1, Ordering::SeqCst);
                    return Outcome::Failed(GatewayError::BudgetExceeded(budget));
                }
            }
            if let Some(limiter) = &self.options.rate_limiter {
                limiter.acquire();
            }
            match self.provider.complete(&request) {
                Ok(completion) => {
                    let mut meta = completion.meta;
                    meta.insert("provider".into(), self.provider.name().to_string());
                    return Outcome::Record(self.record(job, completion.text, meta, None));
                }
                Err(ProviderError::Auth(msg)) => return Outcome::Failed(GatewayError::ProviderAuth(msg)),
                Err(ProviderError::Permanent(msg)) => break msg,
                Err(ProviderError::Transient(msg)) => {
                    if attempt >= self.options.retry.max_retries {
                        break format!("{msg} (after {} attempts)", attempt + 1);
                    }
                    log::warn!(
                        "prompt {} replicate {}: {msg}; retrying",
                        job.spec.id,
                        job.replicate_index
                    );
                    std::thread::sleep(self.options.retry.delay(attempt));
                    attempt += 1;
                }
            }
        };
        let meta = BTreeMap::from([("provider".to_string(), self.provider.name().to_string())]);
        Outcome::Record(self.record(job, String::new(), meta, Some(failure)))
    }

    fn record(
        &self,
        job: &Job<'_>,
        raw_text: String,
        provider_meta: BTreeMap<String, String>,
        failure: Option<String>,
    ) -> GenerationRecord {
        GenerationRecord {
            record_id: record_id(self.model_id, &job.spec.id, job.replicate_index),
            prompt_id: job.spec.id.clone(),
            model_id: self.model_id.to_string(),
            params: self.params,
            raw_text,
            created_at: self.options.clock.now(),
            provider_meta,
            replicate_index: job.replicate_index,
            failure,
        }
    }
}

/// Generates every replicate of `specs` not yet in `store`.
///
/// Calls run on up to `options.concurrency` threads; records are appended in
/// plan order regardless of completion order, so a run is reproducible when
/// the provider is.
pub fn run_corpus(
    specs: &[PromptSpec],
    model_id: &str,
    params: &SamplingParams,
    provider: &dyn Provider,
    store: &mut RecordStore,
    options: &RunOptions,
) -> Result<RunSummary, GatewayError> {
    params.validate()?;
    let mut summary = RunSummary::default();
    let mut jobs = Vec::new();
    for spec in specs {
        let prompt = render_prompt(spec, &options.template)?;
        for replicate_index in 0..spec.replicates {
            summary.planned += 1;
            if store.contains(&spec.id, model_id, replicate_index) {
                summary.skipped += 1;
            } else {
                jobs.push(Job {
                    spec,
                    replicate_index,
                    prompt: prompt.clone(),
                });
            }
        }
    }
    if jobs.is_empty() {
        return Ok(summary);
    }

    let shared = Shared {
        provider,
        model_id,
        params: params.effective(provider.capabilities()),
        options,
        requests: AtomicU64::new(0),
        abort: AtomicBool::new(false),
    };
    let next_job = AtomicUsize::new(0);
    let workers = options.concurrency.max(1).min(jobs.len());
    let mut first_error: Option<GatewayError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Outcome)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (shared, jobs, next_job) = (&shared, &jobs, &next_job);
            scope.spawn(move || loop {
                if shared.abort.load(Ordering::SeqCst) {
                    return;
                }
                let idx = next_job.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(idx) else { return };
                let outcome = shared.execute(job);
                if matches!(outcome, Outcome::Failed(_)) {
                    shared.abort.store(true, Ordering::SeqCst);
                }
                if tx.send((idx, outcome)).is_err() {
                    return;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, GenerationRecord> = BTreeMap::new();
        let mut next_write = 0usize;
        for (idx, outcome) in rx {
            match outcome {
                Outcome::Record(record) => {
                    pending.insert(idx, record);
                }
                Outcome::Aborted => {}
                Outcome::Failed(err) => {
                    first_error.get_or_insert(err);
                }
            }
            while let Some(record) = pending.remove(&next_write) {
                if let Err(err) = append(store, &record, &mut summary) {
                    shared.abort.store(true, Ordering::SeqCst);
                    first_error.get_or_insert(err);
                }
                next_write += 1;
            }
        }
        // after an abort, completed records past a gap are still kept
        for record in std::mem::take(&mut pending).into_values() {
            if let Err(err) = append(store, &record, &mut summary) {
                first_error.get_or_insert(err);
                break;
            }
        }
    });

    summary.requests = shared.requests.load(Ordering::SeqCst);
    log::info!(
        "{model_id}: {} written, {} skipped, {} failures, {} requests",
        summary.written,
        summary.skipped,
        summary.failures,
        summary.requests
    );
    match first_error {
        Some(err) => Err(err),
        None => Ok(summary),
    }
}

fn append(store: &mut RecordStore, record: &GenerationRecord, summary: &mut RunSummary) -> Result<(), GatewayError> {
    store.append(record)?;
    summary.written += 1;
    if record.is_failure() {
        summary.failures += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::provider::{Capabilities, Completion};
    use crate::gateway::{Dialect, HttpChatProvider, SyntheticModelConfig, SyntheticProvider};
    use crate::taxonomy::AxisId;
    use std::collections::HashMap;
    use std::sync::Mutex;

    fn specs() -> Vec<PromptSpec> {
        vec![
            PromptSpec::implicit(AxisId::Gender, "Male", "James", "default-v1", 5),
            PromptSpec::implicit(AxisId::Gender, "Female", "Mary", "default-v1", 5),
        ]
    }

    fn options() -> RunOptions {
        RunOptions {
            retry: RetryPolicy::immediate(3),
            clock: Clock::Fixed(DateTime::UNIX_EPOCH),
            ..RunOptions::default()
        }
    }

    /// Fails transiently a set number of times per key, then echoes.
    struct Flaky {
        failures_per_call: u32,
        seen: Mutex<HashMap<(String, u32), u32>>,
        auth_fail: bool,
    }

    impl Flaky {
        fn new(failures_per_call: u32) -> Self {
            Flaky {
                failures_per_call,
                seen: Mutex::new(HashMap::new()),
                auth_fail: false,
            }
        }
    }

    impl Provider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
        fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
            if self.auth_fail {
                return Err(ProviderError::Auth("nope".into()));
            }
            let mut seen = self.seen.lock().unwrap();
            let n = seen.entry((req.spec.id.clone(), req.replicate_index)).or_default();
            *n += 1;
            if *n <= self.failures_per_call {
                return Err(ProviderError::Transient("busy".into()));
            }
            Ok(Completion::text(format!(
                "{} #{}",
                req.spec.subject(),
                req.replicate_index
            )))
        }
    }

    #[test]
    fn fresh_run_then_idempotent_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let provider = Flaky::new(0);
        let mut store = RecordStore::open(&path).unwrap();
        let first = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!((first.written, first.skipped), (10, 0));
        drop(store);
        let mut store = RecordStore::open(&path).unwrap();
        let second = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!((second.written, second.skipped, second.requests), (0, 10, 0));
        assert_eq!(RecordStore::read_all(&path).unwrap().len(), 10);
    }

    #[test]
    fn retries_never_duplicate_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let provider = Flaky::new(2);
        let mut store = RecordStore::open(&path).unwrap();
        let summary = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!(summary.written, 10);
        assert_eq!(summary.failures, 0);
        assert_eq!(summary.requests, 30);
        let records = RecordStore::read_all(&path).unwrap();
        assert_eq!(records.len(), 10);
        assert!(records.iter().all(|r| !r.is_failure()));
    }

    #[test]
    fn exhausted_retries_become_failure_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::open(dir.path().join("r.jsonl")).unwrap();
        let provider = Flaky::new(100);
        let summary = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!(summary.failures, 10);
        assert_eq!(summary.requests, 40);
        let records = RecordStore::read_all(store.path()).unwrap();
        assert!(records.iter().all(|r| r.raw_text.is_empty() && r.failure.is_some()));
    }

    #[test]
    fn auth_failure_stops_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::open(dir.path().join("r.jsonl")).unwrap();
        let provider = Flaky {
            auth_fail: true,
            ..Flaky::new(0)
        };
        let err = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::ProviderAuth(_)));
        assert!(store.is_empty());
    }

    #[test]
    fn budget_is_enforced_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let provider = Flaky::new(0);
        let opts = RunOptions {
            max_requests: Some(4),
            concurrency: 1,
            ..options()
        };
        let mut store = RecordStore::open(&path).unwrap();
        let err = run_corpus(&specs(), "m", &SamplingParams::default(), &provider, &mut store, &opts).unwrap_err();
        assert!(matches!(err, GatewayError::BudgetExceeded(4)));
        assert_eq!(store.len(), 4);
        let summary = run_corpus(
            &specs(),
            "m",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!((summary.written, summary.skipped), (6, 4));
    }

    #[test]
    fn synthetic_stores_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let provider = SyntheticProvider::new(SyntheticModelConfig::uniform(42)).unwrap();
        let mut contents = Vec::new();
        for (i, concurrency) in [1usize, 8].into_iter().enumerate() {
            let path = dir.path().join(format!("r{i}.jsonl"));
            let mut store = RecordStore::open(&path).unwrap();
            let opts = RunOptions {
                concurrency,
                ..options()
            };
            run_corpus(
                &specs(),
                "synthetic",
                &SamplingParams::default(),
                &provider,
                &mut store,
                &opts,
            )
            .unwrap();
            contents.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(contents[0], contents[1]);
    }

    #[test]
    fn http_provider_retries_after_rate_limit() {
        use crate::gateway::http::tests::{mock_server, openai_reply};
        let url = mock_server(vec![(429, "{}".into()), (200, openai_reply("done"))]);
        let provider = HttpChatProvider::new("openai", Dialect::OpenAi, "gpt", "k")
            .unwrap()
            .with_endpoint(url);
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::open(dir.path().join("r.jsonl")).unwrap();
        let spec = vec![PromptSpec::implicit(AxisId::Gender, "Male", "James", "default-v1", 1)];
        let summary = run_corpus(
            &spec,
            "gpt",
            &SamplingParams::default(),
            &provider,
            &mut store,
            &options(),
        )
        .unwrap();
        assert_eq!((summary.written, summary.requests, summary.failures), (1, 2, 0));
        let records = RecordStore::read_all(store.path()).unwrap();
        assert_eq!(records[0].raw_text, "done");
    }

    #[test]
    fn backoff_is_capped() {
        let policy = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(1),
        };
        assert_eq!(policy.delay(0), Duration::from_millis(100));
        assert_eq!(policy.delay(2), Duration::from_millis(400));
        assert_eq!(policy.delay(9), Duration::from_secs(1));
        assert_eq!(policy.delay(40), Duration::from_secs(1));
    }
}
