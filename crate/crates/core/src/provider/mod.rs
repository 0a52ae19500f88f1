//! Provider-agnostic text completion with incremental delivery.
//!
//! A request runs on its own producer thread and hands chunks to the caller
//! through a bounded channel. Stop-string detection and length capping happen
//! on the producer side, so every backend behaves the same way.

mod emulated;
mod finetune;
mod remote;
mod replay;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, SendTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use crate::artobj::ChainConfig;
use crate::pddl::DomainDef;
use crate::solver::Solver;

pub use emulated::EmulatedSource;
pub use finetune::{submit_finetune, FinetuneClient, FinetuneJob, FinetuneRequest, StagePayload, StageRecord};
pub use remote::RemoteSource;
pub use replay::{make_replay, prompt_hash, RecordedChunk, RecordingProvider, ReplayEntry, ReplaySource};

pub const DEFAULT_STOP: &str = "END";
pub const DEFAULT_MAX_TOKENS: usize = 1900;
/// Characters per token used when a backend has to cap output locally.
pub const CHARS_PER_TOKEN: usize = 4;

const CHANNEL_CAPACITY: usize = 64;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
    pub stop: Option<String>,
    pub max_tokens: usize,
    pub stream: bool,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            presence_penalty: 0.0,
            frequency_penalty: 0.0,
            stop: Some(DEFAULT_STOP.to_string()),
            max_tokens: DEFAULT_MAX_TOKENS,
            stream: true,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::InvalidRequest(m));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        for (name, v) in [("presence_penalty", self.presence_penalty), ("frequency_penalty", self.frequency_penalty)] {
            if !(-2.0..=2.0).contains(&v) {
                return bad(format!("{name} {v} outside [-2, 2]"));
            }
        }
        if self.stop.as_deref() == Some("") {
            return bad("stop string must not be empty".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("remote service rejected the request: {0}")]
    Rejected(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("no recorded completion for prompt hash {0}")]
    NoRecordedCompletion(String),
    #[error("emulated planner failed: {0}")]
    Planner(String),
    #[error("upstream provider failed: {0}")]
    Upstream(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub text: String,
    pub at: Instant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "message", rename_all = "kebab-case")]
pub enum FinishStatus {
    /// The stop string was produced; it is not part of the text.
    Stopped,
    /// The backend ended on its own without producing the stop string.
    Finished,
    /// Output hit `max_tokens`.
    Truncated,
    Cancelled,
    Error(String),
}

impl FinishStatus {
    pub fn is_error(&self) -> bool {
        matches!(self, FinishStatus::Error(_))
    }
}

#[derive(Debug)]
enum Event {
    Chunk(Chunk),
    Done(FinishStatus),
}

/// Why a producer must stop emitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Halt;

/// How a backend's production ended when it was not halted by the sink.
#[derive(Debug)]
pub enum SourceEnd {
    Complete,
    /// The backend applied the stop string itself.
    Stopped,
    /// The backend itself reported a length cut-off.
    Truncated,
}

/// Producer half handed to a backend. Applies the stop filter and length cap.
pub struct ChunkSink {
    tx: Sender<Event>,
    cancel: Arc<AtomicBool>,
    stop: Option<String>,
    char_limit: Option<usize>,
    emitted_chars: usize,
    /// Tail that may be the start of the stop string, held back until resolved.
    pending: String,
    done: bool,
}

impl ChunkSink {
    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    fn send(&mut self, event: Event) -> Result<(), Halt> {
        let mut event = event;
        loop {
            if self.is_cancelled() {
                return Err(Halt);
            }
            match self.tx.send_timeout(event, POLL) {
                Ok(()) => return Ok(()),
                Err(SendTimeoutError::Timeout(e)) => event = e,
                Err(SendTimeoutError::Disconnected(_)) => return Err(Halt),
            }
        }
    }

    fn finish(&mut self, status: FinishStatus) {
        if !self.done {
            self.done = true;
            // The receiver may be gone; nothing left to do then.
            let _ = self.tx.send_timeout(Event::Done(status), Duration::from_secs(1));
        }
    }

    /// Sends `text` downstream, respecting the length cap.
    fn deliver(&mut self, text: &str) -> Result<(), Halt> {
        if text.is_empty() {
            return Ok(());
        }
        let mut text = text;
        let mut truncated = false;
        if let Some(limit) = self.char_limit {
            let room = limit.saturating_sub(self.emitted_chars);
            if text.chars().count() > room {
                let cut = text.char_indices().nth(room).map_or(text.len(), |(i, _)| i);
                text = &text[..cut];
                truncated = true;
            }
        }
        if !text.is_empty() {
            self.emitted_chars += text.chars().count();
            self.send(Event::Chunk(Chunk { text: text.to_string(), at: Instant::now() }))?;
        }
        if truncated {
            self.finish(FinishStatus::Truncated);
            return Err(Halt);
        }
        Ok(())
    }

    /// Feeds raw backend output. Returns `Err(Halt)` once the stream is over
    /// (stop string seen, cap reached, or consumer gone) and the backend must stop.
    pub fn emit(&mut self, text: &str) -> Result<(), Halt> {
        if self.done || self.is_cancelled() {
            return Err(Halt);
        }
        let Some(stop) = self.stop.clone() else {
            return self.deliver(text);
        };
        self.pending.push_str(text);
        if let Some(pos) = self.pending.find(&stop) {
            let before = self.pending[..pos].to_string();
            self.pending.clear();
            self.deliver(&before)?;
            self.finish(FinishStatus::Stopped);
            return Err(Halt);
        }
        // Keep the longest suffix that could still grow into the stop string.
        let keep = (1..stop.len())
            .rev()
            .find(|&n| self.pending.len() >= n && self.pending.is_char_boundary(self.pending.len() - n) && stop.starts_with(&self.pending[self.pending.len() - n..]))
            .unwrap_or(0);
        let flush: String = self.pending.drain(..self.pending.len() - keep).collect();
        self.deliver(&flush)
    }

    /// Sleeps for `d` unless cancelled first.
    pub fn sleep(&self, d: Duration) -> Result<(), Halt> {
        let until = Instant::now() + d;
        loop {
            if self.is_cancelled() {
                return Err(Halt);
            }
            let now = Instant::now();
            if now >= until {
                return Ok(());
            }
            thread::sleep((until - now).min(POLL));
        }
    }

    fn end(&mut self, end: Result<SourceEnd, SourceError>) {
        if self.done {
            return;
        }
        if self.is_cancelled() {
            self.finish(FinishStatus::Cancelled);
            return;
        }
        let status = match end {
            Ok(end) => {
                let rest = std::mem::take(&mut self.pending);
                if self.deliver(&rest).is_err() {
                    return;
                }
                match end {
                    SourceEnd::Complete => FinishStatus::Finished,
                    SourceEnd::Stopped => FinishStatus::Stopped,
                    SourceEnd::Truncated => FinishStatus::Truncated,
                }
            }
            Err(SourceError::Halted) => FinishStatus::Cancelled,
            Err(SourceError::Failed(e)) => FinishStatus::Error(e.to_string()),
        };
        self.finish(status);
    }
}

#[derive(Debug)]
pub enum SourceError {
    /// The sink asked the backend to stop; its status is already recorded.
    Halted,
    Failed(ProviderError),
}

impl From<Halt> for SourceError {
    fn from(_: Halt) -> Self {
        SourceError::Halted
    }
}

impl From<ProviderError> for SourceError {
    fn from(e: ProviderError) -> Self {
        SourceError::Failed(e)
    }
}

/// A completion backend. `produce` runs on a dedicated thread and pushes raw
/// output into the sink.
pub trait CompletionSource: Send + Sync {
    fn produce(&self, request: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError>;

    /// Whether the sink should cap output at `max_tokens` itself.
    fn caps_locally(&self) -> bool {
        true
    }
}

/// Nothing arrived within the requested wait.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedOut;

/// Consumer half of a running completion.
pub struct CompletionStream {
    rx: Receiver<Event>,
    cancel: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<()>>,
    status: Option<FinishStatus>,
    started: Instant,
}

impl CompletionStream {
    /// Blocks for the next chunk; `None` once the stream has finished.
    pub fn next_chunk(&mut self) -> Option<Chunk> {
        if self.status.is_some() {
            return None;
        }
        match self.rx.recv() {
            Ok(Event::Chunk(c)) => Some(c),
            Ok(Event::Done(s)) => {
                self.status = Some(s);
                None
            }
            Err(_) => {
                self.status.get_or_insert(FinishStatus::Error("producer exited without a status".into()));
                None
            }
        }
    }

    /// Like [`next_chunk`](Self::next_chunk) but gives up after `timeout`.
    pub fn next_chunk_timeout(&mut self, timeout: Duration) -> Result<Option<Chunk>, TimedOut> {
        if self.status.is_some() {
            return Ok(None);
        }
        match self.rx.recv_timeout(timeout) {
            Ok(Event::Chunk(c)) => Ok(Some(c)),
            Ok(Event::Done(s)) => {
                self.status = Some(s);
                Ok(None)
            }
            Err(RecvTimeoutError::Timeout) => Err(TimedOut),
            Err(RecvTimeoutError::Disconnected) => {
                self.status.get_or_insert(FinishStatus::Error("producer exited without a status".into()));
                Ok(None)
            }
        }
    }

    pub fn status(&self) -> Option<&FinishStatus> {
        self.status.as_ref()
    }

    pub fn started(&self) -> Instant {
        self.started
    }

    /// Asks the producer to stop. Chunks already queued are discarded.
    pub fn cancel(&mut self) {
        self.cancel.store(true, Ordering::SeqCst);
        if self.status.is_none() {
            self.status = Some(FinishStatus::Cancelled);
        }
    }

    /// Cancels and waits for the producer thread to exit.
    pub fn cancel_and_join(mut self) {
        self.cancel();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn producer_finished(&self) -> bool {
        self.handle.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Drains the stream into a single completion.
    pub fn collect(mut self) -> Completion {
        let mut text = String::new();
        let mut chunks = Vec::new();
        while let Some(c) = self.next_chunk() {
            text.push_str(&c.text);
            chunks.push(c);
        }
        let status = self.status.clone().unwrap_or(FinishStatus::Finished);
        Completion { text, status, chunks, started: self.started, finished: Instant::now() }
    }
}

impl Drop for CompletionStream {
    fn drop(&mut self) {
        self.cancel.store(true, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub status: FinishStatus,
    pub chunks: Vec<Chunk>,
    pub started: Instant,
    pub finished: Instant,
}

impl Completion {
    pub fn total_time(&self) -> Duration {
        self.finished - self.started
    }
}

/// A cheap, clonable handle to a completion backend.
#[derive(Clone)]
pub struct Provider {
    source: Arc<dyn CompletionSource>,
}

impl Provider {
    pub fn new(source: impl CompletionSource + 'static) -> Self {
        Provider { source: Arc::new(source) }
    }

    pub fn from_arc(source: Arc<dyn CompletionSource>) -> Self {
        Provider { source }
    }

    /// Starts a completion. Backend failures surface as an `Error` status on
    /// the stream; only malformed requests fail here.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionStream, ProviderError> {
        request.validate()?;
        let (tx, rx) = bounded(CHANNEL_CAPACITY);
        let cancel = Arc::new(AtomicBool::new(false));
        let mut sink = ChunkSink {
            tx,
            cancel: Arc::clone(&cancel),
            stop: request.stop.clone(),
            char_limit: self.source.caps_locally().then(|| request.max_tokens * CHARS_PER_TOKEN),
            emitted_chars: 0,
            pending: String::new(),
            done: false,
        };
        let source = Arc::clone(&self.source);
        let request = request.clone();
        let started = Instant::now();
        let handle = thread::Builder::new()
            .name("completion-producer".into())
            .spawn(move || {
                let end = source.produce(&request, &mut sink);
                sink.end(end);
            })
            .map_err(|e| ProviderError::Io(e.to_string()))?;
        Ok(CompletionStream { rx, cancel, handle: Some(handle), status: None, started })
    }

    /// Non-streaming convenience: runs the request to completion.
    pub fn complete_text(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        Ok(self.complete(request)?.collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    Replay,
    Emulated,
}

/// Serializable description of a backend. Secrets are never stored: remote
/// credentials are read from the environment variable named by `auth_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    pub endpoint: Option<String>,
    pub auth_env: Option<String>,
    pub replay_log: Option<PathBuf>,
    /// Pause before each emitted plan line in emulated mode.
    pub line_delay_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Emulated,
            model: "emulated".into(),
            endpoint: None,
            auth_env: None,
            replay_log: None,
            line_delay_ms: 100,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.kind {
            ProviderKind::Remote if self.endpoint.is_none() || self.auth_env.is_none() => {
                Err(ProviderError::Config("remote provider needs an endpoint and an auth environment variable".into()))
            }
            ProviderKind::Replay if self.replay_log.is_none() => {
                Err(ProviderError::Config("replay provider needs a log file".into()))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the backend. Emulated providers plan with `solver` in `domain`.
    pub fn build(&self, domain: &DomainDef, chain: &ChainConfig, solver: Arc<dyn Solver>) -> Result<Provider, ProviderError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Remote => Ok(Provider::new(RemoteSource::new(
                self.endpoint.clone().unwrap_or_default(),
                self.auth_env.clone().unwrap_or_default(),
            )?)),
            ProviderKind::Replay => make_replay(self.replay_log.as_deref().unwrap_or(std::path::Path::new(""))),
            ProviderKind::Emulated => Ok(Provider::new(EmulatedSource::new(
                domain.clone(),
                chain.clone(),
                solver,
                Duration::from_millis(self.line_delay_ms),
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits a fixed list of pieces.
    struct Script(Vec<&'static str>, Duration);

    impl CompletionSource for Script {
        fn produce(&self, _: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
            for piece in &self.0 {
                sink.sleep(self.1)?;
                sink.emit(piece)?;
            }
            Ok(SourceEnd::Complete)
        }
    }

    fn run(pieces: Vec<&'static str>, stop: Option<&str>, max_tokens: usize) -> Completion {
        let provider = Provider::new(Script(pieces, Duration::ZERO));
        let mut req = CompletionRequest::new("m", "p");
        req.stop = stop.map(str::to_string);
        req.max_tokens = max_tokens;
        provider.complete_text(&req).unwrap()
    }

    #[test]
    fn stop_string_split_across_chunks() {
        let c = run(vec!["A\nE", "N", "D trailing"], Some("END"), 100);
        assert_eq!(c.text, "A\n");
        assert_eq!(c.status, FinishStatus::Stopped);
    }

    #[test]
    fn false_stop_prefix_is_released() {
        let c = run(vec!["EN", "X", "E"], Some("END"), 100);
        assert_eq!(c.text, "ENXE");
        assert_eq!(c.status, FinishStatus::Finished);
    }

    #[test]
    fn no_stop_string_passes_through() {
        let c = run(vec!["a", "END", "b"], None, 100);
        assert_eq!(c.text, "aENDb");
    }

    #[test]
    fn length_cap_truncates() {
        let c = run(vec!["0123456789", "abcdef"], Some("END"), 3);
        assert_eq!(c.text, "0123456789ab");
        assert_eq!(c.status, FinishStatus::Truncated);
    }

    #[test]
    fn cancellation_stops_producer() {
        let provider = Provider::new(Script(vec!["a"; 1000], Duration::from_millis(5)));
        let mut stream = provider.complete(&CompletionRequest::new("m", "p")).unwrap();
        assert!(stream.next_chunk().is_some());
        let t = Instant::now();
        stream.cancel_and_join();
        assert!(t.elapsed() < Duration::from_millis(500));
    }

    #[test]
    fn request_validation() {
        let mut r = CompletionRequest::new("m", "p");
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.max_tokens, 1900);
        assert_eq!(r.stop.as_deref(), Some("END"));
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = 1.0;
        r.presence_penalty = -2.5;
        assert!(r.validate().is_err());
        r.presence_penalty = 2.0;
        r.stop = Some(String::new());
        assert!(r.validate().is_err());
    }

    #[test]
    fn config_requirements() {
        let remote = ProviderConfig { kind: ProviderKind::Remote, ..Default::default() };
        assert!(remote.validate().is_err());
        let replay = ProviderConfig { kind: ProviderKind::Replay, ..Default::default() };
        assert!(replay.validate().is_err());
        assert!(ProviderConfig::default().validate().is_ok());
    }
}
