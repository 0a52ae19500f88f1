//! Offline providers: replay of recorded completions keyed by prompt hash,
//! and a recorder that captures any provider's output in that format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ChunkSink, CompletionRequest, CompletionSource, FinishStatus, Provider, ProviderError, SourceEnd, SourceError,
};

/// Hex SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedChunk {
    /// Arrival time relative to the start of the request.
    pub at_ms: f64,
    /// Length of the chunk in characters.
    pub chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub prompt_hash: String,
    pub completion: String,
    #[serde(default)]
    pub chunk_timings: Vec<RecordedChunk>,
}

pub struct ReplaySource {
    entries: HashMap<String, ReplayEntry>,
}

impl ReplaySource {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplaySource { entries: entries.into_iter().map(|e| (e.prompt_hash.clone(), e)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = File::open(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(ReplaySource::new(entries))
    }
}

impl CompletionSource for ReplaySource {
    fn produce(&self, request: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
        let start = Instant::now();
        let hash = prompt_hash(&request.prompt);
        let entry = self.entries.get(&hash).ok_or(ProviderError::NoRecordedCompletion(hash))?;
        let text = entry.completion.as_str();
        let mut rest = text;
        for chunk in &entry.chunk_timings {
            let due = start + Duration::from_secs_f64(chunk.at_ms.max(0.0) / 1000.0);
            sink.sleep(due.saturating_duration_since(Instant::now()))?;
            let cut = rest.char_indices().nth(chunk.chars).map_or(rest.len(), |(i, _)| i);
            sink.emit(&rest[..cut])?;
            rest = &rest[cut..];
        }
        sink.emit(rest)?;
        Ok(SourceEnd::Complete)
    }
}

/// Loads a replay log (JSON Lines of [`ReplayEntry`]) as a provider.
pub fn make_replay(path: &Path) -> Result<Provider, ProviderError> {
    Ok(Provider::new(ReplaySource::load(path)?))
}

/// Wraps another provider and records every completion it serves.
#[derive(Clone)]
pub struct RecordingProvider {
    inner: Provider,
    log: Arc<Mutex<Vec<ReplayEntry>>>,
}

struct Recorder {
    inner: Provider,
    log: Arc<Mutex<Vec<ReplayEntry>>>,
}

impl CompletionSource for Recorder {
    fn produce(&self, request: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
        let mut stream = self.inner.complete(request).map_err(SourceError::Failed)?;
        let started = stream.started();
        let mut completion = String::new();
        let mut timings = Vec::new();
        while let Some(chunk) = stream.next_chunk() {
            timings.push(RecordedChunk {
                at_ms: (chunk.at - started).as_secs_f64() * 1000.0,
                chars: chunk.text.chars().count(),
            });
            completion.push_str(&chunk.text);
            sink.emit(&chunk.text)?;
        }
        let status = stream.status().cloned().unwrap_or(FinishStatus::Finished);
        let end = match &status {
            FinishStatus::Stopped => {
                // Keep the stop string so a replay ends the same way.
                if let Some(stop) = &request.stop {
                    timings.push(RecordedChunk {
                        at_ms: started.elapsed().as_secs_f64() * 1000.0,
                        chars: stop.chars().count(),
                    });
                    completion.push_str(stop);
                }
                SourceEnd::Stopped
            }
            FinishStatus::Finished => SourceEnd::Complete,
            FinishStatus::Truncated => SourceEnd::Truncated,
            FinishStatus::Cancelled => return Err(SourceError::Halted),
            FinishStatus::Error(msg) => return Err(SourceError::Failed(ProviderError::Upstream(msg.clone()))),
        };
        let entry = ReplayEntry { prompt_hash: prompt_hash(&request.prompt), completion, chunk_timings: timings };
        self.log.lock().unwrap().push(entry);
        Ok(end)
    }

    fn caps_locally(&self) -> bool {
        false
    }
}

impl RecordingProvider {
    pub fn new(inner: Provider) -> Self {
        RecordingProvider { inner, log: Arc::default() }
    }

    /// A provider that forwards to the wrapped one while recording.
    pub fn provider(&self) -> Provider {
        Provider::new(Recorder { inner: self.inner.clone(), log: Arc::clone(&self.log) })
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let io = |e: std::io::Error| ProviderError::Io(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for entry in self.log.lock().unwrap().iter() {
            serde_json::to_writer(&mut out, entry).expect("entries always serialize");
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(prompt: &str, completion: &str) -> ReplayEntry {
        ReplayEntry { prompt_hash: prompt_hash(prompt), completion: completion.into(), chunk_timings: vec![] }
    }

    #[test]
    fn known_and_unknown_prompts() {
        let provider = Provider::new(ReplaySource::new([entry("a", "x"), entry("b", "y"), entry("c", "A\nEND")]));
        let c = provider.complete_text(&CompletionRequest::new("m", "c")).unwrap();
        assert_eq!(c.text, "A\n");
        assert_eq!(c.status, FinishStatus::Stopped);
        for p in ["a", "b"] {
            assert!(!provider.complete_text(&CompletionRequest::new("m", p)).unwrap().status.is_error());
        }
        let missing = provider.complete_text(&CompletionRequest::new("m", "d")).unwrap();
        match missing.status {
            FinishStatus::Error(msg) => assert!(msg.contains("no recorded completion"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(prompt_hash(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
