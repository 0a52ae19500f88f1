//! HTTP completion endpoint speaking the legacy text-completion JSON shape,
//! with optional server-sent-event streaming (`data: {...}` lines, `data: [DONE]`).

use std::io::{BufRead, BufReader, Read};
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::Deserialize;

use super::{ChunkSink, CompletionRequest, CompletionSource, ProviderError, SourceEnd, SourceError};

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Body {
    #[serde(default)]
    choices: Vec<Choice>,
}

pub struct RemoteSource {
    endpoint: String,
    auth_env: String,
    client: Client,
}

impl RemoteSource {
    pub fn new(endpoint: impl Into<String>, auth_env: impl Into<String>) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(None)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(RemoteSource { endpoint: endpoint.into(), auth_env: auth_env.into(), client })
    }

    fn token(&self) -> Result<String, ProviderError> {
        std::env::var(&self.auth_env)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ProviderError::Auth(format!("environment variable {} is not set", self.auth_env)))
    }

    fn send(&self, request: &CompletionRequest) -> Result<Response, ProviderError> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(self.token()?)
            .json(request)
            .send()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        check_status(response)
    }
}

pub(super) fn check_status(response: Response) -> Result<Response, ProviderError> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let body = response.text().unwrap_or_default();
    let snippet: String = body.chars().take(300).collect();
    Err(match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => ProviderError::Auth(format!("{status}: {snippet}")),
        _ => ProviderError::Rejected(format!("{status}: {snippet}")),
    })
}

fn end_for(reason: Option<&str>) -> SourceEnd {
    match reason {
        Some("length") => SourceEnd::Truncated,
        Some("stop") => SourceEnd::Stopped,
        _ => SourceEnd::Complete,
    }
}

/// Reads an event stream, feeding each `text` delta into the sink.
fn pump_events(reader: impl Read, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
    let mut finish = None;
    for line in BufReader::new(reader).lines() {
        if sink.is_cancelled() {
            return Err(SourceError::Halted);
        }
        let line = line.map_err(|e| ProviderError::Network(e.to_string()))?;
        let Some(data) = line.strip_prefix("data:") else {
            continue;
        };
        let data = data.trim();
        if data == "[DONE]" {
            break;
        }
        let event: Body =
            serde_json::from_str(data).map_err(|e| ProviderError::Protocol(format!("{e}: {data}")))?;
        if let Some(choice) = event.choices.into_iter().next() {
            sink.emit(&choice.text)?;
            if choice.finish_reason.is_some() {
                finish = choice.finish_reason;
            }
        }
    }
    Ok(end_for(finish.as_deref()))
}

impl CompletionSource for RemoteSource {
    fn produce(&self, request: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
        let response = self.send(request)?;
        if request.stream {
            return pump_events(response, sink);
        }
        let body: Body = response.json().map_err(|e| ProviderError::Protocol(e.to_string()))?;
        let choice = body.choices.into_iter().next().ok_or_else(|| ProviderError::Protocol("no choices".into()))?;
        sink.emit(&choice.text)?;
        Ok(end_for(choice.finish_reason.as_deref()))
    }

    /// The service enforces `max_tokens` with its own tokenizer.
    fn caps_locally(&self) -> bool {
        false
    }
}
