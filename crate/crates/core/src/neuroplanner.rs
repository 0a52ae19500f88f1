//! Completion providers used as planners: prompt construction, whole-plan
//! requests, and line-by-line action streaming.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::artobj::strip_statics;
use crate::dataset::build_prompt;
use crate::pddl::{parse_plan, parse_plan_line, DomainDef, Plan, PlanLine, PlanStep, ProblemDef};
use crate::provider::{CompletionRequest, CompletionStream, FinishStatus, Provider, TimedOut};
use crate::semantics::{validate_plan, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanningStatus {
    Valid,
    Invalid,
    Truncated,
    ProviderError,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanTimings {
    /// Seconds until the first action was available. For whole-plan requests
    /// this equals `total_time`.
    pub time_to_first_action: Option<f64>,
    pub total_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningOutcome {
    pub status: PlanningStatus,
    pub plan: Plan,
    pub timings: PlanTimings,
    /// Parse, validation or provider diagnostics when not valid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
}

impl PlanningOutcome {
    pub fn is_valid(&self) -> bool {
        self.status == PlanningStatus::Valid
    }
}

/// A provider bound to a domain and request parameters.
#[derive(Clone)]
pub struct NeuroPlanner {
    provider: Provider,
    domain: DomainDef,
    /// Request template; its prompt is replaced per call.
    request: CompletionRequest,
    domain_tag: Option<String>,
}

impl NeuroPlanner {
    pub fn new(provider: Provider, domain: DomainDef, model: impl Into<String>) -> Self {
        NeuroPlanner { provider, domain, request: CompletionRequest::new(model, ""), domain_tag: None }
    }

    pub fn with_tag(mut self, tag: Option<String>) -> Self {
        self.domain_tag = tag;
        self
    }

    pub fn with_request(mut self, request: CompletionRequest) -> Self {
        self.request = request;
        self
    }

    pub fn domain(&self) -> &DomainDef {
        &self.domain
    }

    pub fn request_template(&self) -> &CompletionRequest {
        &self.request
    }

    pub fn prompt_for(&self, problem: &ProblemDef) -> String {
        build_prompt(&strip_statics(problem), self.domain_tag.as_deref())
    }

    fn request_for(&self, problem: &ProblemDef) -> CompletionRequest {
        CompletionRequest { prompt: self.prompt_for(problem), ..self.request.clone() }
    }

    /// Requests the whole plan, then parses and validates it.
    pub fn plan_end_to_end(&self, problem: &ProblemDef) -> PlanningOutcome {
        let started = Instant::now();
        let completion = match self.provider.complete(&self.request_for(problem)) {
            Ok(stream) => stream.collect(),
            Err(e) => return provider_failure(e.to_string(), Plan::default(), started.elapsed()),
        };
        let total = completion.total_time();
        let timings = PlanTimings { time_to_first_action: Some(total.as_secs_f64()), total_time: total.as_secs_f64() };
        let parsed = parse_plan(&completion.text);
        match completion.status {
            FinishStatus::Error(msg) => return provider_failure(msg, Plan::default(), total),
            FinishStatus::Cancelled => return provider_failure("cancelled".into(), Plan::default(), total),
            FinishStatus::Truncated => {
                let plan = complete_lines_plan(&completion.text);
                return PlanningOutcome {
                    status: PlanningStatus::Truncated,
                    plan,
                    timings,
                    reason: Some("completion reached max_tokens".into()),
                    validation: None,
                };
            }
            FinishStatus::Stopped | FinishStatus::Finished => {}
        }
        match parsed {
            Ok(parsed) => judge(&self.domain, problem, parsed.plan, timings),
            Err(e) => PlanningOutcome {
                status: PlanningStatus::Invalid,
                plan: Plan::default(),
                timings,
                reason: Some(e.to_string()),
                validation: None,
            },
        }
    }

    /// Starts a request and yields actions as soon as each line is complete.
    pub fn plan_streaming(&self, problem: &ProblemDef) -> ActionStream {
        let started = Instant::now();
        let inner = self.provider.complete(&self.request_for(problem));
        let (stream, failure) = match inner {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some((PlanningStatus::ProviderError, e.to_string()))),
        };
        ActionStream {
            stream,
            domain: self.domain.clone(),
            problem: problem.clone(),
            started,
            line_buf: String::new(),
            line_no: 0,
            ready: VecDeque::new(),
            steps: Vec::new(),
            first_action: None,
            ended: failure.is_some(),
            failure,
            finished_at: None,
        }
    }
}

fn provider_failure(reason: String, plan: Plan, elapsed: Duration) -> PlanningOutcome {
    PlanningOutcome {
        status: PlanningStatus::ProviderError,
        plan,
        timings: PlanTimings { time_to_first_action: None, total_time: elapsed.as_secs_f64() },
        reason: Some(reason),
        validation: None,
    }
}

/// Steps from every newline-terminated line that parses, stopping at the first that does not.
fn complete_lines_plan(text: &str) -> Plan {
    let mut steps = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            break;
        }
        match parse_plan_line(line, i + 1) {
            Ok(PlanLine::Step(s)) => steps.push(s),
            Ok(PlanLine::Skip) => {}
            _ => break,
        }
    }
    Plan { steps }
}

fn judge(domain: &DomainDef, problem: &ProblemDef, plan: Plan, timings: PlanTimings) -> PlanningOutcome {
    let report = validate_plan(domain, problem, &plan);
    let (status, reason) = if report.is_valid() {
        (PlanningStatus::Valid, None)
    } else {
        (PlanningStatus::Invalid, report.reason.clone().or_else(|| Some(format!("{:?}", report.verdict))))
    };
    PlanningOutcome { status, plan, timings, reason, validation: Some(report) }
}

/// Result of polling an [`ActionStream`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamPoll {
    Action(PlanStep),
    /// Nothing new yet; the provider is still producing.
    Pending,
    /// No more actions will arrive.
    Ended,
}

/// Single-consumer stream of plan steps. Dropping it cancels the provider.
pub struct ActionStream {
    stream: Option<CompletionStream>,
    domain: DomainDef,
    problem: ProblemDef,
    started: Instant,
    line_buf: String,
    line_no: usize,
    ready: VecDeque<PlanStep>,
    steps: Vec<PlanStep>,
    first_action: Option<Duration>,
    ended: bool,
    failure: Option<(PlanningStatus, String)>,
    finished_at: Option<Instant>,
}

impl ActionStream {
    pub fn started(&self) -> Instant {
        self.started
    }

    /// Latency of the first emitted step, if one arrived.
    pub fn time_to_first_action(&self) -> Option<Duration> {
        self.first_action
    }

    /// Steps emitted so far.
    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn is_ended(&self) -> bool {
        self.ended && self.ready.is_empty()
    }

    fn abort(&mut self, status: PlanningStatus, reason: String) {
        self.failure.get_or_insert((status, reason));
        self.close();
    }

    fn close(&mut self) {
        if !self.ended {
            self.ended = true;
            self.finished_at = Some(Instant::now());
        }
        if let Some(s) = self.stream.as_mut() {
            s.cancel();
        }
    }

    /// Parses one complete line. Returns false once the stream must stop.
    fn take_line(&mut self, line: &str, at: Instant) -> bool {
        self.line_no += 1;
        match parse_plan_line(line, self.line_no) {
            Ok(PlanLine::Skip) => true,
            Ok(PlanLine::End) => {
                self.close();
                false
            }
            Ok(PlanLine::Step(step)) => {
                if let Some(prev) = self.steps.last() {
                    if step.time <= prev.time {
                        self.abort(PlanningStatus::Invalid, format!("line {}: non-increasing timestamp", self.line_no));
                        return false;
                    }
                }
                self.first_action.get_or_insert(at.saturating_duration_since(self.started));
                self.steps.push(step.clone());
                self.ready.push_back(step);
                true
            }
            Err(e) => {
                self.abort(PlanningStatus::Invalid, e.to_string());
                false
            }
        }
    }

    fn absorb(&mut self, text: &str, at: Instant) {
        self.line_buf.push_str(text);
        while let Some(pos) = self.line_buf.find('\n') {
            let line: String = self.line_buf.drain(..=pos).collect();
            if !self.take_line(&line, at) {
                return;
            }
        }
    }

    fn on_end(&mut self) {
        let status = self.stream.as_ref().and_then(|s| s.status().cloned());
        let rest = std::mem::take(&mut self.line_buf);
        match status {
            Some(FinishStatus::Truncated) => {
                self.abort(PlanningStatus::Truncated, "completion reached max_tokens".into());
            }
            Some(FinishStatus::Error(msg)) => self.abort(PlanningStatus::ProviderError, msg),
            Some(FinishStatus::Cancelled) => self.abort(PlanningStatus::ProviderError, "cancelled".into()),
            _ => {
                if !rest.trim().is_empty() && !self.ended {
                    self.take_line(&rest, Instant::now());
                }
                self.close();
            }
        }
    }

    /// Waits up to `timeout` for the next step.
    pub fn poll(&mut self, timeout: Duration) -> StreamPoll {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(step) = self.ready.pop_front() {
                return StreamPoll::Action(step);
            }
            if self.ended {
                return StreamPoll::Ended;
            }
            let Some(stream) = self.stream.as_mut() else {
                self.close();
                return StreamPoll::Ended;
            };
            let wait = deadline.saturating_duration_since(Instant::now());
            match stream.next_chunk_timeout(wait) {
                Ok(Some(chunk)) => self.absorb(&chunk.text, chunk.at),
                Ok(None) => self.on_end(),
                Err(TimedOut) => return StreamPoll::Pending,
            }
        }
    }

    /// Blocks until the next step or the end of the stream.
    pub fn next_action(&mut self) -> Option<PlanStep> {
        loop {
            match self.poll(Duration::from_secs(3600)) {
                StreamPoll::Action(step) => return Some(step),
                StreamPoll::Ended => return None,
                StreamPoll::Pending => {}
            }
        }
    }

    /// Stops production and waits for the producer thread to exit.
    pub fn cancel(mut self) {
        self.close();
        if let Some(s) = self.stream.take() {
            s.cancel_and_join();
        }
    }

    /// Whether the provider thread has exited.
    pub fn producer_finished(&self) -> bool {
        self.stream.as_ref().is_none_or(CompletionStream::producer_finished)
    }

    /// Drains the remaining steps and reports on the whole plan.
    pub fn finish(mut self) -> PlanningOutcome {
        while self.next_action().is_some() {}
        let total = self.finished_at.unwrap_or_else(Instant::now) - self.started;
        let timings = PlanTimings {
            time_to_first_action: self.first_action.map(|d| d.as_secs_f64()),
            total_time: total.as_secs_f64(),
        };
        let plan = Plan { steps: std::mem::take(&mut self.steps) };
        match self.failure.take() {
            Some((status, reason)) => PlanningOutcome { status, plan, timings, reason: Some(reason), validation: None },
            None => judge(&self.domain, &self.problem, plan, timings),
        }
    }
}

impl Iterator for ActionStream {
    type Item = PlanStep;

    fn next(&mut self) -> Option<PlanStep> {
        self.next_action()
    }
}
