//! Client for staged fine-tuning jobs. Each stage trains on the next slice of
//! the training file, starting from the snapshot produced by the stage before.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_jsonl, AuditReport, TrainingSample, STAGED_SIZES};

use super::remote::check_status;
use super::ProviderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub train_file: PathBuf,
    pub validation_file: Option<PathBuf>,
    pub base_model: String,
    pub epochs: u32,
    /// Batch size as a fraction of the training slice.
    pub batch_size_fraction: f64,
    /// Cumulative training-set sizes, one snapshot per entry.
    pub staged_sizes: Vec<usize>,
}

impl FinetuneRequest {
    pub fn new(train_file: impl Into<PathBuf>, base_model: impl Into<String>) -> Self {
        FinetuneRequest {
            train_file: train_file.into(),
            validation_file: None,
            base_model: base_model.into(),
            epochs: 2,
            batch_size_fraction: 0.002,
            staged_sizes: STAGED_SIZES.to_vec(),
        }
    }
}

/// Body of one job-creation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePayload {
    pub training_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_file: Option<String>,
    /// Base model for the first stage, the previous snapshot afterwards.
    pub model: String,
    pub n_epochs: u32,
    pub batch_size: usize,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub cumulative_size: usize,
    /// Half-open range of training rows used by this stage.
    pub rows: (usize, usize),
    pub payload: StagePayload,
    pub job_id: String,
    /// Model id of the resulting snapshot, once known.
    pub snapshot: Option<String>,
}

/// Handle to a submitted chain of stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub dry_run: bool,
    pub stages: Vec<StageRecord>,
}

pub struct FinetuneClient {
    pub endpoint: String,
    pub auth_env: String,
    /// When set, payloads are written here and nothing is sent.
    pub dry_run_dir: Option<PathBuf>,
    pub poll_interval: Duration,
    pub snapshot_timeout: Duration,
}

impl FinetuneClient {
    pub fn new(endpoint: impl Into<String>, auth_env: impl Into<String>) -> Self {
        FinetuneClient {
            endpoint: endpoint.into(),
            auth_env: auth_env.into(),
            dry_run_dir: None,
            poll_interval: Duration::from_secs(30),
            snapshot_timeout: Duration::from_secs(24 * 3600),
        }
    }

    pub fn dry_run(dir: impl Into<PathBuf>) -> Self {
        FinetuneClient { dry_run_dir: Some(dir.into()), ..FinetuneClient::new("dry-run://", "") }
    }
}

#[derive(Debug, Deserialize)]
struct Uploaded {
    id: String,
}

#[derive(Debug, Deserialize)]
struct JobStatus {
    id: String,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    fine_tuned_model: Option<String>,
}

trait Backend {
    fn upload(&mut self, name: &str, samples: &[TrainingSample]) -> Result<String, ProviderError>;
    fn create(&mut self, stage: usize, payload: &StagePayload) -> Result<JobStatus, ProviderError>;
    fn wait_snapshot(&mut self, job: &JobStatus) -> Result<String, ProviderError>;
}

fn jsonl_bytes(samples: &[TrainingSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s).expect("samples always serialize");
        out.push(b'\n');
    }
    out
}

struct DryRun<'a> {
    dir: &'a Path,
}

impl DryRun<'_> {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), ProviderError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))
    }
}

impl Backend for DryRun<'_> {
    fn upload(&mut self, name: &str, samples: &[TrainingSample]) -> Result<String, ProviderError> {
        self.write(name, &jsonl_bytes(samples))?;
        Ok(format!("file-{name}"))
    }

    fn create(&mut self, stage: usize, payload: &StagePayload) -> Result<JobStatus, ProviderError> {
        let body = serde_json::to_vec_pretty(payload).expect("payload always serializes");
        self.write(&format!("stage-{stage}-request.json"), &body)?;
        Ok(JobStatus { id: format!("dry-run-job-{stage}"), status: None, fine_tuned_model: None })
    }

    fn wait_snapshot(&mut self, job: &JobStatus) -> Result<String, ProviderError> {
        Ok(format!("{}:snapshot", job.id))
    }
}

struct Http<'a> {
    client: &'a FinetuneClient,
    http: Client,
    token: String,
}

impl Http<'_> {
    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.client.endpoint.trim_end_matches('/'))
    }
}

fn network(e: reqwest::Error) -> ProviderError {
    ProviderError::Network(e.to_string())
}

fn protocol(e: reqwest::Error) -> ProviderError {
    ProviderError::Protocol(e.to_string())
}

impl Backend for Http<'_> {
    fn upload(&mut self, name: &str, samples: &[TrainingSample]) -> Result<String, ProviderError> {
        let part = Part::bytes(jsonl_bytes(samples)).file_name(name.to_string());
        let form = Form::new().text("purpose", "fine-tune").part("file", part);
        let response =
            self.http.post(self.url("files")).bearer_auth(&self.token).multipart(form).send().map_err(network)?;
        Ok(check_status(response)?.json::<Uploaded>().map_err(protocol)?.id)
    }

    fn create(&mut self, _stage: usize, payload: &StagePayload) -> Result<JobStatus, ProviderError> {
        let response =
            self.http.post(self.url("fine-tunes")).bearer_auth(&self.token).json(payload).send().map_err(network)?;
        check_status(response)?.json().map_err(protocol)
    }

    fn wait_snapshot(&mut self, job: &JobStatus) -> Result<String, ProviderError> {
        let deadline = Instant::now() + self.client.snapshot_timeout;
        let mut current = JobStatus { id: job.id.clone(), status: job.status.clone(), fine_tuned_model: job.fine_tuned_model.clone() };
        loop {
            if let Some(model) = current.fine_tuned_model.take() {
                return Ok(model);
            }
            if matches!(current.status.as_deref(), Some("failed" | "cancelled")) {
                return Err(ProviderError::Rejected(format!("job {} ended as {}", current.id, current.status.unwrap())));
            }
            if Instant::now() >= deadline {
                return Err(ProviderError::Network(format!("no snapshot for job {} before timeout", job.id)));
            }
            thread::sleep(self.client.poll_interval);
            let url = self.url(&format!("fine-tunes/{}", job.id));
            let response = self.http.get(url).bearer_auth(&self.token).send().map_err(network)?;
            current = check_status(response)?.json().map_err(protocol)?;
        }
    }
}

/// Submits the staged chain. Refuses datasets whose audit found violations.
///
/// Later stages need the snapshot of the previous one, so in live mode this
/// blocks until each intermediate snapshot exists. The last stage returns as
/// soon as the service accepts it.
pub fn submit_finetune(
    client: &FinetuneClient,
    request: &FinetuneRequest,
    audit: &AuditReport,
) -> Result<FinetuneJob, ProviderError> {
    if !audit.is_clean() {
        return Err(ProviderError::InvalidRequest(format!(
            "dataset audit reported {} violation(s); refusing to submit",
            audit.violations.len()
        )));
    }
    if request.staged_sizes.is_empty() || request.staged_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProviderError::InvalidRequest("staged sizes must be non-empty and strictly increasing".into()));
    }
    if request.epochs == 0 {
        return Err(ProviderError::InvalidRequest("epochs must be positive".into()));
    }
    let load = |p: &Path| read_jsonl(p).map_err(|e| ProviderError::Io(e.to_string()));
    let train = load(&request.train_file)?;
    let largest = *request.staged_sizes.last().unwrap();
    if largest > train.len() {
        return Err(ProviderError::InvalidRequest(format!(
            "largest stage needs {largest} samples but the training file has {}",
            train.len()
        )));
    }
    let validation = request.validation_file.as_deref().map(load).transpose()?;

    match &client.dry_run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| ProviderError::Io(format!("{}: {e}", dir.display())))?;
            run_stages(&mut DryRun { dir }, request, &train, validation.as_deref(), true)
        }
        None => {
            let token = std::env::var(&client.auth_env)
                .ok()
                .filter(|t| !t.is_empty())
                .ok_or_else(|| ProviderError::Auth(format!("environment variable {} is not set", client.auth_env)))?;
            let http = Client::builder()
                .connect_timeout(Duration::from_secs(10))
                .build()
                .map_err(|e| ProviderError::Config(e.to_string()))?;
            run_stages(&mut Http { client, http, token }, request, &train, validation.as_deref(), false)
        }
    }
}

fn run_stages(
    backend: &mut dyn Backend,
    request: &FinetuneRequest,
    train: &[TrainingSample],
    validation: Option<&[TrainingSample]>,
    dry_run: bool,
) -> Result<FinetuneJob, ProviderError> {
    let validation_file = validation.map(|v| backend.upload("validation.jsonl", v)).transpose()?;
    let mut model = request.base_model.clone();
    let mut stages = Vec::new();
    let mut start = 0;
    for (i, &size) in request.staged_sizes.iter().enumerate() {
        let rows = &train[start..size];
        let training_file = backend.upload(&format!("stage-{i}-train.jsonl"), rows)?;
        let payload = StagePayload {
            training_file,
            validation_file: validation_file.clone(),
            model: model.clone(),
            n_epochs: request.epochs,
            batch_size: ((rows.len() as f64 * request.batch_size_fraction).round() as usize).max(1),
            suffix: format!("staged-{size}"),
        };
        let job = backend.create(i, &payload)?;
        let last = i + 1 == request.staged_sizes.len();
        let snapshot = if last && !dry_run { job.fine_tuned_model.clone() } else { Some(backend.wait_snapshot(&job)?) };
        if let Some(s) = &snapshot {
            model = s.clone();
        }
        stages.push(StageRecord { cumulative_size: size, rows: (start, size), payload, job_id: job.id, snapshot });
        start = size;
    }
    Ok(FinetuneJob { dry_run, stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_jsonl, Violation};

    fn samples(n: usize) -> Vec<TrainingSample> {
        (0..n)
            .map(|i| TrainingSample { prompt: format!("p{i}\n\n###\n\n"), completion: " 0.00100: (a) [0.00100]\nEND".into() })
            .collect()
    }

    #[test]
    fn dry_run_chains_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.jsonl");
        write_jsonl(&train, &samples(1000)).unwrap();
        let mut request = FinetuneRequest::new(&train, "base");
        request.staged_sizes = vec![500, 1000];
        let out = dir.path().join("out");
        let audit = AuditReport { samples_checked: 1000, violations: vec![] };
        let job = submit_finetune(&FinetuneClient::dry_run(&out), &request, &audit).unwrap();
        assert_eq!(job.stages.len(), 2);
        assert_eq!(job.stages[0].payload.model, "base");
        assert_eq!(Some(&job.stages[1].payload.model), job.stages[0].snapshot.as_ref());
        assert_eq!(job.stages[1].rows, (500, 1000));
        let written: StagePayload =
            serde_json::from_slice(&fs::read(out.join("stage-1-request.json")).unwrap()).unwrap();
        assert_eq!(written, job.stages[1].payload);
        assert_eq!(read_jsonl(&out.join("stage-1-train.jsonl")).unwrap().len(), 500);
    }

    #[test]
    fn unclean_audit_is_refused() {
        let audit = AuditReport {
            samples_checked: 1,
            violations: vec![Violation { split: "train".into(), index: 0, kind: "duplicate".into(), detail: String::new() }],
        };
        let dir = tempfile::tempdir().unwrap();
        let err = submit_finetune(&FinetuneClient::dry_run(dir.path()), &FinetuneRequest::new("x", "b"), &audit);
        assert!(matches!(err, Err(ProviderError::InvalidRequest(_))));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
