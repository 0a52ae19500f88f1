//! Prompt/completion samples, split construction, JSON Lines I/O and audits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artobj::{merge_statics, ArtobjError, ChainConfig, GeneratedProblem, Generator};
use crate::pddl::{parse_plan, render_plan, DomainDef, Plan};
use crate::semantics::validate_plan;
use crate::solver::{Outcome, Solver};

pub const PROMPT_TERMINATOR: &str = "\n\n###\n\n";
pub const COMPLETION_TERMINATOR: &str = "\nEND";
pub const NO_MACRO_TAG: &str = "\n--NO-MACRO";
/// Prompt plus completion must fit the model context.
pub const CONTEXT_BUDGET_TOKENS: usize = 2048;
pub const STAGED_SIZES: [usize; 5] = [500, 1000, 2000, 4000, 8000];

/// Rough token count: four characters per token, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSample {
    pub prompt: String,
    pub completion: String,
}

impl TrainingSample {
    pub fn tokens(&self) -> usize {
        estimate_tokens(&self.prompt) + estimate_tokens(&self.completion)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("sample needs ~{tokens} tokens, budget is {budget}")]
    OverBudget { tokens: usize, budget: usize },
}

/// Optional tag line, then the compact problem, then the prompt terminator.
pub fn build_prompt(compact_problem: &str, domain_tag: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(tag) = domain_tag {
        out.push_str(tag);
        out.push('\n');
    }
    out.push_str(compact_problem);
    out.push_str(PROMPT_TERMINATOR);
    out
}

/// Leading space, canonical plan lines, then the completion terminator.
pub fn build_completion(plan: &Plan) -> String {
    format!(" {}{COMPLETION_TERMINATOR}", render_plan(&plan.retimed()))
}

pub fn build_sample(
    problem: &GeneratedProblem,
    plan: &Plan,
    domain_tag: Option<&str>,
) -> Result<TrainingSample, SampleError> {
    let sample =
        TrainingSample { prompt: build_prompt(&problem.compact_prompt, domain_tag), completion: build_completion(plan) };
    let tokens = sample.tokens();
    if tokens > CONTEXT_BUDGET_TOKENS {
        return Err(SampleError::OverBudget { tokens, budget: CONTEXT_BUDGET_TOKENS });
    }
    Ok(sample)
}

/// A prompt split back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts<'a> {
    pub tag: Option<&'a str>,
    pub problem: &'a str,
}

pub fn split_prompt(prompt: &str) -> Option<PromptParts<'_>> {
    let body = prompt.strip_suffix(PROMPT_TERMINATOR)?;
    match body.strip_prefix('\n') {
        // A tag is a leading line of its own: "\n--TAG\n<problem>".
        Some(rest) => {
            let (tag_text, problem) = rest.split_once('\n')?;
            Some(PromptParts { tag: Some(&body[..tag_text.len() + 1]), problem })
        }
        None => Some(PromptParts { tag: None, problem: body }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    /// Counts for `n` problems; the test split absorbs rounding.
    pub fn counts(&self, n: usize) -> Result<[usize; 3], DatasetError> {
        let sum = self.train + self.validation + self.test;
        if [self.train, self.validation, self.test].iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(DatasetError::Ratios(sum));
        }
        let train = (n as f64 * self.train).round() as usize;
        let validation = ((n as f64 * self.validation).round() as usize).min(n - train);
        Ok([train, validation, n - train - validation])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub samples: Vec<TrainingSample>,
    pub problem_ids: Vec<String>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplits {
    pub train: Split,
    pub validation: Split,
    pub test: Split,
}

impl DatasetSplits {
    pub fn get(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, name: SplitName) -> &mut Split {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> usize {
        SplitName::ALL.iter().map(|s| self.get(*s).len()).sum()
    }

    /// Nested prefixes of the training split at each size it can satisfy.
    pub fn staged_train(&self, sizes: &[usize]) -> Vec<(usize, &[TrainingSample])> {
        sizes.iter().filter(|&&n| n <= self.train.len()).map(|&n| (n, &self.train.samples[..n])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_total: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub walk_len: usize,
    pub chain: ChainConfig,
    pub domain_tag: Option<String>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            n_total: 500,
            ratios: SplitRatios::default(),
            seed: 0,
            walk_len: 8,
            chain: ChainConfig::default(),
            domain_tag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    SolverExhausted,
    SolverTimeout,
    InvalidPlan,
    OverBudget,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemRecord {
    pub id: String,
    pub split: SplitName,
    pub seed: u64,
    pub plan_length: Option<usize>,
    pub expanded: usize,
    pub wall_time_secs: f64,
    pub dropped: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BuildReport {
    pub requested: usize,
    pub kept: usize,
    /// Problems the solver could not solve.
    pub failures: usize,
    pub drops: BTreeMap<String, usize>,
    pub problems: Vec<ProblemRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("split ratios must be non-negative and sum to 1 (got {0})")]
    Ratios(f64),
    #[error(transparent)]
    Config(#[from] ArtobjError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

struct Attempt {
    generated: GeneratedProblem,
    seed: u64,
    outcome: Outcome,
    expanded: usize,
    wall_time: Duration,
}

/// Generates `n_total` problems, solves each with `solver`, and assembles the
/// splits. Solver failures, invalid plans, over-budget samples and duplicate
/// prompts are dropped and counted, never raised.
pub fn build_splits(
    domain: &DomainDef,
    cfg: &BuildConfig,
    solver: &dyn Solver,
) -> Result<(DatasetSplits, BuildReport), DatasetError> {
    let counts = cfg.ratios.counts(cfg.n_total)?;
    let generator = Generator::new(domain, &cfg.chain)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.n_total).map(|_| master.next_u64()).collect();

    let attempt = |seed: u64| -> Result<Attempt, ArtobjError> {
        let generated = generator.generate(seed, cfg.walk_len)?;
        let result = solver.solve(domain, &generated.problem);
        Ok(Attempt { generated, seed, outcome: result.outcome, expanded: result.expanded, wall_time: result.wall_time })
    };
    let attempts = parallel_map(&seeds, attempt).into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut splits = DatasetSplits::default();
    let mut report = BuildReport { requested: cfg.n_total, ..Default::default() };
    let mut seen_prompts = HashSet::new();
    let assignment = SplitName::ALL.iter().zip(counts).flat_map(|(s, n)| std::iter::repeat_n(*s, n));

    for (split, attempt) in assignment.zip(attempts) {
        let Attempt { generated, seed, outcome, expanded, wall_time } = attempt;
        let mut record = ProblemRecord {
            id: generated.problem.name.to_string(),
            split,
            seed,
            plan_length: None,
            expanded,
            wall_time_secs: wall_time.as_secs_f64(),
            dropped: None,
        };
        let verdict = match outcome {
            Outcome::Solved(plan) => {
                record.plan_length = Some(plan.len());
                if !validate_plan(domain, &generated.problem, &plan).is_valid() {
                    Err(DropReason::InvalidPlan)
                } else {
                    build_sample(&generated, &plan, cfg.domain_tag.as_deref()).map_err(|_| DropReason::OverBudget)
                }
            }
            Outcome::Exhausted => Err(DropReason::SolverExhausted),
            Outcome::Timeout => Err(DropReason::SolverTimeout),
        };
        let verdict = verdict.and_then(|sample| {
            if seen_prompts.insert(generated.compact_prompt.clone()) {
                Ok(sample)
            } else {
                Err(DropReason::Duplicate)
            }
        });
        match verdict {
            Ok(sample) => {
                let target = splits.get_mut(split);
                target.samples.push(sample);
                target.problem_ids.push(record.id.clone());
                report.kept += 1;
            }
            Err(reason) => {
                if matches!(reason, DropReason::SolverExhausted | DropReason::SolverTimeout) {
                    report.failures += 1;
                }
                let key = serde_json::to_value(&reason).unwrap().as_str().unwrap().to_string();
                *report.drops.entry(key).or_default() += 1;
                record.dropped = Some(reason);
            }
        }
        report.problems.push(record);
    }
    Ok((splits, report))
}

/// Order-preserving map over scoped worker threads.
pub(crate) fn parallel_map<T: Copy + Sync, R: Send>(items: &[T], f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(|&x| f(x)).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub fn write_jsonl(path: &Path, samples: &[TrainingSample]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        serde_json::to_writer(&mut out, s).expect("samples always serialize");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrainingSample>, DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Malformed { line: i + 1, message: e.to_string() })?;
        out.push(sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub split: String,
    pub index: usize,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct AuditReport {
    pub samples_checked: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// What an audit expects of every sample.
#[derive(Debug, Clone)]
pub struct AuditSpec<'a> {
    pub domain: &'a DomainDef,
    pub chain: &'a ChainConfig,
    pub domain_tag: Option<&'a str>,
}

/// Re-validates every completion against the problem rebuilt from its prompt
/// and checks terminators, tags, the length budget and duplicates.
pub fn audit_dataset(splits: &[(&str, &[TrainingSample])], spec: &AuditSpec<'_>) -> AuditReport {
    let mut report = AuditReport::default();
    // problem text -> first (split, index) that used it
    let mut owners: HashMap<&str, (&str, usize)> = HashMap::new();

    for (split, samples) in splits {
        for (index, sample) in samples.iter().enumerate() {
            report.samples_checked += 1;
            let mut flag = |kind: &str, detail: String| {
                report.violations.push(Violation { split: split.to_string(), index, kind: kind.into(), detail })
            };
            if sample.tokens() > CONTEXT_BUDGET_TOKENS {
                flag("over budget", format!("~{} tokens", sample.tokens()));
            }
            if !sample.completion.starts_with(' ') || sample.completion.starts_with("  ") {
                flag("missing leading space", "completion must start with exactly one space".into());
            }
            let completion_ok = sample.completion.ends_with(COMPLETION_TERMINATOR);
            if !completion_ok {
                flag("missing terminator", "completion does not end with `\\nEND`".into());
            }
            let Some(parts) = split_prompt(&sample.prompt) else {
                flag("missing prompt terminator", "prompt does not end with `\\n\\n###\\n\\n`".into());
                continue;
            };
            if parts.tag != spec.domain_tag {
                flag("tag mismatch", format!("expected {:?}, found {:?}", spec.domain_tag, parts.tag));
            }
            match owners.get(parts.problem) {
                Some((other, j)) if other != split => {
                    flag("contamination", format!("same problem as {other}[{j}]"));
                }
                Some((other, j)) => flag("duplicate", format!("same problem as {other}[{j}]")),
                None => {
                    owners.insert(parts.problem, (split, index));
                }
            }
            let problem = match merge_statics(spec.chain, spec.domain, "audit", parts.problem) {
                Ok(p) => p,
                Err(e) => {
                    flag("unparsable prompt", e.to_string());
                    continue;
                }
            };
            if !completion_ok {
                continue;
            }
            let text = &sample.completion[1..];
            let plan = match parse_plan(text) {
                Ok(parsed) => parsed.plan,
                Err(e) => {
                    flag("invalid plan", e.to_string());
                    continue;
                }
            };
            let verdict = validate_plan(spec.domain, &problem, &plan);
            if !verdict.is_valid() {
                let reason = verdict.reason.unwrap_or_default();
                flag("invalid plan", reason);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artobj::{build_problem, make_domain, strip_statics};
    use crate::pddl::Symbol;

    fn listing_problem() -> GeneratedProblem {
        let cfg = ChainConfig::default();
        let problem = build_problem(&cfg, "ex", &[315, 300, 285], &[0, 300, 285]).unwrap();
        let compact_prompt = strip_statics(&problem);
        GeneratedProblem { problem, witness: Plan::default(), compact_prompt }
    }

    fn call(name: &str, args: &[&str]) -> (Symbol, Vec<Symbol>) {
        (Symbol::new(name).unwrap(), args.iter().map(|a| Symbol::new(a).unwrap()).collect())
    }

    #[test]
    fn listing_shaped_sample() {
        let g = listing_problem();
        let plan = Plan::from_calls([
            call("link-to-central-grasp", &["link1", "gleft"]),
            call("increase_angle_first_child_45", &["joint1", "link1", "gleft", "angle315", "angle0"]),
            call("release-links", &["link1", "gleft"]),
        ]);
        let s = build_sample(&g, &plan, None).unwrap();
        assert!(s.prompt.starts_with("(:init (angle_joint angle315 joint1)\n"));
        assert!(s.prompt.ends_with("(angle_joint angle285 joint3)))\n\n###\n\n"));
        assert_eq!(
            s.completion,
            " 0.00100: (link-to-central-grasp link1 gleft)\n\
             0.00300: (increase_angle_first_child_45 joint1 link1 gleft angle315 angle0)\n\
             0.00500: (release-links link1 gleft)\nEND"
        );
    }

    #[test]
    fn empty_plan_completion() {
        let s = build_sample(&listing_problem(), &Plan::default(), None).unwrap();
        assert_eq!(s.completion, " \nEND");
    }

    #[test]
    fn tag_round_trips_through_split_prompt() {
        let g = listing_problem();
        let tagged = build_prompt(&g.compact_prompt, Some(NO_MACRO_TAG));
        assert!(tagged.starts_with("\n--NO-MACRO\n(:init"));
        let parts = split_prompt(&tagged).unwrap();
        assert_eq!(parts.tag, Some(NO_MACRO_TAG));
        assert_eq!(parts.problem, g.compact_prompt);
        let plain = build_prompt(&g.compact_prompt, None);
        assert_eq!(split_prompt(&plain).unwrap().tag, None);
    }

    #[test]
    fn over_budget_rejected() {
        let long = Plan::from_calls((0..300).map(|_| call("release-links", &["link1", "gleft"])));
        let err = build_sample(&listing_problem(), &long, None).unwrap_err();
        assert!(matches!(err, SampleError::OverBudget { .. }));
    }

    #[test]
    fn ratio_counts() {
        assert_eq!(SplitRatios::default().counts(100).unwrap(), [80, 10, 10]);
        let paper = SplitRatios { train: 8.0 / 9.0, validation: 1.0 / 9.0, test: 0.0 };
        assert_eq!(paper.counts(9000).unwrap(), [8000, 1000, 0]);
        assert!(SplitRatios { train: 0.5, validation: 0.1, test: 0.1 }.counts(10).is_err());
    }

    #[test]
    fn truncated_completion_flagged() {
        let cfg = ChainConfig::default();
        let d = make_domain(&cfg).unwrap();
        let g = listing_problem();
        let mut s = build_sample(&g, &Plan::default(), None).unwrap();
        s.completion = " 0.00100: (link-to-central-grasp link1 gleft)".into();
        let report = audit_dataset(&[("train", std::slice::from_ref(&s))], &AuditSpec { domain: &d, chain: &cfg, domain_tag: None });
        assert_eq!(report.count("missing terminator"), 1);
    }
}
