//! Simultaneous planning and execution: actions are executed while the rest
//! of the plan is still being generated, each one gated on the goal being
//! unchanged and its preconditions holding in the current world.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::neuroplanner::{ActionStream, NeuroPlanner, PlanningOutcome, PlanningStatus, StreamPoll};
use crate::pddl::{DomainDef, GroundAtom, GroundLiteral, PlanStep, ProblemDef};
use crate::semantics::{apply, holds, unsatisfied_preconditions, Grounder, State};

pub const DEFAULT_REPLAN_LIMIT: usize = 5;
pub const DEFAULT_ACTION_DURATION: Duration = Duration::from_millis(250);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpemError {
    #[error("disturbance {index} fires after {after} actions but the previous one fires after {previous}")]
    UnorderedSchedule { index: usize, after: usize, previous: usize },
    #[error("disturbance {index} modifies static predicate `{predicate}`")]
    StaticTouched { index: usize, predicate: String },
    #[error("cannot read schedule {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed schedule: {0}")]
    Malformed(String),
}

/// Canonical form used to decide whether the goal changed: sorted, deduplicated.
pub fn canonical_goal(goal: &[GroundLiteral]) -> Vec<GroundLiteral> {
    goal.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// The simulated world. Only executed actions and disturbances change it.
#[derive(Debug, Clone)]
pub struct WorldState {
    problem: ProblemDef,
    state: State,
    goal: Vec<GroundLiteral>,
    started: Instant,
}

impl WorldState {
    pub fn new(problem: &ProblemDef) -> Self {
        WorldState {
            problem: problem.clone(),
            state: State::initial(problem),
            goal: problem.goal.clone(),
            started: Instant::now(),
        }
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn goal(&self) -> &[GroundLiteral] {
        &self.goal
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn goal_reached(&self) -> bool {
        holds(&self.state, &self.goal)
    }

    /// The current situation as a planning problem.
    pub fn as_problem(&self) -> ProblemDef {
        ProblemDef { init: self.state.atoms().clone(), goal: self.goal.clone(), ..self.problem.clone() }
    }

    pub fn apply_disturbance(&mut self, d: &Disturbance) {
        for atom in &d.unset {
            self.state.remove(atom);
        }
        for atom in &d.set {
            self.state.insert(atom.clone());
        }
        if let Some(goal) = &d.new_goal {
            self.goal = goal.clone();
        }
    }
}

/// FIFO of streamed actions. Clearing bumps the generation so stale entries
/// can be told apart in traces.
#[derive(Debug, Clone, Default)]
pub struct ActionBuffer {
    queue: VecDeque<PlanStep>,
    generation: u64,
}

impl ActionBuffer {
    pub fn push(&mut self, step: PlanStep) {
        self.queue.push_back(step);
    }

    pub fn pop(&mut self) -> Option<PlanStep> {
        self.queue.pop_front()
    }

    pub fn clear(&mut self) {
        self.queue.clear();
        self.generation += 1;
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// A scripted change to the world, applied once `after` actions have executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub after: usize,
    #[serde(default)]
    pub set: Vec<GroundAtom>,
    #[serde(default)]
    pub unset: Vec<GroundAtom>,
    #[serde(default)]
    pub new_goal: Option<Vec<GroundLiteral>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DisturbanceSchedule {
    pub events: Vec<Disturbance>,
}

impl DisturbanceSchedule {
    pub fn new(events: Vec<Disturbance>) -> Self {
        DisturbanceSchedule { events }
    }

    pub fn from_json(text: &str) -> Result<Self, SpemError> {
        serde_json::from_str(text).map_err(|e| SpemError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SpemError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SpemError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    /// Triggers must be non-decreasing and static facts may not change.
    pub fn validate(&self, domain: &DomainDef) -> Result<(), SpemError> {
        let statics = domain.static_predicates();
        for (index, pair) in self.events.windows(2).enumerate() {
            if pair[1].after < pair[0].after {
                return Err(SpemError::UnorderedSchedule {
                    index: index + 1,
                    after: pair[1].after,
                    previous: pair[0].after,
                });
            }
        }
        for (index, d) in self.events.iter().enumerate() {
            if let Some(atom) = d.set.iter().chain(&d.unset).find(|a| statics.contains(&a.predicate)) {
                return Err(SpemError::StaticTouched { index, predicate: atom.predicate.to_string() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum RejectReason {
    GoalChanged,
    Precondition(Vec<GroundLiteral>),
    UnknownAction(String),
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::GoalChanged => write!(f, "goal-changed"),
            RejectReason::Precondition(failing) => {
                write!(f, "precondition")?;
                for l in failing {
                    write!(f, " {l}")?;
                }
                Ok(())
            }
            RejectReason::UnknownAction(msg) => write!(f, "unknown action: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckResult {
    Pass,
    Reject(RejectReason),
}

/// Gate for the next buffered action. The goal check comes first.
pub fn spem_check(
    domain: &DomainDef,
    world: &WorldState,
    next: &PlanStep,
    goal_at_plan_time: &[GroundLiteral],
) -> CheckResult {
    if canonical_goal(world.goal()) != canonical_goal(goal_at_plan_time) {
        return CheckResult::Reject(RejectReason::GoalChanged);
    }
    let action = match Grounder::new(domain, &world.problem).ground_call(next.action.as_str(), &next.args) {
        Ok(a) => a,
        Err(e) => return CheckResult::Reject(RejectReason::UnknownAction(e.to_string())),
    };
    if !action.satisfiable {
        return CheckResult::Reject(RejectReason::Precondition(vec![]));
    }
    let failing = unsatisfied_preconditions(world.state(), &action);
    if failing.is_empty() {
        CheckResult::Pass
    } else {
        CheckResult::Reject(RejectReason::Precondition(failing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplanMode {
    /// Replan only when the gate rejects an action or a plan runs out.
    #[default]
    OnViolation,
    /// Restart planning after every executed action. Test fixture only: it
    /// discards the rest of each plan and can loop.
    EveryAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    #[serde(with = "millis")]
    pub action_duration: Duration,
    pub replan_limit: usize,
    pub mode: ReplanMode,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { action_duration: DEFAULT_ACTION_DURATION, replan_limit: DEFAULT_REPLAN_LIMIT, mode: ReplanMode::OnViolation }
    }
}

impl ExecConfig {
    /// Zero-duration actions, for logic tests.
    pub fn fast() -> Self {
        ExecConfig { action_duration: Duration::ZERO, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceKind {
    ActionExecuted { step: String },
    SpemReject { step: String, reason: RejectReason },
    ReplanStarted { reason: String },
    /// First action of a new plan became available.
    ReplanReady { wait: f64 },
    Disturbance { after: usize },
    GoalReached,
    Failure { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Seconds since the episode started.
    pub t: f64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Seconds from the first request until the first action was available.
    pub wait_before_first_action: Option<f64>,
    pub makespan: f64,
    pub replans: usize,
    pub replan_waits: Vec<f64>,
    pub actions_executed: usize,
    pub goal_reached: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Episode {
    pub trace: Vec<TraceEvent>,
    pub metrics: EpisodeMetrics,
    pub final_state: State,
    /// Outcomes of plans that ran to completion, in order. Plans abandoned
    /// by a replan are not included.
    pub plans: Vec<PlanningOutcome>,
}


/// Runs one episode: streams a plan, executes it action by action under the
/// gate, applies scheduled disturbances between actions, and replans from
/// the current state whenever an action is rejected.
pub fn run_episode(
    planner: &NeuroPlanner,
    problem: &ProblemDef,
    schedule: &DisturbanceSchedule,
    cfg: &ExecConfig,
) -> Episode {
    let mut run = Run {
        planner,
        cfg,
        world: WorldState::new(problem),
        trace: Vec::new(),
        metrics: EpisodeMetrics::default(),
        plans: Vec::new(),
        buffer: ActionBuffer::default(),
        stream: None,
        plan_goal: Vec::new(),
        awaiting: None,
    };
    run.start_plan();
    run.awaiting = Some(run.world.started);
    let failure = run.execute(schedule);
    if let Some(reason) = failure {
        run.log(TraceKind::Failure { reason });
    }
    if let Some(stream) = run.stream.take() {
        stream.cancel();
    }
    run.metrics.goal_reached = run.world.goal_reached();
    run.metrics.makespan = run.world.elapsed().as_secs_f64();
    Episode { trace: run.trace, metrics: run.metrics, final_state: run.world.state, plans: run.plans }
}

const POLL: Duration = Duration::from_millis(20);

struct Run<'a> {
    planner: &'a NeuroPlanner,
    cfg: &'a ExecConfig,
    world: WorldState,
    trace: Vec<TraceEvent>,
    metrics: EpisodeMetrics,
    plans: Vec<PlanningOutcome>,
    buffer: ActionBuffer,
    stream: Option<ActionStream>,
    /// Goal the current plan was requested for.
    plan_goal: Vec<GroundLiteral>,
    /// Set while waiting for the first action of the current plan.
    awaiting: Option<Instant>,
}

impl Run<'_> {
    fn log(&mut self, kind: TraceKind) {
        self.trace.push(TraceEvent { t: self.world.elapsed().as_secs_f64(), kind });
    }

    fn start_plan(&mut self) {
        let stream = self.planner.plan_streaming(&self.world.as_problem());
        self.awaiting = Some(stream.started());
        self.stream = Some(stream);
        self.plan_goal = self.world.goal.clone();
    }

    /// Cancels any running stream, clears the buffer and plans again from the current world.
    fn replan(&mut self, reason: String) -> Result<(), String> {
        if self.metrics.replans >= self.cfg.replan_limit {
            return Err(format!("replan limit of {} exceeded", self.cfg.replan_limit));
        }
        self.metrics.replans += 1;
        if let Some(old) = self.stream.take() {
            old.cancel();
        }
        self.buffer.clear();
        self.log(TraceKind::ReplanStarted { reason });
        self.start_plan();
        Ok(())
    }

    /// Next action to gate, or `Ok(None)` when the caller should loop again.
    fn next_action(&mut self) -> Result<Option<PlanStep>, String> {
        let stream = self.stream.as_mut().expect("a plan is always in flight");
        while let StreamPoll::Action(step) = stream.poll(Duration::ZERO) {
            self.buffer.push(step);
        }
        if let Some(step) = self.buffer.pop() {
            return Ok(Some(step));
        }
        match stream.poll(POLL) {
            StreamPoll::Action(step) => Ok(Some(step)),
            StreamPoll::Pending => Ok(None),
            StreamPoll::Ended => {
                let outcome = self.stream.take().unwrap().finish();
                let status = outcome.status;
                let detail = outcome.reason.clone().unwrap_or_default();
                self.plans.push(outcome);
                let reason = match status {
                    PlanningStatus::ProviderError => return Err(format!("provider error: {detail}")),
                    PlanningStatus::Valid => "plan ended before the goal".to_string(),
                    PlanningStatus::Invalid => format!("invalid plan: {detail}"),
                    PlanningStatus::Truncated => "plan truncated".to_string(),
                };
                self.replan(reason)?;
                Ok(None)
            }
        }
    }

    fn execute(&mut self, schedule: &DisturbanceSchedule) -> Option<String> {
        let domain = self.planner.domain();
        let mut pending = schedule.events.iter().peekable();
        loop {
            while let Some(d) = pending.next_if(|d| d.after <= self.metrics.actions_executed) {
                self.world.apply_disturbance(d);
                self.log(TraceKind::Disturbance { after: d.after });
            }
            if self.world.goal_reached() {
                self.log(TraceKind::GoalReached);
                return None;
            }
            let next = match self.next_action() {
                Ok(Some(step)) => step,
                Ok(None) => continue,
                Err(e) => return Some(e),
            };

            if let Some(since) = self.awaiting.take() {
                let wait = since.elapsed().as_secs_f64();
                if self.metrics.wait_before_first_action.is_none() {
                    self.metrics.wait_before_first_action = Some(wait);
                } else {
                    self.metrics.replan_waits.push(wait);
                    self.log(TraceKind::ReplanReady { wait });
                }
            }

            let result = match spem_check(domain, &self.world, &next, &self.plan_goal) {
                CheckResult::Pass => {
                    thread::sleep(self.cfg.action_duration);
                    let action = Grounder::new(domain, &self.world.problem)
                        .ground_call(next.action.as_str(), &next.args)
                        .expect("checked by the gate");
                    self.world.state = apply(&self.world.state, &action).expect("checked by the gate");
                    self.metrics.actions_executed += 1;
                    self.log(TraceKind::ActionExecuted { step: next.call() });
                    if self.cfg.mode == ReplanMode::EveryAction && !self.world.goal_reached() {
                        self.replan("regenerate after action".into())
                    } else {
                        Ok(())
                    }
                }
                CheckResult::Reject(reason) => {
                    self.log(TraceKind::SpemReject { step: next.call(), reason: reason.clone() });
                    self.replan(reason.to_string())
                }
            };
            if let Err(e) = result {
                return Some(e);
            }
        }
    }
}

/// One planning attempt, reduced to what the comparison table needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub valid: bool,
    pub length: usize,
    /// Seconds the user waited: full plan for whole-plan requests, first
    /// action for streamed ones.
    pub wait: f64,
    pub time_to_first_action: Option<f64>,
}

impl PlanRecord {
    pub fn from_outcome(outcome: &PlanningOutcome, streaming: bool) -> Self {
        let ttfa = outcome.timings.time_to_first_action;
        PlanRecord {
            valid: outcome.is_valid(),
            length: outcome.plan.len(),
            wait: if streaming { ttfa.unwrap_or(outcome.timings.total_time) } else { outcome.timings.total_time },
            time_to_first_action: ttfa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; 0 for a single value.
fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

impl Distribution {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        Some(Distribution {
            mean: round_to(mean(xs), 2),
            std: round_to(population_std(xs), 2),
            min: round_to(sorted[0], 2),
            max: round_to(sorted[n - 1], 2),
            median: round_to(median, 2),
        })
    }
}

/// One row of the comparison table. Percentages have one decimal, plan
/// lengths three, times two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub trials: usize,
    pub valid: usize,
    pub validity_pct: f64,
    /// Over valid plans only.
    pub mean_length: Option<f64>,
    pub max_length: Option<usize>,
    pub t_max: Option<f64>,
    pub t_avg: Option<f64>,
    pub t_std: Option<f64>,
    pub time_to_first_action: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ConditionSummary>,
    /// Pairs of (streaming condition, whole-plan condition) with the relative wait reduction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wait_reductions: Vec<WaitReduction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitReduction {
    pub streaming: String,
    pub end_to_end: String,
    /// 1 − mean(first-action wait) / mean(full-plan wait), as a percentage with one decimal.
    pub reduction_pct: f64,
}

pub fn summarize_condition(condition: &str, records: &[PlanRecord]) -> ConditionSummary {
    let trials = records.len();
    let valid: Vec<&PlanRecord> = records.iter().filter(|r| r.valid).collect();
    let lengths: Vec<f64> = valid.iter().map(|r| r.length as f64).collect();
    let waits: Vec<f64> = records.iter().map(|r| r.wait).collect();
    let ttfa: Vec<f64> = records.iter().filter_map(|r| r.time_to_first_action).collect();
    let nonempty = !waits.is_empty();
    ConditionSummary {
        condition: condition.to_string(),
        trials,
        valid: valid.len(),
        validity_pct: if trials == 0 { 0.0 } else { round_to(100.0 * valid.len() as f64 / trials as f64, 1) },
        mean_length: (!lengths.is_empty()).then(|| round_to(mean(&lengths), 3)),
        max_length: valid.iter().map(|r| r.length).max(),
        t_max: nonempty.then(|| round_to(waits.iter().copied().fold(f64::MIN, f64::max), 2)),
        t_avg: nonempty.then(|| round_to(mean(&waits), 2)),
        t_std: nonempty.then(|| round_to(population_std(&waits), 2)),
        time_to_first_action: Distribution::of(&ttfa),
    }
}

/// Relative reduction of the mean wait, in [0, 1] when streaming helps.
pub fn wait_reduction(first_action_waits: &[f64], full_plan_waits: &[f64]) -> f64 {
    1.0 - mean(first_action_waits) / mean(full_plan_waits)
}

/// Builds the comparison table. `pairs` names (streaming, whole-plan)
/// conditions whose waits should be compared.
pub fn summarize(conditions: &[(String, Vec<PlanRecord>)], pairs: &[(String, String)]) -> ComparisonReport {
    let rows = conditions.iter().map(|(name, records)| summarize_condition(name, records)).collect();
    let find = |name: &str| conditions.iter().find(|(n, _)| n == name).map(|(_, r)| r);
    let wait_reductions = pairs
        .iter()
        .filter_map(|(s, e)| {
            let (sr, er) = (find(s)?, find(e)?);
            if sr.is_empty() || er.is_empty() {
                return None;
            }
            let first: Vec<f64> = sr.iter().map(|r| r.wait).collect();
            let full: Vec<f64> = er.iter().map(|r| r.wait).collect();
            Some(WaitReduction {
                streaming: s.clone(),
                end_to_end: e.clone(),
                reduction_pct: round_to(100.0 * wait_reduction(&first, &full), 1),
            })
        })
        .collect();
    ComparisonReport { rows, wait_reductions }
}

/// Metrics for a set of episodes run under one condition.
pub fn episode_records(episodes: &[Episode]) -> Vec<PlanRecord> {
    episodes
        .iter()
        .map(|e| PlanRecord {
            valid: e.metrics.goal_reached,
            length: e.metrics.actions_executed,
            wait: e.metrics.wait_before_first_action.unwrap_or(e.metrics.makespan),
            time_to_first_action: e.metrics.wait_before_first_action,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_has_zero_std() {
        let r = PlanRecord { valid: true, length: 4, wait: 1.234, time_to_first_action: Some(0.5) };
        let s = summarize_condition("x", &[r]);
        assert_eq!(s.t_std, Some(0.0));
        assert_eq!(s.t_avg, Some(1.23));
        assert_eq!(s.mean_length, Some(4.0));
        assert_eq!(s.validity_pct, 100.0);
    }

    #[test]
    fn wait_reduction_arithmetic() {
        assert!((wait_reduction(&[1.0, 3.0], &[4.0, 6.0]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn buffer_clear_bumps_generation() {
        let mut b = ActionBuffer::default();
        b.push(PlanStep { time: Default::default(), action: crate::pddl::Symbol::from_static("a"), args: vec![] });
        b.clear();
        assert!(b.is_empty());
        assert_eq!(b.generation(), 1);
    }

    #[test]
    fn schedule_json_round_trip() {
        let text = r#"[{"after": 2, "set": ["(angle_joint angle0 joint1)"], "unset": ["(angle_joint angle45 joint1)"]},
                       {"after": 3, "new_goal": ["(angle_joint angle0 joint2)", "(not (free gleft))"]}]"#;
        let s = DisturbanceSchedule::from_json(text).unwrap();
        assert_eq!(s.events.len(), 2);
        assert!(!s.events[1].new_goal.as_ref().unwrap()[1].positive);
        let back = DisturbanceSchedule::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(DisturbanceSchedule::from_json(r#"[{"after": 1, "bogus": 2}]"#).is_err());
    }
}
