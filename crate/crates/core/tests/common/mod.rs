//! Shared fixtures. `ChainSim` is an independent model of the articulated
//! chain written directly in integers (degrees and indices), with no use of
//! the PDDL machinery, so it can serve as an oracle for the validator.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use neuroplan::artobj::{make_domain, ChainConfig, GeneratedProblem, Generator};
use neuroplan::pddl::{DomainDef, Plan, ProblemDef};
use neuroplan::provider::{
    ChunkSink, CompletionRequest, CompletionSource, EmulatedSource, Provider, SourceEnd, SourceError,
};
use neuroplan::solver::Satisficing;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimVerdict {
    Valid,
    /// The step at this index could not be executed.
    Invalid(usize),
    UnsolvedGoal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSim {
    pub n: usize,
    pub step: u32,
    pub increments: Vec<u32>,
    pub macros: bool,
    /// Absolute angle of joint i+1.
    pub angles: Vec<u32>,
    /// Link held by gleft, gright.
    pub held: [Option<usize>; 2],
}

fn index_of(prefix: &str, text: &str, max: usize) -> Option<usize> {
    let i: usize = text.strip_prefix(prefix)?.parse().ok()?;
    (1..=max).contains(&i).then_some(i)
}

impl ChainSim {
    pub fn new(cfg: &ChainConfig, angles: Vec<u32>) -> Self {
        ChainSim {
            n: cfg.n_joints,
            step: cfg.angle_step_deg,
            increments: cfg.rotation_increments_deg.iter().copied().collect(),
            macros: cfg.use_macros,
            angles,
            held: [None, None],
        }
    }

    pub fn from_problem(cfg: &ChainConfig, problem: &ProblemDef) -> Self {
        ChainSim::new(cfg, angles_in(problem.init.iter().map(|a| (a.predicate.as_str(), &a.args)), cfg.n_joints))
    }

    fn angle(&self, text: &str) -> Option<u32> {
        let deg: u32 = text.strip_prefix("angle")?.parse().ok()?;
        (deg < 360 && deg.is_multiple_of(self.step)).then_some(deg)
    }

    fn gripper(text: &str) -> Option<usize> {
        match text {
            "gleft" => Some(0),
            "gright" => Some(1),
            _ => None,
        }
    }

    fn all_free(&self) -> bool {
        self.held.iter().all(Option::is_none)
    }

    /// Rotation named `{dir}_..._{inc}` applied to joint j (1-based).
    fn rotate(&mut self, j: usize, from: u32, to: u32, increase: bool, inc: u32) -> bool {
        let expect = if increase { (from + inc) % 360 } else { (from + 360 - inc) % 360 };
        if self.angles[j - 1] != from || to != expect {
            return false;
        }
        for k in j..=self.n {
            let a = self.angles[k - 1];
            self.angles[k - 1] = if increase { (a + inc) % 360 } else { (a + 360 - inc) % 360 };
        }
        true
    }

    /// Applies one action; false (state untouched) if it is not executable.
    pub fn apply(&mut self, name: &str, args: &[&str]) -> bool {
        let before = self.clone();
        let ok = self.try_apply(name, args);
        if !ok {
            *self = before;
        }
        ok
    }

    fn try_apply(&mut self, name: &str, args: &[&str]) -> bool {
        if name == "link-to-central-grasp" || name == "release-links" {
            let [l, g] = args else { return false };
            let (Some(l), Some(g)) = (index_of("link", l, self.n), Self::gripper(g)) else { return false };
            if name == "link-to-central-grasp" {
                if !self.all_free() {
                    return false;
                }
                self.held[g] = Some(l);
            } else {
                if self.held[g] != Some(l) {
                    return false;
                }
                self.held[g] = None;
            }
            return true;
        }
        let (is_macro, rest) = match name.strip_prefix("grasp-rotate-release_") {
            Some(rest) => (true, rest),
            None => (false, name),
        };
        if is_macro != self.macros {
            return false;
        }
        let (increase, inc_text) = if is_macro {
            match rest.split_once('_') {
                Some(("increase", inc)) => (true, inc),
                Some(("decrease", inc)) => (false, inc),
                _ => return false,
            }
        } else if let Some(inc) = rest.strip_prefix("increase_angle_first_child_") {
            (true, inc)
        } else if let Some(inc) = rest.strip_prefix("decrease_angle_first_child_") {
            (false, inc)
        } else {
            return false;
        };
        let Ok(inc) = inc_text.parse::<u32>() else { return false };
        if !self.increments.contains(&inc) {
            return false;
        }
        let [j, l, g, from, to] = args else { return false };
        let (Some(j), Some(l), Some(g), Some(from), Some(to)) =
            (index_of("joint", j, self.n), index_of("link", l, self.n), Self::gripper(g), self.angle(from), self.angle(to))
        else {
            return false;
        };
        if l != j {
            return false;
        }
        let gripper_ok = if is_macro { self.all_free() } else { self.held[g] == Some(l) };
        gripper_ok && self.rotate(j, from, to, increase, inc)
    }

    pub fn run(&mut self, plan: &Plan, goal: &[u32]) -> SimVerdict {
        for (i, step) in plan.steps.iter().enumerate() {
            let args: Vec<&str> = step.args.iter().map(|a| a.as_str()).collect();
            if !self.apply(step.action.as_str(), &args) {
                return SimVerdict::Invalid(i);
            }
        }
        if self.angles == goal {
            SimVerdict::Valid
        } else {
            SimVerdict::UnsolvedGoal
        }
    }
}

/// Joint angles read from `(angle_joint angleD jointI)` facts.
pub fn angles_in<'a>(
    atoms: impl Iterator<Item = (&'a str, &'a Vec<neuroplan::pddl::Symbol>)>,
    n: usize,
) -> Vec<u32> {
    let mut out = vec![u32::MAX; n];
    for (pred, args) in atoms {
        if pred == "angle_joint" {
            let deg: u32 = args[0].as_str().strip_prefix("angle").unwrap().parse().unwrap();
            let j: usize = args[1].as_str().strip_prefix("joint").unwrap().parse().unwrap();
            out[j - 1] = deg;
        }
    }
    out
}

pub fn goal_angles(problem: &ProblemDef, n: usize) -> Vec<u32> {
    angles_in(problem.goal.iter().filter(|l| l.positive).map(|l| (l.atom.predicate.as_str(), &l.atom.args)), n)
}

pub fn config(macros: bool) -> ChainConfig {
    ChainConfig::default().with_macros(macros)
}

pub fn domain(cfg: &ChainConfig) -> DomainDef {
    make_domain(cfg).unwrap()
}

pub fn generate(cfg: &ChainConfig, seeds: impl IntoIterator<Item = u64>, walk_len: usize) -> Vec<GeneratedProblem> {
    let domain = domain(cfg);
    let generator = Generator::new(&domain, cfg).unwrap();
    seeds.into_iter().map(|s| generator.generate(s, walk_len).unwrap()).collect()
}

pub fn emulated(cfg: &ChainConfig, line_delay: Duration) -> Provider {
    Provider::new(EmulatedSource::new(domain(cfg), cfg.clone(), Arc::new(Satisficing::default()), line_delay))
}

/// A provider that always answers with the same text, in pieces of `piece` chars.
pub struct Canned {
    pub text: String,
    pub piece: usize,
    pub delay: Duration,
}

impl CompletionSource for Canned {
    fn produce(&self, _: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
        let chars: Vec<char> = self.text.chars().collect();
        for piece in chars.chunks(self.piece.max(1)) {
            sink.sleep(self.delay)?;
            sink.emit(&piece.iter().collect::<String>())?;
        }
        Ok(SourceEnd::Complete)
    }
}

pub fn canned(text: &str) -> Provider {
    Provider::new(Canned { text: text.to_string(), piece: 7, delay: Duration::ZERO })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn distinct<T: Ord + Clone>(xs: &[T]) -> usize {
    xs.iter().cloned().collect::<BTreeSet<_>>().len()
}

/// Maps `f` over `items` on `threads` scoped threads, preserving order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let size = items.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(size).map(|chunk| s.spawn(|| chunk.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

pub fn cpus() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

/// `(name a b)` back into its parts.
pub fn split_call(call: &str) -> (String, Vec<String>) {
    let inner = call.trim().trim_start_matches('(').trim_end_matches(')');
    let mut words = inner.split_whitespace().map(str::to_string);
    let name = words.next().unwrap_or_default();
    (name, words.collect())
}

/// Calls executed in an episode, in order.
pub fn executed(trace: &[neuroplan::spem::TraceEvent]) -> Vec<String> {
    trace
        .iter()
        .filter_map(|e| match &e.kind {
            neuroplan::spem::TraceKind::ActionExecuted { step } => Some(step.clone()),
            _ => None,
        })
        .collect()
}

pub fn angle_atom(deg: u32, joint: usize) -> neuroplan::pddl::GroundAtom {
    neuroplan::pddl::GroundAtom::parse_parts("angle_joint", &[&format!("angle{deg}"), &format!("joint{joint}")])
}

/// Replays calls on the simulator; panics on the first one it cannot execute.
pub fn replay_calls(sim: &mut ChainSim, calls: &[String]) {
    for call in calls {
        let (name, args) = split_call(call);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(sim.apply(&name, &args), "oracle cannot execute {call} from {:?}", sim.angles);
    }
}
