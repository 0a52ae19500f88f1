//! Forward state-space search: greedy best-first (satisficing) and
//! breadth-first (optimal) over a compiled bitset representation.

use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};

use crate::pddl::{DomainDef, GroundAtom, GroundLiteral, ObjectDecl, Plan, ProblemDef};
use crate::semantics::{GroundAction, Grounder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBudget {
    pub max_expanded_states: usize,
    #[serde(serialize_with = "secs")]
    pub max_wall_time: Duration,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget { max_expanded_states: 200_000, max_wall_time: Duration::from_secs(30) }
    }
}

fn secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "plan", rename_all = "kebab-case")]
pub enum Outcome {
    Solved(Plan),
    Exhausted,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub expanded: usize,
    #[serde(serialize_with = "secs")]
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn plan(&self) -> Option<&Plan> {
        match &self.outcome {
            Outcome::Solved(p) => Some(p),
            _ => None,
        }
    }

    pub fn into_plan(self) -> Option<Plan> {
        match self.outcome {
            Outcome::Solved(p) => Some(p),
            _ => None,
        }
    }
}

/// Anything that turns a problem into a plan; lets callers swap search
/// strategies or inject failures.
pub trait Solver: Send + Sync {
    fn solve(&self, domain: &DomainDef, problem: &ProblemDef) -> SolveResult;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Satisficing {
    pub budget: SearchBudget,
}

impl Solver for Satisficing {
    fn solve(&self, domain: &DomainDef, problem: &ProblemDef) -> SolveResult {
        solve_satisficing(domain, problem, self.budget)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Optimal {
    pub limit: usize,
}

impl Solver for Optimal {
    fn solve(&self, domain: &DomainDef, problem: &ProblemDef) -> SolveResult {
        solve_optimal(domain, problem, self.limit)
    }
}

type Bits = Box<[u64]>;

fn get(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn set(bits: &mut [u64], i: usize, on: bool) {
    if on {
        bits[i / 64] |= 1 << (i % 64);
    } else {
        bits[i / 64] &= !(1 << (i % 64));
    }
}

#[derive(Debug)]
struct Cond {
    pos: Vec<usize>,
    neg: Vec<usize>,
}

impl Cond {
    fn holds(&self, bits: &[u64]) -> bool {
        self.pos.iter().all(|&i| get(bits, i)) && self.neg.iter().all(|&i| !get(bits, i))
    }
}

#[derive(Debug)]
struct Branch {
    when: Cond,
    adds: Vec<usize>,
    dels: Vec<usize>,
}

#[derive(Debug)]
struct CompiledAction {
    source: GroundAction,
    pre: Cond,
    adds: Vec<usize>,
    dels: Vec<usize>,
    branches: Vec<Branch>,
}

/// Ground actions over fluent atom indices. Static atoms are folded away, so the
/// same task serves every problem sharing objects and static facts.
#[derive(Debug)]
struct Task {
    fluents: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
    actions: Vec<CompiledAction>,
}

impl Task {
    fn compile(ground: Vec<GroundAction>, statics: &BTreeSet<GroundAtom>, static_preds: &BTreeSet<crate::pddl::Symbol>) -> Task {
        let mut task = Task { fluents: Vec::new(), index: HashMap::new(), actions: Vec::new() };
        let is_static = |a: &GroundAtom| static_preds.contains(&a.predicate);
        'actions: for action in ground {
            let mut pre = Cond { pos: Vec::new(), neg: Vec::new() };
            for lit in &action.precondition {
                if is_static(&lit.atom) {
                    if statics.contains(&lit.atom) != lit.positive {
                        continue 'actions;
                    }
                    continue;
                }
                let i = task.intern(&lit.atom);
                if lit.positive { pre.pos.push(i) } else { pre.neg.push(i) }
            }
            let adds = action.adds.iter().map(|a| task.intern(a)).collect();
            let dels = action.deletes.iter().map(|a| task.intern(a)).collect();
            let mut branches = Vec::new();
            'branches: for b in &action.conditional {
                let mut when = Cond { pos: Vec::new(), neg: Vec::new() };
                for lit in &b.when {
                    if is_static(&lit.atom) {
                        if statics.contains(&lit.atom) != lit.positive {
                            continue 'branches;
                        }
                        continue;
                    }
                    let i = task.intern(&lit.atom);
                    if lit.positive { when.pos.push(i) } else { when.neg.push(i) }
                }
                branches.push(Branch {
                    when,
                    adds: b.adds.iter().map(|a| task.intern(a)).collect(),
                    dels: b.deletes.iter().map(|a| task.intern(a)).collect(),
                });
            }
            task.actions.push(CompiledAction { source: action, pre, adds, dels, branches });
        }
        task
    }

    fn intern(&mut self, atom: &GroundAtom) -> usize {
        match self.index.entry(atom.clone()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                self.fluents.push(atom.clone());
                *e.insert(self.fluents.len() - 1)
            }
        }
    }

    fn words(&self) -> usize {
        self.fluents.len().div_ceil(64).max(1)
    }

    fn successor(&self, state: &[u64], action: &CompiledAction) -> Bits {
        let mut next: Bits = state.into();
        let fired: Vec<&Branch> = action.branches.iter().filter(|b| b.when.holds(state)).collect();
        for &i in action.dels.iter().chain(fired.iter().flat_map(|b| &b.dels)) {
            set(&mut next, i, false);
        }
        for &i in action.adds.iter().chain(fired.iter().flat_map(|b| &b.adds)) {
            set(&mut next, i, true);
        }
        next
    }
}

type TaskKey = (DomainDef, Vec<ObjectDecl>, BTreeSet<GroundAtom>);

fn task_cache() -> &'static Mutex<HashMap<TaskKey, Arc<Task>>> {
    static CACHE: OnceLock<Mutex<HashMap<TaskKey, Arc<Task>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

const CACHE_CAPACITY: usize = 32;

fn task_for(domain: &DomainDef, problem: &ProblemDef) -> Arc<Task> {
    let static_preds = domain.static_predicates();
    let statics: BTreeSet<GroundAtom> =
        problem.init.iter().filter(|a| static_preds.contains(&a.predicate)).cloned().collect();
    // The problem name and fluent init do not affect grounding.
    let key: TaskKey = (domain.clone(), problem.objects.clone(), statics);
    if let Some(task) = task_cache().lock().unwrap().get(&key) {
        return Arc::clone(task);
    }
    let ground = Grounder::new(domain, problem).ground_all();
    let task = Arc::new(Task::compile(ground, &key.2, &static_preds));
    let mut cache = task_cache().lock().unwrap();
    if cache.len() >= CACHE_CAPACITY {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&task));
    task
}

/// Per-problem view: initial bits and the goal split into a fluent part and a
/// constant part decided by the initial state.
struct Instance {
    task: Arc<Task>,
    init: Bits,
    goal: Cond,
    goal_constant_ok: bool,
}

impl Instance {
    fn new(domain: &DomainDef, problem: &ProblemDef) -> Instance {
        let task = task_for(domain, problem);
        let mut init: Bits = vec![0u64; task.words()].into();
        for atom in &problem.init {
            if let Some(&i) = task.index.get(atom) {
                set(&mut init, i, true);
            }
        }
        let mut goal = Cond { pos: Vec::new(), neg: Vec::new() };
        let mut goal_constant_ok = true;
        for GroundLiteral { positive, atom } in &problem.goal {
            match task.index.get(atom) {
                Some(&i) if *positive => goal.pos.push(i),
                Some(&i) => goal.neg.push(i),
                // Never touched by any action: its truth is fixed by init.
                None => goal_constant_ok &= problem.init.contains(atom) == *positive,
            }
        }
        Instance { task, init, goal, goal_constant_ok }
    }

    fn unsatisfied(&self, bits: &[u64]) -> usize {
        self.goal.pos.iter().filter(|&&i| !get(bits, i)).count()
            + self.goal.neg.iter().filter(|&&i| get(bits, i)).count()
    }

    fn plan(&self, nodes: &[Node], mut at: usize) -> Plan {
        let mut calls = Vec::new();
        while let Some(parent) = nodes[at].parent {
            let a = &self.task.actions[nodes[at].action].source;
            calls.push((a.name.clone(), a.args.clone()));
            at = parent;
        }
        calls.reverse();
        Plan::from_calls(calls)
    }
}

struct Node {
    parent: Option<usize>,
    action: usize,
    g: usize,
}

fn result(outcome: Outcome, expanded: usize, start: Instant) -> SolveResult {
    SolveResult { outcome, expanded, wall_time: start.elapsed() }
}

/// Greedy best-first search on the number of unsatisfied goal literals.
/// Ties prefer deeper nodes, then earlier generation (actions are tried in
/// lexicographic order), which makes the search behave like a greedy probe.
pub fn solve_satisficing(domain: &DomainDef, problem: &ProblemDef, budget: SearchBudget) -> SolveResult {
    let start = Instant::now();
    let inst = Instance::new(domain, problem);
    if !inst.goal_constant_ok {
        return result(Outcome::Exhausted, 0, start);
    }
    let task = &inst.task;
    let mut nodes = vec![Node { parent: None, action: 0, g: 0 }];
    let mut states: Vec<Bits> = vec![inst.init.clone()];
    let mut seen: HashMap<Bits, usize> = HashMap::from([(inst.init.clone(), 0)]);
    let mut open = BinaryHeap::new();
    open.push(Reverse((inst.unsatisfied(&inst.init), Reverse(0usize), 0usize)));
    let mut expanded = 0;

    while let Some(Reverse((h, _, id))) = open.pop() {
        expanded += 1;
        if h == 0 {
            return result(Outcome::Solved(inst.plan(&nodes, id)), expanded, start);
        }
        if expanded >= budget.max_expanded_states {
            return result(Outcome::Exhausted, expanded, start);
        }
        if start.elapsed() >= budget.max_wall_time {
            return result(Outcome::Timeout, expanded, start);
        }
        let g = nodes[id].g + 1;
        for (ai, action) in task.actions.iter().enumerate() {
            if !action.pre.holds(&states[id]) {
                continue;
            }
            let next = task.successor(&states[id], action);
            if let Entry::Vacant(e) = seen.entry(next) {
                let child = nodes.len();
                let h = inst.unsatisfied(e.key());
                states.push(e.key().clone());
                e.insert(child);
                nodes.push(Node { parent: Some(id), action: ai, g });
                open.push(Reverse((h, Reverse(g), child)));
            }
        }
    }
    result(Outcome::Exhausted, expanded, start)
}

/// Breadth-first search; returns a shortest plan. `limit` bounds the number of
/// expanded states.
pub fn solve_optimal(domain: &DomainDef, problem: &ProblemDef, limit: usize) -> SolveResult {
    let start = Instant::now();
    let inst = Instance::new(domain, problem);
    if !inst.goal_constant_ok {
        return result(Outcome::Exhausted, 0, start);
    }
    let task = &inst.task;
    let mut nodes = vec![Node { parent: None, action: 0, g: 0 }];
    let mut states: Vec<Bits> = vec![inst.init.clone()];
    if inst.unsatisfied(&inst.init) == 0 {
        return result(Outcome::Solved(Plan::default()), 1, start);
    }
    let mut seen: HashMap<Bits, usize> = HashMap::from([(inst.init.clone(), 0)]);
    let mut queue = VecDeque::from([0usize]);
    let mut expanded = 0;

    while let Some(id) = queue.pop_front() {
        if expanded >= limit {
            return result(Outcome::Exhausted, expanded, start);
        }
        expanded += 1;
        for (ai, action) in task.actions.iter().enumerate() {
            if !action.pre.holds(&states[id]) {
                continue;
            }
            let next = task.successor(&states[id], action);
            if let Entry::Vacant(e) = seen.entry(next) {
                let child = nodes.len();
                let goal = inst.unsatisfied(e.key()) == 0;
                states.push(e.key().clone());
                e.insert(child);
                nodes.push(Node { parent: Some(id), action: ai, g: nodes[id].g + 1 });
                if goal {
                    return result(Outcome::Solved(inst.plan(&nodes, child)), expanded, start);
                }
                queue.push_back(child);
            }
        }
    }
    result(Outcome::Exhausted, expanded, start)
}
