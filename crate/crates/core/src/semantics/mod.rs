//! State-transition semantics: grounding of lifted schemas, applicability,
//! effect application with pre-state conditional evaluation, and sequential
//! plan validation.

mod ground;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::pddl::{DomainDef, GroundAtom, GroundLiteral, Plan, ProblemDef, Symbol};

pub use ground::{ground, ground_all, Grounder};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemanticsError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` expects {expected} argument(s), got {found}")]
    Arity { action: String, expected: usize, found: usize },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("argument `{object}` of type `{found}` does not match parameter `?{param}` of type `{expected}`")]
    TypeMismatch { param: String, expected: String, object: String, found: String },
    #[error("preconditions of `{action}` violated: {}", failing.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))]
    PreconditionViolated { action: String, failing: Vec<GroundLiteral> },
}

/// Closed-world set of ground atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State {
    atoms: BTreeSet<GroundAtom>,
}

impl State {
    pub fn new(atoms: impl IntoIterator<Item = GroundAtom>) -> Self {
        State { atoms: atoms.into_iter().collect() }
    }

    pub fn initial(problem: &ProblemDef) -> Self {
        State { atoms: problem.init.clone() }
    }

    pub fn contains(&self, atom: &GroundAtom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn insert(&mut self, atom: GroundAtom) -> bool {
        self.atoms.insert(atom)
    }

    pub fn remove(&mut self, atom: &GroundAtom) -> bool {
        self.atoms.remove(atom)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroundAtom> {
        self.atoms.iter()
    }

    pub fn atoms(&self) -> &BTreeSet<GroundAtom> {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn satisfies(&self, lit: &GroundLiteral) -> bool {
        self.contains(&lit.atom) == lit.positive
    }
}

/// Quantifier-expanded branch of a conditional effect.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundConditionalEffect {
    /// Objects bound to the branch's quantified variables, in declaration order.
    pub binding: Vec<Symbol>,
    pub when: Vec<GroundLiteral>,
    pub adds: Vec<GroundAtom>,
    pub deletes: Vec<GroundAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundAction {
    pub name: Symbol,
    pub args: Vec<Symbol>,
    pub precondition: Vec<GroundLiteral>,
    /// False when an equality constraint in the precondition fails for this binding.
    pub satisfiable: bool,
    pub adds: Vec<GroundAtom>,
    pub deletes: Vec<GroundAtom>,
    /// Branches whose static conditions are false in the problem are pruned.
    pub conditional: Vec<GroundConditionalEffect>,
}

impl GroundAction {
    pub fn call(&self) -> String {
        let mut out = format!("({}", self.name);
        for a in &self.args {
            out.push(' ');
            out.push_str(a.as_str());
        }
        out.push(')');
        out
    }
}

pub fn applicable(state: &State, action: &GroundAction) -> bool {
    action.satisfiable && action.precondition.iter().all(|l| state.satisfies(l))
}

pub fn unsatisfied_preconditions(state: &State, action: &GroundAction) -> Vec<GroundLiteral> {
    action.precondition.iter().filter(|l| !state.satisfies(l)).cloned().collect()
}

/// Applies `action`. Conditional branches are evaluated against the pre-state;
/// deletes are applied before adds, so an atom both deleted and added survives.
pub fn apply(state: &State, action: &GroundAction) -> Result<State, SemanticsError> {
    if !applicable(state, action) {
        return Err(SemanticsError::PreconditionViolated {
            action: action.call(),
            failing: unsatisfied_preconditions(state, action),
        });
    }
    let triggered: Vec<&GroundConditionalEffect> =
        action.conditional.iter().filter(|c| c.when.iter().all(|l| state.satisfies(l))).collect();

    let mut next = state.clone();
    for atom in action.deletes.iter().chain(triggered.iter().flat_map(|c| &c.deletes)) {
        next.remove(atom);
    }
    for atom in action.adds.iter().chain(triggered.iter().flat_map(|c| &c.adds)) {
        next.insert(atom.clone());
    }
    Ok(next)
}

pub fn holds(state: &State, goal: &[GroundLiteral]) -> bool {
    goal.iter().all(|l| state.satisfies(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Valid,
    Invalid,
    UnsolvedGoal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    /// 0-based index of the first step that could not be executed.
    pub failing_step: Option<usize>,
    pub failing_preconditions: Vec<GroundLiteral>,
    pub reason: Option<String>,
    /// Number of steps successfully applied.
    pub steps_applied: usize,
    pub final_state: State,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.verdict == Verdict::Valid
    }
}

/// Simulates `plan` sequentially from the problem's initial state.
pub fn validate_plan(domain: &DomainDef, problem: &ProblemDef, plan: &Plan) -> ValidationReport {
    let grounder = Grounder::new(domain, problem);
    let mut state = State::initial(problem);
    for (index, step) in plan.steps.iter().enumerate() {
        let invalid = |reason: String, failing: Vec<GroundLiteral>, state: State| ValidationReport {
            verdict: Verdict::Invalid,
            failing_step: Some(index),
            failing_preconditions: failing,
            reason: Some(reason),
            steps_applied: index,
            final_state: state,
        };
        let action = match grounder.ground_call(step.action.as_str(), &step.args) {
            Ok(a) => a,
            Err(e) => return invalid(e.to_string(), Vec::new(), state),
        };
        match apply(&state, &action) {
            Ok(next) => state = next,
            Err(e @ SemanticsError::PreconditionViolated { .. }) => {
                let failing = unsatisfied_preconditions(&state, &action);
                return invalid(e.to_string(), failing, state);
            }
            Err(e) => return invalid(e.to_string(), Vec::new(), state),
        }
    }
    let reached = holds(&state, &problem.goal);
    ValidationReport {
        verdict: if reached { Verdict::Valid } else { Verdict::UnsolvedGoal },
        failing_step: None,
        failing_preconditions: Vec::new(),
        reason: (!reached).then(|| "goal not satisfied in final state".to_string()),
        steps_applied: plan.len(),
        final_state: state,
    }
}
