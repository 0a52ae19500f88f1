use std::collections::{BTreeSet, HashMap};

use super::{GroundAction, GroundConditionalEffect, SemanticsError};
use crate::pddl::{
    ActionSchema, Atom, DomainDef, EffectEntry, GroundAtom, GroundLiteral, Literal, ProblemDef, Symbol, Term,
    TypedVar, OBJECT_TYPE,
};

type Env = Vec<(Symbol, Symbol)>;

fn lookup<'e>(env: &'e Env, var: &Symbol) -> &'e Symbol {
    env.iter()
        .rev()
        .find(|(name, _)| name == var)
        .map(|(_, obj)| obj)
        .unwrap_or_else(|| panic!("variable ?{var} unbound during grounding"))
}

fn resolve<'e>(term: &'e Term, env: &'e Env) -> &'e Symbol {
    match term {
        Term::Var(v) => lookup(env, v),
        Term::Obj(o) => o,
    }
}

fn ground_atom(atom: &Atom, env: &Env) -> GroundAtom {
    GroundAtom::new(atom.predicate.clone(), atom.args.iter().map(|t| resolve(t, env).clone()).collect())
}

/// Grounds schemas against one problem's object universe.
///
/// Literals over static predicates (never touched by any effect) and equality
/// are decided once here, so conditional branches that can never fire are
/// dropped rather than carried into every state transition.
pub struct Grounder<'a> {
    domain: &'a DomainDef,
    problem: &'a ProblemDef,
    statics: BTreeSet<Symbol>,
    by_type: HashMap<Symbol, Vec<Symbol>>,
}

impl<'a> Grounder<'a> {
    pub fn new(domain: &'a DomainDef, problem: &'a ProblemDef) -> Self {
        let mut by_type = HashMap::new();
        let all_types = domain.types.iter().map(|t| t.name.clone()).chain([Symbol::from_static(OBJECT_TYPE)]);
        for ty in all_types {
            let objs = problem.objects_of_type(domain, ty.as_str()).cloned().collect();
            by_type.insert(ty, objs);
        }
        Grounder { domain, problem, statics: domain.static_predicates(), by_type }
    }

    pub fn statics(&self) -> &BTreeSet<Symbol> {
        &self.statics
    }

    fn objects(&self, ty: &Symbol) -> &[Symbol] {
        self.by_type.get(ty).map(Vec::as_slice).unwrap_or(&[])
    }

    fn decidable(&self, lit: &Literal) -> bool {
        lit.atom.is_equality() || self.statics.contains(&lit.atom.predicate)
    }

    fn decide(&self, lit: &Literal, env: &Env) -> bool {
        let truth = if lit.atom.is_equality() {
            resolve(&lit.atom.args[0], env) == resolve(&lit.atom.args[1], env)
        } else {
            self.problem.init.contains(&ground_atom(&lit.atom, env))
        };
        truth == lit.positive
    }

    /// Looks up `name`, checks arity and argument types, then grounds.
    pub fn ground_call(&self, name: &str, args: &[Symbol]) -> Result<GroundAction, SemanticsError> {
        let schema = self.domain.action(name).ok_or_else(|| SemanticsError::UnknownAction(name.to_string()))?;
        self.ground(schema, args)
    }

    pub fn ground(&self, schema: &ActionSchema, args: &[Symbol]) -> Result<GroundAction, SemanticsError> {
        if schema.params.len() != args.len() {
            return Err(SemanticsError::Arity {
                action: schema.name.to_string(),
                expected: schema.params.len(),
                found: args.len(),
            });
        }
        for (param, arg) in schema.params.iter().zip(args) {
            let ty = self.problem.object_type(arg.as_str()).ok_or_else(|| SemanticsError::UnknownObject(arg.to_string()))?;
            if !self.domain.is_subtype(ty.as_str(), param.ty.as_str()) {
                return Err(SemanticsError::TypeMismatch {
                    param: param.name.to_string(),
                    expected: param.ty.to_string(),
                    object: arg.to_string(),
                    found: ty.to_string(),
                });
            }
        }
        Ok(self.instantiate(schema, args))
    }

    fn instantiate(&self, schema: &ActionSchema, args: &[Symbol]) -> GroundAction {
        let mut env: Env = schema.params.iter().map(|p| p.name.clone()).zip(args.iter().cloned()).collect();
        let mut precondition = Vec::new();
        let mut satisfiable = true;
        let mut push_lit = |lit: &Literal, env: &Env, out: &mut Vec<GroundLiteral>| {
            if lit.atom.is_equality() {
                satisfiable &= self.decide(lit, env);
            } else {
                out.push(GroundLiteral { positive: lit.positive, atom: ground_atom(&lit.atom, env) });
            }
        };
        for lit in &schema.precondition.literals {
            push_lit(lit, &env, &mut precondition);
        }
        for q in &schema.precondition.foralls {
            self.enumerate(&q.vars, &[], &mut env, &mut |env| {
                for lit in &q.body {
                    push_lit(lit, env, &mut precondition);
                }
            });
        }

        let mut adds = Vec::new();
        let mut deletes = Vec::new();
        let mut conditional = Vec::new();
        for entry in &schema.effect.entries {
            match entry {
                EffectEntry::Add(a) => adds.push(ground_atom(a, &env)),
                EffectEntry::Delete(a) => deletes.push(ground_atom(a, &env)),
                EffectEntry::Conditional(c) => {
                    let (decided, open): (Vec<&Literal>, Vec<&Literal>) =
                        c.when.literals.iter().partition(|l| self.decidable(l));
                    let base = env.len();
                    self.enumerate(&c.vars, &decided, &mut env, &mut |env| {
                        let mut when: Vec<GroundLiteral> = open
                            .iter()
                            .map(|l| GroundLiteral { positive: l.positive, atom: ground_atom(&l.atom, env) })
                            .collect();
                        for q in &c.when.foralls {
                            let mut inner = env.clone();
                            self.enumerate(&q.vars, &[], &mut inner, &mut |e| {
                                when.extend(q.body.iter().map(|l| GroundLiteral {
                                    positive: l.positive,
                                    atom: ground_atom(&l.atom, e),
                                }));
                            });
                        }
                        let mut branch = GroundConditionalEffect {
                            binding: env[base..].iter().map(|(_, o)| o.clone()).collect(),
                            when,
                            adds: Vec::new(),
                            deletes: Vec::new(),
                        };
                        for lit in &c.then {
                            let atom = ground_atom(&lit.atom, env);
                            if lit.positive {
                                branch.adds.push(atom);
                            } else {
                                branch.deletes.push(atom);
                            }
                        }
                        conditional.push(branch);
                    });
                }
            }
        }
        GroundAction { name: schema.name.clone(), args: args.to_vec(), precondition, satisfiable, adds, deletes, conditional }
    }

    /// Visits every type-compatible binding of `vars` (extending `env`) for
    /// which all `checks` hold. Each check runs as soon as its variables are bound.
    fn enumerate(&self, vars: &[TypedVar], checks: &[&Literal], env: &mut Env, visit: &mut dyn FnMut(&Env)) {
        let mut schedule: Vec<Vec<&Literal>> = vec![Vec::new(); vars.len() + 1];
        for lit in checks {
            let depth = lit
                .atom
                .variables()
                .filter_map(|v| vars.iter().position(|tv| &tv.name == v).map(|i| i + 1))
                .max()
                .unwrap_or(0);
            schedule[depth].push(lit);
        }
        self.descend(vars, &schedule, 0, env, visit);
    }

    fn descend(
        &self,
        vars: &[TypedVar],
        schedule: &[Vec<&Literal>],
        depth: usize,
        env: &mut Env,
        visit: &mut dyn FnMut(&Env),
    ) {
        if !schedule[depth].iter().all(|l| self.decide(l, env)) {
            return;
        }
        if depth == vars.len() {
            visit(env);
            return;
        }
        let var = &vars[depth];
        for obj in self.objects(&var.ty) {
            env.push((var.name.clone(), obj.clone()));
            self.descend(vars, schedule, depth + 1, env, visit);
            env.pop();
        }
    }

    /// Every ground action whose static and equality preconditions can hold,
    /// sorted by name then arguments.
    pub fn ground_all(&self) -> Vec<GroundAction> {
        let mut out = Vec::new();
        for schema in &self.domain.actions {
            let checks: Vec<&Literal> =
                schema.precondition.literals.iter().filter(|l| self.decidable(l)).collect();
            let mut bindings = Vec::new();
            self.enumerate(&schema.params, &checks, &mut Vec::new(), &mut |env| {
                bindings.push(env.iter().map(|(_, o)| o.clone()).collect::<Vec<_>>());
            });
            for args in bindings {
                let action = self.instantiate(schema, &args);
                if action.satisfiable {
                    out.push(action);
                }
            }
        }
        out.sort_by(|a, b| (&a.name, &a.args).cmp(&(&b.name, &b.args)));
        out
    }
}

/// Grounds `schema` with `binding` after checking arity and types.
pub fn ground(
    domain: &DomainDef,
    problem: &ProblemDef,
    schema: &ActionSchema,
    binding: &[Symbol],
) -> Result<GroundAction, SemanticsError> {
    Grounder::new(domain, problem).ground(schema, binding)
}

pub fn ground_all(domain: &DomainDef, problem: &ProblemDef) -> Vec<GroundAction> {
    Grounder::new(domain, problem).ground_all()
}
