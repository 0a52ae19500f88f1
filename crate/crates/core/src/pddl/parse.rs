//! Domain and problem parsing for the supported PDDL subset.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::ast::*;
use super::error::{ParseError, ParseErrorKind as K, Pos};
use super::sexpr::{self, Sexpr};

type Result<T> = std::result::Result<T, ParseError>;

fn err<T>(kind: K, pos: Pos) -> Result<T> {
    Err(ParseError::new(kind, pos))
}

fn syntax<T>(msg: impl Into<String>, pos: Pos) -> Result<T> {
    err(K::Syntax(msg.into()), pos)
}

const UNSUPPORTED_SECTIONS: &[&str] = &[
    ":constants",
    ":functions",
    ":derived",
    ":durative-action",
    ":constraints",
    ":metric",
    ":timed-initial-literals",
];

pub fn parse_domain(text: &str) -> Result<DomainDef> {
    let top = sexpr::read_one(text)?;
    let items = define_body(&top, "domain")?;
    let name = symbol_at(&items[1].as_list().unwrap()[1])?;

    let mut domain = DomainDef {
        name,
        requirements: Vec::new(),
        types: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };

    for section in &items[2..] {
        let head = section_head(section)?;
        let body = &section.as_list().unwrap()[1..];
        match head {
            ":requirements" => domain.requirements = parse_requirements(body)?,
            ":types" => {
                require(&domain, Requirement::Typing, ":types", section.pos())?;
                domain.types = parse_types(body)?;
            }
            ":predicates" => domain.predicates = parse_predicates(&domain, body)?,
            ":action" => {
                let action = parse_action(&domain, section)?;
                if domain.action(action.name.as_str()).is_some() {
                    return err(K::Duplicate(action.name.to_string()), section.pos());
                }
                domain.actions.push(action);
            }
            other if UNSUPPORTED_SECTIONS.contains(&other) => {
                return err(K::UnsupportedFeature(other.into()), section.pos());
            }
            other => return syntax(format!("unknown domain section `{other}`"), section.pos()),
        }
    }
    Ok(domain)
}

pub fn parse_problem(text: &str, domain: &DomainDef) -> Result<ProblemDef> {
    let top = sexpr::read_one(text)?;
    let items = define_body(&top, "problem")?;
    let name = symbol_at(&items[1].as_list().unwrap()[1])?;

    let mut domain_name = None;
    let mut objects = Vec::new();
    let mut init = None;
    let mut goal = None;

    for section in &items[2..] {
        let head = section_head(section)?;
        let body = &section.as_list().unwrap()[1..];
        match head {
            ":domain" => {
                let [d] = body else {
                    return syntax("`:domain` takes exactly one name", section.pos());
                };
                let found = symbol_at(d)?;
                if found != domain.name {
                    return err(
                        K::DomainMismatch { expected: domain.name.to_string(), found: found.to_string() },
                        d.pos(),
                    );
                }
                domain_name = Some(found);
            }
            ":requirements" => {
                parse_requirements(body)?;
            }
            ":objects" => {
                let mut seen = HashSet::new();
                for (name, ty, pos) in typed_list(body, false)? {
                    if !domain.has_type(ty.as_str()) {
                        return err(K::UndeclaredType(ty.to_string()), pos);
                    }
                    if !seen.insert(name.clone()) {
                        return err(K::Duplicate(name.to_string()), pos);
                    }
                    objects.push(ObjectDecl { name, ty });
                }
            }
            ":init" => init = Some(body),
            ":goal" => {
                let [g] = body else {
                    return syntax("`:goal` takes exactly one condition", section.pos());
                };
                goal = Some(g);
            }
            other if UNSUPPORTED_SECTIONS.contains(&other) => {
                return err(K::UnsupportedFeature(other.into()), section.pos());
            }
            other => return syntax(format!("unknown problem section `{other}`"), section.pos()),
        }
    }

    let Some(domain_name) = domain_name else {
        return syntax("problem is missing `:domain`", top.pos());
    };
    let object_types: HashMap<&Symbol, &Symbol> = objects.iter().map(|o| (&o.name, &o.ty)).collect();

    let mut init_atoms = BTreeSet::new();
    for expr in init.unwrap_or(&[]) {
        if expr.head() == Some("not") {
            return syntax("negative literals are not allowed in `:init`", expr.pos());
        }
        init_atoms.insert(ground_atom(domain, &object_types, expr)?);
    }

    let goal = match goal {
        Some(g) => ground_condition(domain, &object_types, g)?,
        None => Vec::new(),
    };

    Ok(ProblemDef { name, domain: domain_name, objects, init: init_atoms, goal })
}

/// Parses ground literals under `object_types`; used for goals and prompt fragments.
pub(crate) fn ground_condition(
    domain: &DomainDef,
    object_types: &HashMap<&Symbol, &Symbol>,
    expr: &Sexpr,
) -> Result<Vec<GroundLiteral>> {
    let mut out = Vec::new();
    collect_ground_literals(domain, object_types, expr, &mut out)?;
    Ok(out)
}

fn collect_ground_literals(
    domain: &DomainDef,
    object_types: &HashMap<&Symbol, &Symbol>,
    expr: &Sexpr,
    out: &mut Vec<GroundLiteral>,
) -> Result<()> {
    let Some(items) = expr.as_list() else {
        return syntax("expected a condition", expr.pos());
    };
    match expr.head() {
        None if items.is_empty() => Ok(()),
        Some("and") => {
            for item in &items[1..] {
                collect_ground_literals(domain, object_types, item, out)?;
            }
            Ok(())
        }
        Some("not") => {
            let [inner] = &items[1..] else {
                return syntax("`not` takes exactly one atom", expr.pos());
            };
            if matches!(inner.head(), Some("and" | "or" | "not" | "forall" | "exists")) {
                return err(K::UnsupportedFeature("negation of a compound formula".into()), inner.pos());
            }
            out.push(GroundLiteral::neg(ground_atom(domain, object_types, inner)?));
            Ok(())
        }
        Some(kw @ ("or" | "imply" | "exists" | "forall" | "when")) => {
            err(K::UnsupportedFeature(format!("`{kw}` in a ground condition")), expr.pos())
        }
        _ => {
            out.push(GroundLiteral::pos(ground_atom(domain, object_types, expr)?));
            Ok(())
        }
    }
}

pub(crate) fn ground_atom(
    domain: &DomainDef,
    object_types: &HashMap<&Symbol, &Symbol>,
    expr: &Sexpr,
) -> Result<GroundAtom> {
    let Some(items) = expr.as_list().filter(|i| !i.is_empty()) else {
        return syntax("expected an atom", expr.pos());
    };
    let pred_text = items[0].as_atom().unwrap_or("");
    if pred_text == "=" {
        return err(K::UnsupportedFeature("equality in a ground condition".into()), expr.pos());
    }
    let predicate = symbol_at(&items[0])?;
    let Some(decl) = domain.predicate(predicate.as_str()) else {
        return err(K::UnknownPredicate(predicate.to_string()), items[0].pos());
    };
    let args_exprs = &items[1..];
    if args_exprs.len() != decl.params.len() {
        return err(
            K::ArityMismatch {
                predicate: predicate.to_string(),
                expected: decl.params.len(),
                found: args_exprs.len(),
            },
            expr.pos(),
        );
    }
    let mut args = Vec::with_capacity(args_exprs.len());
    for (arg, param) in args_exprs.iter().zip(&decl.params) {
        let Some(text) = arg.as_atom() else {
            return syntax("nested expression in atom argument", arg.pos());
        };
        if text.starts_with('?') {
            return err(K::NonGround(expr_text(expr)), expr.pos());
        }
        let obj = symbol_at(arg)?;
        let Some(ty) = object_types.get(&obj) else {
            return err(K::UnknownObject(obj.to_string()), arg.pos());
        };
        if !domain.is_subtype(ty.as_str(), param.ty.as_str()) {
            return err(
                K::TypeMismatch { term: obj.to_string(), expected: param.ty.to_string(), found: ty.to_string() },
                arg.pos(),
            );
        }
        args.push(obj);
    }
    Ok(GroundAtom { predicate, args })
}

fn expr_text(expr: &Sexpr) -> String {
    match expr {
        Sexpr::Atom { text, .. } => text.clone(),
        Sexpr::List { items, .. } => {
            let inner: Vec<String> = items.iter().map(expr_text).collect();
            format!("({})", inner.join(" "))
        }
    }
}

/// Checks the `(define (<kind> name) ...)` envelope and returns its items.
fn define_body<'a>(top: &'a Sexpr, kind: &str) -> Result<&'a [Sexpr]> {
    let items = match top.as_list() {
        Some(items) if top.head() == Some("define") && items.len() >= 2 => items,
        _ => return syntax("expected `(define ...)`", top.pos()),
    };
    match items[1].as_list() {
        Some([head, _name]) if head.as_atom() == Some(kind) => Ok(items),
        _ => syntax(format!("expected `({kind} <name>)`"), items[1].pos()),
    }
}

fn section_head(section: &Sexpr) -> Result<&str> {
    match section.head() {
        Some(h) if h.starts_with(':') => Ok(h),
        _ => syntax("expected a `(:section ...)` block", section.pos()),
    }
}

fn symbol_at(expr: &Sexpr) -> Result<Symbol> {
    let Some(text) = expr.as_atom() else {
        return syntax("expected a name", expr.pos());
    };
    Symbol::new(text).ok_or_else(|| ParseError::new(K::InvalidSymbol(text.into()), expr.pos()))
}

fn variable_at(expr: &Sexpr) -> Result<Symbol> {
    match expr.as_atom() {
        Some(text) if text.starts_with('?') => Symbol::new(&text[1..])
            .ok_or_else(|| ParseError::new(K::InvalidSymbol(text.into()), expr.pos())),
        _ => syntax("expected a `?variable`", expr.pos()),
    }
}

fn require(domain: &DomainDef, req: Requirement, feature: &str, pos: Pos) -> Result<()> {
    if domain.requirements.contains(&req) {
        Ok(())
    } else {
        err(K::MissingRequirement { feature: feature.into(), requirement: req.keyword().into() }, pos)
    }
}

fn parse_requirements(body: &[Sexpr]) -> Result<Vec<Requirement>> {
    let mut out = Vec::new();
    for item in body {
        let Some(kw) = item.as_atom() else {
            return syntax("expected a requirement keyword", item.pos());
        };
        match Requirement::from_keyword(kw) {
            Some(r) if !out.contains(&r) => out.push(r),
            Some(_) => {}
            None => return err(K::UnsupportedFeature(kw.into()), item.pos()),
        }
    }
    Ok(out)
}

/// `a b - t c` style list. Returns (name, type, position) triples.
fn typed_list(body: &[Sexpr], variables: bool) -> Result<Vec<(Symbol, Symbol, Pos)>> {
    let mut out = Vec::new();
    let mut pending: Vec<(Symbol, Pos)> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let item = &body[i];
        if item.as_atom() == Some("-") {
            let Some(ty_expr) = body.get(i + 1) else {
                return syntax("`-` must be followed by a type", item.pos());
            };
            if ty_expr.head() == Some("either") {
                return err(K::UnsupportedFeature("either".into()), ty_expr.pos());
            }
            let ty = symbol_at(ty_expr)?;
            if pending.is_empty() {
                return syntax("type annotation without names", item.pos());
            }
            out.extend(pending.drain(..).map(|(n, p)| (n, ty.clone(), p)));
            i += 2;
            continue;
        }
        let name = if variables { variable_at(item)? } else { symbol_at(item)? };
        pending.push((name, item.pos()));
        i += 1;
    }
    let object = Symbol::from_static(OBJECT_TYPE);
    out.extend(pending.into_iter().map(|(n, p)| (n, object.clone(), p)));
    Ok(out)
}

fn parse_types(body: &[Sexpr]) -> Result<Vec<TypeDecl>> {
    let entries = typed_list(body, false)?;
    let mut out: Vec<TypeDecl> = Vec::new();
    for (name, parent, pos) in &entries {
        if name.as_str() == OBJECT_TYPE {
            continue;
        }
        if out.iter().any(|t| &t.name == name) {
            return err(K::Duplicate(name.to_string()), *pos);
        }
        out.push(TypeDecl { name: name.clone(), parent: parent.clone() });
    }
    for (_, parent, pos) in &entries {
        if parent.as_str() != OBJECT_TYPE && !out.iter().any(|t| &t.name == parent) {
            return err(K::UndeclaredType(parent.to_string()), *pos);
        }
    }
    Ok(out)
}

fn typed_vars(domain: &DomainDef, body: &[Sexpr]) -> Result<Vec<TypedVar>> {
    let mut out: Vec<TypedVar> = Vec::new();
    for (name, ty, pos) in typed_list(body, true)? {
        if !domain.has_type(ty.as_str()) {
            return err(K::UndeclaredType(ty.to_string()), pos);
        }
        if out.iter().any(|v| v.name == name) {
            return err(K::Duplicate(format!("?{name}")), pos);
        }
        out.push(TypedVar { name, ty });
    }
    Ok(out)
}

fn parse_predicates(domain: &DomainDef, body: &[Sexpr]) -> Result<Vec<PredicateDecl>> {
    let mut out: Vec<PredicateDecl> = Vec::new();
    for item in body {
        let Some(items) = item.as_list().filter(|i| !i.is_empty()) else {
            return syntax("expected a predicate declaration", item.pos());
        };
        let name = symbol_at(&items[0])?;
        if out.iter().any(|p| p.name == name) {
            return err(K::Duplicate(name.to_string()), item.pos());
        }
        let params = typed_vars(domain, &items[1..])?;
        out.push(PredicateDecl { name, params });
    }
    Ok(out)
}

/// Variables visible while parsing a schema body, innermost scope last.
struct Scope<'a> {
    frames: Vec<&'a [TypedVar]>,
}

impl<'a> Scope<'a> {
    fn lookup(&self, name: &Symbol) -> Option<&'a TypedVar> {
        self.frames.iter().rev().find_map(|f| f.iter().find(|v| &v.name == name))
    }
}

fn parse_action(domain: &DomainDef, section: &Sexpr) -> Result<ActionSchema> {
    let items = section.as_list().unwrap();
    let Some(name_expr) = items.get(1) else {
        return syntax("`:action` needs a name", section.pos());
    };
    let name = symbol_at(name_expr)?;
    let mut params = Vec::new();
    let mut pre_expr = None;
    let mut eff_expr = None;

    let mut rest = items[2..].iter();
    while let Some(key) = rest.next() {
        let Some(value) = rest.next() else {
            return syntax("action keyword without a value", key.pos());
        };
        match key.as_atom() {
            Some(":parameters") => {
                let Some(list) = value.as_list() else {
                    return syntax("`:parameters` expects a list", value.pos());
                };
                params = typed_vars(domain, list)?;
            }
            Some(":precondition") => pre_expr = Some(value),
            Some(":effect") => eff_expr = Some(value),
            Some(other) => return syntax(format!("unknown action keyword `{other}`"), key.pos()),
            None => return syntax("expected an action keyword", key.pos()),
        }
    }

    let scope = Scope { frames: vec![&params] };
    let precondition = match pre_expr {
        Some(e) => parse_condition(domain, &scope, e, true)?,
        None => Condition::default(),
    };
    let effect = match eff_expr {
        Some(e) => parse_effect(domain, &scope, e)?,
        None => Effect::default(),
    };
    Ok(ActionSchema { name, params, precondition, effect })
}

fn parse_condition(domain: &DomainDef, scope: &Scope, expr: &Sexpr, allow_forall: bool) -> Result<Condition> {
    let mut cond = Condition::default();
    collect_condition(domain, scope, expr, allow_forall, &mut cond)?;
    Ok(cond)
}

fn collect_condition(
    domain: &DomainDef,
    scope: &Scope,
    expr: &Sexpr,
    allow_forall: bool,
    out: &mut Condition,
) -> Result<()> {
    let Some(items) = expr.as_list() else {
        return syntax("expected a condition", expr.pos());
    };
    match expr.head() {
        None if items.is_empty() => Ok(()),
        Some("and") => {
            for item in &items[1..] {
                collect_condition(domain, scope, item, allow_forall, out)?;
            }
            Ok(())
        }
        Some("forall") if allow_forall => {
            require(domain, Requirement::UniversalPreconditions, "forall", expr.pos())?;
            let [vars_expr, body] = &items[1..] else {
                return syntax("`forall` takes a variable list and a body", expr.pos());
            };
            let vars = typed_vars(domain, vars_expr.as_list().unwrap_or(&[]))?;
            let inner = Scope { frames: scope.frames.iter().copied().chain([vars.as_slice()]).collect() };
            let body_cond = parse_condition(domain, &inner, body, false)?;
            out.foralls.push(QuantifiedCondition { vars: vars.clone(), body: body_cond.literals });
            Ok(())
        }
        Some(kw @ ("or" | "imply" | "exists" | "forall" | "when")) => {
            err(K::UnsupportedFeature(format!("`{kw}` in a condition")), expr.pos())
        }
        Some("not") => {
            let [inner] = &items[1..] else {
                return syntax("`not` takes exactly one atom", expr.pos());
            };
            if matches!(inner.head(), Some("and" | "or" | "not" | "forall" | "exists" | "imply")) {
                return err(K::UnsupportedFeature("negation of a compound formula".into()), inner.pos());
            }
            out.literals.push(Literal { positive: false, atom: lifted_atom(domain, scope, inner)? });
            Ok(())
        }
        _ => {
            out.literals.push(Literal { positive: true, atom: lifted_atom(domain, scope, expr)? });
            Ok(())
        }
    }
}

fn lifted_atom(domain: &DomainDef, scope: &Scope, expr: &Sexpr) -> Result<Atom> {
    let Some(items) = expr.as_list().filter(|i| !i.is_empty()) else {
        return syntax("expected an atom", expr.pos());
    };
    let args_exprs = &items[1..];
    if items[0].as_atom() == Some("=") {
        require(domain, Requirement::Equality, "=", expr.pos())?;
        if args_exprs.len() != 2 {
            return err(K::ArityMismatch { predicate: "=".into(), expected: 2, found: args_exprs.len() }, expr.pos());
        }
        let args = args_exprs.iter().map(|a| lifted_term(scope, a).map(|(t, _)| t)).collect::<Result<_>>()?;
        return Ok(Atom { predicate: Symbol::equality(), args });
    }
    let predicate = symbol_at(&items[0])?;
    let Some(decl) = domain.predicate(predicate.as_str()) else {
        return err(K::UnknownPredicate(predicate.to_string()), items[0].pos());
    };
    if args_exprs.len() != decl.params.len() {
        return err(
            K::ArityMismatch { predicate: predicate.to_string(), expected: decl.params.len(), found: args_exprs.len() },
            expr.pos(),
        );
    }
    let mut args = Vec::with_capacity(args_exprs.len());
    for (arg, param) in args_exprs.iter().zip(&decl.params) {
        let (term, ty) = lifted_term(scope, arg)?;
        if !domain.is_subtype(ty.as_str(), param.ty.as_str()) {
            return err(
                K::TypeMismatch { term: term.to_string(), expected: param.ty.to_string(), found: ty.to_string() },
                arg.pos(),
            );
        }
        args.push(term);
    }
    Ok(Atom { predicate, args })
}

fn lifted_term(scope: &Scope, expr: &Sexpr) -> Result<(Term, Symbol)> {
    match expr.as_atom() {
        Some(text) if text.starts_with('?') => {
            let name = variable_at(expr)?;
            match scope.lookup(&name) {
                Some(v) => Ok((Term::Var(name), v.ty.clone())),
                None => err(K::UnboundVariable(text.into()), expr.pos()),
            }
        }
        Some(_) => {
            // Domain constants are outside the supported subset.
            let name = symbol_at(expr)?;
            err(K::UnknownObject(name.to_string()), expr.pos())
        }
        None => syntax("nested expression in atom argument", expr.pos()),
    }
}

fn parse_effect(domain: &DomainDef, scope: &Scope, expr: &Sexpr) -> Result<Effect> {
    let mut effect = Effect::default();
    collect_effect(domain, scope, expr, &mut effect.entries)?;
    Ok(effect)
}

fn collect_effect(domain: &DomainDef, scope: &Scope, expr: &Sexpr, out: &mut Vec<EffectEntry>) -> Result<()> {
    let Some(items) = expr.as_list() else {
        return syntax("expected an effect", expr.pos());
    };
    match expr.head() {
        None if items.is_empty() => Ok(()),
        Some("and") => {
            for item in &items[1..] {
                collect_effect(domain, scope, item, out)?;
            }
            Ok(())
        }
        Some("forall") => {
            require(domain, Requirement::ConditionalEffects, "forall", expr.pos())?;
            let [vars_expr, body] = &items[1..] else {
                return syntax("`forall` takes a variable list and a body", expr.pos());
            };
            let Some(var_list) = vars_expr.as_list() else {
                return syntax("`forall` expects a variable list", vars_expr.pos());
            };
            let vars = typed_vars(domain, var_list)?;
            for v in &vars {
                if scope.lookup(&v.name).is_some() {
                    return err(K::Duplicate(format!("?{}", v.name)), vars_expr.pos());
                }
            }
            let inner = Scope { frames: scope.frames.iter().copied().chain([vars.as_slice()]).collect() };
            // Body: a `when`, a conjunction of `when`s, or plain literals.
            let parts: Vec<&Sexpr> = if body.head() == Some("and") {
                body.as_list().unwrap()[1..].iter().collect()
            } else {
                vec![body]
            };
            let mut plain = Vec::new();
            for part in parts {
                if part.head() == Some("when") {
                    out.push(EffectEntry::Conditional(parse_when(domain, &inner, part, vars.clone())?));
                } else {
                    plain.extend(effect_literals(domain, &inner, part)?);
                }
            }
            if !plain.is_empty() {
                out.push(EffectEntry::Conditional(ConditionalEffect {
                    vars,
                    when: Condition::default(),
                    then: plain,
                }));
            }
            Ok(())
        }
        Some("when") => {
            require(domain, Requirement::ConditionalEffects, "when", expr.pos())?;
            out.push(EffectEntry::Conditional(parse_when(domain, scope, expr, Vec::new())?));
            Ok(())
        }
        _ => {
            for lit in effect_literals(domain, scope, expr)? {
                out.push(if lit.positive { EffectEntry::Add(lit.atom) } else { EffectEntry::Delete(lit.atom) });
            }
            Ok(())
        }
    }
}

fn parse_when(domain: &DomainDef, scope: &Scope, expr: &Sexpr, vars: Vec<TypedVar>) -> Result<ConditionalEffect> {
    let items = expr.as_list().unwrap();
    let [cond, eff] = &items[1..] else {
        return syntax("`when` takes a condition and an effect", expr.pos());
    };
    let when = parse_condition(domain, scope, cond, false)?;
    let then = effect_literals(domain, scope, eff)?;
    Ok(ConditionalEffect { vars, when, then })
}

/// Literal-only effect body (inside a conditional branch).
fn effect_literals(domain: &DomainDef, scope: &Scope, expr: &Sexpr) -> Result<Vec<Literal>> {
    let Some(items) = expr.as_list() else {
        return syntax("expected an effect literal", expr.pos());
    };
    match expr.head() {
        None if items.is_empty() => Ok(Vec::new()),
        Some("and") => {
            let mut out = Vec::new();
            for item in &items[1..] {
                out.extend(effect_literals(domain, scope, item)?);
            }
            Ok(out)
        }
        Some("forall" | "when") => err(K::UnsupportedFeature("nested conditional effect".into()), expr.pos()),
        Some("not") => {
            let [inner] = &items[1..] else {
                return syntax("`not` takes exactly one atom", expr.pos());
            };
            let atom = lifted_atom(domain, scope, inner)?;
            if atom.is_equality() {
                return syntax("equality cannot appear in an effect", inner.pos());
            }
            Ok(vec![Literal { positive: false, atom }])
        }
        Some(kw @ ("or" | "exists" | "imply" | "increase" | "decrease" | "assign")) => {
            err(K::UnsupportedFeature(format!("`{kw}` in an effect")), expr.pos())
        }
        _ => {
            let atom = lifted_atom(domain, scope, expr)?;
            if atom.is_equality() {
                return syntax("equality cannot appear in an effect", expr.pos());
            }
            Ok(vec![Literal { positive: true, atom }])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = "(define (domain mini) (:requirements :strips) (:action noop))";

    #[test]
    fn minimal_domain_with_zero_ary_action() {
        let d = parse_domain(MINI).unwrap();
        assert_eq!(d.actions.len(), 1);
        assert!(d.actions[0].params.is_empty());
        assert!(d.predicates.is_empty());
    }

    #[test]
    fn durative_requirement_is_unsupported() {
        let e = parse_domain("(define (domain d) (:requirements :strips :durative-actions))").unwrap_err();
        assert_eq!(e.kind, K::UnsupportedFeature(":durative-actions".into()));
        assert_eq!(e.pos, Pos { line: 1, col: 43 });
    }

    #[test]
    fn durative_action_section_is_unsupported() {
        let e = parse_domain("(define (domain d)\n (:durative-action a))").unwrap_err();
        assert_eq!(e.kind, K::UnsupportedFeature(":durative-action".into()));
        assert_eq!(e.pos.line, 2);
    }

    #[test]
    fn case_is_normalized() {
        let d = parse_domain("(DEFINE (DOMAIN Mini) (:REQUIREMENTS :STRIPS) (:predicates (P)) (:ACTION Go :effect (P)))")
            .unwrap();
        assert_eq!(d.name.as_str(), "mini");
        assert_eq!(d.actions[0].name.as_str(), "go");
    }

    #[test]
    fn undeclared_type_is_rejected() {
        let e = parse_domain("(define (domain d) (:requirements :typing) (:predicates (p ?x - thing)))").unwrap_err();
        assert_eq!(e.kind, K::UndeclaredType("thing".into()));
    }

    #[test]
    fn duplicate_predicate_and_param() {
        let e = parse_domain("(define (domain d) (:predicates (p) (p)))").unwrap_err();
        assert_eq!(e.kind, K::Duplicate("p".into()));
        let e = parse_domain("(define (domain d) (:predicates (p ?a ?b)) (:action a :parameters (?x ?x)))")
            .unwrap_err();
        assert_eq!(e.kind, K::Duplicate("?x".into()));
    }

    #[test]
    fn conditional_effect_requires_requirement() {
        let e = parse_domain(
            "(define (domain d) (:predicates (p ?a) (q ?a)) (:action a :effect (forall (?x) (when (p ?x) (q ?x)))))",
        )
        .unwrap_err();
        assert!(matches!(e.kind, K::MissingRequirement { .. }));
    }

    #[test]
    fn nested_conditional_is_unsupported() {
        let e = parse_domain(
            "(define (domain d) (:requirements :conditional-effects) (:predicates (p ?a) (q ?a))
             (:action a :effect (forall (?x) (when (p ?x) (when (q ?x) (p ?x))))))",
        )
        .unwrap_err();
        assert_eq!(e.kind, K::UnsupportedFeature("nested conditional effect".into()));
    }

    #[test]
    fn unbound_variable() {
        let e = parse_domain("(define (domain d) (:predicates (p ?a)) (:action a :precondition (p ?y)))").unwrap_err();
        assert_eq!(e.kind, K::UnboundVariable("?y".into()));
    }

    #[test]
    fn disjunction_is_unsupported() {
        let e = parse_domain("(define (domain d) (:predicates (p) (q)) (:action a :precondition (or (p) (q))))")
            .unwrap_err();
        assert!(matches!(e.kind, K::UnsupportedFeature(_)));
    }

    fn typed_domain() -> DomainDef {
        parse_domain(
            "(define (domain t) (:requirements :typing)
               (:types joint angle - object)
               (:predicates (angle_joint ?a - angle ?j - joint) (free ?j - joint)))",
        )
        .unwrap()
    }

    #[test]
    fn problem_arity_mismatch() {
        let d = typed_domain();
        let e = parse_problem(
            "(define (problem p) (:domain t) (:objects joint1 - joint angle0 - angle)
               (:init (angle_joint joint1)) (:goal (and)))",
            &d,
        )
        .unwrap_err();
        assert_eq!(e.kind, K::ArityMismatch { predicate: "angle_joint".into(), expected: 2, found: 1 });
        assert_eq!(e.pos.line, 2);
    }

    #[test]
    fn problem_unknown_predicate_and_non_ground() {
        let d = typed_domain();
        let e = parse_problem("(define (problem p) (:domain t) (:objects j - joint) (:init (held j)))", &d).unwrap_err();
        assert_eq!(e.kind, K::UnknownPredicate("held".into()));
        let e = parse_problem("(define (problem p) (:domain t) (:objects j - joint) (:init (free ?x)))", &d)
            .unwrap_err();
        assert!(matches!(e.kind, K::NonGround(_)));
    }

    #[test]
    fn problem_type_checked() {
        let d = typed_domain();
        let e = parse_problem(
            "(define (problem p) (:domain t) (:objects j - joint a - angle) (:init (angle_joint j a)))",
            &d,
        )
        .unwrap_err();
        assert!(matches!(e.kind, K::TypeMismatch { .. }));
    }

    #[test]
    fn empty_goal_is_trivial() {
        let d = typed_domain();
        let p = parse_problem("(define (problem p) (:domain t) (:objects j - joint) (:init (free j)) (:goal (and)))", &d)
            .unwrap();
        assert!(p.goal.is_empty());
        assert_eq!(p.init.len(), 1);
    }

    #[test]
    fn wrong_domain_name() {
        let d = typed_domain();
        let e = parse_problem("(define (problem p) (:domain other))", &d).unwrap_err();
        assert!(matches!(e.kind, K::DomainMismatch { .. }));
    }
}
