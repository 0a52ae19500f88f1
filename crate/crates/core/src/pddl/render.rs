//! Canonical printers. Output re-parses to a structurally equal value.

use std::fmt::Write;

use super::ast::*;

fn typed_vars(vars: &[TypedVar]) -> String {
    vars.iter().map(|v| format!("?{} - {}", v.name, v.ty)).collect::<Vec<_>>().join(" ")
}

fn conjunction<T: std::fmt::Display>(items: &[T]) -> String {
    let mut out = String::from("(and");
    for item in items {
        write!(out, " {item}").unwrap();
    }
    out.push(')');
    out
}

fn condition(cond: &Condition) -> String {
    let mut parts: Vec<String> = cond.literals.iter().map(ToString::to_string).collect();
    for q in &cond.foralls {
        parts.push(format!("(forall ({}) {})", typed_vars(&q.vars), conjunction(&q.body)));
    }
    conjunction(&parts)
}

fn effect(eff: &Effect) -> String {
    let parts: Vec<String> = eff
        .entries
        .iter()
        .map(|e| match e {
            EffectEntry::Add(a) => a.to_string(),
            EffectEntry::Delete(a) => format!("(not {a})"),
            EffectEntry::Conditional(c) => {
                let when = format!("(when {} {})", condition(&c.when), conjunction(&c.then));
                if c.vars.is_empty() {
                    when
                } else {
                    format!("(forall ({}) {})", typed_vars(&c.vars), when)
                }
            }
        })
        .collect();
    if parts.is_empty() {
        return "(and)".into();
    }
    let mut out = String::from("(and");
    for p in parts {
        write!(out, "\n      {p}").unwrap();
    }
    out.push(')');
    out
}

pub fn render_domain(domain: &DomainDef) -> String {
    let mut out = String::new();
    writeln!(out, "(define (domain {})", domain.name).unwrap();
    if !domain.requirements.is_empty() {
        let reqs: Vec<&str> = domain.requirements.iter().map(|r| r.keyword()).collect();
        writeln!(out, "  (:requirements {})", reqs.join(" ")).unwrap();
    }
    if !domain.types.is_empty() {
        let types: Vec<String> = domain.types.iter().map(|t| format!("{} - {}", t.name, t.parent)).collect();
        writeln!(out, "  (:types {})", types.join(" ")).unwrap();
    }
    out.push_str("  (:predicates");
    for p in &domain.predicates {
        if p.params.is_empty() {
            write!(out, "\n    ({})", p.name).unwrap();
        } else {
            write!(out, "\n    ({} {})", p.name, typed_vars(&p.params)).unwrap();
        }
    }
    out.push_str(")\n");
    for a in &domain.actions {
        writeln!(out, "  (:action {}", a.name).unwrap();
        writeln!(out, "    :parameters ({})", typed_vars(&a.params)).unwrap();
        writeln!(out, "    :precondition {}", condition(&a.precondition)).unwrap();
        writeln!(out, "    :effect {})", effect(&a.effect)).unwrap();
    }
    out.push_str(")\n");
    out
}

/// Groups consecutive same-typed names: `a b - t c - u`.
pub(crate) fn object_list(objects: &[ObjectDecl]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < objects.len() {
        let ty = &objects[i].ty;
        let mut names = Vec::new();
        while i < objects.len() && &objects[i].ty == ty {
            names.push(objects[i].name.as_str());
            i += 1;
        }
        parts.push(format!("{} - {}", names.join(" "), ty));
    }
    parts.join(" ")
}

pub fn render_problem(problem: &ProblemDef) -> String {
    let mut out = String::new();
    writeln!(out, "(define (problem {})", problem.name).unwrap();
    writeln!(out, "  (:domain {})", problem.domain).unwrap();
    writeln!(out, "  (:objects {})", object_list(&problem.objects)).unwrap();
    if problem.init.is_empty() {
        out.push_str("  (:init )\n");
    } else {
        out.push_str("  (:init");
        for atom in &problem.init {
            write!(out, "\n    {atom}").unwrap();
        }
        out.push_str(")\n");
    }
    out.push_str("  (:goal (and");
    for lit in &problem.goal {
        write!(out, "\n    {lit}").unwrap();
    }
    out.push_str(")))\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse::{parse_domain, parse_problem};
    use super::*;

    const COND: &str = "(define (domain c)
      (:requirements :strips :typing :conditional-effects :equality)
      (:types joint angle - object)
      (:predicates (at ?a - angle ?j - joint) (below ?j1 ?j2 - joint) (next ?a ?b - angle))
      (:action turn
        :parameters (?j - joint ?a ?b - angle)
        :precondition (and (at ?a ?j) (next ?a ?b) (not (= ?a ?b)))
        :effect (and (not (at ?a ?j)) (at ?b ?j)
          (forall (?k - joint ?c ?d - angle)
            (when (and (below ?j ?k) (at ?c ?k) (next ?c ?d)) (and (not (at ?c ?k)) (at ?d ?k)))))))";

    #[test]
    fn conditional_effect_domain_round_trips() {
        let d = parse_domain(COND).unwrap();
        let text = render_domain(&d);
        assert!(text.contains("(forall (?k - joint ?c - angle ?d - angle) (when"));
        let again = parse_domain(&text).unwrap();
        assert_eq!(d, again);
        assert_eq!(text, render_domain(&again));
    }

    #[test]
    fn empty_init_renders_legally() {
        let d = parse_domain(COND).unwrap();
        let p = parse_problem("(define (problem e) (:domain c) (:objects j - joint) (:init) (:goal (and)))", &d)
            .unwrap();
        let text = render_problem(&p);
        assert!(text.contains("(:init )"));
        assert_eq!(parse_problem(&text, &d).unwrap(), p);
    }
}
