//! Canonical abstract syntax for the supported PDDL subset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Lowercase identifier, `[a-z][a-z0-9_-]*`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(text: &str) -> Option<Symbol> {
        let lower = text.to_ascii_lowercase();
        Symbol::is_valid(&lower).then(|| Symbol(Arc::from(lower)))
    }

    /// Panicking constructor for names known to be valid at compile time.
    pub fn from_static(text: &'static str) -> Symbol {
        Symbol::new(text).unwrap_or_else(|| panic!("invalid symbol literal `{text}`"))
    }

    pub(crate) fn equality() -> Symbol {
        Symbol(Arc::from("="))
    }

    pub fn is_valid(text: &str) -> bool {
        let mut chars = text.chars();
        matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
            && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Symbol::new(&text).ok_or_else(|| serde::de::Error::custom(format!("invalid symbol `{text}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(Symbol),
    Obj(Symbol),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Obj(o) => write!(f, "{o}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypedVar {
    pub name: Symbol,
    pub ty: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn is_equality(&self) -> bool {
        self.predicate.as_str() == "="
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v),
            Term::Obj(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub positive: bool,
    pub atom: Atom,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "(not {})", self.atom)
        }
    }
}

/// `forall` inside a precondition: the body must hold for every binding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantifiedCondition {
    pub vars: Vec<TypedVar>,
    pub body: Vec<Literal>,
}

/// Conjunction of literals, optionally with universally quantified conjuncts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Condition {
    pub literals: Vec<Literal>,
    pub foralls: Vec<QuantifiedCondition>,
}

impl Condition {
    pub fn is_empty(&self) -> bool {
        self.literals.is_empty() && self.foralls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConditionalEffect {
    pub vars: Vec<TypedVar>,
    pub when: Condition,
    /// `positive` literals are adds, negative ones deletes.
    pub then: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EffectEntry {
    Add(Atom),
    Delete(Atom),
    Conditional(ConditionalEffect),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Effect {
    pub entries: Vec<EffectEntry>,
}

impl Effect {
    /// Every atom the effect may add or delete, conditional branches included.
    pub fn touched_atoms(&self) -> impl Iterator<Item = &Atom> {
        self.entries.iter().flat_map(|e| -> Box<dyn Iterator<Item = &Atom>> {
            match e {
                EffectEntry::Add(a) | EffectEntry::Delete(a) => Box::new(std::iter::once(a)),
                EffectEntry::Conditional(c) => Box::new(c.then.iter().map(|l| &l.atom)),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionSchema {
    pub name: Symbol,
    pub params: Vec<TypedVar>,
    pub precondition: Condition,
    pub effect: Effect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Requirement {
    Strips,
    Typing,
    Equality,
    ConditionalEffects,
    UniversalPreconditions,
}

impl Requirement {
    pub fn keyword(self) -> &'static str {
        match self {
            Requirement::Strips => ":strips",
            Requirement::Typing => ":typing",
            Requirement::Equality => ":equality",
            Requirement::ConditionalEffects => ":conditional-effects",
            Requirement::UniversalPreconditions => ":universal-preconditions",
        }
    }

    pub fn from_keyword(kw: &str) -> Option<Requirement> {
        Some(match kw {
            ":strips" => Requirement::Strips,
            ":typing" => Requirement::Typing,
            ":equality" => Requirement::Equality,
            ":conditional-effects" => Requirement::ConditionalEffects,
            ":universal-preconditions" => Requirement::UniversalPreconditions,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeDecl {
    pub name: Symbol,
    pub parent: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PredicateDecl {
    pub name: Symbol,
    pub params: Vec<TypedVar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DomainDef {
    pub name: Symbol,
    pub requirements: Vec<Requirement>,
    pub types: Vec<TypeDecl>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

pub const OBJECT_TYPE: &str = "object";

impl DomainDef {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name.as_str() == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name.as_str() == name)
    }

    pub fn has_type(&self, ty: &str) -> bool {
        ty == OBJECT_TYPE || self.types.iter().any(|t| t.name.as_str() == ty)
    }

    /// True if `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        if ancestor == OBJECT_TYPE || ty == ancestor {
            return true;
        }
        let mut current = ty;
        // Bounded walk guards against cyclic declarations.
        for _ in 0..=self.types.len() {
            match self.types.iter().find(|t| t.name.as_str() == current) {
                Some(decl) if decl.parent.as_str() == ancestor => return true,
                Some(decl) => current = decl.parent.as_str(),
                None => return false,
            }
        }
        false
    }

    /// Predicates that no action can add or delete.
    pub fn static_predicates(&self) -> BTreeSet<Symbol> {
        let touched: BTreeSet<&Symbol> = self
            .actions
            .iter()
            .flat_map(|a| a.effect.touched_atoms().map(|atom| &atom.predicate))
            .collect();
        self.predicates
            .iter()
            .filter(|p| !touched.contains(&p.name))
            .map(|p| p.name.clone())
            .collect()
    }
}

/// Variable-free atom, the unit of world state.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAtom {
    pub predicate: Symbol,
    pub args: Vec<Symbol>,
}

impl GroundAtom {
    pub fn new(predicate: Symbol, args: Vec<Symbol>) -> Self {
        GroundAtom { predicate, args }
    }

    /// Builds an atom from string parts; panics on invalid symbols.
    pub fn parse_parts(predicate: &str, args: &[&str]) -> Self {
        GroundAtom {
            predicate: Symbol::new(predicate).expect("invalid predicate"),
            args: args.iter().map(|a| Symbol::new(a).expect("invalid argument")).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for GroundAtom {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn parenthesised(text: &str) -> Option<&str> {
    text.trim().strip_prefix('(')?.strip_suffix(')')
}

impl FromStr for GroundAtom {
    type Err = String;

    /// Parses `(pred arg ...)`.
    fn from_str(text: &str) -> Result<Self, String> {
        let bad = || format!("malformed ground atom `{text}`");
        let inner = parenthesised(text).ok_or_else(bad)?;
        if inner.contains(['(', ')']) {
            return Err(bad());
        }
        let mut words = inner.split_whitespace().map(Symbol::new);
        let predicate = words.next().flatten().ok_or_else(bad)?;
        let args = words.collect::<Option<Vec<_>>>().ok_or_else(bad)?;
        Ok(GroundAtom { predicate, args })
    }
}

impl<'de> Deserialize<'de> for GroundAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundLiteral {
    pub positive: bool,
    pub atom: GroundAtom,
}

impl GroundLiteral {
    pub fn pos(atom: GroundAtom) -> Self {
        GroundLiteral { positive: true, atom }
    }

    pub fn neg(atom: GroundAtom) -> Self {
        GroundLiteral { positive: false, atom }
    }
}

impl fmt::Display for GroundLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "(not {})", self.atom)
        }
    }
}

impl Serialize for GroundLiteral {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for GroundLiteral {
    type Err = String;

    /// Parses `(pred arg ...)` or `(not (pred arg ...))`.
    fn from_str(text: &str) -> Result<Self, String> {
        let negated = parenthesised(text)
            .and_then(|inner| inner.trim_start().strip_prefix("not"))
            .filter(|rest| rest.trim_start().starts_with('('));
        match negated {
            Some(rest) => Ok(GroundLiteral::neg(rest.parse()?)),
            None => Ok(GroundLiteral::pos(text.parse()?)),
        }
    }
}

impl<'de> Deserialize<'de> for GroundLiteral {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObjectDecl {
    pub name: Symbol,
    pub ty: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDef {
    pub name: Symbol,
    pub domain: Symbol,
    pub objects: Vec<ObjectDecl>,
    pub init: BTreeSet<GroundAtom>,
    pub goal: Vec<GroundLiteral>,
}

impl ProblemDef {
    pub fn object_type(&self, name: &str) -> Option<&Symbol> {
        self.objects.iter().find(|o| o.name.as_str() == name).map(|o| &o.ty)
    }

    /// Objects whose type is compatible with `ty` under the domain hierarchy.
    pub fn objects_of_type<'a>(
        &'a self,
        domain: &'a DomainDef,
        ty: &'a str,
    ) -> impl Iterator<Item = &'a Symbol> + 'a {
        self.objects
            .iter()
            .filter(move |o| domain.is_subtype(o.ty.as_str(), ty))
            .map(|o| &o.name)
    }
}
