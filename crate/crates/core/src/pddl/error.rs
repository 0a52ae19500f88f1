use std::fmt;

/// 1-based source location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnexpectedEof,
    UnclosedParen,
    InvalidSymbol(String),
    UnsupportedFeature(String),
    MissingRequirement { feature: String, requirement: String },
    UndeclaredType(String),
    UnknownPredicate(String),
    UnknownObject(String),
    UnboundVariable(String),
    Duplicate(String),
    ArityMismatch { predicate: String, expected: usize, found: usize },
    TypeMismatch { term: String, expected: String, found: String },
    NonGround(String),
    DomainMismatch { expected: String, found: String },
    MalformedStep(String),
    NonIncreasingTimestamps,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ParseErrorKind::*;
        match self {
            Syntax(msg) => write!(f, "syntax error: {msg}"),
            UnexpectedEof => write!(f, "unexpected end of input"),
            UnclosedParen => write!(f, "unclosed parenthesis"),
            InvalidSymbol(s) => write!(f, "invalid symbol `{s}`"),
            UnsupportedFeature(s) => write!(f, "unsupported feature `{s}`"),
            MissingRequirement { feature, requirement } => {
                write!(f, "`{feature}` requires `{requirement}` to be declared")
            }
            UndeclaredType(t) => write!(f, "undeclared type `{t}`"),
            UnknownPredicate(p) => write!(f, "unknown predicate `{p}`"),
            UnknownObject(o) => write!(f, "unknown object `{o}`"),
            UnboundVariable(v) => write!(f, "unbound variable `{v}`"),
            Duplicate(n) => write!(f, "duplicate name `{n}`"),
            ArityMismatch { predicate, expected, found } => write!(
                f,
                "arity mismatch for `{predicate}`: expected {expected} argument(s), found {found}"
            ),
            TypeMismatch { term, expected, found } => {
                write!(f, "type mismatch: `{term}` has type `{found}`, expected `{expected}`")
            }
            NonGround(a) => write!(f, "atom `{a}` is not ground"),
            DomainMismatch { expected, found } => {
                write!(f, "problem targets domain `{found}`, expected `{expected}`")
            }
            MalformedStep(line) => write!(f, "malformed plan step `{line}`"),
            NonIncreasingTimestamps => write!(f, "non-increasing timestamps"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: Pos,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, pos: Pos) -> Self {
        ParseError { kind, pos }
    }
}
