//! IPC-style sequential plans: `0.00100: (action arg ...)` per line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ast::Symbol;
use super::error::{ParseError, ParseErrorKind, Pos};

/// Sentinel line that terminates a completion.
pub const END_SENTINEL: &str = "END";

const SCALE: u64 = 100_000;
/// First canonical timestamp and stride between steps, in units of 1e-5.
const CANONICAL_START: u64 = 100;
const CANONICAL_STRIDE: u64 = 200;

/// Non-negative time with exactly five fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub fn from_units(units: u64) -> Self {
        Timestamp(units)
    }

    pub fn units(self) -> u64 {
        self.0
    }

    /// Canonical timestamp of the `index`-th (0-based) step.
    pub fn canonical(index: usize) -> Self {
        Timestamp(CANONICAL_START + CANONICAL_STRIDE * index as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:05}", self.0 / SCALE, self.0 % SCALE)
    }
}

impl FromStr for Timestamp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        if frac.len() > 5 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        let whole: u64 = int.parse().map_err(|_| ())?;
        let mut frac_units = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            frac_units += u64::from(b - b'0') * 10u64.pow(4 - i as u32);
        }
        whole.checked_mul(SCALE).and_then(|w| w.checked_add(frac_units)).map(Timestamp).ok_or(())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(|_| serde::de::Error::custom(format!("invalid timestamp `{text}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub time: Timestamp,
    pub action: Symbol,
    pub args: Vec<Symbol>,
}

impl PlanStep {
    /// The `(name arg ...)` part without the timestamp.
    pub fn call(&self) -> String {
        let mut out = format!("({}", self.action);
        for a in &self.args {
            out.push(' ');
            out.push_str(a.as_str());
        }
        out.push(')');
        out
    }
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.time, self.call())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

impl Plan {
    /// Builds a plan with canonical timestamps from bare action calls.
    pub fn from_calls<I>(calls: I) -> Plan
    where
        I: IntoIterator<Item = (Symbol, Vec<Symbol>)>,
    {
        let steps = calls
            .into_iter()
            .enumerate()
            .map(|(k, (action, args))| PlanStep { time: Timestamp::canonical(k), action, args })
            .collect();
        Plan { steps }
    }

    /// Same actions, timestamps regenerated at the canonical stride.
    pub fn retimed(&self) -> Plan {
        Plan::from_calls(self.steps.iter().map(|s| (s.action.clone(), s.args.clone())))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Result of reading a plan file or raw completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlan {
    pub plan: Plan,
    /// An `END` sentinel line was present and stripped.
    pub end_sentinel: bool,
}

/// One line of plan text, classified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanLine {
    Step(PlanStep),
    End,
    /// Blank line or `;` comment.
    Skip,
}

/// Classifies a single line. `line_no` is used for error locations.
pub fn parse_plan_line(line: &str, line_no: usize) -> Result<PlanLine, ParseError> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with(';') {
        return Ok(PlanLine::Skip);
    }
    if trimmed == END_SENTINEL {
        return Ok(PlanLine::End);
    }
    let col = line.len() - line.trim_start().len() + 1;
    let malformed = || ParseError::new(ParseErrorKind::MalformedStep(trimmed.to_string()), Pos { line: line_no, col });

    let (time_text, rest) = trimmed.split_once(':').ok_or_else(malformed)?;
    let time: Timestamp = time_text.trim().parse().map_err(|_| malformed())?;
    let rest = rest.trim();
    let close = rest.find(')').ok_or_else(malformed)?;
    let call = rest.strip_prefix('(').ok_or_else(malformed)?;
    let inner = &call[..close - 1];
    let tail = rest[close + 1..].trim();
    // Optional IPC duration annotation, e.g. `[1.0]`; carries no semantics here.
    if !tail.is_empty() && !(tail.starts_with('[') && tail.ends_with(']')) {
        return Err(malformed());
    }
    let mut words = inner.split_whitespace();
    let action = words.next().and_then(Symbol::new).ok_or_else(malformed)?;
    let args = words.map(Symbol::new).collect::<Option<Vec<_>>>().ok_or_else(malformed)?;
    Ok(PlanLine::Step(PlanStep { time, action, args }))
}

pub fn parse_plan(text: &str) -> Result<ParsedPlan, ParseError> {
    let mut steps: Vec<PlanStep> = Vec::new();
    let mut end_sentinel = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        match parse_plan_line(line, line_no)? {
            PlanLine::Skip => {}
            PlanLine::End if !end_sentinel => end_sentinel = true,
            PlanLine::End | PlanLine::Step(_) if end_sentinel => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax("content after END sentinel".into()),
                    Pos { line: line_no, col: 1 },
                ));
            }
            PlanLine::Step(step) => {
                if let Some(prev) = steps.last() {
                    if step.time <= prev.time {
                        return Err(ParseError::new(
                            ParseErrorKind::NonIncreasingTimestamps,
                            Pos { line: line_no, col: 1 },
                        ));
                    }
                }
                steps.push(step);
            }
            PlanLine::End => unreachable!(),
        }
    }
    Ok(ParsedPlan { plan: Plan { steps }, end_sentinel })
}

/// One step per line, no trailing newline; the empty plan renders as "".
pub fn render_plan(plan: &Plan) -> String {
    plan.steps.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> Symbol {
        Symbol::new(s).unwrap()
    }

    #[test]
    fn single_step_with_sentinel() {
        let parsed = parse_plan("0.00100: (release-links link1 gleft)\nEND").unwrap();
        assert!(parsed.end_sentinel);
        assert_eq!(parsed.plan.len(), 1);
        assert_eq!(parsed.plan.steps[0].action, sym("release-links"));
        assert_eq!(parsed.plan.steps[0].args, vec![sym("link1"), sym("gleft")]);
        assert_eq!(parsed.plan.steps[0].time, Timestamp::from_units(100));
    }

    #[test]
    fn empty_text_is_empty_plan() {
        let parsed = parse_plan("").unwrap();
        assert!(parsed.plan.is_empty());
        assert!(!parsed.end_sentinel);
    }

    #[test]
    fn equal_timestamps_rejected() {
        let e = parse_plan("0.00100: (a)\n0.00100: (b)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::NonIncreasingTimestamps);
        assert_eq!(e.pos.line, 2);
    }

    #[test]
    fn canonical_timestamps() {
        let plan = Plan::from_calls((0..3).map(|i| (sym(&format!("a{i}")), vec![])));
        assert_eq!(render_plan(&plan), "0.00100: (a0)\n0.00300: (a1)\n0.00500: (a2)");
        assert_eq!(render_plan(&Plan::default()), "");
    }

    #[test]
    fn tolerates_completion_framing() {
        let parsed = parse_plan(" 0.00100: (a x)\n0.00300: (b)   \n\nEND\n").unwrap();
        assert_eq!(parsed.plan.len(), 2);
        assert!(parsed.end_sentinel);
    }

    #[test]
    fn content_after_sentinel_rejected() {
        assert!(parse_plan("0.00100: (a)\nEND\n0.00300: (b)").is_err());
    }

    #[test]
    fn malformed_lines() {
        for bad in ["(a b)", "0.1: a b", "x: (a)", "0.000001: (a)", "0.1: (a) trailing", "0.1: ()"] {
            let e = parse_plan(bad).unwrap_err();
            assert!(matches!(e.kind, ParseErrorKind::MalformedStep(_)), "{bad}");
        }
    }

    #[test]
    fn ipc_variants_accepted() {
        let parsed = parse_plan("; plan\n0: (a)\n1.5: (b c) [1.0]").unwrap();
        assert_eq!(parsed.plan.steps[1].time, Timestamp::from_units(150_000));
    }
}
