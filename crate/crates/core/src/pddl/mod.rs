//! Parsing and printing for the PDDL subset used by the articulated-object
//! domains: STRIPS with typing, equality, universally quantified conditional
//! effects and universal preconditions, plus IPC sequential plan files.

mod ast;
mod error;
mod parse;
mod plan;
mod render;
pub(crate) mod sexpr;

pub use ast::*;
pub use error::{ParseError, ParseErrorKind, Pos};
pub use parse::{parse_domain, parse_problem};
pub use plan::{parse_plan, parse_plan_line, render_plan, ParsedPlan, Plan, PlanLine, PlanStep, Timestamp, END_SENTINEL};
pub use render::{render_domain, render_problem};
pub(crate) use render::object_list;
