//! Articulated-object manipulation domains (a serial chain of links joined by
//! revolute joints, with angles kept in an absolute frame) and a random
//! problem generator with guaranteed-solvable instances.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pddl::{
    self, parse_domain, DomainDef, GroundAtom, GroundLiteral, ObjectDecl, ParseError, ParseErrorKind, Plan, Pos,
    ProblemDef, Symbol,
};
use crate::semantics::{apply, applicable, GroundAction, Grounder, State};

pub const GRIPPERS: [&str; 2] = ["gleft", "gright"];

pub const ANGLE_JOINT: &str = "angle_joint";
pub const IN_CENTRE: &str = "in-centre";
pub const FREE: &str = "free";
pub const HELD: &str = "held";
pub const FIRST_CHILD: &str = "first-child";
pub const DOWNSTREAM: &str = "downstream";

pub const GRASP: &str = "link-to-central-grasp";
pub const RELEASE: &str = "release-links";

/// Predicates kept in compact prompts; everything else is static.
pub const PROMPT_PREDICATES: [&str; 4] = [ANGLE_JOINT, IN_CENTRE, FREE, HELD];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArtobjError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("walk length must be at least 1")]
    EmptyWalk,
    #[error("angle {0} is not a multiple of the angle step")]
    OffGridAngle(u32),
    #[error("expected {expected} joint angles, got {found}")]
    AngleCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn word(self) -> &'static str {
        match self {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_joints: usize,
    pub angle_step_deg: u32,
    pub rotation_increments_deg: BTreeSet<u32>,
    /// 1-based index of the joint held at the centre.
    pub central_joint: usize,
    pub use_macros: bool,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_joints: 3,
            angle_step_deg: 15,
            rotation_increments_deg: [45].into_iter().collect(),
            central_joint: 2,
            use_macros: false,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn with_macros(mut self, use_macros: bool) -> Self {
        self.use_macros = use_macros;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ArtobjError> {
        let bad = |msg: String| Err(ArtobjError::InvalidConfig(msg));
        if self.n_joints == 0 {
            return bad("at least one joint is required".into());
        }
        if self.angle_step_deg == 0 || 360 % self.angle_step_deg != 0 {
            return bad(format!("360 is not divisible by the angle step {}", self.angle_step_deg));
        }
        if self.rotation_increments_deg.is_empty() {
            return bad("at least one rotation increment is required".into());
        }
        for &inc in &self.rotation_increments_deg {
            if inc == 0 || inc >= 360 || inc % self.angle_step_deg != 0 {
                return bad(format!("rotation increment {inc} is not a positive multiple of the angle step below 360"));
            }
        }
        if !(1..=self.n_joints).contains(&self.central_joint) {
            return bad(format!("central joint {} outside 1..={}", self.central_joint, self.n_joints));
        }
        Ok(())
    }

    pub fn angles(&self) -> impl Iterator<Item = u32> + '_ {
        (0..360).step_by(self.angle_step_deg as usize)
    }

    pub fn domain_name(&self) -> &'static str {
        if self.use_macros {
            "articulated-macro"
        } else {
            "articulated-no-macro"
        }
    }

    pub fn objects(&self) -> Vec<ObjectDecl> {
        let decl = |name: String, ty: &'static str| ObjectDecl { name: sym(&name), ty: Symbol::from_static(ty) };
        let mut out = Vec::new();
        out.extend((1..=self.n_joints).map(|i| decl(link_name(i), "link")));
        out.extend((1..=self.n_joints).map(|i| decl(joint_name(i), "joint")));
        out.extend(self.angles().map(|a| decl(angle_name(a), "angle")));
        out.extend(GRIPPERS.iter().map(|g| decl(g.to_string(), "gripper")));
        out
    }

    /// Atoms that hold in every problem of this configuration.
    pub fn static_atoms(&self) -> BTreeSet<GroundAtom> {
        let mut out = BTreeSet::new();
        for i in 1..=self.n_joints {
            out.insert(atom(FIRST_CHILD, &[&link_name(i), &joint_name(i)]));
            for k in i + 1..=self.n_joints {
                out.insert(atom(DOWNSTREAM, &[&joint_name(i), &joint_name(k)]));
            }
        }
        for &inc in &self.rotation_increments_deg {
            for a in self.angles() {
                out.insert(atom(&succ_predicate(inc), &[&angle_name(a), &angle_name((a + inc) % 360)]));
            }
        }
        out
    }
}

fn sym(text: &str) -> Symbol {
    Symbol::new(text).unwrap_or_else(|| panic!("generated name `{text}` is not a symbol"))
}

fn atom(predicate: &str, args: &[&str]) -> GroundAtom {
    GroundAtom::new(sym(predicate), args.iter().map(|a| sym(a)).collect())
}

pub fn link_name(index: usize) -> String {
    format!("link{index}")
}

pub fn joint_name(index: usize) -> String {
    format!("joint{index}")
}

pub fn angle_name(deg: u32) -> String {
    format!("angle{deg}")
}

pub fn succ_predicate(increment: u32) -> String {
    format!("succ_{increment}")
}

pub fn rotation_action(direction: Direction, increment: u32) -> String {
    format!("{}_angle_first_child_{increment}", direction.word())
}

pub fn macro_action(direction: Direction, increment: u32) -> String {
    format!("grasp-rotate-release_{}_{increment}", direction.word())
}

/// Inverse of [`angle_name`].
pub fn parse_angle(name: &str) -> Option<u32> {
    name.strip_prefix("angle")?.parse().ok()
}

/// Inverse of [`joint_name`].
pub fn parse_joint(name: &str) -> Option<usize> {
    name.strip_prefix("joint")?.parse().ok()
}

fn rotation_effect(succ: &str, direction: Direction) -> String {
    let shift_down = match direction {
        Direction::Increase => format!("({succ} ?b ?c)"),
        Direction::Decrease => format!("({succ} ?c ?b)"),
    };
    format!(
        "(and (not (angle_joint ?from ?j)) (angle_joint ?to ?j)
      (forall (?k - joint ?b ?c - angle)
        (when (and (downstream ?j ?k) (angle_joint ?b ?k) {shift_down})
          (and (not (angle_joint ?b ?k)) (angle_joint ?c ?k)))))"
    )
}

fn rotation_guard(succ: &str, direction: Direction) -> String {
    match direction {
        Direction::Increase => format!("({succ} ?from ?to)"),
        Direction::Decrease => format!("({succ} ?to ?from)"),
    }
}

/// PDDL source of the domain described by `cfg`.
pub fn domain_text(cfg: &ChainConfig) -> Result<String, ArtobjError> {
    cfg.validate()?;
    let mut out = String::new();
    writeln!(out, "(define (domain {})", cfg.domain_name()).unwrap();
    out.push_str("  (:requirements :strips :typing :conditional-effects :universal-preconditions)\n");
    out.push_str("  (:types link joint angle gripper - object)\n");
    out.push_str("  (:predicates\n");
    out.push_str("    (angle_joint ?a - angle ?j - joint)\n");
    out.push_str("    (in-centre ?j - joint)\n");
    out.push_str("    (free ?g - gripper)\n");
    out.push_str("    (held ?l - link ?g - gripper)\n");
    out.push_str("    (first-child ?l - link ?j - joint)\n");
    out.push_str("    (downstream ?j ?k - joint)");
    for &inc in &cfg.rotation_increments_deg {
        write!(out, "\n    ({} ?a ?b - angle)", succ_predicate(inc)).unwrap();
    }
    out.push_str(")\n");

    // Grasping is only possible with both grippers free: one link is handled at a time.
    writeln!(
        out,
        "  (:action {GRASP}
    :parameters (?l - link ?g - gripper)
    :precondition (and (free ?g) (forall (?h - gripper) (free ?h)))
    :effect (and (not (free ?g)) (held ?l ?g)))"
    )
    .unwrap();
    writeln!(
        out,
        "  (:action {RELEASE}
    :parameters (?l - link ?g - gripper)
    :precondition (held ?l ?g)
    :effect (and (not (held ?l ?g)) (free ?g)))"
    )
    .unwrap();

    for &inc in &cfg.rotation_increments_deg {
        let succ = succ_predicate(inc);
        for direction in [Direction::Increase, Direction::Decrease] {
            let guard = rotation_guard(&succ, direction);
            let effect = rotation_effect(&succ, direction);
            if cfg.use_macros {
                writeln!(
                    out,
                    "  (:action {}
    :parameters (?j - joint ?l - link ?g - gripper ?from ?to - angle)
    :precondition (and (first-child ?l ?j) (free ?g) (forall (?h - gripper) (free ?h))
      (angle_joint ?from ?j) {guard})
    :effect {effect})",
                    macro_action(direction, inc)
                )
                .unwrap();
            } else {
                writeln!(
                    out,
                    "  (:action {}
    :parameters (?j - joint ?l - link ?g - gripper ?from ?to - angle)
    :precondition (and (first-child ?l ?j) (held ?l ?g) (angle_joint ?from ?j) {guard})
    :effect {effect})",
                    rotation_action(direction, inc)
                )
                .unwrap();
            }
        }
    }
    out.push_str(")\n");
    Ok(out)
}

pub fn make_domain(cfg: &ChainConfig) -> Result<DomainDef, ArtobjError> {
    let text = domain_text(cfg)?;
    Ok(parse_domain(&text).unwrap_or_else(|e| panic!("generated domain does not parse: {e}\n{text}")))
}

/// Problem with the given absolute joint angles (degrees, joint1 first),
/// `in-centre` on the central joint and both grippers free.
pub fn build_problem(
    cfg: &ChainConfig,
    name: &str,
    init_angles: &[u32],
    goal_angles: &[u32],
) -> Result<ProblemDef, ArtobjError> {
    cfg.validate()?;
    for angles in [init_angles, goal_angles] {
        if angles.len() != cfg.n_joints {
            return Err(ArtobjError::AngleCount { expected: cfg.n_joints, found: angles.len() });
        }
        if let Some(&a) = angles.iter().find(|&&a| a >= 360 || a % cfg.angle_step_deg != 0) {
            return Err(ArtobjError::OffGridAngle(a));
        }
    }
    let mut init = cfg.static_atoms();
    for (i, &a) in init_angles.iter().enumerate() {
        init.insert(atom(ANGLE_JOINT, &[&angle_name(a), &joint_name(i + 1)]));
    }
    init.insert(atom(IN_CENTRE, &[&joint_name(cfg.central_joint)]));
    for g in GRIPPERS {
        init.insert(atom(FREE, &[g]));
    }
    let goal = goal_angles
        .iter()
        .enumerate()
        .map(|(i, &a)| GroundLiteral::pos(atom(ANGLE_JOINT, &[&angle_name(a), &joint_name(i + 1)])))
        .collect();
    Ok(ProblemDef { name: sym(name), domain: sym(cfg.domain_name()), objects: cfg.objects(), init, goal })
}

/// Absolute angle of every joint in `state`, joint1 first. Missing joints read as `None`.
pub fn joint_angles(state: &State, n_joints: usize) -> Vec<Option<u32>> {
    let mut out = vec![None; n_joints];
    for a in state.iter().filter(|a| a.predicate.as_str() == ANGLE_JOINT) {
        if let (Some(deg), Some(j)) = (parse_angle(a.args[0].as_str()), parse_joint(a.args[1].as_str())) {
            if (1..=n_joints).contains(&j) {
                out[j - 1] = Some(deg);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedProblem {
    pub problem: ProblemDef,
    /// The random walk that produced the goal.
    pub witness: Plan,
    pub compact_prompt: String,
}

/// Problem generator bound to one domain and configuration. Grounding is done
/// once, since every generated problem shares the object universe and statics.
pub struct Generator {
    cfg: ChainConfig,
    domain: DomainDef,
    actions: Vec<GroundAction>,
}

impl Generator {
    pub fn new(domain: &DomainDef, cfg: &ChainConfig) -> Result<Self, ArtobjError> {
        let template = build_problem(cfg, "template", &vec![0; cfg.n_joints], &vec![0; cfg.n_joints])?;
        let mut template = template;
        template.domain = domain.name.clone();
        let actions = Grounder::new(domain, &template).ground_all();
        Ok(Generator { cfg: cfg.clone(), domain: domain.clone(), actions })
    }

    pub fn domain(&self) -> &DomainDef {
        &self.domain
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Random initial angles, then a uniformly random applicable walk of
    /// `walk_len` steps; the goal is every joint's angle after the walk.
    pub fn generate(&self, seed: u64, walk_len: usize) -> Result<GeneratedProblem, ArtobjError> {
        if walk_len == 0 {
            return Err(ArtobjError::EmptyWalk);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles: Vec<u32> = self.cfg.angles().collect();
        let init_angles: Vec<u32> = (0..self.cfg.n_joints).map(|_| angles[rng.random_range(0..angles.len())]).collect();

        let name = format!("chain-{seed}");
        let mut problem = build_problem(&self.cfg, &name, &init_angles, &init_angles)?;
        problem.domain = self.domain.name.clone();

        let mut state = State::initial(&problem);
        let mut calls = Vec::with_capacity(walk_len);
        for _ in 0..walk_len {
            let options: Vec<&GroundAction> = self.actions.iter().filter(|a| applicable(&state, a)).collect();
            let Some(&chosen) = options.choose(&mut rng) else { break };
            state = apply(&state, chosen).expect("chosen action is applicable");
            calls.push((chosen.name.clone(), chosen.args.clone()));
        }

        let final_angles = joint_angles(&state, self.cfg.n_joints);
        problem.goal = final_angles
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let deg = a.expect("every joint keeps exactly one angle");
                GroundLiteral::pos(atom(ANGLE_JOINT, &[&angle_name(deg), &joint_name(i + 1)]))
            })
            .collect();
        let compact_prompt = strip_statics(&problem);
        Ok(GeneratedProblem { problem, witness: Plan::from_calls(calls), compact_prompt })
    }
}

pub fn generate_problem(
    domain: &DomainDef,
    cfg: &ChainConfig,
    walk_len: usize,
) -> Result<GeneratedProblem, ArtobjError> {
    Generator::new(domain, cfg)?.generate(cfg.seed, walk_len)
}

/// Same objects, init and goal, addressed to another domain of the same configuration.
pub fn retarget(problem: &ProblemDef, domain: &DomainDef) -> ProblemDef {
    ProblemDef { domain: domain.name.clone(), ..problem.clone() }
}

/// Rewrites every macro step into its grasp, rotate, release expansion.
pub fn expand_macros(plan: &Plan) -> Plan {
    let mut calls = Vec::new();
    for step in &plan.steps {
        let name = step.action.as_str();
        let Some(rest) = name.strip_prefix("grasp-rotate-release_") else {
            calls.push((step.action.clone(), step.args.clone()));
            continue;
        };
        let (link, gripper) = (step.args[1].clone(), step.args[2].clone());
        calls.push((sym(GRASP), vec![link.clone(), gripper.clone()]));
        calls.push((sym(&rest.replacen('_', "_angle_first_child_", 1)), step.args.clone()));
        calls.push((sym(RELEASE), vec![link, gripper]));
    }
    Plan::from_calls(calls)
}

fn object_rank(problem: &ProblemDef) -> HashMap<&Symbol, usize> {
    problem.objects.iter().enumerate().map(|(i, o)| (&o.name, i)).collect()
}

/// Compact prompt body: the dynamic `(:init ...)` atoms and the `(:goal (and ...))`
/// block. Angle atoms are listed one per line in joint order, then `in-centre`,
/// then the gripper atoms on a single line.
pub fn strip_statics(problem: &ProblemDef) -> String {
    let rank = object_rank(problem);
    let key = |a: &GroundAtom| -> Vec<usize> {
        let mut k: Vec<usize> = a.args.iter().map(|s| rank.get(s).copied().unwrap_or(usize::MAX)).collect();
        if a.predicate.as_str() == ANGLE_JOINT {
            k.reverse();
        }
        k
    };
    let of = |pred: &str| {
        let mut atoms: Vec<&GroundAtom> = problem.init.iter().filter(|a| a.predicate.as_str() == pred).collect();
        atoms.sort_by_key(|a| key(a));
        atoms
    };

    let mut lines: Vec<String> = Vec::new();
    lines.extend(of(ANGLE_JOINT).iter().map(ToString::to_string));
    lines.extend(of(IN_CENTRE).iter().map(ToString::to_string));
    let mut grippers: Vec<&GroundAtom> = of(FREE).into_iter().chain(of(HELD)).collect();
    let gripper_key = |a: &GroundAtom| rank.get(a.args.last().unwrap()).copied().unwrap_or(usize::MAX);
    grippers.sort_by_key(|a| gripper_key(a));
    if !grippers.is_empty() {
        lines.push(grippers.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
    }

    let mut goal: Vec<&GroundLiteral> = problem.goal.iter().collect();
    goal.sort_by_key(|l| (l.atom.predicate.as_str() != ANGLE_JOINT, key(&l.atom)));

    let mut out = String::from("(:init ");
    out.push_str(&lines.join("\n"));
    out.push_str(")\n(:goal (and");
    for lit in goal {
        write!(out, "\n{lit}").unwrap();
    }
    out.push_str("))");
    out
}

/// Rebuilds a full problem from a compact prompt body by re-adding the
/// configuration's objects and static atoms.
pub fn merge_statics(
    cfg: &ChainConfig,
    domain: &DomainDef,
    name: &str,
    fragment: &str,
) -> Result<ProblemDef, ParseError> {
    let objects = cfg.objects();
    let mut text = format!("(define (problem {name}) (:domain {}) (:objects {})\n", domain.name, pddl::object_list(&objects));
    let body = fragment.trim();
    let Some(init_body) = body.strip_prefix("(:init") else {
        return Err(ParseError::new(ParseErrorKind::Syntax("fragment must start with `(:init`".into()), Pos { line: 1, col: 1 }));
    };
    // Static atoms are spliced in front of the fragment's own init atoms.
    text.push_str("(:init");
    for a in cfg.static_atoms() {
        write!(text, " {a}").unwrap();
    }
    text.push('\n');
    let offset_lines = text.lines().count();
    text.push_str(init_body);
    text.push(')');
    pddl::parse_problem(&text, domain).map_err(|mut e| {
        // Report positions relative to the fragment.
        if e.pos.line > offset_lines {
            e.pos.line -= offset_lines;
            if e.pos.line == 1 {
                e.pos.col += "(:init".len();
            }
        }
        e
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse_problem, render_domain, render_problem};
    use crate::semantics::validate_plan;

    #[test]
    fn default_domain_shape() {
        let cfg = ChainConfig::default();
        let d = make_domain(&cfg).unwrap();
        let names: Vec<&str> = d.actions.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(
            names,
            [GRASP, RELEASE, "increase_angle_first_child_45", "decrease_angle_first_child_45"]
        );
        assert_eq!(cfg.objects().iter().filter(|o| o.ty.as_str() == "angle").count(), 24);
        assert_eq!(parse_domain(&render_domain(&d)).unwrap(), d);
    }

    #[test]
    fn macro_domain_has_compound_operators() {
        let cfg = ChainConfig::default().with_macros(true);
        let d = make_domain(&cfg).unwrap();
        assert!(d.action("grasp-rotate-release_increase_45").is_some());
        assert!(d.action("grasp-rotate-release_decrease_45").is_some());
        assert!(d.action("increase_angle_first_child_45").is_none());
        assert_eq!(d.name.as_str(), "articulated-macro");
    }

    #[test]
    fn invalid_configs() {
        let step14 = ChainConfig { angle_step_deg: 14, ..Default::default() };
        assert!(matches!(make_domain(&step14), Err(ArtobjError::InvalidConfig(_))));
        let inc = ChainConfig { rotation_increments_deg: [40].into_iter().collect(), ..Default::default() };
        assert!(inc.validate().is_err());
        let central = ChainConfig { central_joint: 4, ..Default::default() };
        assert!(central.validate().is_err());
    }

    #[test]
    fn listing_style_prompt() {
        let cfg = ChainConfig::default();
        let p = build_problem(&cfg, "ex", &[315, 300, 285], &[0, 300, 285]).unwrap();
        assert_eq!(
            strip_statics(&p),
            "(:init (angle_joint angle315 joint1)\n(angle_joint angle300 joint2)\n(angle_joint angle285 joint3)\n\
             (in-centre joint2)\n(free gleft) (free gright))\n(:goal (and\n(angle_joint angle0 joint1)\n\
             (angle_joint angle300 joint2)\n(angle_joint angle285 joint3)))"
        );
    }

    #[test]
    fn merge_inverts_strip() {
        let cfg = ChainConfig::default();
        let d = make_domain(&cfg).unwrap();
        let g = generate_problem(&d, &cfg.clone().with_seed(3), 6).unwrap();
        let merged = merge_statics(&cfg, &d, g.problem.name.as_str(), &g.compact_prompt).unwrap();
        assert_eq!(merged, g.problem);
        let reparsed = parse_problem(&render_problem(&g.problem), &d).unwrap();
        assert_eq!(reparsed, g.problem);
    }

    #[test]
    fn merge_reports_fragment_positions() {
        let cfg = ChainConfig::default();
        let d = make_domain(&cfg).unwrap();
        let e = merge_statics(&cfg, &d, "x", "(:init (angle_joint angle0 joint1)\n(bogus joint2))\n(:goal (and))")
            .unwrap_err();
        assert_eq!(e.pos.line, 2);
    }

    #[test]
    fn witness_validates() {
        let cfg = ChainConfig::default().with_seed(7);
        let d = make_domain(&cfg).unwrap();
        let g = generate_problem(&d, &cfg, 5).unwrap();
        assert_eq!(g.witness.len(), 5);
        assert!(validate_plan(&d, &g.problem, &g.witness).is_valid());
    }

    #[test]
    fn expanded_macro_witness_validates_without_macros() {
        let cfg = ChainConfig::default().with_macros(true);
        let macro_d = make_domain(&cfg).unwrap();
        let plain_d = make_domain(&cfg.clone().with_macros(false)).unwrap();
        let gen = Generator::new(&macro_d, &cfg).unwrap();
        for seed in 0..20 {
            let g = gen.generate(seed, 4).unwrap();
            let plain = retarget(&g.problem, &plain_d);
            assert!(validate_plan(&plain_d, &plain, &expand_macros(&g.witness)).is_valid());
        }
    }
}
