mod common;

use common::*;
use neuroplan::artobj::{expand_macros, merge_statics, retarget, ChainConfig, Generator};
use neuroplan::dataset::{build_completion, build_prompt, split_prompt};
use neuroplan::pddl::{parse_domain, parse_plan, parse_problem, render_domain, render_plan, render_problem, Plan, Symbol};
use neuroplan::semantics::{validate_plan, Verdict};
use neuroplan::solver::{solve_optimal, Satisficing, Solver};
use proptest::prelude::*;

fn chain() -> impl Strategy<Value = ChainConfig> {
    (1usize..=4, prop::sample::select(vec![15u32, 30, 45, 90]), any::<bool>(), 0usize..4)
        .prop_flat_map(|(n, step, macros, central)| {
            let multiples: Vec<u32> = (1..360 / step).map(|k| k * step).collect();
            prop::collection::btree_set(prop::sample::select(multiples), 1..=2).prop_map(move |incs| ChainConfig {
                n_joints: n,
                angle_step_deg: step,
                rotation_increments_deg: incs,
                central_joint: central % n + 1,
                use_macros: macros,
                seed: 0,
            })
        })
}

/// Any call the oracle's vocabulary can express, applicable or not.
fn random_call(cfg: &ChainConfig, pick: &[usize]) -> (String, Vec<String>) {
    let n = cfg.n_joints;
    let incs: Vec<u32> = cfg.rotation_increments_deg.iter().copied().collect();
    let angles: Vec<u32> = cfg.angles().collect();
    let gripper = ["gleft", "gright"][pick[1] % 2].to_string();
    let link = format!("link{}", pick[2] % n + 1);
    match pick[0] % 4 {
        0 => ("link-to-central-grasp".into(), vec![link, gripper]),
        1 => ("release-links".into(), vec![link, gripper]),
        k => {
            let dir = if k == 2 { "increase" } else { "decrease" };
            let inc = incs[pick[3] % incs.len()];
            let name = if cfg.use_macros {
                format!("grasp-rotate-release_{dir}_{inc}")
            } else {
                format!("{dir}_angle_first_child_{inc}")
            };
            // Mostly the joint's own first-child link, so sequences get somewhere.
            let j = pick[4] % n + 1;
            let link = if pick[2].is_multiple_of(4) { link } else { format!("link{j}") };
            let joint = format!("joint{j}");
            let from = angles[pick[5] % angles.len()];
            let to = if pick[6].is_multiple_of(3) { angles[pick[7] % angles.len()] } else if k == 2 { (from + inc) % 360 } else { (from + 360 - inc) % 360 };
            (name, vec![joint, link, gripper, format!("angle{from}"), format!("angle{to}")])
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn render_then_parse_is_identity(cfg in chain(), seed in any::<u64>(), walk in 1usize..10) {
        let d = domain(&cfg);
        prop_assert_eq!(&parse_domain(&render_domain(&d)).unwrap(), &d);
        let g = Generator::new(&d, &cfg).unwrap().generate(seed, walk).unwrap();
        prop_assert_eq!(&parse_problem(&render_problem(&g.problem), &d).unwrap(), &g.problem);
        prop_assert_eq!(&parse_plan(&render_plan(&g.witness)).unwrap().plan, &g.witness);
    }

    #[test]
    fn compact_prompt_restores_the_problem(cfg in chain(), seed in any::<u64>()) {
        let d = domain(&cfg);
        let g = Generator::new(&d, &cfg).unwrap().generate(seed, 5).unwrap();
        let prompt = build_prompt(&g.compact_prompt, None);
        let restored = merge_statics(&cfg, &d, g.problem.name.as_str(), split_prompt(&prompt).unwrap().problem).unwrap();
        prop_assert_eq!(restored, g.problem);
        let completion = build_completion(&g.witness);
        prop_assert_eq!(parse_plan(&completion).unwrap().plan, g.witness.retimed());
    }

    #[test]
    fn validator_agrees_with_oracle_on_random_sequences(
        cfg in chain(),
        seed in any::<u64>(),
        picks in prop::collection::vec(prop::collection::vec(0usize..1000, 8), 0..12),
    ) {
        let d = domain(&cfg);
        let g = Generator::new(&d, &cfg).unwrap().generate(seed, 3).unwrap();
        let calls = picks.iter().map(|p| {
            let (name, args) = random_call(&cfg, p);
            (Symbol::new(&name).unwrap(), args.iter().map(|a| Symbol::new(a).unwrap()).collect())
        });
        let plan = Plan::from_calls(calls);
        let report = validate_plan(&d, &g.problem, &plan);
        let oracle = ChainSim::from_problem(&cfg, &g.problem).run(&plan, &goal_angles(&g.problem, cfg.n_joints));
        match oracle {
            SimVerdict::Valid => prop_assert_eq!(report.verdict, Verdict::Valid),
            SimVerdict::UnsolvedGoal => prop_assert_eq!(report.verdict, Verdict::UnsolvedGoal),
            SimVerdict::Invalid(k) => {
                prop_assert_eq!(report.verdict, Verdict::Invalid);
                prop_assert_eq!(report.failing_step, Some(k));
                prop_assert_eq!(report.steps_applied, k);
            }
        }
    }

    #[test]
    fn witnesses_are_valid_and_goals_match_the_oracle(cfg in chain(), seed in any::<u64>(), walk in 1usize..12) {
        let d = domain(&cfg);
        let g = Generator::new(&d, &cfg).unwrap().generate(seed, walk).unwrap();
        prop_assert!(validate_plan(&d, &g.problem, &g.witness).is_valid());
        let verdict = ChainSim::from_problem(&cfg, &g.problem).run(&g.witness, &goal_angles(&g.problem, cfg.n_joints));
        prop_assert_eq!(verdict, SimVerdict::Valid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn solver_plans_are_sound_and_no_shorter_than_optimal(seed in any::<u64>(), macros in any::<bool>()) {
        let cfg = config(macros);
        let d = domain(&cfg);
        let g = &generate(&cfg, [seed], 8)[0];
        let plan = Satisficing::default().solve(&d, &g.problem).into_plan().unwrap();
        let verdict = ChainSim::from_problem(&cfg, &g.problem).run(&plan, &goal_angles(&g.problem, 3));
        prop_assert_eq!(verdict, SimVerdict::Valid);
        let optimal = solve_optimal(&d, &g.problem, 2_000_000).into_plan().unwrap();
        prop_assert!(optimal.len() <= plan.len());
        prop_assert!(validate_plan(&d, &g.problem, &optimal).is_valid());
    }

    #[test]
    fn expanded_macro_plans_run_without_macros(seed in any::<u64>()) {
        let (with, without) = (config(true), config(false));
        let (dm, dp) = (domain(&with), domain(&without));
        let g = &generate(&with, [seed], 8)[0];
        let plan = Satisficing::default().solve(&dm, &g.problem).into_plan().unwrap();
        let expanded = expand_macros(&plan);
        let problem = retarget(&g.problem, &dp);
        prop_assert!(validate_plan(&dp, &problem, &expanded).is_valid());
        let macros = plan.steps.iter().filter(|s| s.action.as_str().starts_with("grasp-rotate-release_")).count();
        prop_assert_eq!(expanded.len(), plan.len() + 2 * macros);
    }
}

#[test]
fn oracle_rejects_what_it_should() {
    let cfg = config(false);
    let mut sim = ChainSim::new(&cfg, vec![0, 90, 180]);
    assert!(!sim.apply("increase_angle_first_child_45", &["joint1", "link1", "gleft", "angle0", "angle45"]));
    assert!(sim.apply("link-to-central-grasp", &["link2", "gleft"]));
    assert!(!sim.apply("link-to-central-grasp", &["link1", "gright"]));
    assert!(!sim.apply("increase_angle_first_child_45", &["joint1", "link2", "gleft", "angle0", "angle45"]));
    assert!(sim.apply("increase_angle_first_child_45", &["joint2", "link2", "gleft", "angle90", "angle135"]));
    assert_eq!(sim.angles, vec![0, 135, 225]);
    assert!(sim.apply("decrease_angle_first_child_45", &["joint2", "link2", "gleft", "angle135", "angle90"]));
    assert_eq!(sim.angles, vec![0, 90, 180]);
    assert!(!sim.apply("grasp-rotate-release_increase_45", &["joint1", "link1", "gleft", "angle0", "angle45"]));
}
