mod common;

use std::time::{Duration, Instant};

use common::*;
use neuroplan::neuroplanner::{NeuroPlanner, PlanningStatus, StreamPoll};
use neuroplan::provider::CompletionRequest;
use neuroplan::semantics::validate_plan;

/// A generated problem whose solver plan has at least `min` steps.
fn long_problem(macros: bool, min: usize) -> neuroplan::pddl::ProblemDef {
    let cfg = config(macros);
    let d = domain(&cfg);
    let solver = neuroplan::solver::Satisficing::default();
    generate(&cfg, 0..200, 10)
        .into_iter()
        .map(|g| g.problem)
        .find(|p| neuroplan::solver::Solver::solve(&solver, &d, p).plan().is_some_and(|plan| plan.len() >= min))
        .expect("some problem is long enough")
}

fn planner(macros: bool, delay: Duration) -> NeuroPlanner {
    let cfg = config(macros);
    NeuroPlanner::new(emulated(&cfg, delay), domain(&cfg), "emulated")
}

#[test]
fn end_to_end_plans_validate_against_the_oracle() {
    for macros in [false, true] {
        let cfg = config(macros);
        let p = planner(macros, Duration::ZERO);
        for g in generate(&cfg, 0..20, 8) {
            let outcome = p.plan_end_to_end(&g.problem);
            assert_eq!(outcome.status, PlanningStatus::Valid, "{:?}", outcome.reason);
            let verdict = ChainSim::from_problem(&cfg, &g.problem).run(&outcome.plan, &goal_angles(&g.problem, 3));
            assert_eq!(verdict, SimVerdict::Valid);
            let t = outcome.timings;
            assert_eq!(t.time_to_first_action, Some(t.total_time));
        }
    }
}

#[test]
fn streaming_and_whole_plan_agree() {
    let cfg = config(false);
    let p = planner(false, Duration::from_millis(2));
    for g in generate(&cfg, 30..40, 8) {
        let whole = p.plan_end_to_end(&g.problem);
        let streamed = p.plan_streaming(&g.problem).finish();
        assert_eq!(streamed.status, PlanningStatus::Valid);
        assert_eq!(streamed.plan, whole.plan);
        let ttfa = streamed.timings.time_to_first_action.unwrap();
        assert!(ttfa <= streamed.timings.total_time);
    }
}

#[test]
fn first_action_arrives_before_the_plan_is_done() {
    let problem = long_problem(false, 4);
    let p = planner(false, Duration::from_millis(60));
    let mut stream = p.plan_streaming(&problem);
    let first = stream.next_action().expect("at least one action");
    assert!(!stream.is_ended());
    assert_eq!(stream.steps(), std::slice::from_ref(&first));
    let ttfa = stream.time_to_first_action().unwrap();
    let outcome = stream.finish();
    assert!(outcome.plan.len() >= 3);
    assert!(ttfa.as_secs_f64() * 2.0 < outcome.timings.total_time);
}

#[test]
fn garbage_completion_is_invalid_not_a_crash() {
    let cfg = config(false);
    let g = generate(&cfg, [50], 4).remove(0);
    let p = NeuroPlanner::new(canned(" hello there\nthis is not a plan\nEND"), domain(&cfg), "m");
    assert_eq!(p.plan_end_to_end(&g.problem).status, PlanningStatus::Invalid);
    let mut stream = p.plan_streaming(&g.problem);
    assert!(stream.next_action().is_none());
    assert_eq!(stream.finish().status, PlanningStatus::Invalid);
}

#[test]
fn well_formed_but_wrong_plan_is_invalid() {
    let cfg = config(false);
    let g = generate(&cfg, [51], 4).remove(0);
    let text = " 0.00100: (release-links link1 gleft)\nEND";
    let p = NeuroPlanner::new(canned(text), domain(&cfg), "m");
    let outcome = p.plan_end_to_end(&g.problem);
    assert_eq!(outcome.status, PlanningStatus::Invalid);
    assert_eq!(outcome.validation.unwrap().failing_step, Some(0));
}

#[test]
fn non_increasing_timestamps_abort_the_stream() {
    let cfg = config(false);
    let g = generate(&cfg, [52], 4).remove(0);
    let text = " 0.00300: (link-to-central-grasp link1 gleft)\n0.00100: (release-links link1 gleft)\nEND";
    let p = NeuroPlanner::new(canned(text), domain(&cfg), "m");
    let mut stream = p.plan_streaming(&g.problem);
    assert!(stream.next_action().is_some());
    assert!(stream.next_action().is_none());
    let outcome = stream.finish();
    assert_eq!(outcome.status, PlanningStatus::Invalid);
    assert!(outcome.reason.unwrap().contains("timestamp"));
}

#[test]
fn truncated_completion_keeps_complete_lines() {
    let problem = long_problem(false, 4);
    // Room for about one and a half plan lines.
    let request = CompletionRequest { max_tokens: 30, ..CompletionRequest::new("m", "") };
    let p = planner(false, Duration::ZERO).with_request(request);
    let whole = p.plan_end_to_end(&problem);
    assert_eq!(whole.status, PlanningStatus::Truncated);
    assert!(!whole.plan.is_empty());
    // The complete lines are a prefix of the real plan, so they execute.
    let report = validate_plan(p.domain(), &problem, &whole.plan);
    assert_eq!(report.steps_applied, whole.plan.len());
    assert_eq!(p.plan_streaming(&problem).finish().status, PlanningStatus::Truncated);
}

#[test]
fn provider_failure_is_reported() {
    let cfg = config(false);
    let g = generate(&cfg, [54], 4).remove(0);
    let p = NeuroPlanner::new(neuroplan::provider::Provider::new(neuroplan::provider::ReplaySource::new([])), domain(&cfg), "m");
    let outcome = p.plan_end_to_end(&g.problem);
    assert_eq!(outcome.status, PlanningStatus::ProviderError);
    assert!(outcome.reason.unwrap().contains("no recorded completion"));
}

#[test]
fn cancelling_a_stream_returns_promptly() {
    let cfg = config(false);
    let g = generate(&cfg, [55], 10).remove(0);
    let p = planner(false, Duration::from_millis(300));
    let mut stream = p.plan_streaming(&g.problem);
    assert_eq!(stream.poll(Duration::from_millis(10)), StreamPoll::Pending);
    let started = Instant::now();
    stream.cancel();
    assert!(started.elapsed() < Duration::from_millis(500));
}

#[test]
fn prompt_carries_the_tag_and_no_statics() {
    let cfg = config(false);
    let g = generate(&cfg, [56], 4).remove(0);
    let p = planner(false, Duration::ZERO).with_tag(Some(neuroplan::dataset::NO_MACRO_TAG.into()));
    let prompt = p.prompt_for(&g.problem);
    assert!(prompt.starts_with("\n--NO-MACRO\n(:init"));
    assert!(!prompt.contains("downstream") && !prompt.contains("first-child"));
}
