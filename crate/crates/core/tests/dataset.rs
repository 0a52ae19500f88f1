mod common;

use common::*;
use neuroplan::dataset::{
    audit_dataset, build_splits, read_jsonl, split_prompt, write_jsonl, AuditReport, AuditSpec, BuildConfig,
    DatasetSplits, SplitName, TrainingSample, NO_MACRO_TAG, STAGED_SIZES,
};
use neuroplan::solver::{SearchBudget, Satisficing};

fn built(macros: bool, tag: Option<&str>, n: usize) -> DatasetSplits {
    let chain = config(macros);
    let cfg = BuildConfig { n_total: n, seed: 9, chain: chain.clone(), domain_tag: tag.map(str::to_string), ..Default::default() };
    build_splits(&domain(&chain), &cfg, &Satisficing::default()).unwrap().0
}

fn audit(splits: &DatasetSplits, macros: bool, tag: Option<&str>) -> AuditReport {
    let chain = config(macros);
    let d = domain(&chain);
    let named: Vec<(&str, &[TrainingSample])> =
        SplitName::ALL.iter().map(|s| (s.as_str(), splits.get(*s).samples.as_slice())).collect();
    audit_dataset(&named, &AuditSpec { domain: &d, chain: &chain, domain_tag: tag })
}

#[test]
fn builds_are_deterministic_and_clean() {
    let a = built(false, Some(NO_MACRO_TAG), 60);
    let b = built(false, Some(NO_MACRO_TAG), 60);
    assert_eq!(a, b);
    assert!(audit(&a, false, Some(NO_MACRO_TAG)).is_clean());
    assert_eq!([a.train.len(), a.validation.len(), a.test.len()], [48, 6, 6]);
}

#[test]
fn completions_replay_on_the_oracle() {
    let cfg = config(true);
    let splits = built(true, None, 40);
    for sample in &splits.train.samples {
        let parts = split_prompt(&sample.prompt).unwrap();
        let problem = neuroplan::artobj::merge_statics(&cfg, &domain(&cfg), "p", parts.problem).unwrap();
        let plan = neuroplan::pddl::parse_plan(&sample.completion).unwrap().plan;
        let verdict = ChainSim::from_problem(&cfg, &problem).run(&plan, &goal_angles(&problem, 3));
        assert_eq!(verdict, SimVerdict::Valid);
    }
}

#[test]
fn audit_flags_tampering() {
    let mut splits = built(false, None, 30);
    let first = splits.train.samples[0].clone();
    splits.test.samples.push(first);
    // Flipping a rotation's direction breaks its angle guard.
    let k = splits.train.samples.iter().position(|s| s.completion.contains("crease_")).unwrap();
    let text = &splits.train.samples[k].completion;
    let flipped = if text.contains("increase_") { text.replacen("increase_", "decrease_", 1) } else { text.replacen("decrease_", "increase_", 1) };
    splits.train.samples[k].completion = flipped;
    splits.validation.samples[0].completion = splits.validation.samples[0].completion.trim_end_matches("END").to_string();
    let report = audit(&splits, false, None);
    assert_eq!(report.count("contamination"), 1);
    assert_eq!(report.count("invalid plan"), 1);
    assert_eq!(report.count("missing terminator"), 1);
    assert_eq!(audit(&built(false, None, 10), false, Some(NO_MACRO_TAG)).count("tag mismatch"), 10);
}

#[test]
fn jsonl_round_trip() {
    let splits = built(true, None, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    write_jsonl(&path, &splits.train.samples).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), splits.train.samples);
    std::fs::write(&path, "{\"prompt\": \"x\", \"completion\": \"y\"}\nnot json\n").unwrap();
    let err = read_jsonl(&path).unwrap_err().to_string();
    assert!(err.starts_with("line 2"), "{err}");
}

#[test]
fn staged_slices_are_prefixes() {
    let splits = built(true, None, 700);
    let stages = splits.staged_train(&STAGED_SIZES);
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[0].0, 500);
    assert_eq!(stages[0].1, &splits.train.samples[..500]);
}

#[test]
fn solver_failures_are_dropped_not_raised() {
    let chain = config(false);
    let cfg = BuildConfig { n_total: 20, seed: 4, chain: chain.clone(), ..Default::default() };
    let starved = Satisficing { budget: SearchBudget { max_expanded_states: 1, ..Default::default() } };
    let (splits, report) = build_splits(&domain(&chain), &cfg, &starved).unwrap();
    assert!(report.failures > 0);
    assert_eq!(report.kept + report.drops.values().sum::<usize>(), 20);
    assert_eq!(splits.total(), report.kept);
}
