use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use neuroplan::artobj::{make_domain, merge_statics, ChainConfig, Generator};
use neuroplan::dataset::{
    audit_dataset, build_splits, read_jsonl, split_prompt, write_jsonl, AuditSpec, BuildConfig, SplitName,
    TrainingSample, NO_MACRO_TAG,
};
use neuroplan::neuroplanner::NeuroPlanner;
use neuroplan::pddl::{parse_domain, parse_plan, parse_problem, render_domain, render_plan, render_problem, DomainDef, ProblemDef};
use neuroplan::provider::{submit_finetune, CompletionRequest, FinetuneClient, FinetuneRequest, ProviderConfig, ProviderKind};
use neuroplan::semantics::validate_plan;
use neuroplan::solver::{Optimal, Satisficing, SearchBudget, Solver};
use neuroplan::spem::{run_episode, summarize, DisturbanceSchedule, ExecConfig, PlanRecord};

#[derive(Parser)]
#[command(name = "neuroplan", version, about = "Articulated-object planning problems, datasets and streamed plan execution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random problems with witness plans.
    Generate(GenerateArgs),
    /// Solve a problem with the built-in planner.
    Solve(SolveArgs),
    /// Check a plan against a problem.
    Validate(ValidateArgs),
    /// Build train/validation/test JSONL files.
    BuildDataset(BuildArgs),
    /// Re-check a built dataset.
    AuditDataset(AuditArgs),
    /// Ask a completion provider for a plan.
    Plan(PlanArgs),
    /// Execute a streamed plan in a simulated world with disturbances.
    RunEpisode(EpisodeArgs),
    /// Compare whole-plan and streamed planning over a test set.
    Eval(EvalArgs),
    /// Submit staged fine-tuning jobs.
    SubmitFinetune(FinetuneArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainKind {
    Macro,
    NoMacro,
}

#[derive(Args, Clone)]
struct ChainArgs {
    #[arg(long, value_enum, default_value = "no-macro")]
    domain: DomainKind,
    #[arg(long, default_value_t = 3)]
    joints: usize,
    /// Angle grid step in degrees.
    #[arg(long, default_value_t = 15)]
    step: u32,
    /// Rotation increments in degrees, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "45")]
    increments: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    central: usize,
}

impl ChainArgs {
    fn config(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            n_joints: self.joints,
            angle_step_deg: self.step,
            rotation_increments_deg: self.increments.iter().copied().collect(),
            central_joint: self.central,
            use_macros: self.domain == DomainKind::Macro,
            seed,
        }
    }

    fn build(&self, seed: u64) -> Result<(ChainConfig, DomainDef)> {
        let cfg = self.config(seed);
        let domain = make_domain(&cfg)?;
        Ok((cfg, domain))
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Length of the random walk that defines each goal.
    #[arg(long, default_value_t = 8)]
    walk_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 200_000)]
    budget_states: usize,
    #[arg(long, default_value_t = 30.0)]
    budget_secs: f64,
}

impl BudgetArgs {
    fn budget(&self) -> SearchBudget {
        SearchBudget { max_expanded_states: self.budget_states, max_wall_time: Duration::from_secs_f64(self.budget_secs) }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    problem: PathBuf,
    /// Breadth-first search for a shortest plan.
    #[arg(long)]
    optimal: bool,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    walk_len: usize,
    /// Prefix prompts with the no-macro domain tag.
    #[arg(long)]
    tag: bool,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Directory with train/validation/test JSONL files.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    tag: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "emulated")]
    provider: ProviderChoice,
    #[arg(long, default_value = "emulated")]
    model: String,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long)]
    replay_log: Option<PathBuf>,
    /// Delay before each plan line in emulated mode.
    #[arg(long, default_value_t = 100)]
    line_delay_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    presence_penalty: f64,
    #[arg(long, default_value_t = 1900)]
    max_tokens: usize,
    /// Prefix prompts with the no-macro domain tag.
    #[arg(long)]
    tag: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderChoice {
    Remote,
    Replay,
    Emulated,
}

impl ProviderArgs {
    fn planner(&self, cfg: &ChainConfig, domain: &DomainDef) -> Result<NeuroPlanner> {
        let kind = match self.provider {
            ProviderChoice::Remote => ProviderKind::Remote,
            ProviderChoice::Replay => ProviderKind::Replay,
            ProviderChoice::Emulated => ProviderKind::Emulated,
        };
        let pc = ProviderConfig {
            kind,
            model: self.model.clone(),
            endpoint: self.endpoint.clone(),
            auth_env: self.auth_env.clone(),
            replay_log: self.replay_log.clone(),
            line_delay_ms: self.line_delay_ms,
        };
        let provider = pc.build(domain, cfg, Arc::new(Satisficing::default()))?;
        let mut request = CompletionRequest::new(&self.model, "");
        request.presence_penalty = self.presence_penalty;
        request.max_tokens = self.max_tokens;
        request.validate()?;
        Ok(NeuroPlanner::new(provider, domain.clone(), &self.model)
            .with_request(request)
            .with_tag(self.tag.then(|| NO_MACRO_TAG.to_string())))
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    problem: PathBuf,
    /// Print actions as they arrive.
    #[arg(long)]
    stream: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 250)]
    action_ms: u64,
    #[arg(long, default_value_t = 5)]
    replan_limit: usize,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    /// Directory of `.pddl` problems or one containing `test.jsonl`.
    #[arg(long)]
    testset: PathBuf,
    /// Evaluate at most this many problems.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    base_model: String,
    #[arg(long, default_value_t = 2)]
    epochs: u32,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000,8000")]
    stages: Vec<usize>,
    #[arg(long)]
    tag: bool,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    auth_env: Option<String>,
    /// Write request payloads here instead of contacting the service.
    #[arg(long)]
    dry_run: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(io::stdout(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_problem(path: &Path, domain: &DomainDef) -> Result<ProblemDef> {
    parse_problem(&read(path)?, domain).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct ManifestEntry {
    problem: String,
    witness: String,
    walk_len: usize,
    seed: u64,
}

fn generate(args: GenerateArgs) -> Result<()> {
    let (cfg, domain) = args.chain.build(args.seed)?;
    fs::create_dir_all(&args.out)?;
    write(&args.out.join("domain.pddl"), &render_domain(&domain))?;
    let generator = Generator::new(&domain, &cfg)?;
    let mut entries = Vec::new();
    for i in 0..args.n {
        let seed = args.seed.wrapping_add(i as u64);
        let generated = generator.generate(seed, args.walk_len)?;
        let stem = format!("problem-{i:04}");
        write(&args.out.join(format!("{stem}.pddl")), &render_problem(&generated.problem))?;
        write(&args.out.join(format!("{stem}.plan")), &(render_plan(&generated.witness.retimed()) + "\n"))?;
        entries.push(ManifestEntry {
            problem: format!("{stem}.pddl"),
            witness: format!("{stem}.plan"),
            walk_len: args.walk_len,
            seed,
        });
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        domain: &'a str,
        chain: &'a ChainConfig,
        problems: Vec<ManifestEntry>,
    }
    write_json(&args.out.join("manifest.json"), &Manifest { domain: domain.name.as_str(), chain: &cfg, problems: entries })?;
    eprintln!("wrote {} problems to {}", args.n, args.out.display());
    Ok(())
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let domain = parse_domain(&read(&args.domain)?).context("parsing domain")?;
    let problem = load_problem(&args.problem, &domain)?;
    let solver: Box<dyn Solver> = if args.optimal {
        Box::new(Optimal { limit: args.budget.budget_states })
    } else {
        Box::new(Satisficing { budget: args.budget.budget() })
    };
    let result = solver.solve(&domain, &problem);
    if let (Some(out), Some(plan)) = (&args.out, result.plan()) {
        write(out, &(render_plan(&plan.retimed()) + "\n"))?;
    }
    print_json(&result)?;
    Ok(if result.plan().is_some() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let domain = parse_domain(&read(&args.domain)?).context("parsing domain")?;
    let problem = load_problem(&args.problem, &domain)?;
    let plan = parse_plan(&read(&args.plan)?).context("parsing plan")?.plan;
    let report = validate_plan(&domain, &problem, &plan);
    print_json(&report)?;
    Ok(if report.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn tag(enabled: bool) -> Option<String> {
    enabled.then(|| NO_MACRO_TAG.to_string())
}

fn build_dataset(args: BuildArgs) -> Result<()> {
    let (chain, domain) = args.chain.build(args.seed)?;
    let cfg = BuildConfig {
        n_total: args.n,
        seed: args.seed,
        walk_len: args.walk_len,
        chain,
        domain_tag: tag(args.tag),
        ..Default::default()
    };
    let (splits, report) = build_splits(&domain, &cfg, &Satisficing { budget: args.budget.budget() })?;
    fs::create_dir_all(&args.out)?;
    for name in SplitName::ALL {
        write_jsonl(&args.out.join(format!("{}.jsonl", name.as_str())), &splits.get(name).samples)?;
    }
    write_json(&args.out.join("build_report.json"), &report)?;
    eprintln!(
        "kept {} of {} problems (train {}, validation {}, test {})",
        report.kept,
        report.requested,
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    Ok(())
}

fn audit(args: AuditArgs) -> Result<ExitCode> {
    let (chain, domain) = args.chain.build(0)?;
    let mut loaded: Vec<(&str, Vec<TrainingSample>)> = Vec::new();
    for name in SplitName::ALL {
        let path = args.dir.join(format!("{}.jsonl", name.as_str()));
        if path.exists() {
            loaded.push((name.as_str(), read_jsonl(&path)?));
        }
    }
    if loaded.is_empty() {
        bail!("no split files found in {}", args.dir.display());
    }
    let splits: Vec<(&str, &[TrainingSample])> = loaded.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    let tag = tag(args.tag);
    let report = audit_dataset(&splits, &AuditSpec { domain: &domain, chain: &chain, domain_tag: tag.as_deref() });
    match &args.report {
        Some(path) => write_json(path, &report)?,
        None => print_json(&report)?,
    }
    eprintln!("{} samples checked, {} violations", report.samples_checked, report.violations.len());
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn plan(args: PlanArgs) -> Result<ExitCode> {
    let (cfg, domain) = args.chain.build(0)?;
    let planner = args.provider.planner(&cfg, &domain)?;
    let problem = load_problem(&args.problem, &domain)?;
    let outcome = if args.stream {
        let mut stream = planner.plan_streaming(&problem);
        while let Some(step) = stream.next_action() {
            println!("{step}");
        }
        stream.finish()
    } else {
        let outcome = planner.plan_end_to_end(&problem);
        println!("{}", render_plan(&outcome.plan));
        outcome
    };
    match &args.report {
        Some(path) => write_json(path, &outcome)?,
        None => eprintln!("{}", serde_json::to_string(&outcome.timings)?),
    }
    if let Some(reason) = &outcome.reason {
        eprintln!("{reason}");
    }
    Ok(if outcome.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn episode(args: EpisodeArgs) -> Result<ExitCode> {
    let (cfg, domain) = args.chain.build(0)?;
    let planner = args.provider.planner(&cfg, &domain)?;
    let problem = load_problem(&args.problem, &domain)?;
    let schedule = match &args.schedule {
        Some(path) => DisturbanceSchedule::load(path)?,
        None => DisturbanceSchedule::default(),
    };
    schedule.validate(&domain)?;
    let exec = ExecConfig {
        action_duration: Duration::from_millis(args.action_ms),
        replan_limit: args.replan_limit,
        ..Default::default()
    };
    let episode = run_episode(&planner, &problem, &schedule, &exec);
    match &args.trace {
        Some(path) => write_json(path, &episode)?,
        None => print_json(&episode.trace)?,
    }
    eprintln!("{}", serde_json::to_string(&episode.metrics)?);
    Ok(if episode.metrics.goal_reached { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn load_testset(dir: &Path, cfg: &ChainConfig, domain: &DomainDef) -> Result<Vec<ProblemDef>> {
    let jsonl = dir.join("test.jsonl");
    if jsonl.exists() {
        return read_jsonl(&jsonl)?
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let parts = split_prompt(&s.prompt).with_context(|| format!("sample {i}: malformed prompt"))?;
                merge_statics(cfg, domain, &format!("test-{i}"), parts.problem)
                    .with_context(|| format!("sample {i}: unparsable problem"))
            })
            .collect();
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pddl") && p.file_name().is_some_and(|n| n != "domain.pddl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_problem(p, domain)).collect()
}

fn eval(args: EvalArgs) -> Result<()> {
    let (cfg, domain) = args.chain.build(0)?;
    let planner = args.provider.planner(&cfg, &domain)?;
    let mut problems = load_testset(&args.testset, &cfg, &domain)?;
    if let Some(limit) = args.limit {
        problems.truncate(limit);
    }
    let label = domain.name.to_string();
    let (whole_name, stream_name) = (format!("{label} end-to-end"), format!("{label} streaming"));
    let mut whole = Vec::new();
    let mut streamed = Vec::new();
    for (i, problem) in problems.iter().enumerate() {
        whole.push(PlanRecord::from_outcome(&planner.plan_end_to_end(problem), false));
        streamed.push(PlanRecord::from_outcome(&planner.plan_streaming(problem).finish(), true));
        eprintln!("{}/{}", i + 1, problems.len());
    }
    let report = summarize(
        &[(whole_name.clone(), whole), (stream_name.clone(), streamed)],
        &[(stream_name, whole_name)],
    );
    match &args.report {
        Some(path) => write_json(path, &report)?,
        None => print_json(&report)?,
    }
    Ok(())
}

fn finetune(args: FinetuneArgs) -> Result<()> {
    let (chain, domain) = args.chain.build(0)?;
    let train = read_jsonl(&args.train)?;
    let validation = args.validation.as_deref().map(read_jsonl).transpose()?;
    let mut splits: Vec<(&str, &[TrainingSample])> = vec![("train", &train)];
    if let Some(v) = &validation {
        splits.push(("validation", v));
    }
    let tag = tag(args.tag);
    let audit = audit_dataset(&splits, &AuditSpec { domain: &domain, chain: &chain, domain_tag: tag.as_deref() });
    let client = match (&args.dry_run, &args.endpoint, &args.auth_env) {
        (Some(dir), _, _) => FinetuneClient::dry_run(dir),
        (None, Some(endpoint), Some(auth)) => FinetuneClient::new(endpoint, auth),
        _ => bail!("either --dry-run or both --endpoint and --auth-env are required"),
    };
    let request = FinetuneRequest {
        validation_file: args.validation.clone(),
        epochs: args.epochs,
        staged_sizes: args.stages.clone(),
        ..FinetuneRequest::new(&args.train, &args.base_model)
    };
    let job = submit_finetune(&client, &request, &audit)?;
    print_json(&job)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a).map(|()| ExitCode::SUCCESS),
        Command::Solve(a) => solve(a),
        Command::Validate(a) => validate(a),
        Command::BuildDataset(a) => build_dataset(a).map(|()| ExitCode::SUCCESS),
        Command::AuditDataset(a) => audit(a),
        Command::Plan(a) => plan(a),
        Command::RunEpisode(a) => episode(a),
        Command::Eval(a) => eval(a).map(|()| ExitCode::SUCCESS),
        Command::SubmitFinetune(a) => finetune(a).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
