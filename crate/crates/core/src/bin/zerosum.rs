use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use zerosum::equilibrium::suite::{default_suite, random_instance, run_entry, Claim, SuiteEntry, SuiteOutcome};
use zerosum::equilibrium::AuditOptions;
use zerosum::example::impossibility_example;
use zerosum::report;
use zerosum::search::{demo_search, SearchMode};
use zerosum::training::{half_gap_step, run_experiment_2, run_grid, Checkpoint, Objective, RunOutput, TrainConfig};
use zerosum::{BaseRule, DecisionRuleSpec, Mechanism, ZeroSumRule};

#[derive(Parser)]
#[command(name = "zerosum", version, about = "Zero-sum joint scoring: audits, searches and training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted-path overrides, e.g. `--set train.temperature=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// The two-action example: a lone forecaster misreports, a zero-sum pair does not.
    Example {
        #[arg(long, value_enum, default_value_t = Base::Log)]
        base: Base,
        #[arg(long)]
        json: bool,
    },
    /// Exhaustive equilibrium audits of mechanism/decision-rule pairs.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Also audit this many random instances.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Search for the best action with pairwise subset comparisons.
    Search {
        #[arg(long, default_value_t = 8)]
        actions: usize,
        #[arg(long, value_enum, default_value_t = Mode::Binary)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        agents: usize,
        #[arg(long, default_value_t = 2)]
        outcomes: usize,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train fresh predictors in the toy environment.
    Train {
        #[command(flatten)]
        common: Common,
        /// An objective name or `all`.
        #[arg(long)]
        objective: Option<String>,
        /// Number of seeds, counted up from `--seed`.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue training performative checkpoints to remove performativity.
    Untrain {
        #[command(flatten)]
        common: Common,
        /// Checkpoint files, or directories of them.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// An objective name or `all`.
        #[arg(long)]
        objective: Option<String>,
    },
    /// Render a metrics CSV to SVG charts.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "metrics")]
        title: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    Log,
    Brier,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Binary,
    Constant,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::anyhow!(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AuditConfig {
    budget: u64,
    tolerance: f64,
    /// Random instances audited under the optimistic and disagreement-seeking rules.
    random_instances: usize,
    seed: u64,
    suite: Vec<SuiteEntry>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let opts = AuditOptions::default();
        Self {
            budget: opts.budget as u64,
            tolerance: opts.tol,
            random_instances: 0,
            seed: 0,
            suite: default_suite(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainRunConfig {
    objectives: Vec<Objective>,
    seeds: Vec<u64>,
    train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            objectives: Objective::ALL.to_vec(),
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct UntrainRunConfig {
    objectives: Vec<Objective>,
    train: TrainConfig,
}

impl Default for UntrainRunConfig {
    fn default() -> Self {
        Self {
            objectives: vec![
                Objective::DropoutZeroSum,
                Objective::DetachedDecision,
                Objective::ExactZeroSum,
            ],
            train: TrainConfig::default(),
        }
    }
}

/// Sets `path` (dot-separated) in `root` to `raw`, read as JSON when it parses and as a string otherwise.
fn set_dotted(root: &mut Value, path: &str, raw: &str) -> anyhow::Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(usage(format!("malformed override key {path:?}")));
    }
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| usage(format!("override {path:?}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Config file (or defaults), then overrides, then strict deserialization.
fn load_config<T: Serialize + DeserializeOwned + Default>(
    path: Option<&Path>,
    overrides: &[String],
) -> anyhow::Result<T> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(T::default())?,
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("override {o:?} is not KEY=VALUE")))?;
        set_dotted(&mut root, k, v)?;
    }
    serde_json::from_value(root).map_err(|e| usage(format!("config: {e}")))
}

fn echo_config<T: Serialize>(dir: &Path, cfg: &T) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

fn parse_objectives(arg: &str) -> anyhow::Result<Vec<Objective>> {
    if arg == "all" {
        return Ok(Objective::ALL.to_vec());
    }
    arg.split(',')
        .map(|s| Objective::parse(s.trim()).map_err(|e| usage(e.to_string())))
        .collect()
}

fn cmd_example(base: Base, json: bool) -> anyhow::Result<ExitCode> {
    let rule = match base {
        Base::Log => BaseRule::log(),
        Base::Brier => BaseRule::quadratic(),
    };
    let r = impossibility_example(rule)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", r.render());
    }
    Ok(if r.all_hold() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn random_entries(cfg: &AuditConfig) -> anyhow::Result<Vec<SuiteEntry>> {
    let zs = Mechanism::ZeroSum(ZeroSumRule::new(BaseRule::log()));
    let mut out = Vec::new();
    for i in 0..cfg.random_instances {
        let inst = random_instance(cfg.seed.wrapping_add(i as u64), 2, 2, 2, 4)?;
        for (name, decision, claim) in [
            ("optimistic_max", DecisionRuleSpec::OptimisticMax, Claim::QuasiStrict),
            (
                "disagreement_seeking_max",
                DecisionRuleSpec::DisagreementSeekingMax { tolerance: 0.0 },
                Claim::Strict,
            ),
        ] {
            out.push(SuiteEntry {
                name: format!("{name}/random_{i}"),
                mechanism: zs,
                decision,
                instance: inst.clone(),
                grid_resolution: 4,
                strong: false,
                claim,
            });
        }
    }
    Ok(out)
}

fn cmd_audit(common: &Common, random: Option<usize>, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let mut overrides = common.overrides.clone();
    if let Some(n) = random {
        overrides.push(format!("random_instances={n}"));
    }
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg: AuditConfig = load_config(common.config.as_deref(), &overrides)?;
    echo_config(&common.out, &cfg)?;
    let opts = AuditOptions {
        budget: cfg.budget as u128,
        tol: cfg.tolerance,
        strong: false,
    };
    let mut entries = cfg.suite.clone();
    entries.extend(random_entries(&cfg)?);
    let reports = common.out.join("reports");
    std::fs::create_dir_all(&reports)?;
    let mut failed = 0;
    println!(
        "{:<44} {:<28} {:>9} {:>6} {:>8}  result",
        "pair", "claim", "profiles", "equil", "|score|"
    );
    for entry in &entries {
        let outcome: SuiteOutcome = run_entry(entry, opts).map_err(|e| usage(format!("{}: {e}", entry.name)))?;
        let file = reports.join(format!("{}.json", entry.name.replace('/', "__")));
        std::fs::write(&file, serde_json::to_string_pretty(&outcome)?)?;
        if !outcome.passed() {
            failed += 1;
        }
        println!(
            "{:<44} {:<28} {:>9} {:>6} {:>8.1e}  {}",
            entry.name,
            format!("{:?}", entry.claim),
            outcome.report.profiles_checked,
            outcome.report.equilibrium_count,
            outcome.report.max_abs_equilibrium_score,
            if outcome.passed() { "PASS" } else { "FAIL" }
        );
    }
    println!("{} pairs audited, {failed} failed", entries.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_search(
    actions: usize,
    mode: Mode,
    seed: u64,
    agents: usize,
    outcomes: usize,
    out: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mode = match mode {
        Mode::Binary => SearchMode::Binary,
        Mode::Constant => SearchMode::Constant,
    };
    let trace = demo_search(seed, actions, outcomes, agents, mode).map_err(|e| usage(e.to_string()))?;
    let json = serde_json::to_string_pretty(&trace)?;
    match out {
        Some(p) => {
            std::fs::write(p, json)?;
            println!("result {} after {} comparisons", trace.result, trace.comparisons);
        }
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(runs: &[RunOutput]) {
    println!(
        "{:<18} {:>5} {:>12} {:>12} {:>9} {:>9}",
        "objective", "seed", "nll_induced", "nll_uniform", "utility", "gap"
    );
    for r in runs {
        let last = r.rows.last().expect("at least the step-0 row");
        println!(
            "{:<18} {:>5} {:>12.5} {:>12.5} {:>9.5} {:>9.5}",
            last.objective.label(),
            last.seed,
            last.nll_induced,
            last.nll_uniform,
            last.utility,
            last.gap
        );
    }
}

fn cmd_train(
    common: &Common,
    objective: Option<&str>,
    seeds: Option<u64>,
    seed: Option<u64>,
) -> anyhow::Result<ExitCode> {
    let mut cfg: TrainRunConfig = load_config(common.config.as_deref(), &common.overrides)?;
    if let Some(o) = objective {
        cfg.objectives = parse_objectives(o)?;
    }
    if seeds.is_some() || seed.is_some() {
        let start = seed.unwrap_or(0);
        let n = seeds.unwrap_or(1);
        cfg.seeds = (start..start + n).collect();
    }
    for &o in &cfg.objectives {
        TrainConfig {
            objective: o,
            ..cfg.train.clone()
        }
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    }
    echo_config(&common.out, &cfg)?;
    let runs = run_grid(&cfg.train, &cfg.objectives, &cfg.seeds)?;
    report::write_run_outputs(&common.out, &runs, "training")?;
    let ckpts = common.out.join("checkpoints");
    std::fs::create_dir_all(&ckpts)?;
    for r in &runs {
        let c = &r.checkpoint;
        c.save(&ckpts.join(format!("{}_seed{}.json", c.config.objective.label(), c.seed)))?;
    }
    summarize(&runs);
    Ok(ExitCode::SUCCESS)
}

fn checkpoint_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(usage(format!("checkpoint {} not found", p.display())));
        }
    }
    if out.is_empty() {
        return Err(usage("no checkpoint files found"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct HalfGap {
    objective: Objective,
    seed: u64,
    initial_gap: f64,
    half_gap_step: Option<usize>,
}

fn cmd_untrain(common: &Common, checkpoints: &[PathBuf], objective: Option<&str>) -> anyhow::Result<ExitCode> {
    let mut cfg: UntrainRunConfig = load_config(common.config.as_deref(), &common.overrides)?;
    if let Some(o) = objective {
        cfg.objectives = parse_objectives(o)?;
    }
    let files = checkpoint_files(checkpoints)?;
    let ckpts: Vec<Checkpoint> = files
        .iter()
        .map(|f| Checkpoint::load(f).map_err(|e| usage(format!("{}: {e}", f.display()))))
        .collect::<anyhow::Result<_>>()?;
    echo_config(&common.out, &cfg)?;
    let mut runs = Vec::new();
    for &o in &cfg.objectives {
        for c in &ckpts {
            let train = TrainConfig {
                objective: o,
                seed: c.seed,
                ..cfg.train.clone()
            };
            runs.push(run_experiment_2(&train, c)?);
        }
    }
    report::write_run_outputs(&common.out, &runs, "untraining")?;
    let half: Vec<HalfGap> = runs
        .iter()
        .map(|r| HalfGap {
            objective: r.checkpoint.config.objective,
            seed: r.checkpoint.seed,
            initial_gap: r.rows[0].gap,
            half_gap_step: half_gap_step(&r.rows),
        })
        .collect();
    std::fs::write(common.out.join("half_gap.json"), serde_json::to_string_pretty(&half)?)?;
    summarize(&runs);
    for h in &half {
        println!(
            "{:<18} seed {:>3}: half the initial gap {:.5} at step {}",
            h.objective.label(),
            h.seed,
            h.initial_gap,
            h.half_gap_step.map_or("never".into(), |s| s.to_string())
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(csv: &Path, out: &Path, title: &str) -> anyhow::Result<ExitCode> {
    if !csv.is_file() {
        return Err(usage(format!("{} not found", csv.display())));
    }
    let rows = report::read_csv(csv).map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    for p in report::write_charts(out, &rows, title)? {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Example { base, json } => cmd_example(base, json),
        Command::Audit { common, random, seed } => cmd_audit(&common, random, seed),
        Command::Search {
            actions,
            mode,
            seed,
            agents,
            outcomes,
            out,
        } => cmd_search(actions, mode, seed, agents, outcomes, out.as_deref()),
        Command::Train {
            common,
            objective,
            seeds,
            seed,
        } => cmd_train(&common, objective.as_deref(), seeds, seed),
        Command::Untrain {
            common,
            checkpoint,
            objective,
        } => cmd_untrain(&common, &checkpoint, objective.as_deref()),
        Command::Plot { csv, out, title } => cmd_plot(&csv, &out, &title),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
