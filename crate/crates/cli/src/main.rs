use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedq::chains::{BehaviorPolicy, DEFAULT_MIXING_CAP};
use fedq::experiments::{
    analyze, run_protocol, run_single, write_records, write_summary, write_traces, AnalyzeConfig, ExperimentConfig,
    RunConfig,
};
use fedq::mdp::TabularMdp;
use fedq::samplers::GENERATOR_ID;
use fedq::schedules::{schedule, ScheduleRequest, CONSTANTS_NOTE};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

const EXIT_CONFIG: u8 = 1;
const EXIT_DOMAIN: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "fedq", version, about = "Federated tabular Q-learning: coverage analysis, schedules and experiments")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stationary coverage and mixing statistics of a set of agents.
    Analyze(AnalyzeArgs),
    /// Learning rate, synchronization period and sample size from the guarantees.
    Schedule(ScheduleArgs),
    /// A single federated run (optionally replicated), written as an error trace.
    Run(RunArgs),
    /// A sweep on the synthetic two-state MDP.
    Experiment(ExperimentArgs),
    /// Re-execute a command from its manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Analyze config (JSON). Alternatively give --mdp, --policies and --agents.
    #[arg(long, conflicts_with_all = ["mdp", "policies"])]
    config: Option<PathBuf>,
    /// MDP file (JSON).
    #[arg(long, requires = "policies")]
    mdp: Option<PathBuf>,
    /// Behavior policy pool (JSON list of row-stochastic matrices).
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Number of agents; agent k uses policy ((k-1) mod m) + 1.
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig3,
    Fig4,
    Fig5,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of simulations.
    #[arg(long)]
    sims: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Domain(String),
    Mismatch(String),
}

impl From<fedq::Error> for Failure {
    fn from(e: fedq::Error) -> Self {
        if e.is_domain() {
            Failure::Domain(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Debug, Serialize, Deserialize)]
struct OutputHash {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    version: String,
    generator: String,
    seed: Option<u64>,
    config_sha256: String,
    config: Value,
    outputs: Vec<OutputHash>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<OutputHash> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(OutputHash {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
    })
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: &impl Serialize,
    outputs: Vec<OutputHash>,
) -> CliResult<Manifest> {
    let config = serde_json::to_value(config).expect("serializable");
    let manifest = Manifest {
        command: command.into(),
        version: fedq::VERSION.into(),
        generator: GENERATOR_ID.into(),
        seed,
        config_sha256: sha256_hex(config.to_string().as_bytes()),
        config,
        outputs,
    };
    write_file(dir, "manifest.json", to_json_pretty(&manifest).as_bytes())?;
    Ok(manifest)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> fedq::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn analyze_config(args: &AnalyzeArgs) -> CliResult<AnalyzeConfig> {
    let mut cfg = match (&args.config, &args.mdp, &args.policies) {
        (Some(path), _, _) => {
            let mut cfg: AnalyzeConfig = parse_json(path)?;
            if let Some(k) = args.agents {
                cfg.agents = k;
            }
            cfg
        }
        (None, Some(mdp), Some(policies)) => {
            let mdp = TabularMdp::from_json(&read_text(mdp)?).map_err(|e| Failure::Config(format!("{}: {e}", mdp.display())))?;
            let policies: Vec<BehaviorPolicy> = parse_json(policies)?;
            let agents = args
                .agents
                .ok_or_else(|| Failure::Config("--agents is required with --mdp".into()))?;
            AnalyzeConfig {
                mdp: Some(mdp),
                synthetic: None,
                policies: Some(policies),
                agents,
                seed: 0,
                start_state: 0,
                mixing_cap: DEFAULT_MIXING_CAP,
            }
        }
        _ => return Err(Failure::Config("give either --config or --mdp with --policies".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute_analyze(cfg: &AnalyzeConfig, out: Option<&Path>) -> CliResult<Option<Manifest>> {
    let stats = analyze(cfg)?;
    let json = to_json_pretty(&stats);
    let c_het = stats.c_het.map_or("undefined".to_string(), |c| format!("{c:.6}"));
    eprintln!(
        "mu_min = {:.6e}  mu_avg = {:.6e}  c_het = {c_het}  t_mix_max = {}",
        stats.mu_min, stats.mu_avg, stats.t_mix_max
    );
    if stats.mu_min == 0.0 {
        if stats.mu_avg > 0.0 {
            eprintln!("warning: partial coverage (mu_min = 0): the equal-averaging guarantee is inapplicable, the importance-averaging guarantee applies since mu_avg > 0");
        } else {
            eprintln!("warning: some state-action pair is never visited by any agent (mu_avg = 0): no guarantee applies");
        }
    }
    print!("{json}");
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let outputs = vec![write_file(dir, "coverage.json", json.as_bytes())?];
            Ok(Some(write_manifest(dir, "analyze", Some(cfg.seed), cfg, outputs)?))
        }
        None => Ok(None),
    }
}

fn execute_schedule(req: &ScheduleRequest, out: Option<&Path>) -> CliResult<Option<Manifest>> {
    let sched = schedule(req)?;
    eprintln!("note: {CONSTANTS_NOTE}");
    for w in &sched.warnings {
        eprintln!("warning: {w}");
    }
    let json = to_json_pretty(&sched);
    print!("{json}");
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let outputs = vec![write_file(dir, "schedule.json", json.as_bytes())?];
            Ok(Some(write_manifest(dir, "schedule", None, req, outputs)?))
        }
        None => Ok(None),
    }
}

fn execute_run(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    eprintln!("running {} replication(s)", cfg.n_runs);
    let runs = run_single(cfg)?;
    if let Some(last) = runs.last() {
        let p = last.trace.final_point();
        eprintln!("run {}: normalized error at t = {}: {:.6}", last.run_id, p.t, p.normalized_error);
    }
    let bytes = csv_bytes(|buf| write_traces(buf, &runs))?;
    ensure_dir(out)?;
    let outputs = vec![write_file(out, "trace.csv", &bytes)?];
    write_manifest(out, "run", Some(cfg.seed), cfg, outputs)
}

fn execute_experiment(cfg: &ExperimentConfig, out: &Path) -> CliResult<Manifest> {
    cfg.validate()?;
    ensure_dir(out)?;
    let last_shown = AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        let pct = done * 100 / total;
        if pct > last_shown.load(Ordering::Relaxed) || done == total {
            last_shown.store(pct, Ordering::Relaxed);
            eprint!("\r{done}/{total} cells ({pct}%)");
            if done == total {
                eprintln!();
            }
        }
    };
    let result = run_protocol(cfg, Some(&progress))?;
    let name = cfg.protocol.label();
    let records = csv_bytes(|buf| write_records(buf, &result.records))?;
    let summary = csv_bytes(|buf| write_summary(buf, &result.summary))?;
    let outputs = vec![
        write_file(out, &format!("{name}.csv"), &records)?,
        write_file(out, &format!("{name}_summary.csv"), &summary)?,
    ];
    write_manifest(out, "experiment", Some(cfg.seed), cfg, outputs)
}

fn experiment_config(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => ExperimentConfig::from_json(&read_text(path)?)?,
        (None, Some(p)) => ExperimentConfig::preset(match p {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        })?,
        (None, None) => return Err(Failure::Config("give --config or --preset".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.sims {
        cfg.n_sims = n;
    }
    Ok(cfg)
}

fn from_echo<T: serde::de::DeserializeOwned>(value: &Value) -> CliResult<T> {
    serde_json::from_value(value.clone()).map_err(|e| Failure::Config(format!("manifest config: {e}")))
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let original: Manifest = parse_json(&args.manifest)?;
    if sha256_hex(original.config.to_string().as_bytes()) != original.config_sha256 {
        return Err(Failure::Config("manifest config does not match its recorded hash".into()));
    }
    if original.generator != GENERATOR_ID {
        eprintln!("warning: manifest was produced with generator {:?}", original.generator);
    }
    let out = args.out.as_path();
    let fresh = match original.command.as_str() {
        "analyze" => execute_analyze(&from_echo(&original.config)?, Some(out))?,
        "schedule" => execute_schedule(&from_echo(&original.config)?, Some(out))?,
        "run" => Some(execute_run(&from_echo(&original.config)?, out)?),
        "experiment" => Some(execute_experiment(&from_echo(&original.config)?, out)?),
        other => return Err(Failure::Config(format!("unknown command {other:?} in manifest"))),
    }
    .expect("replay always writes outputs");
    let mut mismatches = Vec::new();
    for want in &original.outputs {
        match fresh.outputs.iter().find(|o| o.file == want.file) {
            Some(got) if got.sha256 == want.sha256 => eprintln!("identical: {}", want.file),
            Some(_) => mismatches.push(format!("{} differs", want.file)),
            None => mismatches.push(format!("{} not produced", want.file)),
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Mismatch(mismatches.join("; ")))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {n} workers: {e}")))?;
    }
    match cli.command {
        Command::Analyze(args) => execute_analyze(&analyze_config(&args)?, args.out.as_deref()).map(drop),
        Command::Schedule(args) => {
            let req: ScheduleRequest = parse_json(&args.config)?;
            execute_schedule(&req, args.out.as_deref()).map(drop)
        }
        Command::Run(args) => {
            let mut cfg = RunConfig::from_json(&read_text(&args.config)?)
                .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            execute_run(&cfg, &args.out).map(drop)
        }
        Command::Experiment(args) => execute_experiment(&experiment_config(&args)?, &args.out).map(drop),
        Command::Replay(args) => replay(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, m),
                Failure::Domain(m) => (EXIT_DOMAIN, m),
                Failure::Mismatch(m) => (EXIT_MISMATCH, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
