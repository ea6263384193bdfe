//! Command-line verbs. Results go to stdout as CSV or JSON; diagnostics go
//! to stderr through the logger.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use trileg_core::config::Config;
use trileg_core::episode::{
    mse, prune_episode_dir, read_voltage_csv, summarize_dataset, EpisodeMeta, EpisodeWriter, MetricsReport, TaskCategory, DEFAULT_KEEP_N,
    META_FILE,
};
use trileg_core::eval::{expert_factory, run_eval, EvalRow, EvalSettings};
use trileg_core::expert::{parse_instruction, InstructionSpec};
use trileg_core::primitive::{macro_average, PrimitiveKind};
use trileg_core::render::Renderer;
use trileg_core::robot::{RobotState, Simulator};
use trileg_core::rollout::{rollout, Policy, PolicyError, Recording, ZeroPolicy};

use crate::remote::{RemotePolicy, DEFAULT_REPLY_TIMEOUT};
use crate::server::Server;

#[derive(Debug, Parser)]
#[command(name = "trileg", version, about = "Tri-leg magnetic robot simulator, session server and evaluation tools")]
pub struct Cli {
    /// TOML config file; falls back to $TRILEG_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve lockstep sessions over TCP (NDJSON or WebSocket).
    Serve(ServeArgs),
    /// Run one instruction closed-loop and print the trial result as JSON.
    Rollout(RolloutArgs),
    /// Seeded multi-trial evaluation; prints a CSV success table.
    Eval(EvalArgs),
    /// Count valid episodes and pairs under a dataset root (or in one episode); prints JSON.
    DatasetSummarize { root: PathBuf },
    /// Copy an episode (or every episode under a root) with static runs pruned.
    DatasetPrune {
        src: PathBuf,
        dst: PathBuf,
        #[arg(long, default_value_t = DEFAULT_KEEP_N)]
        keep_n: usize,
    },
    /// Per-axis mean squared error between two voltage CSVs.
    Mse(MseArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
    /// Pace acts to this rate in Hz (overrides the config).
    #[arg(long)]
    pub pace_hz: Option<f64>,
    /// Directory recordings are written under (overrides the config).
    #[arg(long)]
    pub record_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Expert,
    Zero,
    External,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = PolicyChoice::Expert)]
    pub policy: PolicyChoice,
    /// Address of the external policy process.
    #[arg(long, required_if_eq("policy", "external"))]
    pub policy_addr: Option<SocketAddr>,
    /// Seconds to wait for each external reply.
    #[arg(long, default_value_t = DEFAULT_REPLY_TIMEOUT.as_secs_f64())]
    pub policy_timeout: f64,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Instruction text, e.g. "FORWARD 10" or "ROTATE_LEFT 30".
    #[arg(long)]
    pub instruction: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub randomize_pose: bool,
    /// Defaults to the config's t_max.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Record the rollout as an episode in this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long, default_value = "grid_marker", value_parser = parse_category)]
    pub category: TaskCategory,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Primitive name, or `all` for every primitive plus the macro-average.
    #[arg(long)]
    pub primitive: String,
    #[arg(long, default_value_t = trileg_core::eval::DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// Start every trial from the rest pose instead of a random one.
    #[arg(long)]
    pub fixed_pose: bool,
    /// Print full per-trial outcomes as JSON instead of the CSV table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct MseArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Compare the dvx,dvy,dvz columns instead of vx,vy,vz.
    #[arg(long)]
    pub increments: bool,
    /// Label for the first column of the row.
    #[arg(long, default_value = "all")]
    pub motion: String,
}

fn parse_category(s: &str) -> Result<TaskCategory, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| "expected grid_marker, white_lesion or yellow_lesion".to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = Config::resolve(cli.config.as_deref())?;
    config.validate()?;
    match cli.command {
        Command::Serve(args) => serve(config, args),
        Command::Rollout(args) => rollout_cmd(&config, args, out),
        Command::Eval(args) => eval_cmd(&config, args, out),
        Command::DatasetSummarize { root } => {
            let summary = summarize_dataset(&root)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
            Ok(())
        }
        Command::DatasetPrune { src, dst, keep_n } => prune_cmd(&src, &dst, keep_n, out),
        Command::Mse(args) => {
            let pred = read_voltage_csv(&args.pred, args.increments)?;
            let truth = read_voltage_csv(&args.truth, args.increments)?;
            let report = mse(&pred, &truth)?;
            writeln!(out, "{}\n{}", MetricsReport::HEADER, report.row(&args.motion))?;
            Ok(())
        }
    }
}

fn serve(mut config: Config, args: ServeArgs) -> Result<()> {
    if args.pace_hz.is_some() {
        config.session.pace_hz = args.pace_hz;
    }
    if let Some(root) = args.record_root {
        config.session.record_root = root;
    }
    config.validate()?;
    let server = Server::bind(&args.bind, config).with_context(|| format!("bind {}", args.bind))?;
    let handle = server.shutdown_handle()?;
    ctrlc::set_handler(move || handle.shutdown()).context("install signal handler")?;
    log::info!("listening on {}", server.local_addr()?);
    eprintln!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

type Factory<'a> = Box<dyn FnMut(&InstructionSpec, &RobotState) -> Result<Box<dyn Policy>, PolicyError> + 'a>;

fn factory<'a>(config: &'a Config, args: &PolicyArgs) -> Result<Factory<'a>> {
    Ok(match args.policy {
        PolicyChoice::Expert => Box::new(expert_factory(config)),
        PolicyChoice::Zero => Box::new(|_: &InstructionSpec, _: &RobotState| Ok(Box::new(ZeroPolicy) as Box<dyn Policy>)),
        PolicyChoice::External => {
            let addr = args.policy_addr.context("--policy-addr is required with --policy external")?;
            if !(args.policy_timeout.is_finite() && args.policy_timeout > 0.0) {
                bail!("--policy-timeout must be positive");
            }
            let timeout = Duration::from_secs_f64(args.policy_timeout);
            Box::new(move |instr: &InstructionSpec, _: &RobotState| {
                Ok(Box::new(RemotePolicy::connect(addr, instr, config, timeout)?) as Box<dyn Policy>)
            })
        }
    })
}

fn rollout_cmd(config: &Config, args: RolloutArgs, out: &mut dyn Write) -> Result<()> {
    let instruction = parse_instruction(&args.instruction)?;
    let mut sim_cfg = config.sim;
    sim_cfg.seed = args.seed;
    let mut sim = Simulator::from_reset(config.model(), sim_cfg, args.randomize_pose)?;
    let state0 = sim.state().clone();
    let spec = instruction.primitive_spec(&state0, &config.primitives, &config.robot);
    let env = config.coil.envelope();
    let mut make = factory(config, &args.policy)?;
    let mut policy = make(&instruction, &state0)?;
    let max_steps = args.max_steps.unwrap_or(config.primitives.t_max);

    let renderer = Renderer::new(&config.robot);
    let scene = config.session.scene.clone();
    let mut writer = match &args.record {
        Some(dir) => {
            if dir.join(META_FILE).exists() {
                bail!("{} already holds an episode", dir.display());
            }
            let meta = EpisodeMeta::new(args.category, instruction.to_string(), scene.clone(), args.seed, config.hash());
            Some(EpisodeWriter::create(dir, meta)?)
        }
        None => None,
    };
    let recording = writer.as_mut().map(|w| Recording { writer: w, renderer: &renderer, scene: &scene });
    let r = rollout(policy.as_mut(), &mut sim, &env, &spec, max_steps, recording)?;
    let samples = match writer {
        Some(w) => Some(w.finalize()?.samples.len()),
        None => None,
    };
    let report = json!({
        "instruction": instruction.to_string(),
        "seed": args.seed,
        "result": r.result,
        "final_state": sim.state(),
        "episode": args.record,
        "samples": samples,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn eval_cmd(config: &Config, args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let kinds: Vec<PrimitiveKind> =
        if args.primitive.eq_ignore_ascii_case("all") { PrimitiveKind::ALL.to_vec() } else { vec![args.primitive.parse()?] };
    let settings = EvalSettings { trials: args.trials, base_seed: args.base_seed, randomize_pose: !args.fixed_pose };
    let mut rows: Vec<EvalRow> = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let row = run_eval(kind, &settings, config, factory(config, &args.policy)?)?;
        log::info!("{kind}: {}/{} ({:?})", row.successes, row.trials, row.violations);
        rows.push(row);
    }
    let rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    let average = macro_average(&rates)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&json!({ "rows": rows, "macro_average": average }))?)?;
    } else {
        writeln!(out, "{}", EvalRow::HEADER)?;
        for r in &rows {
            writeln!(out, "{}", r.table_row())?;
        }
        if rows.len() > 1 {
            let trials: usize = rows.iter().map(|r| r.trials).sum();
            let successes: usize = rows.iter().map(|r| r.successes).sum();
            writeln!(out, "macro_average,{trials},{successes},{:.1}", 100.0 * average)?;
        }
    }
    Ok(())
}

fn prune_cmd(src: &Path, dst: &Path, keep_n: usize, out: &mut dyn Write) -> Result<()> {
    let pairs: Vec<(PathBuf, PathBuf)> = if src.join(META_FILE).is_file() {
        vec![(src.to_path_buf(), dst.to_path_buf())]
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(src)
            .with_context(|| format!("read {}", src.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.into_iter()
            .map(|d| {
                let o = dst.join(d.file_name().expect("entry has a name"));
                (d, o)
            })
            .collect()
    };
    let mut report = Vec::new();
    let (mut before, mut after) = (0usize, 0usize);
    for (i, o) in pairs {
        let original = trileg_core::episode::load_episode(&i)?;
        let pruned = prune_episode_dir(&i, &o, keep_n).with_context(|| format!("prune {}", i.display()))?;
        before += original.samples.len();
        after += pruned.samples.len();
        report.push(json!({ "src": i, "dst": o, "samples_before": original.samples.len(), "samples_after": pruned.samples.len() }));
    }
    let summary = json!({ "episodes": report, "samples_before": before, "samples_after": after, "keep_n": keep_n });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
