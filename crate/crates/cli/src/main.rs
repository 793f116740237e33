//! `ipp3d` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 file or format error,
//! 4 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipp3d::config::{ConfigError, RunConfig};
use ipp3d::nnpolicy::{load_params, PolicyError};
use ipp3d::planners::{evaluate, summarize, write_csv, EvalSummary, PlannerKind};
use ipp3d::ppo::{train, PpoError, PARAMS_FILE};
use ipp3d::world::{Cell, World, WorldError};

#[derive(Parser)]
#[command(name = "ipp3d", version, about = "Adaptive informative path planning in synthetic orchards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.total_interactions=20000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed (training seed, evaluation trial seed, or first world seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write evaluation worlds as JSON files.
    GenWorlds {
        #[command(flatten)]
        common: Common,
        /// Number of worlds; defaults to `eval.n_worlds`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the attention policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the evaluation protocol for one planner.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        planner: PlannerKind,
        /// Policy checkpoint file, or a training directory containing one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of world JSON files; generated from `eval.world_seed` when omitted.
        #[arg(long)]
        worlds: Option<PathBuf>,
    },
    /// Print a summary of one world.
    InspectWorld {
        #[command(flatten)]
        common: Common,
        /// World JSON file; generated from the seed when omitted.
        world: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<WorldError> for Failure {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Io(_) | WorldError::Json(_) => Failure::Io(e.to_string()),
            WorldError::Config(_) | WorldError::Placement { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<PolicyError> for Failure {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::AllMasked => Failure::Runtime(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<PpoError> for Failure {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::World(w) => w.into(),
            PpoError::Policy(p) => p.into(),
            PpoError::Io(_) | PpoError::Csv(_) | PpoError::Json(_) => Failure::Io(e.to_string()),
            PpoError::Resume(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn load_config(common: &Common, seed_key: &str) -> Result<RunConfig, Failure> {
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("{seed_key}={s}"));
    }
    if let Some(j) = common.jobs {
        overrides.push(format!("jobs={j}"));
    }
    let mut cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if cfg.jobs > 0 {
        // Fails only if the pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    Ok(cfg)
}

fn world_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("world_{index:03}.json"))
}

fn generate_worlds(cfg: &RunConfig, count: usize) -> Result<Vec<World>, Failure> {
    let gen = cfg.eval_world_config();
    (0..count)
        .map(|i| World::generate(&gen, cfg.eval.world_seed + i as u64).map_err(Failure::from))
        .collect()
}

fn load_worlds(dir: &Path, resolution: usize) -> Result<Vec<World>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Io(format!("no world files in {}", dir.display())));
    }
    paths.iter().map(|p| World::load(p, resolution).map_err(Failure::from)).collect()
}

fn cmd_gen_worlds(common: &Common, count: Option<usize>) -> Result<(), Failure> {
    let cfg = load_config(common, "eval.world_seed")?;
    let n = count.unwrap_or(cfg.eval.n_worlds);
    fs::create_dir_all(&cfg.out)?;
    for (i, w) in generate_worlds(&cfg, n)?.iter().enumerate() {
        w.save(&world_path(&cfg.out, i))?;
    }
    println!("wrote {n} worlds to {}", cfg.out.display());
    Ok(())
}

fn cmd_train(common: &Common, resume: bool) -> Result<(), Failure> {
    let cfg = load_config(common, "seed")?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml_string())?;
    let (_, summary) = train::<f64>(&cfg.train_setup(), &cfg.out, resume)?;
    if let Some(last) = summary.log.last() {
        println!(
            "iterations {} interactions {} mean_return {:.4} mean_pct_targets {:.2}",
            summary.iterations, summary.interactions, last.mean_return, last.mean_pct_targets
        );
    }
    println!("checkpoint in {}", cfg.out.display());
    Ok(())
}

fn print_summary(s: &[EvalSummary]) {
    println!("{:<8} {:>16} {:>8} {:>18}", "planner", "mean_pct_targets", "std", "mean_replan_ms");
    for r in s {
        println!("{:<8} {:>16.2} {:>8.2} {:>18.2}", r.planner, r.mean_pct_targets, r.std, r.mean_replan_time);
    }
}

fn cmd_eval(
    common: &Common,
    planner: PlannerKind,
    checkpoint: Option<&Path>,
    worlds_dir: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(common, "eval.trial_seed")?;
    let params = match (planner, checkpoint) {
        (PlannerKind::Policy, None) => {
            return Err(Failure::Config("the policy planner needs --checkpoint".into()));
        }
        (PlannerKind::Policy, Some(p)) => {
            let file = if p.is_dir() { p.join(PARAMS_FILE) } else { p.to_path_buf() };
            Some(load_params::<f64>(&file)?)
        }
        _ => None,
    };
    let worlds = match worlds_dir {
        Some(d) => load_worlds(d, cfg.world.resolution)?,
        None => generate_worlds(&cfg, cfg.eval.n_worlds)?,
    };
    let (logs, rows) = evaluate(planner, params.as_ref(), &worlds, &cfg.eval, &cfg.mission);
    if let Some(msg) = logs.iter().find_map(|l| l.abnormal.as_ref()) {
        return Err(Failure::Runtime(format!("episode ended abnormally: {msg}")));
    }
    let summary = summarize(&rows);
    fs::create_dir_all(&cfg.out)?;
    write_csv(&cfg.out.join(format!("eval_{planner}_steps.csv")), &rows)?;
    write_csv(&cfg.out.join(format!("eval_{planner}_summary.csv")), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_inspect_world(common: &Common, path: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common, "eval.world_seed")?;
    let world = match path {
        Some(p) => World::load(p, cfg.world.resolution)?,
        None => World::generate(&cfg.eval_world_config(), cfg.eval.world_seed)?,
    };
    let grid = world.grid();
    let tree_voxels = grid.count(Cell::Occupied);
    println!("seed        {}", world.seed);
    println!("mode        {:?}", world.mode);
    println!("trees       {}", world.trees.len());
    println!("targets     {}", world.n_targets());
    println!("tree voxels {tree_voxels} of {}", grid.cells().len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenWorlds { common, count } => cmd_gen_worlds(common, *count),
        Command::Train { common, resume } => cmd_train(common, *resume),
        Command::Eval { common, planner, checkpoint, worlds } => {
            cmd_eval(common, *planner, checkpoint.as_deref(), worlds.as_deref())
        }
        Command::InspectWorld { common, world } => cmd_inspect_world(common, world.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
