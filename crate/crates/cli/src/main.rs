use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use visnav::pipeline::GoalMode;
use visnav::sim::read_trace;
use visnav::workflow::{self, WorkflowConfig, WorkflowError, Workspace, MAP_FILE, WORKSPACE_ENV};

mod plot;

#[derive(Parser)]
#[command(name = "visnav", version, about = "Target-driven visual navigation workbench")]
struct Cli {
    /// Workspace directory for all artifacts.
    #[arg(long, short = 'w', env = WORKSPACE_ENV, default_value = "workspace", global = true)]
    workspace: PathBuf,
    /// TOML config file; unset fields take their defaults.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set model.embedding_dim=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GoalModeArg {
    Learned,
    Gps,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the floorplan map.
    GenMap,
    /// Render the autoencoder image dataset.
    GenAeData,
    /// Train the autoencoder.
    TrainAe,
    /// Record expert trajectories as policy examples.
    GenPolicyData,
    /// Train the policy.
    TrainPolicy,
    /// Build goal-check pairs.
    GenGoalData,
    /// Train the goal checker.
    TrainGoal,
    /// Run the navigation benchmark.
    Eval {
        /// Action source strategy (`learned` or `expert`).
        #[arg(long)]
        action_source: Option<String>,
        /// Goal detection: the learned goal checker or true position.
        #[arg(long, value_enum)]
        goal_mode: Option<GoalModeArg>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Plot an episode trace over the map as PNG.
    ReplayPlot {
        #[arg(long)]
        trace: PathBuf,
        /// Map file; defaults to the workspace map.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per map cell.
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<WorkflowError> for Failure {
    fn from(e: WorkflowError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn print_line(line: &str) {
    println!("{line}");
}

fn run_stage(
    cli: &Cli,
    cfg: &WorkflowConfig,
    stage: fn(&Workspace, &WorkflowConfig, workflow::Progress) -> Result<workflow::StageSummary, WorkflowError>,
) -> Result<(), Failure> {
    let ws = Workspace::open(&cli.workspace)?;
    let _lock = ws.lock()?;
    let summary = stage(&ws, cfg, &mut print_line)?;
    for a in &summary.artifacts {
        println!("wrote {} ({})", a.path, &a.content_hash[..12]);
    }
    println!("summary: {}", ws.path(&format!("reports/{}.summary.json", summary.stage)).display());
    Ok(())
}

fn replay_plot(cli: &Cli, trace: &Path, map: Option<&Path>, out: &Path, scale: u32) -> Result<(), Failure> {
    let map_path = map.map(Path::to_path_buf).unwrap_or_else(|| cli.workspace.join(MAP_FILE));
    let map = workflow::read_map_file(&map_path)?;
    let file = std::fs::File::open(trace).map_err(|e| Failure::Validation(format!("{}: {e}", trace.display())))?;
    let records = read_trace(std::io::BufReader::new(file))
        .map_err(|e| Failure::Validation(format!("{}: {e}", trace.display())))?;
    let img = plot::render_plot(&map, &records, scale).map_err(|e| Failure::Validation(e.to_string()))?;
    let bytes = plot::encode_png(&img).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(out, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    println!("wrote {} ({} points)", out.display(), plot::trace_polyline(&records).len());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = WorkflowConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::GenMap => run_stage(cli, &cfg, workflow::stage_gen_map),
        Command::GenAeData => run_stage(cli, &cfg, workflow::stage_gen_ae_data),
        Command::TrainAe => run_stage(cli, &cfg, workflow::stage_train_ae),
        Command::GenPolicyData => run_stage(cli, &cfg, workflow::stage_gen_policy_data),
        Command::TrainPolicy => run_stage(cli, &cfg, workflow::stage_train_policy),
        Command::GenGoalData => run_stage(cli, &cfg, workflow::stage_gen_goal_data),
        Command::TrainGoal => run_stage(cli, &cfg, workflow::stage_train_goal),
        Command::Eval { action_source, goal_mode, trials } => {
            if let Some(s) = action_source {
                cfg.benchmark.action_source = s.clone();
            }
            if let Some(t) = trials {
                cfg.benchmark.trials = *t;
            }
            match goal_mode {
                Some(GoalModeArg::Learned) => cfg.pipeline.goal_mode = GoalMode::Learned,
                Some(GoalModeArg::Gps) => cfg.pipeline.goal_mode = GoalMode::Gps { tolerance: cfg.benchmark.tolerance },
                None => {}
            }
            cfg.validate()?;
            let ws = Workspace::open(&cli.workspace)?;
            let _lock = ws.lock()?;
            let (summary, _) = workflow::stage_eval(&ws, &cfg, &mut print_line)?;
            println!("summary: {}", ws.path(&format!("reports/{}.summary.json", summary.stage)).display());
            Ok(())
        }
        Command::ReplayPlot { trace, map, out, scale } => replay_plot(cli, trace, map.as_deref(), out, *scale),
        Command::ShowConfig => {
            println!("# config_hash = \"{}\"", cfg.hash());
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
