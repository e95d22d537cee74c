use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prl::experiment::checkpoint::{agent_checkpoint, q_checkpoint, restore_agent};
use prl::experiment::{
    bound_csv, episodes_csv, run_eps_bound, run_learning_curve, run_performance_sweep, sweep_csv, train_cell, Checkpoint,
    ExperimentConfig, MazeEnv,
};
use prl::gridworld::{generate_maze, load_maze, save_maze};
use prl::solver;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "prl", version, about = "Planning-augmented tabular RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the 10x10 desk preset.
    #[arg(long)]
    desk: bool,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Run a single kappa instead of the configured list.
    #[arg(long)]
    kappa: Option<f64>,
    /// Maze text file, overriding the generated maze.
    #[arg(long)]
    maze: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a maze and its p_succ / reward grids.
    GenMaze(Common),
    /// Train one agent and write its tables.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from an agent checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Learning curves for every (kappa, seed).
    Curve(Common),
    /// Final greedy performance for every kappa.
    Sweep(Common),
    /// Q-learning gap against the perturbation bound.
    EpsBound(Common),
    /// Exact optimal values of the maze.
    Solve(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p, c.desk)?,
        None if c.desk => ExperimentConfig::desk(),
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(k) = c.kappa {
        cfg.kappas = vec![k];
    }
    if let Some(m) = &c.maze {
        cfg.maze_file = Some(m.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn say(c: &Common, msg: impl AsRef<str>) {
    if !c.quiet {
        println!("{}", msg.as_ref());
    }
}

fn gen_maze(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.maze.seed = s;
    }
    let maze = match &cfg.maze_file {
        Some(p) => load_maze(p)?,
        None => generate_maze(&cfg.maze)?,
    };
    std::fs::create_dir_all(&c.out)?;
    save_maze(&maze, &c.out.join("maze.txt"))?;
    write(&c.out, "p_succ.csv", &maze.p_succ_csv())?;
    write(&c.out, "reward.csv", &maze.reward_csv())?;
    say(c, format!("maze {}x{} seed {}, shortest path {}", maze.width, maze.height, maze.seed, maze.shortest_path_len()));
    Ok(())
}

fn train(c: &Common, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(c)?;
    if c.kappa.is_none() && cfg.kappas.len() > 1 && cfg.algorithm == prl::agent::Algorithm::Prl {
        bail!("train runs one agent: pass --kappa or configure a single kappa");
    }
    let kappa = cfg.kappas[0];
    let seed = cfg.seeds[0];
    let env = MazeEnv::from_config(&cfg)?;
    let config = cfg.agent_config(kappa);
    let (agent, episodes, rng) = match resume {
        None => {
            let cell = train_cell(&env, &config, seed, cfg.n_episodes)?;
            (cell.agent, cell.episodes, cell.rng)
        }
        Some(p) => {
            let mut agent = env.agent(&config)?;
            let ck = Checkpoint::load(p).with_context(|| format!("cannot load {}", p.display()))?;
            let mut rng = restore_agent(&mut agent, &ck)?;
            let mut mdp = env.mdp.clone();
            let episodes = (0..cfg.n_episodes).map(|_| agent.run_episode(&mut mdp, &mut rng)).collect::<Result<Vec<_>, _>>()?;
            (agent, episodes, rng)
        }
    };
    write(&c.out, "episodes.csv", &episodes_csv(&episodes))?;
    write(&c.out, "q.ckpt", &q_checkpoint(agent.q()).to_text())?;
    write(&c.out, "agent.ckpt", &agent_checkpoint(&agent, &rng).to_text())?;
    if let Some(p) = agent.planner() {
        write(&c.out, "model.csv", &p.model.to_csv())?;
    }
    if let Some(m) = agent.macro_at(agent.start(), env.mdp.n_states()) {
        write(&c.out, "macro.txt", &format!("{}\n", m?))?;
    }
    let last = episodes.last().map_or(0, |e| e.steps);
    say(c, format!("{} episodes, last took {last} steps", episodes.len()));
    Ok(())
}

fn curve(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let env = MazeEnv::from_config(&cfg)?;
    for s in run_learning_curve(&cfg, &env)? {
        write(&c.out, &s.file_name(), &s.to_csv())?;
        let tail = s.mean_smoothed().last().copied().unwrap_or(f64::NAN);
        say(c, format!("{}: final smoothed steps {tail:.2}", s.file_name()));
    }
    Ok(())
}

fn sweep(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let env = MazeEnv::from_config(&cfg)?;
    let rows = run_performance_sweep(&cfg, &env)?;
    write(&c.out, "sweep.csv", &sweep_csv(&rows))?;
    for r in &rows {
        say(c, r.csv_row());
    }
    Ok(())
}

fn eps_bound(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let reports = run_eps_bound(&cfg)?;
    write(&c.out, "eps_bound.csv", &bound_csv(&reports))?;
    for r in &reports {
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        say(c, r.csv_row());
    }
    Ok(())
}

fn solve(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let env = MazeEnv::from_config(&cfg)?;
    let (v, _) = solver::solve(&env.mdp)?;
    let mut out = String::from("state,row,col,value\n");
    for (i, value) in v.as_slice().iter().enumerate() {
        let (r, col) = env.maze.coords(prl::StateId(i));
        let _ = writeln!(out, "{i},{r},{col},{value}");
    }
    write(&c.out, "values.csv", &out)?;
    if !c.quiet {
        print!("{out}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenMaze(c) => gen_maze(c),
        Command::Train { common, resume } => train(common, resume.as_deref()),
        Command::Curve(c) => curve(c),
        Command::Sweep(c) => sweep(c),
        Command::EpsBound(c) => eps_bound(c),
        Command::Solve(c) => solve(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
