use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tankrl::checkpoint::Checkpoint;
use tankrl::experiment::{
    compare, estimate_task_energy, evaluate, runs_root, train_experiment, EvalTank,
    ExperimentConfig, RunData, RUNS_DIR_ENV,
};
use tankrl::passivize::{ForceField, ForceProfile};
use tankrl::{Error, Result};

/// Energy-tank passivization experiments on a torque-controlled pendulum.
#[derive(Parser)]
#[command(name = "tankrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment configuration.
    Train {
        config: PathBuf,
        /// Override a configuration value, e.g. `--set sac.epochs=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output root for runs.
        #[arg(long, env = RUNS_DIR_ENV)]
        runs_dir: Option<PathBuf>,
    },
    /// Estimate the task energy of a policy: the largest energy spent in
    /// ungated evaluation episodes.
    EstimateTaskEnergy {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the report; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy deterministically, optionally behind a tank and
    /// under an external force field.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = TankArg::None)]
        tank: TankArg,
        /// Initial tank energy (J); required unless `--tank none`.
        #[arg(long)]
        e0: Option<f64>,
        /// External torque magnitude (N·m).
        #[arg(long)]
        force: Option<f64>,
        #[arg(long, value_enum, default_value_t = ProfileArg::VelocityAligned)]
        profile: ProfileArg,
        /// Defaults to the checkpoint's configured evaluation episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the report and step CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the first run against each of the others.
    Compare {
        #[arg(num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TankArg {
    None,
    Inference,
    ExtState,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Constant,
    VelocityAligned,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            overrides,
            runs_dir,
        } => cmd_train(&config, &overrides, runs_dir.as_deref()),
        Command::EstimateTaskEnergy {
            checkpoint,
            episodes,
            seed,
            out,
        } => cmd_estimate(&checkpoint, episodes, seed, out),
        Command::Eval {
            checkpoint,
            tank,
            e0,
            force,
            profile,
            episodes,
            seed,
            out,
        } => {
            let tank = match (tank, e0) {
                (TankArg::None, _) => EvalTank::Logging,
                (TankArg::Inference, Some(e0)) => EvalTank::Inference { e0 },
                (TankArg::ExtState, Some(e0)) => EvalTank::ExtState { e0 },
                (_, None) => return Err(Error::Domain("--e0 is required with a tank".into())),
            };
            let profile = match profile {
                ProfileArg::Constant => ForceProfile::Constant,
                ProfileArg::VelocityAligned => ForceProfile::VelocityAligned,
            };
            let field = force.map(|m| ForceField::new(m, profile)).transpose()?;
            cmd_eval(&checkpoint, tank, field, episodes, seed, out)
        }
        Command::Compare { runs } => cmd_compare(&runs),
    }
}

fn cmd_train(path: &Path, overrides: &[String], runs_dir: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let config = ExperimentConfig::parse_with_overrides(&text, overrides).map_err(|e| match e {
        Error::Config { line, message } => Error::Config {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    let root = runs_root(runs_dir);
    let run = train_experiment(&config, &root)?;
    println!("run {}", run.dir.display());
    println!("seed\tbest_epoch\tbest_return\tfinal_return\tmax_episode_energy");
    for s in &run.seeds {
        let best = s
            .outcome
            .epochs
            .iter()
            .map(|e| e.epoch_return)
            .fold(f64::MIN, f64::max);
        let last = s.outcome.epochs.last().map_or(f64::NAN, |e| e.epoch_return);
        println!(
            "{}\t{}\t{best:.1}\t{last:.1}\t{:.3}",
            s.seed,
            s.outcome.best_epoch,
            s.outcome.max_episode_energy()
        );
    }
    Ok(())
}

fn load_policy(path: &Path) -> Result<(Checkpoint, ExperimentConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let config = ExperimentConfig::parse(&ckpt.config_text).unwrap_or_default();
    Ok((ckpt, config))
}

fn report_dir(out: Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    out.unwrap_or_else(|| {
        checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn cmd_estimate(path: &Path, episodes: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let (ckpt, config) = load_policy(path)?;
    let (e_star, report) = estimate_task_energy(&ckpt, &config.pendulum, episodes, seed)?;
    let dir = report_dir(out, path);
    create_dir(&dir)?;
    let file = dir.join("task_energy.json");
    write_json(
        &file,
        &serde_json::json!({
            "checkpoint": path.display().to_string(),
            "episodes": episodes,
            "seed": seed,
            "e_star": e_star,
            "energy_spent": report.energies(),
        }),
    )?;
    println!("e_star {e_star}");
    println!("report {}", file.display());
    Ok(())
}

fn cmd_eval(
    path: &Path,
    tank: EvalTank,
    field: Option<ForceField>,
    episodes: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let (ckpt, config) = load_policy(path)?;
    let episodes = episodes.unwrap_or(config.eval_episodes);
    let report = evaluate(&ckpt, &config.pendulum, tank, field, episodes, seed)?;
    let dir = report_dir(out, path).join("eval");
    create_dir(&dir)?;
    report.write(&dir)?;
    let finite = |x: f64| {
        if x.is_finite() {
            serde_json::json!(x)
        } else {
            serde_json::Value::Null
        }
    };
    let summary = serde_json::json!({
        "checkpoint": path.display().to_string(),
        "episodes": episodes,
        "seed": seed,
        "mean_return": finite(report.mean_return()),
        "mean_energy_spent": finite(report.mean_energy()),
        "max_energy_spent": report.max_energy(),
        "mean_final_error": finite(report.mean_final_error()),
        "depletions": report.depletions(),
        "depleted_episodes": report.episodes.iter().filter(|e| e.depleted).map(|e| e.episode).collect::<Vec<_>>(),
    });
    write_json(&dir.join("report.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_compare(dirs: &[PathBuf]) -> Result<()> {
    let runs = dirs
        .iter()
        .map(|d| RunData::load(d))
        .collect::<Result<Vec<_>>>()?;
    let base = &runs[0];
    for other in &runs[1..] {
        let c = compare(base, other)?;
        println!("A = {}", c.a.display());
        println!("B = {}", c.b.display());
        println!("epoch\tmean_a\tstd_a\tmean_b\tstd_b");
        for r in &c.epochs {
            println!(
                "{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}",
                r.epoch, r.mean_a, r.std_a, r.mean_b, r.std_b
            );
        }
        println!("plateau_a {:.1}", c.plateau_a);
        println!("plateau_b {:.1}", c.plateau_b);
        println!("plateau_gap {:.4}", c.plateau_gap);
        println!("diff_std {:.4}", c.diff_std);
        println!("energy_ratio {:.4}", c.energy_ratio);
    }
    Ok(())
}
