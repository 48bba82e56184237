//! Multi-seed training runs and their on-disk layout.
//!
//! ```text
//! <root>/<hash12>/config.toml          resolved configuration
//! <root>/<hash12>/seed-<s>/epochs.csv
//! <root>/<hash12>/seed-<s>/episodes.csv
//! <root>/<hash12>/seed-<s>/best.ckpt   policy from the best-return epoch
//! <root>/<hash12>/seed-<s>/final.ckpt  full agent after the last epoch
//! <root>/<hash12>/seed-<s>/manifest.json
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, WrapperSpec};
use super::eval::write_rows;
use crate::checkpoint::{self, Checkpoint};
use crate::env::{Environment, PendulumEnv};
use crate::error::{Error, Result};
use crate::passivize::{
    inference_wrap, training_wrap_extended_state, training_wrap_extended_termination,
};
use crate::sac::{train, TrainOutcome};
use crate::tank::{RefillMode, TankState, DEFAULT_EPSILON};

/// Environment variable naming the default output root for runs.
pub const RUNS_DIR_ENV: &str = "TANKRL_RUNS_DIR";
pub const MANIFEST_FORMAT: u32 = 1;

/// `explicit`, else `$TANKRL_RUNS_DIR`, else `./runs`.
pub fn runs_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// The training environment described by `config`.
pub fn training_env(config: &ExperimentConfig) -> Result<Box<dyn Environment + Send>> {
    let plain = PendulumEnv::new(config.pendulum)?;
    let mut env: Box<dyn Environment + Send> = match config.wrapper {
        WrapperSpec::None => Box::new(plain),
        WrapperSpec::InferenceTank { e0 } => Box::new(inference_wrap(
            plain,
            TankState::new(e0, DEFAULT_EPSILON, RefillMode::NoRefill)?,
        )?),
        WrapperSpec::ExtTermination { e0 } => {
            Box::new(training_wrap_extended_termination(plain, e0)?)
        }
        WrapperSpec::ExtState { e0 } => Box::new(training_wrap_extended_state(plain, e0)?),
    };
    env.set_force_field(config.force_field);
    Ok(env)
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seeds: Vec<SeedRun>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: u32,
    crate_version: &'static str,
    checkpoint_format: u16,
    config_hash: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    wall_time_s: f64,
    best_epoch: usize,
    epochs: usize,
    episodes: usize,
    max_episode_energy: f64,
}

/// Directory of a run: the first 12 hex digits of the config hash.
pub fn run_dir(root: &Path, config: &ExperimentConfig) -> PathBuf {
    root.join(&config.content_hash_hex()[..12])
}

/// Train every seed of `config` in parallel and write the artifacts under
/// [`run_dir`]. Each seed is deterministic on its own.
pub fn train_experiment(config: &ExperimentConfig, root: &Path) -> Result<TrainRun> {
    config.validate()?;
    let dir = run_dir(root, config);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let text = config.canonical_toml();
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, &text).map_err(|e| Error::io(&config_path, e))?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| train_seed(config, seed, &dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainRun {
        dir,
        config_hash: config.content_hash_hex(),
        seeds,
    })
}

fn train_seed(config: &ExperimentConfig, seed: u64, run: &Path) -> Result<SeedRun> {
    let dir = run.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let started = Instant::now();
    let mut env = training_env(config)?;
    let mut eval_env = training_env(config)?;
    let outcome = train(
        &mut env,
        Some(&mut eval_env),
        &config.sac_for_seed(seed),
        Some(&dir),
    )?;
    let wall = started.elapsed().as_secs_f64();

    let hash = config.content_hash();
    let text = config.canonical_toml();
    write_rows(&dir.join("epochs.csv"), &outcome.epochs)?;
    write_rows(&dir.join("episodes.csv"), &outcome.episodes)?;
    Checkpoint::policy(
        outcome.best_actor.clone(),
        config.pendulum.torque_limit,
        hash,
        text.clone(),
    )
    .save(&dir.join("best.ckpt"))?;
    Checkpoint::agent(&outcome.agent, hash, text).save(&dir.join("final.ckpt"))?;
    let hash_hex = hex::encode(hash);
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        crate_version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: checkpoint::FORMAT_VERSION,
        config_hash: &hash_hex,
        seed,
        config,
        wall_time_s: wall,
        best_epoch: outcome.best_epoch,
        epochs: outcome.epochs.len(),
        episodes: outcome.episodes.len(),
        max_episode_energy: outcome.max_episode_energy(),
    };
    let path = dir.join("manifest.json");
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(SeedRun { seed, dir, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(wrapper: WrapperSpec) -> ExperimentConfig {
        let text = "version = 1\nseeds = [1, 2]\n[sac]\nepochs = 2\nsteps_per_epoch = 200\n\
                    steps_per_trajectory = 100\nsteps_before_training = 100\n\
                    gradient_steps_per_epoch = 20\nbatch_size = 16\nhidden_sizes = [8, 8]\n";
        ExperimentConfig {
            wrapper,
            ..ExperimentConfig::parse(text).unwrap()
        }
    }

    #[test]
    fn writes_artifacts_and_repeats_bit_exactly() {
        let root = tempfile::tempdir().unwrap();
        let config = tiny(WrapperSpec::None);
        let run = train_experiment(&config, root.path()).unwrap();
        assert_eq!(run.seeds.len(), 2);
        let seed_dir = run.dir.join("seed-1");
        for f in [
            "epochs.csv",
            "episodes.csv",
            "best.ckpt",
            "final.ckpt",
            "manifest.json",
        ] {
            assert!(seed_dir.join(f).exists(), "{f}");
        }
        let first = std::fs::read(seed_dir.join("epochs.csv")).unwrap();
        let episodes = std::fs::read(seed_dir.join("episodes.csv")).unwrap();
        train_experiment(&config, root.path()).unwrap();
        assert_eq!(std::fs::read(seed_dir.join("epochs.csv")).unwrap(), first);
        assert_eq!(
            std::fs::read(seed_dir.join("episodes.csv")).unwrap(),
            episodes
        );

        let stored = std::fs::read_to_string(run.dir.join("config.toml")).unwrap();
        assert_eq!(ExperimentConfig::parse(&stored).unwrap(), config);
        let ckpt = Checkpoint::load(&seed_dir.join("best.ckpt")).unwrap();
        assert_eq!(ckpt.config_hash_hex(), config.content_hash_hex());
        assert!(Checkpoint::load(&seed_dir.join("final.ckpt"))
            .unwrap()
            .into_agent()
            .is_ok());
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(seed_dir.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["seed"], 1);
        assert_eq!(manifest["config_hash"], config.content_hash_hex());
    }

    #[test]
    fn extended_termination_caps_every_episode() {
        let root = tempfile::tempdir().unwrap();
        let e0 = 0.2;
        let run = train_experiment(&tiny(WrapperSpec::ExtTermination { e0 }), root.path()).unwrap();
        for s in &run.seeds {
            assert!(s.outcome.episodes.iter().all(|e| e.energy_spent <= e0));
            assert!(s.outcome.episodes.iter().any(|e| e.depleted));
        }
    }

    #[test]
    fn runs_root_prefers_explicit_path() {
        assert_eq!(runs_root(Some(Path::new("/x"))), PathBuf::from("/x"));
    }
}
