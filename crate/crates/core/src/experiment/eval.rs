//! Deterministic evaluation of a saved policy, with or without a tank.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::dynamics::PendulumParams;
use crate::env::{Environment, PendulumEnv};
use crate::error::{Error, Result};
use crate::passivize::{inference_wrap, logging_wrap, training_wrap_extended_state, ForceField};
use crate::tank::{task_energy, RefillMode, TankState, DEFAULT_EPSILON};

/// Steps at the end of an episode over which the position error is averaged.
pub const FINAL_WINDOW_STEPS: usize = 100;

/// The tank used during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalTank {
    /// Unlimited tank: `ê_k` is logged, nothing is gated.
    Logging,
    /// Gating tank holding `e0`.
    Inference { e0: f64 },
    /// Gating tank whose normalized level is part of the observation.
    ExtState { e0: f64 },
}

/// One control step of an evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub k: usize,
    pub beta: f64,
    pub beta_dot: f64,
    pub w: f64,
    pub w_bar: f64,
    pub reward: f64,
    pub e_k: f64,
    pub e_hat_k: f64,
    pub gated: bool,
    pub depleted: bool,
    pub term_cause: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeEval {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// `ê_N`
    pub energy_spent: f64,
    /// The tank fell below the gate threshold at some step.
    pub depleted: bool,
    pub gated_steps: usize,
    /// Mean of `d_k = 1 - sin β_k` over the last [`FINAL_WINDOW_STEPS`] steps.
    pub final_error: f64,
    #[serde(skip)]
    pub steps: Vec<StepRow>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeEval>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.episode_return))
    }

    pub fn mean_energy(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.energy_spent))
    }

    pub fn max_energy(&self) -> f64 {
        self.episodes
            .iter()
            .map(|e| e.energy_spent)
            .fold(0.0, f64::max)
    }

    pub fn mean_final_error(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.final_error))
    }

    pub fn depletions(&self) -> usize {
        self.episodes.iter().filter(|e| e.depleted).count()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.energy_spent).collect()
    }

    /// Per-episode summary CSV and one step CSV per episode under `dir/steps`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let steps_dir = dir.join("steps");
        std::fs::create_dir_all(&steps_dir).map_err(|e| Error::io(&steps_dir, e))?;
        write_rows(&dir.join("episodes.csv"), &self.episodes)?;
        for ep in &self.episodes {
            write_rows(
                &steps_dir.join(format!("episode-{:04}.csv", ep.episode)),
                &ep.steps,
            )?;
        }
        Ok(())
    }
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn build_env(
    params: &PendulumParams,
    tank: EvalTank,
    field: Option<ForceField>,
) -> Result<Box<dyn Environment + Send>> {
    let plain = PendulumEnv::new(*params)?;
    let mut env: Box<dyn Environment + Send> = match tank {
        EvalTank::Logging => Box::new(logging_wrap(plain)),
        EvalTank::Inference { e0 } => Box::new(inference_wrap(
            plain,
            TankState::new(e0, DEFAULT_EPSILON, RefillMode::NoRefill)?,
        )?),
        EvalTank::ExtState { e0 } => Box::new(training_wrap_extended_state(plain, e0)?),
    };
    env.set_force_field(field);
    Ok(env)
}

fn run_episode(
    policy: &Checkpoint,
    env: &mut dyn Environment,
    episode: usize,
    seed: u64,
) -> Result<EpisodeEval> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    let mut obs = env.reset(&mut rng);
    let mut steps = Vec::new();
    let mut total = 0.0;
    loop {
        let r = env.step(policy.act(&obs)?)?;
        let report = r.tank.expect("evaluation environments carry a tank");
        total += r.reward;
        steps.push(StepRow {
            k: steps.len(),
            beta: r.info.beta,
            beta_dot: r.info.beta_dot,
            w: r.info.commanded_torque,
            w_bar: r.info.applied_torque,
            reward: r.reward,
            e_k: report.level,
            e_hat_k: report.spent,
            gated: report.gated,
            depleted: report.exhausted,
            term_cause: if r.terminal {
                "depleted"
            } else if r.truncated {
                "truncated"
            } else {
                "none"
            },
        });
        if r.done() {
            break;
        }
        obs = r.obs;
    }
    let window = &steps[steps.len().saturating_sub(FINAL_WINDOW_STEPS)..];
    Ok(EpisodeEval {
        episode,
        episode_return: total,
        energy_spent: steps.last().map_or(0.0, |s| s.e_hat_k),
        depleted: steps.iter().any(|s| s.depleted),
        gated_steps: steps.iter().filter(|s| s.gated).count(),
        final_error: mean(window.iter().map(|s| 1.0 - s.beta.sin())),
        steps,
    })
}

/// Run `episodes` deterministic-policy episodes. Episode `i` draws its
/// initial state from stream `i` of `seed`, so episodes are independent and
/// run in parallel without changing the result.
pub fn evaluate(
    policy: &Checkpoint,
    params: &PendulumParams,
    tank: EvalTank,
    field: Option<ForceField>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let probe = build_env(params, tank, field)?;
    if probe.observation_dim() != policy.actor.obs_dim() {
        return Err(Error::domain(format!(
            "policy expects {} observations but the evaluation environment provides {}",
            policy.actor.obs_dim(),
            probe.observation_dim()
        )));
    }
    let episodes = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = build_env(params, tank, field)?;
            run_episode(policy, &mut env, i, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { episodes })
}

/// `e*`: the largest `ê_N` over ungated episodes without external forces.
pub fn estimate_task_energy(
    policy: &Checkpoint,
    params: &PendulumParams,
    episodes: usize,
    seed: u64,
) -> Result<(f64, EvalReport)> {
    let report = evaluate(policy, params, EvalTank::Logging, None, episodes, seed)?;
    let e_star = task_energy(&report.energies())?;
    Ok((e_star, report))
}
