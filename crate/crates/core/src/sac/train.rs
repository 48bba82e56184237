use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor::Actor;
use super::agent::{SacAgent, UpdateStats};
use super::replay::{ReplayBuffer, Transition};
use super::SacConfig;
use crate::env::Environment;
use crate::error::{Error, Result};

/// Independent random streams derived from one seed.
pub(crate) mod stream {
    pub const ENV: u64 = 0;
    pub const POLICY: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const UPDATE: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    None,
    Truncated,
    Depleted,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::None => "none",
            TerminationCause::Truncated => "truncated",
            TerminationCause::Depleted => "depleted",
        }
    }
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub epoch: usize,
    pub episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// `ê_N`: energy that left the tank (or would have, for an unwrapped env).
    pub energy_spent: f64,
    /// The tank level fell below the gate threshold during the episode.
    pub depleted: bool,
    pub cause: TerminationCause,
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub env_steps: u64,
    /// Sum of rewards collected during the epoch's environment steps.
    #[serde(rename = "return")]
    pub epoch_return: f64,
    pub episodes: usize,
    pub max_episode_energy: f64,
    pub depletions: usize,
    pub updates: u64,
    pub alpha: f64,
    /// Mean losses over the epoch's updates; empty before training starts.
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub entropy: Option<f64>,
    /// Mean return of the deterministic policy on the selection episodes.
    pub eval_return: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: SacAgent,
    /// Actor snapshot from the epoch with the highest selection return.
    pub best_actor: Actor,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainOutcome {
    pub fn max_episode_energy(&self) -> f64 {
        self.episodes
            .iter()
            .map(|e| e.energy_spent)
            .fold(0.0, f64::max)
    }
}

#[derive(Serialize)]
struct FailureDump<'a> {
    error: String,
    epoch: usize,
    env_steps: u64,
    updates: u64,
    log_alpha: f64,
    last_stats: Option<[f64; 5]>,
    actor_finite: bool,
    critics_finite: [bool; 2],
    targets_finite: [bool; 2],
    config: &'a SacConfig,
}

fn dump_failure(
    dir: Option<&Path>,
    err: &Error,
    agent: &SacAgent,
    epoch: usize,
    env_steps: u64,
    last: Option<UpdateStats>,
) -> Error {
    let dir = dir
        .map(Path::to_path_buf)
        .unwrap_or_else(std::env::temp_dir);
    let path: PathBuf = dir.join(format!(
        "nan_dump_seed{}_step{}.json",
        agent.config().seed,
        env_steps
    ));
    let dump = FailureDump {
        error: err.to_string(),
        epoch,
        env_steps,
        updates: agent.updates(),
        log_alpha: agent.log_alpha(),
        last_stats: last.map(|s| {
            [
                s.critic_loss,
                s.actor_loss,
                s.alpha,
                s.alpha_loss,
                s.entropy,
            ]
        }),
        actor_finite: agent.actor.is_finite(),
        critics_finite: [agent.critics[0].is_finite(), agent.critics[1].is_finite()],
        targets_finite: [agent.targets[0].is_finite(), agent.targets[1].is_finite()],
        config: agent.config(),
    };
    let written = std::fs::create_dir_all(&dir)
        .map_err(|e| e.to_string())
        .and_then(|_| serde_json::to_vec_pretty(&dump).map_err(|e| e.to_string()))
        .and_then(|bytes| std::fs::write(&path, bytes).map_err(|e| e.to_string()));
    Error::NonFinite {
        what: match written {
            Ok(()) => err.to_string(),
            Err(w) => format!("{err} (dump failed: {w})"),
        },
        dump: path,
    }
}

/// Train a fresh agent on `env` with `config`.
///
/// Each epoch is exactly `steps_per_epoch` environment steps. Episodes end on
/// a terminal or truncated step, or after `steps_per_trajectory` steps, and are
/// attributed to the epoch in which they end. Once `steps_before_training`
/// steps have been collected, gradient updates are interleaved evenly with
/// environment steps so each epoch performs `gradient_steps_per_epoch` of them;
/// before that, actions are uniform over the torque range.
///
/// After every epoch the deterministic policy runs
/// `eval_episodes_per_epoch` episodes on `eval_env` from the same initial
/// states each time; the actor with the best mean return is kept as
/// `best_actor`. Without an evaluation environment, or with zero episodes,
/// the epoch's training return decides.
///
/// A non-finite loss or parameter aborts training with
/// [`Error::NonFinite`] after writing a JSON state dump into `dump_dir`
/// (the system temp dir when `None`).
pub fn train(
    env: &mut dyn Environment,
    eval_env: Option<&mut dyn Environment>,
    config: &SacConfig,
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with_progress(env, eval_env, config, dump_dir, &mut |_| {})
}

/// Mean return of the deterministic policy over `episodes` episodes whose
/// initial states come from `seed`'s evaluation stream.
fn selection_return(
    agent: &SacAgent,
    env: &mut dyn Environment,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = seeded(seed, stream::EVAL);
    let limit = env.params().torque_limit;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(&mut rng);
        for _ in 0..horizon {
            let step = env.step(limit * agent.actor.mode(&obs)?)?;
            total += step.reward;
            if step.done() {
                break;
            }
            obs = step.obs;
        }
    }
    Ok(total / episodes as f64)
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    env: &mut dyn Environment,
    mut eval_env: Option<&mut dyn Environment>,
    config: &SacConfig,
    dump_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let obs_dim = env.observation_dim();
    let torque_limit = env.params().torque_limit;
    let mut init_rng = seeded(config.seed, stream::INIT);
    let mut env_rng = seeded(config.seed, stream::ENV);
    let mut policy_rng = seeded(config.seed, stream::POLICY);
    let mut replay_rng = seeded(config.seed, stream::REPLAY);
    let mut update_rng = seeded(config.seed, stream::UPDATE);

    let mut agent = SacAgent::new(obs_dim, torque_limit, config.clone(), &mut init_rng)?;
    let mut replay = ReplayBuffer::new(obs_dim, config.replay_capacity)?;

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut episodes = Vec::new();
    let mut best_actor = agent.actor.clone();
    let mut best_epoch = 0;
    let mut best_return = f64::NEG_INFINITY;

    let mut obs = env.reset(&mut env_rng);
    agent.reset_noise(&mut policy_rng);
    let mut ep_steps = 0usize;
    let mut ep_return = 0.0;
    let mut ep_energy = 0.0;
    let mut ep_depleted = false;
    let mut total_steps: u64 = 0;
    let mut last_stats: Option<UpdateStats> = None;

    let spe = config.steps_per_epoch as u64;
    let gspe = config.gradient_steps_per_epoch as u64;

    for epoch in 1..=config.epochs {
        let mut epoch_return = 0.0;
        let mut epoch_episodes = 0;
        let mut epoch_max_energy: f64 = 0.0;
        let mut epoch_depletions = 0;
        let mut stat_sum = [0.0; 4];
        let mut stat_count = 0u64;

        for i in 0..spe {
            let warmup = (total_steps as usize) < config.steps_before_training;
            let (torque, action) = if warmup {
                let a: f64 = policy_rng.random_range(-1.0..=1.0);
                (torque_limit * a, a)
            } else {
                if config.sde_sample_freq > 0
                    && ep_steps > 0
                    && ep_steps.is_multiple_of(config.sde_sample_freq)
                {
                    agent.reset_noise(&mut policy_rng);
                }
                agent.sample_action(&obs, &mut policy_rng)?
            };
            let step = env.step(torque)?;
            total_steps += 1;
            ep_steps += 1;
            ep_return += step.reward;
            epoch_return += step.reward;
            match step.tank {
                Some(report) => {
                    ep_energy = report.spent;
                    ep_depleted |= report.exhausted;
                }
                None => ep_energy += step.info.injected_energy.max(0.0),
            }

            let horizon = ep_steps >= config.steps_per_trajectory;
            let truncated = !step.terminal && (step.truncated || horizon);
            replay.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: step.reward,
                next_obs: step.obs.clone(),
                terminal: step.terminal,
                truncated,
            })?;

            if step.terminal || truncated {
                let cause = if step.terminal {
                    TerminationCause::Depleted
                } else {
                    TerminationCause::Truncated
                };
                episodes.push(EpisodeRecord {
                    epoch,
                    episode: episodes.len(),
                    steps: ep_steps,
                    episode_return: ep_return,
                    energy_spent: ep_energy,
                    depleted: ep_depleted,
                    cause,
                });
                epoch_episodes += 1;
                epoch_max_energy = epoch_max_energy.max(ep_energy);
                epoch_depletions += ep_depleted as usize;
                obs = env.reset(&mut env_rng);
                agent.reset_noise(&mut policy_rng);
                ep_steps = 0;
                ep_return = 0.0;
                ep_energy = 0.0;
                ep_depleted = false;
            } else {
                obs = step.obs;
            }

            let training = total_steps as usize > config.steps_before_training;
            let due = (i + 1) * gspe / spe > i * gspe / spe;
            if due && training {
                let batch = replay.sample(config.batch_size, &mut replay_rng)?;
                match agent.update(&batch, &mut update_rng) {
                    Ok(stats) => {
                        stat_sum[0] += stats.critic_loss;
                        stat_sum[1] += stats.actor_loss;
                        stat_sum[2] += stats.entropy;
                        stat_count += 1;
                        last_stats = Some(stats);
                    }
                    Err(e) => {
                        return Err(dump_failure(
                            dump_dir,
                            &e,
                            &agent,
                            epoch,
                            total_steps,
                            last_stats,
                        ))
                    }
                }
            }
            let since_start = total_steps.saturating_sub(config.steps_before_training as u64);
            if training && since_start.is_multiple_of(config.target_update_period as u64) {
                agent.soft_update_targets(config.soft_update_coefficient)?;
            }
        }

        let mean = |x: f64| (stat_count > 0).then(|| x / stat_count as f64);
        let log = EpochLog {
            epoch,
            env_steps: total_steps,
            epoch_return,
            episodes: epoch_episodes,
            max_episode_energy: epoch_max_energy,
            depletions: epoch_depletions,
            updates: agent.updates(),
            alpha: agent.alpha(),
            critic_loss: mean(stat_sum[0]),
            actor_loss: mean(stat_sum[1]),
            entropy: mean(stat_sum[2]),
            eval_return: match eval_env.as_deref_mut() {
                Some(e) if config.eval_episodes_per_epoch > 0 => Some(selection_return(
                    &agent,
                    e,
                    config.eval_episodes_per_epoch,
                    config.steps_per_trajectory,
                    config.seed,
                )?),
                _ => None,
            },
        };
        let score = log.eval_return.unwrap_or(epoch_return);
        if score > best_return {
            best_return = score;
            best_epoch = epoch;
            best_actor = agent.actor.clone();
        }
        on_epoch(&log);
        epochs.push(log);
    }

    Ok(TrainOutcome {
        agent,
        best_actor,
        best_epoch,
        epochs,
        episodes,
    })
}
