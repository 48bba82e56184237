//! Soft actor-critic for the one-dimensional torque action.

mod actor;
mod agent;
mod policy;
mod replay;
mod train;

pub use actor::{Actor, ActorGrads, Exploration, PolicyEval, SdeParams};
pub use agent::{
    actor_loss, actor_loss_and_grad, alpha_loss, alpha_loss_grad, critic_input, critic_loss,
    critic_loss_and_grad, ActorLoss, SacAgent, UpdateStats, TARGET_ENTROPY,
};
pub use policy::{
    log_one_minus_tanh_sq, SdeSample, SquashedSample, LOG_STD_MAX, LOG_STD_MIN, SDE_MEAN_CLIP,
    SDE_VARIANCE_FLOOR,
};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{
    train, train_with_progress, EpisodeRecord, EpochLog, TerminationCause, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters. Defaults are the pendulum configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak coefficient for the target critics.
    pub soft_update_coefficient: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub steps_per_trajectory: usize,
    /// Environment steps taken with uniform random actions before any update.
    pub steps_before_training: usize,
    /// Environment steps between target soft updates (counted once
    /// training has started).
    pub target_update_period: usize,
    pub gradient_steps_per_epoch: usize,
    pub hidden_sizes: Vec<usize>,
    pub discount: f64,
    pub replay_capacity: usize,
    pub entropy_lr: f64,
    pub initial_alpha: f64,
    pub exploration: Exploration,
    /// Environment steps between redraws of the held gSDE noise; 0 redraws
    /// only at episode starts.
    pub sde_sample_freq: usize,
    /// Initial value of every gSDE log standard deviation.
    pub sde_log_std_init: f64,
    /// Deterministic episodes run after every epoch to pick the best actor;
    /// 0 picks by the epoch's training return instead.
    pub eval_episodes_per_epoch: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_lr: 0.005,
            critic_lr: 0.005,
            soft_update_coefficient: 0.003,
            batch_size: 256,
            epochs: 200,
            steps_per_epoch: 2500,
            steps_per_trajectory: 500,
            steps_before_training: 2500,
            target_update_period: 5,
            gradient_steps_per_epoch: 500,
            hidden_sizes: vec![256, 256],
            discount: 0.99,
            replay_capacity: 1_000_000,
            entropy_lr: 0.005,
            initial_alpha: 1.0,
            exploration: Exploration::Gsde,
            sde_sample_freq: 25,
            sde_log_std_init: -1.0,
            eval_episodes_per_epoch: 20,
            seed: 0,
        }
    }
}

impl SacConfig {
    /// Reduced configuration for a desktop CPU: [64, 64] networks, 60 epochs.
    pub fn desk() -> Self {
        Self {
            hidden_sizes: vec![64, 64],
            epochs: 60,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("entropy_lr", self.entropy_lr),
            ("soft_update_coefficient", self.soft_update_coefficient),
            ("discount", self.discount),
            ("initial_alpha", self.initial_alpha),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.sde_log_std_init.is_finite() {
            return Err(Error::domain("sde_log_std_init must be finite"));
        }
        if self.soft_update_coefficient > 1.0 {
            return Err(Error::domain("soft_update_coefficient must be <= 1"));
        }
        if self.discount > 1.0 {
            return Err(Error::domain("discount must be <= 1"));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("steps_per_trajectory", self.steps_per_trajectory),
            ("target_update_period", self.target_update_period),
            ("gradient_steps_per_epoch", self.gradient_steps_per_epoch),
            ("replay_capacity", self.replay_capacity),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if !self
            .steps_per_epoch
            .is_multiple_of(self.steps_per_trajectory)
        {
            return Err(Error::domain(format!(
                "steps_per_epoch ({}) must be a multiple of steps_per_trajectory ({})",
                self.steps_per_epoch, self.steps_per_trajectory
            )));
        }
        if self.gradient_steps_per_epoch > self.steps_per_epoch {
            return Err(Error::domain(
                "gradient_steps_per_epoch cannot exceed steps_per_epoch",
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::domain("hidden_sizes must be non-empty and positive"));
        }
        Ok(())
    }
}
