//! Pendulum swing-up MDP.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::dynamics::{self, PendulumParams, PendulumState};
use crate::error::{ensure_finite, Error, Result};
use crate::passivize::ForceField;

pub const OBSERVATION_DIM: usize = 3;
pub const DEFAULT_EPISODE_STEPS: usize = 500;
pub const RESET_MEAN: f64 = -FRAC_PI_2;
pub const RESET_STD: f64 = 0.05 * PI;

/// `[sin β, cos β, tanh β̇]`
pub fn observe(state: PendulumState) -> [f64; OBSERVATION_DIM] {
    let (s, c) = state.beta.sin_cos();
    [s, c, state.beta_dot.tanh()]
}

/// `(1 + |sin β - 1| + 0.1 |tanh β̇| + 0.01 |τ|)⁻¹`, always in (0, 1].
pub fn reward(beta: f64, beta_dot: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (beta.sin() - 1.0).abs() + 0.1 * beta_dot.tanh().abs() + 0.01 * tau.abs())
}

/// Physical quantities behind a step, for logging and energy accounting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Torque requested by the agent after saturation.
    pub commanded_torque: f64,
    /// Torque that reached the joint (after any gating).
    pub applied_torque: f64,
    pub external_torque: f64,
    pub prev_beta: f64,
    pub beta: f64,
    pub beta_dot: f64,
    /// `∫ w̄ β̇ dt` over the step.
    pub injected_energy: f64,
    /// `∫ δ β̇ dt` over the step.
    pub external_energy: f64,
    pub dissipated_energy: f64,
}

/// Tank bookkeeping attached to a step by a passivizing wrapper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankReport {
    /// `e_{k+1}`
    pub level: f64,
    /// `e_{k+1} / e0`
    pub fraction: f64,
    /// `ê_{k+1}`
    pub spent: f64,
    pub initial: f64,
    /// The gate replaced a nonzero command by zero on this step.
    pub gated: bool,
    /// The step's withdrawal exceeded the remaining level.
    pub depleted: bool,
    /// Energy withdrawn beyond the remaining level and floored away (J).
    pub overdraw: f64,
    /// The level is below the gate threshold after the step.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    pub info: StepInfo,
    pub tank: Option<TankReport>,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A continuous-torque episodic environment around the pendulum plant.
pub trait Environment {
    fn observation_dim(&self) -> usize;

    fn params(&self) -> &PendulumParams;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Apply `torque` (N·m) for one control period.
    fn step(&mut self, torque: f64) -> Result<StepResult>;

    fn state(&self) -> PendulumState;

    fn set_force_field(&mut self, field: Option<ForceField>);

    /// Whether every reward the environment can emit is strictly positive.
    fn reward_strictly_positive(&self) -> bool;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn params(&self) -> &PendulumParams {
        (**self).params()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, torque: f64) -> Result<StepResult> {
        (**self).step(torque)
    }
    fn state(&self) -> PendulumState {
        (**self).state()
    }
    fn set_force_field(&mut self, field: Option<ForceField>) {
        (**self).set_force_field(field)
    }
    fn reward_strictly_positive(&self) -> bool {
        (**self).reward_strictly_positive()
    }
}

/// Sample an initial state: `β ~ N(-π/2, σ)`, `β̇ = 0`.
pub fn reset_state(rng: &mut dyn RngCore, std_dev: f64) -> PendulumState {
    let z: f64 = rng.sample(StandardNormal);
    PendulumState::new(RESET_MEAN + std_dev * z, 0.0)
}

/// One control step of the unwrapped MDP. The action is saturated to the
/// torque limit; the reward uses the post-step state and the applied torque.
pub fn env_step(
    state: PendulumState,
    action_torque: f64,
    external_torque: f64,
    params: &PendulumParams,
) -> Result<(PendulumState, StepInfo, f64)> {
    ensure_finite("action", action_torque)?;
    let applied = action_torque.clamp(-params.torque_limit, params.torque_limit);
    let interval = dynamics::simulate_control_interval(state, applied, external_torque, params)?;
    let next = interval.state;
    let info = StepInfo {
        commanded_torque: applied,
        applied_torque: applied,
        external_torque,
        prev_beta: state.beta,
        beta: next.beta,
        beta_dot: next.beta_dot,
        injected_energy: interval.injected_energy,
        external_energy: interval.external_energy,
        dissipated_energy: interval.dissipated_energy,
    };
    Ok((next, info, reward(next.beta, next.beta_dot, applied)))
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    params: PendulumParams,
    state: PendulumState,
    steps: usize,
    max_steps: usize,
    reset_std: f64,
    force_field: Option<ForceField>,
    finished: bool,
}

impl PendulumEnv {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: PendulumState::hanging(),
            steps: 0,
            max_steps: DEFAULT_EPISODE_STEPS,
            reset_std: RESET_STD,
            force_field: None,
            finished: true,
        })
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::domain("episode length must be at least 1"));
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn with_reset_std(mut self, std_dev: f64) -> Result<Self> {
        if !(std_dev.is_finite() && std_dev >= 0.0) {
            return Err(Error::domain(format!(
                "reset std must be >= 0, got {std_dev}"
            )));
        }
        self.reset_std = std_dev;
        Ok(self)
    }

    /// Place the plant in a given state and start a fresh episode there.
    pub fn reset_to(&mut self, state: PendulumState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.finished = false;
        observe(state).to_vec()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }
}

impl Environment for PendulumEnv {
    fn observation_dim(&self) -> usize {
        OBSERVATION_DIM
    }

    fn params(&self) -> &PendulumParams {
        &self.params
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let state = reset_state(rng, self.reset_std);
        self.reset_to(state)
    }

    fn step(&mut self, torque: f64) -> Result<StepResult> {
        if self.finished {
            return Err(Error::domain(
                "step called on a finished episode; reset first",
            ));
        }
        let external = self
            .force_field
            .map_or(0.0, |f| f.torque(self.state.beta_dot));
        let (next, info, reward) = env_step(self.state, torque, external, &self.params)?;
        self.state = next;
        self.steps += 1;
        let truncated = self.steps >= self.max_steps;
        self.finished = truncated;
        Ok(StepResult {
            obs: observe(next).to_vec(),
            reward,
            terminal: false,
            truncated,
            info,
            tank: None,
        })
    }

    fn state(&self) -> PendulumState {
        self.state
    }

    fn set_force_field(&mut self, field: Option<ForceField>) {
        self.force_field = field;
    }

    fn reward_strictly_positive(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_examples() {
        assert_eq!(reward(FRAC_PI_2, 0.0, 0.0), 1.0);
        assert!((reward(-FRAC_PI_2, 0.0, 0.0) - 1.0 / 3.0).abs() < 1e-15);
        // 1 + |0 - 1| + 0.1 tanh(1) + 0.02 with tanh(1) = 0.7615941559557649
        let expected = 1.0 / (2.02 + 0.1 * 0.761_594_155_955_764_9);
        assert!((reward(0.0, 1.0, 2.0) - expected).abs() < 1e-15);
        assert!((reward(0.0, 1.0, 2.0) - 0.47706).abs() < 1e-5);
    }

    #[test]
    fn reward_is_positive_and_bounded() {
        for &beta in &[-10.0, -1.0, 0.0, 1.0, 3.0, 100.0] {
            for &v in &[-1e3, -1.0, 0.0, 2.0, 1e3] {
                for &tau in &[-2.5, 0.0, 2.5, 1e6] {
                    let r = reward(beta, v, tau);
                    assert!(r > 0.0 && r <= 1.0);
                }
            }
        }
    }

    #[test]
    fn degenerate_reset() {
        let mut env = PendulumEnv::new(PendulumParams::default())
            .unwrap()
            .with_reset_std(0.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = env.reset(&mut rng);
        assert_eq!(env.state().beta, -FRAC_PI_2);
        assert_eq!(obs[0], -1.0);
        assert!(obs[1].abs() < 1e-15);
        assert_eq!(obs[2], 0.0);
    }

    #[test]
    fn reset_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| reset_state(&mut rng, RESET_STD).beta)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - RESET_MEAN).abs() < 0.01, "mean {mean}");
        assert!(
            (var.sqrt() / RESET_STD - 1.0).abs() < 0.05,
            "std {}",
            var.sqrt()
        );
    }

    #[test]
    fn reset_has_zero_velocity() {
        let mut env = PendulumEnv::new(PendulumParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let obs = env.reset(&mut rng);
            assert_eq!(env.state().beta_dot, 0.0);
            assert_eq!(obs[2], 0.0);
            assert!((obs[0] * obs[0] + obs[1] * obs[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncates_at_episode_length() {
        let mut env = PendulumEnv::new(PendulumParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset(&mut rng);
        for k in 1..=DEFAULT_EPISODE_STEPS {
            let r = env.step(((k as f64) * 0.3).sin() * 3.0).unwrap();
            assert!(!r.terminal);
            assert_eq!(r.truncated, k == DEFAULT_EPISODE_STEPS);
        }
        assert!(env.step(0.0).is_err());
    }

    #[test]
    fn action_is_clamped() {
        let mut env = PendulumEnv::new(PendulumParams::default()).unwrap();
        env.reset_to(PendulumState::hanging());
        let r = env.step(7.0).unwrap();
        assert_eq!(r.info.applied_torque, 2.5);
        let r = env.step(-7.0).unwrap();
        assert_eq!(r.info.applied_torque, -2.5);
        assert!(env.step(f64::NAN).is_err());
    }

    #[test]
    fn zero_policy_from_hang_earns_one_third() {
        let mut env = PendulumEnv::new(PendulumParams::default()).unwrap();
        env.reset_to(PendulumState::hanging());
        for _ in 0..DEFAULT_EPISODE_STEPS {
            let r = env.step(0.0).unwrap();
            assert!((r.reward - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let run = |seed| {
            let mut env = PendulumEnv::new(PendulumParams::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            env.reset(&mut rng);
            (0..100)
                .map(|k| env.step(2.5 * ((k as f64) * 0.2).cos()).unwrap().reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
