//! Environment wrappers that put a virtual energy tank between the agent
//! and the plant, and the external disturbance used to drain it.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PendulumParams, PendulumState};
use crate::env::{Environment, StepResult, TankReport};
use crate::error::{Error, Result};
use crate::tank::{delta_energy, JointDisplacement, RefillMode, TankState, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceProfile {
    /// `δ = +magnitude`
    Constant,
    /// `δ = -magnitude · sign(β̇)`: opposes the motion.
    VelocityAligned,
}

/// External torque applied at the joint, outside the agent's control and
/// outside the tank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceField {
    pub magnitude: f64,
    pub profile: ForceProfile,
}

impl ForceField {
    pub fn new(magnitude: f64, profile: ForceProfile) -> Result<Self> {
        if !(magnitude.is_finite() && magnitude >= 0.0) {
            return Err(Error::domain(format!(
                "force magnitude must be finite and >= 0, got {magnitude}"
            )));
        }
        Ok(Self { magnitude, profile })
    }

    pub fn opposing(magnitude: f64) -> Result<Self> {
        Self::new(magnitude, ForceProfile::VelocityAligned)
    }

    /// Disturbance held over the next control step given the current
    /// joint velocity.
    pub fn torque(&self, beta_dot: f64) -> f64 {
        match self.profile {
            ForceProfile::Constant => self.magnitude,
            ForceProfile::VelocityAligned => {
                if beta_dot > 0.0 {
                    -self.magnitude
                } else if beta_dot < 0.0 {
                    self.magnitude
                } else {
                    0.0
                }
            }
        }
    }
}

/// Add a disturbance torque to the plant of `env` (wrapped or not).
pub fn apply_force_field<E: Environment>(mut env: E, field: ForceField) -> E {
    env.set_force_field(Some(field));
    env
}

/// How the tank acts on the episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TankScheme {
    /// Gate the torque once the tank is below ε; the episode runs on.
    Inference,
    /// Never gate; end the episode (true terminal) once the tank is below ε.
    ExtendedTermination,
    /// Gate as in inference and append `e_k / e0` to the observation.
    ExtendedState,
}

/// A plant environment with a per-episode energy tank in the actuation path.
#[derive(Debug, Clone)]
pub struct TankWrapper<E> {
    inner: E,
    scheme: TankScheme,
    template: TankState,
    tank: TankState,
    terminated: bool,
}

/// Passivize a trained policy at inference time. The tank is refilled to
/// `tank`'s initial level at every reset. Use an unlimited tank to log
/// `ê_k` without ever gating.
pub fn inference_wrap<E: Environment>(env: E, tank: TankState) -> Result<TankWrapper<E>> {
    if tank.mode() != RefillMode::NoRefill {
        return Err(Error::domain(
            "inference passivization requires a no-refill tank",
        ));
    }
    Ok(TankWrapper::new(env, TankScheme::Inference, tank))
}

/// Logging-only wrapper (`e0 = +inf`).
pub fn logging_wrap<E: Environment>(env: E) -> TankWrapper<E> {
    TankWrapper::new(
        env,
        TankScheme::Inference,
        TankState::unlimited(RefillMode::NoRefill),
    )
}

/// Training with depletion as a terminal event. Rejected unless the
/// environment's reward is strictly positive: with non-positive rewards an
/// early termination can look attractive to the agent.
pub fn training_wrap_extended_termination<E: Environment>(
    env: E,
    e0: f64,
) -> Result<TankWrapper<E>> {
    if !env.reward_strictly_positive() {
        return Err(Error::domain(
            "extended termination requires a strictly positive reward",
        ));
    }
    let tank = TankState::new(e0, DEFAULT_EPSILON, RefillMode::NoRefill)?;
    Ok(TankWrapper::new(env, TankScheme::ExtendedTermination, tank))
}

/// Training with the normalized tank level appended to the observation.
pub fn training_wrap_extended_state<E: Environment>(env: E, e0: f64) -> Result<TankWrapper<E>> {
    let tank = TankState::new(e0, DEFAULT_EPSILON, RefillMode::NoRefill)?;
    Ok(TankWrapper::new(env, TankScheme::ExtendedState, tank))
}

impl<E: Environment> TankWrapper<E> {
    fn new(inner: E, scheme: TankScheme, tank: TankState) -> Self {
        Self {
            inner,
            scheme,
            template: tank,
            tank,
            terminated: false,
        }
    }

    /// Override the gate threshold ε of every subsequent episode.
    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        let t = TankState::new(self.template.initial(), epsilon, self.template.mode())?;
        self.template = t;
        self.tank = t;
        Ok(self)
    }

    pub fn scheme(&self) -> TankScheme {
        self.scheme
    }

    pub fn tank(&self) -> &TankState {
        &self.tank
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut E {
        &mut self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }

    fn extend(&self, mut obs: Vec<f64>) -> Vec<f64> {
        if self.scheme == TankScheme::ExtendedState {
            obs.push(self.tank.fraction());
        }
        obs
    }
}

impl<E: Environment> Environment for TankWrapper<E> {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim() + usize::from(self.scheme == TankScheme::ExtendedState)
    }

    fn params(&self) -> &PendulumParams {
        self.inner.params()
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.tank = self.template;
        self.terminated = false;
        let obs = self.inner.reset(rng);
        self.extend(obs)
    }

    fn step(&mut self, torque: f64) -> Result<StepResult> {
        if self.terminated {
            return Err(Error::domain(
                "step called after a terminal step; reset first",
            ));
        }
        let limit = self.inner.params().torque_limit;
        if !torque.is_finite() {
            return Err(Error::domain(format!(
                "action must be finite, got {torque}"
            )));
        }
        let commanded = torque.clamp(-limit, limit);
        let applied = match self.scheme {
            TankScheme::ExtendedTermination => commanded,
            TankScheme::Inference | TankScheme::ExtendedState => self.tank.gate(&[commanded])[0],
        };
        let gated = applied != commanded;

        let mut result = self.inner.step(applied)?;
        let dq = result.info.beta - result.info.prev_beta;
        let de = delta_energy(&JointDisplacement::scalar(applied, dq)?, self.tank.mode());
        let update = self.tank.update(de)?;
        self.tank = update.tank;

        let exhausted = !self.tank.admits();
        if self.scheme == TankScheme::ExtendedTermination && exhausted {
            result.terminal = true;
            result.truncated = false;
            self.terminated = true;
        }
        result.info.commanded_torque = commanded;
        result.obs = self.extend(std::mem::take(&mut result.obs));
        result.tank = Some(TankReport {
            level: self.tank.level(),
            fraction: self.tank.fraction(),
            spent: self.tank.spent(),
            initial: self.tank.initial(),
            gated,
            depleted: update.depleted,
            overdraw: update.overdraw,
            exhausted,
        });
        Ok(result)
    }

    fn state(&self) -> PendulumState {
        self.inner.state()
    }

    fn set_force_field(&mut self, field: Option<ForceField>) {
        self.inner.set_force_field(field);
    }

    fn reward_strictly_positive(&self) -> bool {
        self.inner.reward_strictly_positive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PendulumEnv;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain() -> PendulumEnv {
        PendulumEnv::new(PendulumParams::default()).unwrap()
    }

    fn policy(k: usize, obs: &[f64]) -> f64 {
        2.5 * (0.7 * obs[2] + ((k as f64) * 0.13).sin())
    }

    struct NegativeReward(PendulumEnv);

    impl Environment for NegativeReward {
        fn observation_dim(&self) -> usize {
            self.0.observation_dim()
        }
        fn params(&self) -> &PendulumParams {
            self.0.params()
        }
        fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
            self.0.reset(rng)
        }
        fn step(&mut self, torque: f64) -> Result<StepResult> {
            let mut r = self.0.step(torque)?;
            r.reward -= 1.0;
            Ok(r)
        }
        fn state(&self) -> PendulumState {
            self.0.state()
        }
        fn set_force_field(&mut self, field: Option<ForceField>) {
            self.0.set_force_field(field)
        }
        fn reward_strictly_positive(&self) -> bool {
            false
        }
    }

    #[test]
    fn unlimited_inference_wrapper_is_transparent() {
        let mut a = plain();
        let mut b = logging_wrap(plain());
        let mut ra = ChaCha8Rng::seed_from_u64(9);
        let mut rb = ChaCha8Rng::seed_from_u64(9);
        let mut oa = a.reset(&mut ra);
        let mut ob = b.reset(&mut rb);
        let mut prev_spent = 0.0;
        for k in 0..500 {
            assert_eq!(oa, ob);
            let sa = a.step(policy(k, &oa)).unwrap();
            let sb = b.step(policy(k, &ob)).unwrap();
            assert_eq!(sa.reward.to_bits(), sb.reward.to_bits());
            assert_eq!(sa.truncated, sb.truncated);
            let t = sb.tank.unwrap();
            assert!(t.spent >= prev_spent);
            assert!(!t.gated && !t.depleted);
            prev_spent = t.spent;
            oa = sa.obs;
            ob = sb.obs;
        }
        assert!(prev_spent > 0.0);
    }

    #[test]
    fn empty_tank_is_free_dynamics() {
        let tank = TankState::new(0.0, DEFAULT_EPSILON, RefillMode::NoRefill).unwrap();
        let mut wrapped = inference_wrap(plain(), tank).unwrap();
        let mut free = plain();
        let start = PendulumState::new(0.2, 0.0);
        wrapped.inner_mut().reset_to(start);
        free.reset_to(start);
        for _ in 0..200 {
            let w = wrapped.step(2.0).unwrap();
            let f = free.step(0.0).unwrap();
            assert_eq!(w.info.applied_torque, 0.0);
            assert!(w.tank.unwrap().gated);
            assert_eq!(w.info.beta, f.info.beta);
            assert_eq!(w.tank.unwrap().spent, 0.0);
        }
    }

    #[test]
    fn inference_wrap_rejects_refill_tank() {
        let tank = TankState::new(1.0, 0.0, RefillMode::RefillAllowed).unwrap();
        assert!(inference_wrap(plain(), tank).is_err());
    }

    #[test]
    fn inference_budget_is_a_hard_cap() {
        let tank = TankState::new(3.0, DEFAULT_EPSILON, RefillMode::NoRefill).unwrap();
        let mut env = inference_wrap(plain(), tank).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut obs = env.reset(&mut rng);
        let mut spent = 0.0;
        for k in 0..500 {
            let s = env.step(policy(k, &obs)).unwrap();
            let t = s.tank.unwrap();
            assert!(t.spent <= 3.0);
            assert!((t.level + t.spent - 3.0).abs() < 1e-12);
            assert!(t.spent >= spent);
            if t.gated {
                assert_eq!(s.info.applied_torque, 0.0);
            }
            assert!(!s.terminal);
            spent = t.spent;
            obs = s.obs;
        }
        // the policy would spend far more than 3 J unconstrained
        assert!(spent > 2.9);
    }

    #[test]
    fn spent_is_frozen_after_depletion() {
        let tank = TankState::new(1.0, DEFAULT_EPSILON, RefillMode::NoRefill).unwrap();
        let mut env = inference_wrap(plain(), tank).unwrap();
        env.inner_mut().reset_to(PendulumState::hanging());
        let mut frozen = None;
        for _ in 0..500 {
            let s = env.step(2.5).unwrap();
            let t = s.tank.unwrap();
            if let Some(v) = frozen {
                assert_eq!(t.spent, v);
            } else if t.exhausted {
                frozen = Some(t.spent);
            }
        }
        assert!(frozen.is_some());
    }

    #[test]
    fn extended_termination_with_huge_budget_matches_plain() {
        let mut a = plain();
        let mut b = training_wrap_extended_termination(plain(), 1e9).unwrap();
        assert_eq!(b.observation_dim(), 3);
        let mut ra = ChaCha8Rng::seed_from_u64(2);
        let mut rb = ChaCha8Rng::seed_from_u64(2);
        let mut oa = a.reset(&mut ra);
        let mut ob = b.reset(&mut rb);
        for k in 0..500 {
            assert_eq!(oa, ob);
            let sa = a.step(policy(k, &oa)).unwrap();
            let sb = b.step(policy(k, &ob)).unwrap();
            assert!(!sb.terminal);
            assert_eq!(sa.reward, sb.reward);
            assert_eq!(sa.truncated, sb.truncated);
            oa = sa.obs;
            ob = sb.obs;
        }
    }

    #[test]
    fn extended_termination_ends_burning_episode() {
        // bang-bang at the torque limit in the direction of motion
        let e0 = 1.0;
        let mut env = training_wrap_extended_termination(plain(), e0).unwrap();
        env.inner_mut().reset_to(PendulumState::new(-1.0, 3.0));
        let mut ended_at = None;
        let mut obs: Vec<f64> = vec![0.0, 0.0, 1.0];
        for k in 1..=10 {
            let torque = 2.5 * obs[2].signum();
            let s = env.step(torque).unwrap();
            assert!(s.tank.unwrap().spent <= e0);
            assert_eq!(s.info.applied_torque, s.info.commanded_torque);
            if s.terminal {
                let t = s.tank.unwrap();
                assert!(t.depleted && t.exhausted);
                assert!(!s.truncated);
                ended_at = Some(k);
                break;
            }
            obs = s.obs;
        }
        assert!(ended_at.is_some(), "episode should end within 10 steps");
        assert!(env.step(0.0).is_err(), "terminal episode must be reset");
    }

    #[test]
    fn extended_termination_rejects_nonpositive_reward() {
        assert!(training_wrap_extended_termination(NegativeReward(plain()), 1.0).is_err());
        assert!(training_wrap_extended_state(NegativeReward(plain()), 1.0).is_ok());
    }

    #[test]
    fn extended_state_observation() {
        let mut env = training_wrap_extended_state(plain(), 0.5).unwrap();
        assert_eq!(env.observation_dim(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = env.reset(&mut rng);
        assert_eq!(obs.len(), 4);
        assert_eq!(obs[3], 1.0);
        let mut seen_empty = false;
        for _ in 0..300 {
            let s = env.step(2.5).unwrap();
            assert!(!s.terminal);
            if seen_empty {
                assert_eq!(s.obs[3], 0.0);
            }
            if s.tank.unwrap().depleted {
                seen_empty = true;
                assert_eq!(s.obs[3], 0.0);
            }
        }
        assert!(seen_empty);

        let mut env = training_wrap_extended_state(plain(), f64::INFINITY).unwrap();
        let obs = env.reset(&mut rng);
        assert_eq!(obs[3], 1.0);
        for _ in 0..50 {
            assert_eq!(env.step(2.5).unwrap().obs[3], 1.0);
        }
    }

    #[test]
    fn zero_field_is_identity() {
        let mut a = plain();
        let mut b = apply_force_field(plain(), ForceField::opposing(0.0).unwrap());
        let mut ra = ChaCha8Rng::seed_from_u64(8);
        let mut rb = ChaCha8Rng::seed_from_u64(8);
        let mut oa = a.reset(&mut ra);
        let mut ob = b.reset(&mut rb);
        for k in 0..500 {
            let sa = a.step(policy(k, &oa)).unwrap();
            let sb = b.step(policy(k, &ob)).unwrap();
            assert_eq!(sa.info.beta.to_bits(), sb.info.beta.to_bits());
            oa = sa.obs;
            ob = sb.obs;
        }
    }

    #[test]
    fn field_does_not_enter_tank_accounting() {
        let tank = TankState::new(1e6, DEFAULT_EPSILON, RefillMode::NoRefill).unwrap();
        let field = ForceField::new(1.3, ForceProfile::Constant).unwrap();
        let mut env = apply_force_field(inference_wrap(plain(), tank).unwrap(), field);
        env.inner_mut().reset_to(PendulumState::new(0.0, 0.5));
        let mut spent = 0.0;
        for k in 0..300 {
            let s = env.step(((k as f64) * 0.05).sin() * 2.0).unwrap();
            assert_eq!(s.info.external_torque, 1.3);
            let expected = (s.info.applied_torque * (s.info.beta - s.info.prev_beta)).max(0.0);
            let t = s.tank.unwrap();
            assert!((t.spent - spent - expected).abs() < 1e-9);
            spent = t.spent;
        }
    }

    #[test]
    fn opposing_field_sign() {
        let f = ForceField::opposing(2.0).unwrap();
        assert_eq!(f.torque(1.0), -2.0);
        assert_eq!(f.torque(-0.1), 2.0);
        assert_eq!(f.torque(0.0), 0.0);
        assert!(ForceField::opposing(-1.0).is_err());
    }
}
