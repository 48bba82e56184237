//! Discrete-time virtual energy tank.
//!
//! The tank starts at `e0` and every control step withdraws the energy the
//! actuators injected over the step, `wᵀ(q_{k+1} - q_k)`. Under
//! [`RefillMode::NoRefill`] negative work is discarded, so the level can
//! only go down and `spent` only up. Once the level falls below `epsilon`
//! the commanded torque is replaced by zero.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Gate threshold used when none is configured, J.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefillMode {
    NoRefill,
    RefillAllowed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankState {
    level: f64,
    initial: f64,
    spent: f64,
    epsilon: f64,
    mode: RefillMode,
}

impl TankState {
    /// A full tank holding `e0` joules. `e0 = +inf` is accepted and gives a
    /// tank that never gates but still accounts for spent energy.
    pub fn new(e0: f64, epsilon: f64, mode: RefillMode) -> Result<Self> {
        if e0.is_nan() || e0 < 0.0 || e0 == f64::NEG_INFINITY {
            return Err(Error::domain(format!(
                "initial tank energy must be >= 0, got {e0}"
            )));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::domain(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            level: e0,
            initial: e0,
            spent: 0.0,
            epsilon,
            mode,
        })
    }

    pub fn unlimited(mode: RefillMode) -> Self {
        Self::new(f64::INFINITY, DEFAULT_EPSILON, mode).expect("infinite budget is valid")
    }

    /// Current level `e_k`.
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// Cumulative energy that has left the tank, `ê_k`.
    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> RefillMode {
        self.mode
    }

    pub fn is_unlimited(&self) -> bool {
        self.initial.is_infinite()
    }

    /// `e_k / e0`, pinned to 1 for an unlimited tank and to 0 for an empty
    /// zero-budget tank.
    pub fn fraction(&self) -> f64 {
        if self.is_unlimited() {
            1.0
        } else if self.initial == 0.0 {
            0.0
        } else {
            self.level / self.initial
        }
    }

    /// Whether the gate passes torque at the current level (`e_k >= ε`).
    pub fn admits(&self) -> bool {
        self.level >= self.epsilon
    }

    /// Commanded torque after gating: unchanged while the tank admits it,
    /// zero otherwise.
    pub fn gate(&self, w: &[f64]) -> Vec<f64> {
        if self.admits() {
            w.to_vec()
        } else {
            vec![0.0; w.len()]
        }
    }

    /// Withdraw `de` joules.
    ///
    /// If `de` exceeds what is left, the level is floored at zero, `spent`
    /// is capped at `e0`, and the returned update carries `depleted = true`.
    pub fn update(&self, de: f64) -> Result<TankUpdate> {
        ensure_finite("energy withdrawal", de)?;
        if self.mode == RefillMode::NoRefill && de < 0.0 {
            return Err(Error::domain(format!(
                "negative withdrawal {de} is not allowed without refill"
            )));
        }
        let mut next = *self;
        if self.is_unlimited() {
            next.spent += de;
            return Ok(TankUpdate {
                tank: next,
                depleted: false,
                overdraw: 0.0,
            });
        }
        if de > self.level {
            next.level = 0.0;
            next.spent = self.initial;
            return Ok(TankUpdate {
                tank: next,
                depleted: true,
                overdraw: de - self.level,
            });
        }
        next.spent += de;
        // level tracks e0 - spent so the two never drift apart by rounding
        next.level = (self.initial - next.spent).max(0.0);
        Ok(TankUpdate {
            tank: next,
            depleted: false,
            overdraw: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankUpdate {
    pub tank: TankState,
    /// The withdrawal exceeded the remaining level.
    pub depleted: bool,
    /// Energy requested beyond what the tank held (zero unless depleted).
    pub overdraw: f64,
}

/// Generalized forces held over a sampling interval and the joint
/// displacement they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDisplacement {
    torque: Vec<f64>,
    displacement: Vec<f64>,
}

impl JointDisplacement {
    pub fn new(torque: Vec<f64>, displacement: Vec<f64>) -> Result<Self> {
        if torque.len() != displacement.len() {
            return Err(Error::Shape {
                expected: torque.len(),
                actual: displacement.len(),
            });
        }
        for (&w, &dq) in torque.iter().zip(&displacement) {
            ensure_finite("torque", w)?;
            ensure_finite("displacement", dq)?;
        }
        Ok(Self {
            torque,
            displacement,
        })
    }

    pub fn scalar(w: f64, dq: f64) -> Result<Self> {
        Self::new(vec![w], vec![dq])
    }

    pub fn work(&self) -> f64 {
        self.torque
            .iter()
            .zip(&self.displacement)
            .map(|(w, dq)| w * dq)
            .sum()
    }
}

/// Energy leaving the tank over one interval, `wᵀΔq`, clipped at zero
/// when refilling is not allowed.
pub fn delta_energy(jd: &JointDisplacement, mode: RefillMode) -> f64 {
    let work = jd.work();
    match mode {
        RefillMode::NoRefill => work.max(0.0),
        RefillMode::RefillAllowed => work,
    }
}

/// Task energy: the largest final `ê_N` over a set of ungated episodes.
pub fn task_energy(episode_spents: &[f64]) -> Result<f64> {
    if episode_spents.is_empty() {
        return Err(Error::domain("task energy needs at least one episode"));
    }
    let mut max = f64::NEG_INFINITY;
    for &e in episode_spents {
        ensure_finite("episode energy", e)?;
        max = max.max(e);
    }
    Ok(max)
}

/// Continuous-time reference for one interval.
///
/// Integrates the lossless tank state `x_c` with `ẋ_c = -wᵀq̇ / x_c` along
/// the piecewise-linear substep trace (closed form on each segment:
/// `x² ← x² - 2 wᵀΔq`), and returns `V_c = x_c² / 2` at the end.
/// `trace` holds one joint vector per grid point.
pub fn continuous_tank_oracle(trace: &[Vec<f64>], w: &[f64], v0: f64) -> f64 {
    let mut x_squared = 2.0 * v0;
    for pair in trace.windows(2) {
        let power_integral: f64 = w
            .iter()
            .zip(pair[1].iter().zip(&pair[0]))
            .map(|(wi, (b, a))| wi * (b - a))
            .sum();
        x_squared = (x_squared - 2.0 * power_integral).max(0.0);
    }
    0.5 * x_squared
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tank(e0: f64) -> TankState {
        TankState::new(e0, DEFAULT_EPSILON, RefillMode::NoRefill).unwrap()
    }

    #[test]
    fn delta_energy_examples() {
        let jd = JointDisplacement::scalar(0.0, 0.3).unwrap();
        assert_eq!(delta_energy(&jd, RefillMode::NoRefill), 0.0);
        let jd = JointDisplacement::scalar(2.0, 0.15).unwrap();
        assert!((delta_energy(&jd, RefillMode::NoRefill) - 0.3).abs() < 1e-15);
        assert!((delta_energy(&jd, RefillMode::RefillAllowed) - 0.3).abs() < 1e-15);
        let jd = JointDisplacement::scalar(2.0, -0.15).unwrap();
        assert_eq!(delta_energy(&jd, RefillMode::NoRefill), 0.0);
        assert!((delta_energy(&jd, RefillMode::RefillAllowed) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn displacement_length_mismatch() {
        assert!(matches!(
            JointDisplacement::new(vec![1.0, 2.0], vec![0.1]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn update_examples() {
        let t = tank(10.0);
        let u = t.update(0.3).unwrap();
        assert!((u.tank.level() - 9.7).abs() < 1e-12);
        assert!((u.tank.spent() - 0.3).abs() < 1e-15);
        assert!(!u.depleted);

        let t = tank(10.0).update(9.8).unwrap().tank;
        assert!((t.level() - 0.2).abs() < 1e-12);
        let u = t.update(0.5).unwrap();
        assert_eq!(u.tank.level(), 0.0);
        assert_eq!(u.tank.spent(), 10.0);
        assert!(u.depleted);
        assert!((u.overdraw - 0.3).abs() < 1e-9);

        let t = tank(10.0);
        assert_eq!(t.update(0.0).unwrap().tank, t);
    }

    #[test]
    fn negative_withdrawal_rejected_without_refill() {
        assert!(tank(1.0).update(-0.1).is_err());
        let refill = TankState::new(1.0, 0.0, RefillMode::RefillAllowed).unwrap();
        let t = refill.update(-0.1).unwrap().tank;
        assert!((t.level() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn gate_examples() {
        let t = TankState::new(5.0, 0.001, RefillMode::NoRefill).unwrap();
        assert_eq!(t.gate(&[1.2]), vec![1.2]);
        let low = TankState::new(0.0005, 0.001, RefillMode::NoRefill).unwrap();
        assert_eq!(low.gate(&[1.2]), vec![0.0]);
        let edge = TankState::new(0.001, 0.001, RefillMode::NoRefill).unwrap();
        assert_eq!(edge.gate(&[1.2]), vec![1.2]);
    }

    #[test]
    fn unlimited_tank_accounts_but_never_gates() {
        let mut t = TankState::unlimited(RefillMode::NoRefill);
        for _ in 0..10 {
            t = t.update(1e6).unwrap().tank;
        }
        assert!(t.admits());
        assert_eq!(t.fraction(), 1.0);
        assert_eq!(t.spent(), 1e7);
    }

    #[test]
    fn task_energy_examples() {
        assert_eq!(task_energy(&[3.1, 2.8, 3.4]).unwrap(), 3.4);
        assert_eq!(task_energy(&[5.0]).unwrap(), 5.0);
        assert!(task_energy(&[]).is_err());
    }

    #[test]
    fn oracle_examples() {
        let trace: Vec<Vec<f64>> = (0..11).map(|i| vec![0.1 * f64::from(i).sin()]).collect();
        assert_eq!(continuous_tank_oracle(&trace, &[0.0], 4.0), 4.0);
        let w = 1.7;
        let v = continuous_tank_oracle(&trace, &[w], 4.0);
        let expected = 4.0 - w * (trace[10][0] - trace[0][0]);
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn invalid_construction() {
        assert!(TankState::new(-1.0, 0.001, RefillMode::NoRefill).is_err());
        assert!(TankState::new(f64::NAN, 0.001, RefillMode::NoRefill).is_err());
        assert!(TankState::new(1.0, -0.001, RefillMode::NoRefill).is_err());
    }

    proptest! {
        #[test]
        fn no_refill_invariants(e0 in 0.0f64..50.0, works in prop::collection::vec(-3.0f64..3.0, 1..200)) {
            let mut t = tank(e0);
            let mut prev_spent = 0.0;
            for w in works {
                let de = delta_energy(&JointDisplacement::scalar(1.0, w).unwrap(), RefillMode::NoRefill);
                t = t.update(de).unwrap().tank;
                prop_assert!(t.level() >= 0.0 && t.level() <= e0);
                prop_assert!(t.spent() >= prev_spent);
                prop_assert!((t.spent() + t.level() - e0).abs() <= 1e-12 * e0.max(1.0));
                prev_spent = t.spent();
            }
        }

        #[test]
        fn no_refill_dominates_refill(works in prop::collection::vec(-3.0f64..3.0, 1..200)) {
            let mut strict = TankState::new(1e3, 0.0, RefillMode::NoRefill).unwrap();
            let mut loose = TankState::new(1e3, 0.0, RefillMode::RefillAllowed).unwrap();
            for w in works {
                let jd = JointDisplacement::scalar(1.0, w).unwrap();
                strict = strict.update(delta_energy(&jd, RefillMode::NoRefill)).unwrap().tank;
                loose = loose.update(delta_energy(&jd, RefillMode::RefillAllowed)).unwrap().tank;
                // discarding negative work withdraws at least as much energy
                prop_assert!(strict.spent() >= loose.spent() - 1e-12);
                prop_assert!(strict.level() <= loose.level() + 1e-12);
            }
        }

        #[test]
        fn gate_is_idempotent(level in 0.0f64..0.01, w in -5.0f64..5.0) {
            let t = tank(level);
            let once = t.gate(&[w]);
            prop_assert_eq!(t.gate(&once), once);
        }
    }
}
