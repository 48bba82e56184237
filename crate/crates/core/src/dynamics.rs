//! Torque-actuated rigid rod pendulum.
//!
//! The rod is uniform, pivoted at one end, and rotates in a vertical plane.
//! `beta = 0` points horizontally right and `beta = pi/2` is upright, so the
//! gravity torque is `-(m g l / 2) cos(beta)`.
//!
//! Integration uses a discrete-gradient (energy-consistent midpoint) scheme:
//! over each substep the change of mechanical energy equals the work done by
//! the applied and external torques along the position increment minus the
//! friction loss, to rounding. This is what makes the sampled tank balance
//! hold without an integrator error term.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// Viscous joint friction, N·m·s/rad.
    pub friction: f64,
    /// m/s²
    pub gravity: f64,
    /// Actuator saturation, N·m.
    pub torque_limit: f64,
    /// Duration of one control step, s.
    pub control_period: f64,
    pub substeps_per_control: u32,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            friction: 0.1,
            gravity: 9.81,
            torque_limit: 2.5,
            control_period: 0.02,
            substeps_per_control: 10,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("length", self.length),
            ("gravity", self.gravity),
            ("torque_limit", self.torque_limit),
            ("control_period", self.control_period),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.friction.is_finite() && self.friction >= 0.0) {
            return Err(Error::domain(format!(
                "friction must be non-negative, got {}",
                self.friction
            )));
        }
        if self.substeps_per_control == 0 {
            return Err(Error::domain("substeps_per_control must be at least 1"));
        }
        Ok(())
    }

    /// Rotational inertia about the pivot, `m l² / 3`.
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length / 3.0
    }

    /// Peak gravity torque `m g l / 2`.
    pub fn gravity_torque(&self) -> f64 {
        0.5 * self.mass * self.gravity * self.length
    }

    pub fn substep_dt(&self) -> f64 {
        self.control_period / f64::from(self.substeps_per_control)
    }

    pub fn control_frequency(&self) -> f64 {
        1.0 / self.control_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PendulumState {
    /// Joint angle in rad, unwrapped.
    pub beta: f64,
    /// rad/s
    pub beta_dot: f64,
}

impl PendulumState {
    pub fn new(beta: f64, beta_dot: f64) -> Self {
        Self { beta, beta_dot }
    }

    pub fn hanging() -> Self {
        Self::new(-std::f64::consts::FRAC_PI_2, 0.0)
    }

    fn check(&self) -> Result<()> {
        ensure_finite("beta", self.beta)?;
        ensure_finite("beta_dot", self.beta_dot)
    }
}

/// Continuous-time angular acceleration.
pub fn acceleration(
    state: PendulumState,
    applied_torque: f64,
    external_torque: f64,
    params: &PendulumParams,
) -> f64 {
    (applied_torque + external_torque
        - params.friction * state.beta_dot
        - params.gravity_torque() * state.beta.cos())
        / params.inertia()
}

/// `E = ½ I β̇² + (m g l / 2)(1 + sin β)`, zero at the hanging rest state.
pub fn mechanical_energy(state: PendulumState, params: &PendulumParams) -> f64 {
    0.5 * params.inertia() * state.beta_dot * state.beta_dot
        + params.gravity_torque() * (1.0 + state.beta.sin())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

const MAX_SOLVER_ITERATIONS: usize = 64;

/// Advance the state by one integration substep of length `dt`.
///
/// Solves for the position increment `Δ` of the discrete-gradient update
/// with a contraction iteration; the mean-value gravity torque is
/// `k cos(β + Δ/2) sinc(Δ/2)`, the exact difference quotient of the
/// potential.
pub fn substep(
    state: PendulumState,
    applied_torque: f64,
    external_torque: f64,
    dt: f64,
    params: &PendulumParams,
) -> Result<PendulumState> {
    state.check()?;
    ensure_finite("applied_torque", applied_torque)?;
    ensure_finite("external_torque", external_torque)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let delta = solve_increment(state, applied_torque + external_torque, dt, params);
    let next = PendulumState {
        beta: state.beta + delta,
        beta_dot: 2.0 * delta / dt - state.beta_dot,
    };
    next.check()?;
    Ok(next)
}

fn solve_increment(state: PendulumState, torque: f64, dt: f64, params: &PendulumParams) -> f64 {
    let inertia = params.inertia();
    let k = params.gravity_torque();
    let denom = 2.0 * inertia / dt + params.friction;
    let rhs = 2.0 * inertia * state.beta_dot + dt * torque;
    let mut delta = dt * state.beta_dot;
    for _ in 0..MAX_SOLVER_ITERATIONS {
        let half = 0.5 * delta;
        let mean_gravity = k * (state.beta + half).cos() * sinc(half);
        let next = (rhs - dt * mean_gravity) / denom;
        let settled =
            (next - delta).abs() <= 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE);
        delta = next;
        if settled {
            break;
        }
    }
    delta
}

/// Result of holding one torque value across a full control period.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInterval {
    pub state: PendulumState,
    /// Quadrature of `∫ w β̇ dt` for the applied torque.
    pub injected_energy: f64,
    /// Quadrature of `∫ d β̇² dt`.
    pub dissipated_energy: f64,
    /// Quadrature of `∫ δ β̇ dt` for the external torque.
    pub external_energy: f64,
}

/// Run `substeps_per_control` substeps with the torques held constant.
///
/// The quadratures are accumulated on the substep grid from the position
/// increments, which is how the scheme defines the velocity on each
/// substep (`β̇ = Δβ / dt` at the midpoint).
pub fn simulate_control_interval(
    state: PendulumState,
    applied_torque: f64,
    external_torque: f64,
    params: &PendulumParams,
) -> Result<ControlInterval> {
    simulate_interval_impl(state, applied_torque, external_torque, params, None)
}

/// Same as [`simulate_control_interval`] and also returns the substep
/// position trace, including the start and end positions.
pub fn simulate_control_interval_traced(
    state: PendulumState,
    applied_torque: f64,
    external_torque: f64,
    params: &PendulumParams,
) -> Result<(ControlInterval, Vec<f64>)> {
    let mut trace = Vec::with_capacity(params.substeps_per_control as usize + 1);
    let interval = simulate_interval_impl(
        state,
        applied_torque,
        external_torque,
        params,
        Some(&mut trace),
    )?;
    Ok((interval, trace))
}

fn simulate_interval_impl(
    state: PendulumState,
    applied_torque: f64,
    external_torque: f64,
    params: &PendulumParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ControlInterval> {
    params.validate()?;
    let dt = params.substep_dt();
    let mut current = state;
    let mut injected = 0.0;
    let mut dissipated = 0.0;
    let mut external = 0.0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(current.beta);
    }
    for _ in 0..params.substeps_per_control {
        let next = substep(current, applied_torque, external_torque, dt, params)?;
        let dbeta = next.beta - current.beta;
        let mid_velocity = dbeta / dt;
        injected += applied_torque * dbeta;
        external += external_torque * dbeta;
        dissipated += params.friction * mid_velocity * mid_velocity * dt;
        current = next;
        if let Some(t) = trace.as_deref_mut() {
            t.push(current.beta);
        }
    }
    Ok(ControlInterval {
        state: current,
        injected_energy: injected,
        dissipated_energy: dissipated,
        external_energy: external,
    })
}
