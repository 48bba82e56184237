//! Tanh-squashed diagonal Gaussian policy head (one action dimension).
//!
//! The actor network emits `(mean, raw_log_std)`. The pre-squash sample is
//! `u = mean + exp(log_std) ξ` with `ξ ~ N(0, 1)`, the action is `tanh(u)`,
//! and the log density carries the change-of-variables term
//! `-log(1 - tanh²u)`, evaluated as `-2 (ln 2 - u - softplus(-2u))` so it
//! stays finite even where `tanh(u)` rounds to ±1.
//!
//! [`SdeSample`] is the state-dependent variant: the perturbation is
//! `n = Σ_j z_j θ_j` where `z` is the actor's last hidden layer and
//! `θ_j = exp(ℓ_j) η_j` is an exploration vector, so that for a fixed `θ` the
//! noise is a smooth function of the state. Its density is Gaussian with
//! variance `σ² = Σ_j z_j² exp(2ℓ_j)`.

use std::f64::consts::{LN_2, PI};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 - tanh²u)`
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    pub mean: f64,
    pub log_std: f64,
    /// The raw log std was outside `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub clamped: bool,
    pub noise: f64,
    pub pre_squash: f64,
    /// `tanh(pre_squash)`, in [-1, 1].
    pub action: f64,
    pub log_prob: f64,
}

impl SquashedSample {
    pub fn new(mean: f64, raw_log_std: f64, noise: f64) -> Self {
        let log_std = raw_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let clamped = raw_log_std != log_std;
        let pre_squash = mean + log_std.exp() * noise;
        let log_prob = -0.5 * noise * noise
            - log_std
            - 0.5 * (2.0 * PI).ln()
            - log_one_minus_tanh_sq(pre_squash);
        Self {
            mean,
            log_std,
            clamped,
            noise,
            pre_squash,
            action: pre_squash.tanh(),
            log_prob,
        }
    }

    /// Deterministic evaluation action.
    pub fn mode(mean: f64) -> f64 {
        mean.tanh()
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    /// `(∂ log π / ∂ mean, ∂ log π / ∂ raw_log_std)` with the noise held fixed.
    pub fn log_prob_grad(&self) -> (f64, f64) {
        // d/du of -log(1 - tanh²u) is 2 tanh u
        let d_u = 2.0 * self.action;
        let d_log_std = if self.clamped {
            0.0
        } else {
            -1.0 + d_u * self.std() * self.noise
        };
        (d_u, d_log_std)
    }

    /// `(∂u/∂mean, ∂u/∂raw_log_std)`
    pub fn pre_squash_grad(&self) -> (f64, f64) {
        let d_log_std = if self.clamped {
            0.0
        } else {
            self.std() * self.noise
        };
        (1.0, d_log_std)
    }
}

/// Mean bound for the state-dependent policy.
pub const SDE_MEAN_CLIP: f64 = 2.0;
/// Variance floor keeping the density finite when every latent unit is zero.
pub const SDE_VARIANCE_FLOOR: f64 = 1e-6;

/// One draw from the state-dependent squashed Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeSample {
    /// Mean after clipping to `±SDE_MEAN_CLIP`.
    pub mean: f64,
    pub mean_clipped: bool,
    /// `θ_j = exp(ℓ_j) η_j`
    pub theta: Vec<f64>,
    pub noise: f64,
    pub variance: f64,
    pub pre_squash: f64,
    pub action: f64,
    pub log_prob: f64,
}

impl SdeSample {
    /// `latent` is `z`, `log_std` is `ℓ`, `eta` is standard normal.
    pub fn new(raw_mean: f64, latent: &[f64], log_std: &[f64], eta: &[f64]) -> Self {
        let theta: Vec<f64> = log_std.iter().zip(eta).map(|(l, e)| l.exp() * e).collect();
        Self::with_theta(raw_mean, latent, log_std, theta)
    }

    pub fn with_theta(raw_mean: f64, latent: &[f64], log_std: &[f64], theta: Vec<f64>) -> Self {
        let mean = raw_mean.clamp(-SDE_MEAN_CLIP, SDE_MEAN_CLIP);
        let noise: f64 = latent.iter().zip(&theta).map(|(z, t)| z * t).sum();
        let variance = SDE_VARIANCE_FLOOR
            + latent
                .iter()
                .zip(log_std)
                .map(|(z, l)| z * z * (2.0 * l).exp())
                .sum::<f64>();
        let pre_squash = mean + noise;
        let log_prob = -0.5 * noise * noise / variance
            - 0.5 * variance.ln()
            - 0.5 * (2.0 * PI).ln()
            - log_one_minus_tanh_sq(pre_squash);
        Self {
            mean,
            mean_clipped: raw_mean != mean,
            theta,
            noise,
            variance,
            pre_squash,
            action: pre_squash.tanh(),
            log_prob,
        }
    }

    /// Deterministic evaluation action.
    pub fn mode(raw_mean: f64) -> f64 {
        raw_mean.clamp(-SDE_MEAN_CLIP, SDE_MEAN_CLIP).tanh()
    }

    /// `∂u/∂raw_mean`
    pub fn mean_grad(&self) -> f64 {
        if self.mean_clipped {
            0.0
        } else {
            1.0
        }
    }

    /// `g_lp ∂logπ/∂z + g_u ∂u/∂z` for the latent features `z`, with `η`,
    /// `ℓ` and the mean held fixed.
    pub fn latent_grad(
        &self,
        latent: &[f64],
        log_std: &[f64],
        g_log_prob: f64,
        g_pre_squash: f64,
    ) -> Vec<f64> {
        let (d_noise, d_var) = self.partials();
        latent
            .iter()
            .zip(log_std)
            .zip(&self.theta)
            .map(|((z, l), t)| {
                let dvar = 2.0 * z * (2.0 * l).exp();
                g_log_prob * (d_noise * t + d_var * dvar) + g_pre_squash * t
            })
            .collect()
    }

    /// `(∂logπ/∂n, ∂logπ/∂σ²)` where the noise `n` also moves `u`.
    fn partials(&self) -> (f64, f64) {
        let v = self.variance;
        (
            -self.noise / v + 2.0 * self.action,
            0.5 * self.noise * self.noise / (v * v) - 0.5 / v,
        )
    }

    /// Accumulate `g_lp ∂logπ/∂ℓ + g_u ∂u/∂ℓ` into `out`, with `η` and the
    /// latent features held fixed.
    pub fn accumulate_log_std_grad(
        &self,
        latent: &[f64],
        log_std: &[f64],
        g_log_prob: f64,
        g_pre_squash: f64,
        out: &mut [f64],
    ) {
        let (d_noise, d_var) = self.partials();
        for (((o, z), l), t) in out.iter_mut().zip(latent).zip(log_std).zip(&self.theta) {
            let du = z * t;
            let dvar = 2.0 * z * z * (2.0 * l).exp();
            *o += g_log_prob * (d_noise * du + d_var * dvar) + g_pre_squash * du;
        }
    }
}
