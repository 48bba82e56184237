use ndarray::{Array1, Array2, ArrayView2};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::policy::{SdeSample, SquashedSample};
use crate::error::{Error, Result};
use crate::neural::{adam_update, Activation, ForwardCache, Gradients, Network};

const OUTPUT_SCALE: f64 = 0.01;

/// How the behaviour policy perturbs the mean action during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// State-dependent exploration: a noise vector over the actor's last
    /// hidden layer, held fixed between resamples.
    #[default]
    Gsde,
    /// Independent Gaussian noise at every step with a state-dependent std.
    Gaussian,
}

/// Learned log standard deviations of the state-dependent noise, with
/// their Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams {
    pub log_std: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl SdeParams {
    fn new(dim: usize, init: f64) -> Self {
        Self {
            log_std: vec![init; dim],
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// Policy network plus the parameters of its action distribution.
///
/// Gaussian actors output `(mean, raw_log_std)`; gSDE actors output only the
/// mean and keep `log_std` as free parameters over the final hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub net: Network,
    pub sde: Option<SdeParams>,
}

#[derive(Debug, Clone)]
enum Samples {
    Gaussian(Vec<SquashedSample>),
    Sde {
        samples: Vec<SdeSample>,
        latent: Array2<f64>,
    },
}

/// A batch of reparameterized policy samples with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    /// Squashed actions in `[-1, 1]`.
    pub actions: Array1<f64>,
    pub log_probs: Array1<f64>,
    cache: ForwardCache,
    samples: Samples,
}

#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub net: Gradients,
    /// Empty for Gaussian actors.
    pub log_std: Vec<f64>,
}

impl ActorGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.net.flatten();
        out.extend(&self.log_std);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }
}

impl Actor {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        exploration: Exploration,
        log_std_init: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let outputs = match exploration {
            Exploration::Gaussian => 2,
            Exploration::Gsde => 1,
        };
        let mut sizes = vec![obs_dim];
        sizes.extend(hidden);
        sizes.push(outputs);
        let mut net = Network::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        net.scale_output_layer(OUTPUT_SCALE);
        let sde = match exploration {
            Exploration::Gaussian => None,
            Exploration::Gsde => {
                crate::error::ensure_finite("sde_log_std_init", log_std_init)?;
                Some(SdeParams::new(sizes[sizes.len() - 2], log_std_init))
            }
        };
        Ok(Self { net, sde })
    }

    /// Validate that stored parts form an actor.
    pub fn from_parts(net: Network, sde: Option<SdeParams>) -> Result<Self> {
        let expected = if sde.is_some() { 1 } else { 2 };
        if net.output_dim() != expected {
            return Err(Error::Shape {
                expected,
                actual: net.output_dim(),
            });
        }
        if let Some(p) = &sde {
            let width = net.layers().last().map(|l| l.inputs()).unwrap_or(0);
            if p.log_std.len() != width || p.m.len() != width || p.v.len() != width {
                return Err(Error::Shape {
                    expected: width,
                    actual: p.log_std.len(),
                });
            }
        }
        Ok(Self { net, sde })
    }

    pub fn exploration(&self) -> Exploration {
        if self.sde.is_some() {
            Exploration::Gsde
        } else {
            Exploration::Gaussian
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Width of one row of the noise matrix given to [`Actor::evaluate`].
    pub fn noise_dim(&self) -> usize {
        self.sde.as_ref().map_or(1, |p| p.log_std.len())
    }

    pub fn sample_noise(&self, rows: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let cols = self.noise_dim();
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    /// Reparameterized samples for a batch of observations and fixed
    /// standard-normal noise of shape `(batch, noise_dim)`.
    pub fn evaluate(&self, obs: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<PolicyEval> {
        if noise.dim() != (obs.nrows(), self.noise_dim()) {
            return Err(Error::Shape {
                expected: obs.nrows() * self.noise_dim(),
                actual: noise.len(),
            });
        }
        let (out, cache) = self.net.forward_batch(obs)?;
        let samples = match &self.sde {
            None => Samples::Gaussian(
                out.rows()
                    .into_iter()
                    .zip(noise.column(0))
                    .map(|(row, &xi)| SquashedSample::new(row[0], row[1], xi))
                    .collect(),
            ),
            Some(p) => {
                let latent = cache
                    .input(self.net.layers().len() - 1)
                    .expect("forward pass caches every layer input")
                    .to_owned();
                let samples = latent
                    .rows()
                    .into_iter()
                    .zip(noise.rows())
                    .zip(out.column(0))
                    .map(|((z, eta), &mean)| {
                        SdeSample::new(
                            mean,
                            z.as_slice().expect("owned rows are contiguous"),
                            &p.log_std,
                            &eta.to_vec(),
                        )
                    })
                    .collect();
                Samples::Sde { samples, latent }
            }
        };
        let (actions, log_probs) = match &samples {
            Samples::Gaussian(s) => (
                s.iter().map(|s| s.action).collect(),
                s.iter().map(|s| s.log_prob).collect(),
            ),
            Samples::Sde { samples, .. } => (
                samples.iter().map(|s| s.action).collect(),
                samples.iter().map(|s| s.log_prob).collect(),
            ),
        };
        Ok(PolicyEval {
            actions,
            log_probs,
            cache,
            samples,
        })
    }

    /// Gradients of `Σ_i g_log_prob[i] log π_i + g_pre_squash[i] u_i` with the
    /// standard-normal noise held fixed. For gSDE the hidden features enter
    /// both the noise and its variance, and that path is differentiated too.
    pub fn backward(
        &self,
        eval: &PolicyEval,
        g_log_prob: &[f64],
        g_pre_squash: &[f64],
    ) -> Result<ActorGrads> {
        let n = eval.actions.len();
        if g_log_prob.len() != n || g_pre_squash.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: g_log_prob.len().min(g_pre_squash.len()),
            });
        }
        match (&eval.samples, &self.sde) {
            (Samples::Gaussian(samples), None) => {
                let mut grad_out = Array2::zeros((n, 2));
                for (i, s) in samples.iter().enumerate() {
                    let (lp_m, lp_s) = s.log_prob_grad();
                    let (u_m, u_s) = s.pre_squash_grad();
                    grad_out[[i, 0]] = g_log_prob[i] * lp_m + g_pre_squash[i] * u_m;
                    grad_out[[i, 1]] = g_log_prob[i] * lp_s + g_pre_squash[i] * u_s;
                }
                let (net, _) = self.net.backward(&eval.cache, grad_out.view())?;
                Ok(ActorGrads {
                    net,
                    log_std: Vec::new(),
                })
            }
            (Samples::Sde { samples, latent }, Some(p)) => {
                let mut grad_out = Array2::zeros((n, 1));
                let mut feature_grad = Array2::zeros(latent.dim());
                let mut log_std = vec![0.0; p.log_std.len()];
                for (i, s) in samples.iter().enumerate() {
                    let z = latent.row(i);
                    let z = z.as_slice().expect("owned rows are contiguous");
                    grad_out[[i, 0]] =
                        (g_log_prob[i] * 2.0 * s.action + g_pre_squash[i]) * s.mean_grad();
                    s.accumulate_log_std_grad(
                        z,
                        &p.log_std,
                        g_log_prob[i],
                        g_pre_squash[i],
                        &mut log_std,
                    );
                    let dz = s.latent_grad(z, &p.log_std, g_log_prob[i], g_pre_squash[i]);
                    feature_grad.row_mut(i).assign(&Array1::from(dz));
                }
                let (net, _) = self.net.backward_with_features(
                    &eval.cache,
                    grad_out.view(),
                    Some(feature_grad.view()),
                )?;
                Ok(ActorGrads { net, log_std })
            }
            _ => Err(Error::domain(
                "policy evaluation does not belong to this actor",
            )),
        }
    }

    pub fn adam_step(&mut self, grads: &ActorGrads, learning_rate: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::domain("non-finite actor gradient"));
        }
        self.net.adam_step(&grads.net, learning_rate)?;
        if let Some(p) = &mut self.sde {
            if grads.log_std.len() != p.log_std.len() {
                return Err(Error::Shape {
                    expected: p.log_std.len(),
                    actual: grads.log_std.len(),
                });
            }
            p.step += 1;
            adam_update(
                &mut p.log_std,
                &grads.log_std,
                &mut p.m,
                &mut p.v,
                p.step,
                learning_rate,
            );
            if p.log_std.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("non-finite exploration parameters"));
            }
        }
        Ok(())
    }

    /// Deterministic action in `[-1, 1]`.
    pub fn mode(&self, obs: &[f64]) -> Result<f64> {
        let out = self.net.predict_one(obs)?;
        Ok(match self.sde {
            Some(_) => SdeSample::mode(out[0]),
            None => SquashedSample::mode(out[0]),
        })
    }

    /// Fresh exploration vector `θ = exp(ℓ) ⊙ η`; empty for Gaussian actors.
    pub fn exploration_vector(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match &self.sde {
            Some(p) => p
                .log_std
                .iter()
                .map(|l| {
                    let eta: f64 = StandardNormal.sample(rng);
                    l.exp() * eta
                })
                .collect(),
            None => Vec::new(),
        }
    }

    /// Behaviour-policy action in `[-1, 1]`. gSDE actors use the held
    /// exploration vector `theta`; Gaussian actors draw from `rng`.
    pub fn explore(&self, obs: &[f64], theta: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        let (out, latent) = self.net.predict_one_with_features(obs)?;
        match &self.sde {
            Some(p) => {
                if theta.len() != p.log_std.len() {
                    return Err(Error::Shape {
                        expected: p.log_std.len(),
                        actual: theta.len(),
                    });
                }
                let mean =
                    out[0].clamp(-super::policy::SDE_MEAN_CLIP, super::policy::SDE_MEAN_CLIP);
                let noise: f64 = latent.iter().zip(theta).map(|(z, t)| z * t).sum();
                Ok((mean + noise).tanh())
            }
            None => {
                let xi: f64 = StandardNormal.sample(rng);
                Ok(SquashedSample::new(out[0], out[1], xi).action)
            }
        }
    }

    /// Network parameters followed by the exploration log stds.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.net.flat_params();
        if let Some(p) = &self.sde {
            out.extend(&p.log_std);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let n = self.net.parameter_count();
        let extra = self.sde.as_ref().map_or(0, |p| p.log_std.len());
        if values.len() != n + extra {
            return Err(Error::Shape {
                expected: n + extra,
                actual: values.len(),
            });
        }
        self.net.set_flat_params(&values[..n])?;
        if let Some(p) = &mut self.sde {
            p.log_std.copy_from_slice(&values[n..]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
            && self
                .sde
                .as_ref()
                .is_none_or(|p| p.log_std.iter().all(|v| v.is_finite()))
    }
}
