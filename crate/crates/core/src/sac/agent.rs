use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::RngCore;

use super::actor::{Actor, ActorGrads};
use super::replay::Batch;
use super::SacConfig;
use crate::error::{Error, Result};
use crate::neural::{adam_update, Activation, Gradients, Network};

/// Entropy target `-dim(A)` for the single torque action.
pub const TARGET_ENTROPY: f64 = -1.0;

/// Actor, twin critics with their targets, and the learned temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub actor: Actor,
    pub critics: [Network; 2],
    pub targets: [Network; 2],
    log_alpha: f64,
    alpha_moments: (f64, f64),
    alpha_step: u64,
    torque_limit: f64,
    config: SacConfig,
    updates: u64,
    /// Held exploration vector for state-dependent exploration.
    theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub alpha_loss: f64,
    /// Batch estimate of the policy entropy, `-mean(log π)`.
    pub entropy: f64,
}

/// `[obs | action]`
pub fn critic_input(obs: ArrayView2<f64>, actions: ArrayView1<f64>) -> Array2<f64> {
    let (rows, cols) = obs.dim();
    let mut out = Array2::zeros((rows, cols + 1));
    out.slice_mut(s![.., ..cols]).assign(&obs);
    out.column_mut(cols).assign(&actions);
    out
}

/// Mean squared error of one critic against fixed targets.
pub fn critic_loss(
    critic: &Network,
    inputs: ArrayView2<f64>,
    targets: &Array1<f64>,
) -> Result<f64> {
    let q = critic.predict(inputs)?;
    let n = targets.len() as f64;
    Ok(q.column(0)
        .iter()
        .zip(targets)
        .map(|(q, y)| (q - y) * (q - y))
        .sum::<f64>()
        / n)
}

pub fn critic_loss_and_grad(
    critic: &Network,
    inputs: ArrayView2<f64>,
    targets: &Array1<f64>,
) -> Result<(f64, Gradients)> {
    let (q, cache) = critic.forward_batch(inputs)?;
    let n = targets.len() as f64;
    let diff = &q.column(0) - targets;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let grad_out = (diff * (2.0 / n)).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, grad_out.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: ActorGrads,
    pub log_probs: Array1<f64>,
}

/// Reparameterized policy loss `mean(α log π(a|s) - min(Q1, Q2)(s, a))`
/// for fixed noise draws.
pub fn actor_loss(
    actor: &Actor,
    critics: &[Network; 2],
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    alpha: f64,
) -> Result<f64> {
    let eval = actor.evaluate(obs, noise)?;
    let inputs = critic_input(obs, eval.actions.view());
    let q1 = critics[0].predict(inputs.view())?;
    let q2 = critics[1].predict(inputs.view())?;
    let n = eval.actions.len() as f64;
    Ok(eval
        .log_probs
        .iter()
        .enumerate()
        .map(|(i, lp)| alpha * lp - q1[[i, 0]].min(q2[[i, 0]]))
        .sum::<f64>()
        / n)
}

pub fn actor_loss_and_grad(
    actor: &Actor,
    critics: &[Network; 2],
    obs: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    alpha: f64,
) -> Result<ActorLoss> {
    let eval = actor.evaluate(obs, noise)?;
    let rows = eval.actions.len();
    let n = rows as f64;
    let inputs = critic_input(obs, eval.actions.view());
    let (q1, c1) = critics[0].forward_batch(inputs.view())?;
    let (q2, c2) = critics[1].forward_batch(inputs.view())?;

    // route -1/n through whichever critic is smaller for each sample
    let mut g1 = Array2::zeros((rows, 1));
    let mut g2 = Array2::zeros((rows, 1));
    let mut loss = 0.0;
    for i in 0..rows {
        let (a, b) = (q1[[i, 0]], q2[[i, 0]]);
        if a <= b {
            g1[[i, 0]] = -1.0 / n;
        } else {
            g2[[i, 0]] = -1.0 / n;
        }
        loss += alpha * eval.log_probs[i] - a.min(b);
    }
    loss /= n;
    let (_, in1) = critics[0].backward(&c1, g1.view())?;
    let (_, in2) = critics[1].backward(&c2, g2.view())?;
    let action_col = obs.ncols();

    let g_log_prob = vec![alpha / n; rows];
    let g_pre_squash: Vec<f64> = (0..rows)
        .map(|i| {
            let a = eval.actions[i];
            (in1[[i, action_col]] + in2[[i, action_col]]) * (1.0 - a * a)
        })
        .collect();
    let grads = actor.backward(&eval, &g_log_prob, &g_pre_squash)?;
    Ok(ActorLoss {
        loss,
        grads,
        log_probs: eval.log_probs,
    })
}

/// Temperature loss `-mean(α (log π + H_target))` with `log π` held fixed.
pub fn alpha_loss(log_alpha: f64, log_probs: &Array1<f64>, target_entropy: f64) -> f64 {
    let alpha = log_alpha.exp();
    -alpha * log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len() as f64
}

/// `∂/∂ log α` of [`alpha_loss`].
pub fn alpha_loss_grad(log_alpha: f64, log_probs: &Array1<f64>, target_entropy: f64) -> f64 {
    alpha_loss(log_alpha, log_probs, target_entropy)
}

impl SacAgent {
    pub fn new(
        obs_dim: usize,
        torque_limit: f64,
        config: SacConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        config.validate()?;
        if !(torque_limit.is_finite() && torque_limit > 0.0) {
            return Err(Error::domain("torque limit must be positive"));
        }
        let actor = Actor::new(
            obs_dim,
            &config.hidden_sizes,
            config.exploration,
            config.sde_log_std_init,
            rng,
        )?;
        let theta = vec![0.0; actor.sde.as_ref().map_or(0, |p| p.log_std.len())];

        let mut critic_sizes = vec![obs_dim + 1];
        critic_sizes.extend(&config.hidden_sizes);
        critic_sizes.push(1);
        let c1 = Network::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let c2 = Network::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            actor,
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            log_alpha: config.initial_alpha.ln(),
            alpha_moments: (0.0, 0.0),
            alpha_step: 0,
            torque_limit,
            config,
            updates: 0,
            theta,
        })
    }

    /// Reassemble an agent from stored parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        actor: Actor,
        critics: [Network; 2],
        targets: [Network; 2],
        log_alpha: f64,
        alpha_moments: (f64, f64),
        alpha_step: u64,
        torque_limit: f64,
        config: SacConfig,
        updates: u64,
    ) -> Result<Self> {
        config.validate()?;
        if actor.exploration() != config.exploration {
            return Err(Error::domain(
                "actor exploration does not match the configuration",
            ));
        }
        for c in critics.iter().chain(targets.iter()) {
            if c.input_dim() != actor.obs_dim() + 1 || c.output_dim() != 1 {
                return Err(Error::domain("critic shape does not match the actor"));
            }
        }
        let theta = vec![0.0; actor.sde.as_ref().map_or(0, |p| p.log_std.len())];
        Ok(Self {
            theta,
            actor,
            critics,
            targets,
            log_alpha,
            alpha_moments,
            alpha_step,
            torque_limit,
            config,
            updates,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.obs_dim()
    }

    pub fn torque_limit(&self) -> f64 {
        self.torque_limit
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn alpha_moments(&self) -> (f64, f64) {
        self.alpha_moments
    }

    pub fn alpha_step(&self) -> u64 {
        self.alpha_step
    }

    /// Gradient updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Draw a new held exploration vector (no-op for Gaussian exploration).
    pub fn reset_noise(&mut self, rng: &mut dyn RngCore) {
        self.theta = self.actor.exploration_vector(rng);
    }

    /// Behaviour action: `(torque, normalized action)`.
    pub fn sample_action(&self, obs: &[f64], rng: &mut dyn RngCore) -> Result<(f64, f64)> {
        let a = self.actor.explore(obs, &self.theta, rng)?;
        Ok((self.torque_limit * a, a))
    }

    /// Deterministic (mean) torque.
    pub fn act(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.torque_limit * self.actor.mode(obs)?)
    }

    /// Bootstrapped critic targets
    /// `r + γ (1 - terminal) (min Q̄(s', a') - α log π(a'|s'))`.
    pub fn critic_targets(&self, batch: &Batch, noise: ArrayView2<f64>) -> Result<Array1<f64>> {
        let next = self.actor.evaluate(batch.next_obs.view(), noise)?;
        let inputs = critic_input(batch.next_obs.view(), next.actions.view());
        let t1 = self.targets[0].predict(inputs.view())?;
        let t2 = self.targets[1].predict(inputs.view())?;
        let alpha = self.alpha();
        let gamma = self.config.discount;
        Ok(Array1::from_iter((0..batch.len()).map(|i| {
            let soft_value = t1[[i, 0]].min(t2[[i, 0]]) - alpha * next.log_probs[i];
            batch.rewards[i] + gamma * (1.0 - batch.terminal[i]) * soft_value
        })))
    }

    /// One gradient step on both critics, the actor and the temperature.
    /// Target networks are left to the caller ([`SacAgent::soft_update_targets`]).
    pub fn update(&mut self, batch: &Batch, rng: &mut dyn RngCore) -> Result<UpdateStats> {
        let n = batch.len();
        let next_noise = self.actor.sample_noise(n, rng);
        let targets = self.critic_targets(batch, next_noise.view())?;
        let inputs = critic_input(batch.obs.view(), batch.actions.view());
        let mut critic_total = 0.0;
        for critic in &mut self.critics {
            let (loss, grads) = critic_loss_and_grad(critic, inputs.view(), &targets)?;
            critic.adam_step(&grads, self.config.critic_lr)?;
            critic_total += loss;
        }

        let noise = self.actor.sample_noise(n, rng);
        let alpha = self.alpha();
        let actor = actor_loss_and_grad(
            &self.actor,
            &self.critics,
            batch.obs.view(),
            noise.view(),
            alpha,
        )?;
        self.actor.adam_step(&actor.grads, self.config.actor_lr)?;

        let a_loss = alpha_loss(self.log_alpha, &actor.log_probs, TARGET_ENTROPY);
        let a_grad = alpha_loss_grad(self.log_alpha, &actor.log_probs, TARGET_ENTROPY);
        self.alpha_step += 1;
        let mut p = [self.log_alpha];
        let mut m = [self.alpha_moments.0];
        let mut v = [self.alpha_moments.1];
        adam_update(
            &mut p,
            &[a_grad],
            &mut m,
            &mut v,
            self.alpha_step,
            self.config.entropy_lr,
        );
        self.log_alpha = p[0];
        self.alpha_moments = (m[0], v[0]);

        self.updates += 1;

        let stats = UpdateStats {
            critic_loss: critic_total / 2.0,
            actor_loss: actor.loss,
            alpha: self.alpha(),
            alpha_loss: a_loss,
            entropy: -actor.log_probs.mean().unwrap_or(0.0),
        };
        let values = [
            stats.critic_loss,
            stats.actor_loss,
            stats.alpha,
            self.log_alpha,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite training statistics {stats:?}"
            )));
        }
        Ok(stats)
    }

    /// `θ̄ ← (1 - τ) θ̄ + τ θ` for both critics.
    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        for (target, critic) in self.targets.iter_mut().zip(&self.critics) {
            target.soft_update_from(critic, tau)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::actor::Exploration;
    use crate::sac::replay::{ReplayBuffer, Transition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(exploration: Exploration) -> SacConfig {
        SacConfig {
            hidden_sizes: vec![8, 8],
            batch_size: 4,
            exploration,
            ..SacConfig::default()
        }
    }

    fn tiny_batch(seed: u64, n: usize, terminal: bool) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(3, 64).unwrap();
        for _ in 0..n {
            let mut obs = || {
                vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.9..0.9),
                ]
            };
            let o = obs();
            let no = obs();
            buf.push(Transition {
                obs: o,
                action: rng.random_range(-0.99..0.99),
                reward: rng.random_range(0.3..1.0),
                next_obs: no,
                terminal,
                truncated: false,
            })
            .unwrap();
        }
        buf.gather(&(0..n).collect::<Vec<_>>())
    }

    const BOTH: [Exploration; 2] = [Exploration::Gsde, Exploration::Gaussian];

    #[test]
    fn terminal_targets_equal_rewards() {
        for exploration in BOTH {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let agent = SacAgent::new(3, 2.5, tiny_config(exploration), &mut rng).unwrap();
            let batch = tiny_batch(1, 5, true);
            let noise = agent.actor.sample_noise(5, &mut rng);
            let y = agent.critic_targets(&batch, noise.view()).unwrap();
            assert_eq!(y, batch.rewards);
        }
    }

    #[test]
    fn zero_discount_targets_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = SacAgent::new(3, 2.5, tiny_config(Exploration::Gsde), &mut rng).unwrap();
        agent.config.discount = 0.0;
        let batch = tiny_batch(2, 5, false);
        let noise = agent.actor.sample_noise(5, &mut rng);
        let y = agent.critic_targets(&batch, noise.view()).unwrap();
        assert_eq!(y, batch.rewards);
    }

    #[test]
    fn deterministic_action_is_scaled_tanh_of_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = SacAgent::new(3, 2.5, tiny_config(Exploration::Gaussian), &mut rng).unwrap();
        let obs = [0.2, -0.4, 0.1];
        let mean = agent.actor.net.predict_one(&obs).unwrap()[0];
        assert_eq!(agent.act(&obs).unwrap(), 2.5 * mean.tanh());
    }

    #[test]
    fn same_seed_same_action_stream() {
        for exploration in BOTH {
            let make = || {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let mut agent = SacAgent::new(3, 2.5, tiny_config(exploration), &mut rng).unwrap();
                agent.reset_noise(&mut rng);
                agent
            };
            let (a, b) = (make(), make());
            let mut ra = ChaCha8Rng::seed_from_u64(6);
            let mut rb = ChaCha8Rng::seed_from_u64(6);
            for k in 0..100 {
                let obs = [(k as f64).sin(), (k as f64).cos(), 0.3];
                assert_eq!(
                    a.sample_action(&obs, &mut ra).unwrap(),
                    b.sample_action(&obs, &mut rb).unwrap()
                );
            }
        }
    }

    #[test]
    fn soft_update_limits_and_geometric_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = SacAgent::new(3, 2.5, tiny_config(Exploration::Gsde), &mut rng).unwrap();
        let shifted: Vec<f64> = agent.critics[0]
            .flat_params()
            .iter()
            .map(|p| p + 1.0)
            .collect();
        agent.critics[0].set_flat_params(&shifted).unwrap();
        let gap = |a: &SacAgent| {
            a.targets[0]
                .flat_params()
                .iter()
                .zip(a.critics[0].flat_params())
                .map(|(t, c)| (t - c).abs())
                .fold(0.0, f64::max)
        };
        let frozen = agent.targets.clone();
        agent.soft_update_targets(0.0).unwrap();
        assert_eq!(agent.targets[0].flat_params(), frozen[0].flat_params());

        let tau = 0.003;
        let mut prev = gap(&agent);
        assert!((prev - 1.0).abs() < 1e-12);
        for _ in 0..20 {
            agent.soft_update_targets(tau).unwrap();
            let g = gap(&agent);
            assert!((g / prev - (1.0 - tau)).abs() < 1e-9);
            prev = g;
        }
        agent.soft_update_targets(1.0).unwrap();
        assert_eq!(
            agent.targets[0].flat_params(),
            agent.critics[0].flat_params()
        );
    }

    #[test]
    fn alpha_falls_while_entropy_exceeds_target() {
        // log π + H < 0 means entropy above the target
        let log_probs = Array1::from(vec![-2.0, -1.5, -3.0]);
        let mut log_alpha = 0.0;
        let (mut m, mut v) = ([0.0], [0.0]);
        let mut prev = log_alpha;
        for t in 1..=50 {
            let g = alpha_loss_grad(log_alpha, &log_probs, TARGET_ENTROPY);
            assert!(g > 0.0);
            let mut p = [log_alpha];
            adam_update(&mut p, &[g], &mut m, &mut v, t, 0.005);
            log_alpha = p[0];
            assert!(log_alpha < prev);
            prev = log_alpha;
        }
    }

    fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / norm(analytic).max(norm(numeric)).max(1e-12)
    }

    fn central_difference(base: Vec<f64>, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                let up = loss(&p);
                p[i] = base[i] - h;
                let down = loss(&p);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn fd_fixture(exploration: Exploration) -> (SacAgent, Batch, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agent = SacAgent::new(3, 2.5, tiny_config(exploration), &mut rng).unwrap();
        // a wider policy makes the squash and log-prob terms matter, but the
        // gSDE mean must stay inside its clip to carry a gradient
        let scale = match exploration {
            Exploration::Gaussian => 30.0,
            Exploration::Gsde => 8.0,
        };
        let p: Vec<f64> = agent
            .actor
            .net
            .flat_params()
            .iter()
            .map(|v| v * scale)
            .collect();
        agent.actor.net.set_flat_params(&p).unwrap();
        if let Some(sde) = agent.actor.sde.as_mut() {
            for (j, l) in sde.log_std.iter_mut().enumerate() {
                *l = -0.6 + 0.15 * j as f64;
            }
        }
        let batch = tiny_batch(12, 6, false);
        let noise = agent.actor.sample_noise(6, &mut rng);
        (agent, batch, noise)
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let (agent, batch, noise) = fd_fixture(Exploration::Gsde);
        let y = agent.critic_targets(&batch, noise.view()).unwrap();
        let inputs = critic_input(batch.obs.view(), batch.actions.view());
        for critic in &agent.critics {
            let (_, grads) = critic_loss_and_grad(critic, inputs.view(), &y).unwrap();
            let mut probe = critic.clone();
            let fd = central_difference(critic.flat_params(), |p| {
                probe.set_flat_params(p).unwrap();
                critic_loss(&probe, inputs.view(), &y).unwrap()
            });
            let err = relative_error(&grads.flatten(), &fd);
            assert!(err <= 1e-4, "critic relative error {err}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        for exploration in BOTH {
            let (agent, batch, noise) = fd_fixture(exploration);
            let alpha = 0.37;
            let obs = batch.obs.view();
            let out = actor_loss_and_grad(&agent.actor, &agent.critics, obs, noise.view(), alpha)
                .unwrap();
            let mut probe = agent.actor.clone();
            let fd = central_difference(agent.actor.flat_params(), |p| {
                probe.set_flat_params(p).unwrap();
                actor_loss(&probe, &agent.critics, obs, noise.view(), alpha).unwrap()
            });
            assert!(
                fd.iter().any(|g| g.abs() > 1e-3),
                "{exploration:?} fixture is flat"
            );
            let err = relative_error(&out.grads.flatten(), &fd);
            assert!(err <= 1e-4, "{exploration:?} actor relative error {err}");
            let direct =
                actor_loss(&agent.actor, &agent.critics, obs, noise.view(), alpha).unwrap();
            assert!((out.loss - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let log_probs = Array1::from(vec![-0.4, 0.9, -2.2, 0.1]);
        for &la in &[-3.0, -0.5, 0.0, 1.2] {
            let h = 1e-6;
            let fd = (alpha_loss(la + h, &log_probs, TARGET_ENTROPY)
                - alpha_loss(la - h, &log_probs, TARGET_ENTROPY))
                / (2.0 * h);
            let g = alpha_loss_grad(la, &log_probs, TARGET_ENTROPY);
            assert!(relative_error(&[g], &[fd]) <= 1e-4);
        }
    }

    #[test]
    fn update_runs_and_stays_finite() {
        for exploration in BOTH {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut agent = SacAgent::new(3, 2.5, tiny_config(exploration), &mut rng).unwrap();
            let batch = tiny_batch(9, 16, false);
            for _ in 0..20 {
                let stats = agent.update(&batch, &mut rng).unwrap();
                assert!(stats.alpha > 0.0);
            }
            assert_eq!(agent.updates(), 20);
            assert!(agent.actor.is_finite());
        }
    }
}
