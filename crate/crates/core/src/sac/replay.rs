//! Fixed-capacity FIFO replay memory with uniform sampling.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Normalized action in [-1, 1] (torque / torque limit).
    pub action: f64,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

/// A sampled minibatch laid out for the network code.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array1<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1.0 for true terminals, 0.0 otherwise (truncations bootstrap).
    pub terminal: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    capacity: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    truncated: Vec<bool>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Result<Self> {
        if obs_dim == 0 || capacity == 0 {
            return Err(Error::domain("replay buffer needs positive dimensions"));
        }
        Ok(Self {
            obs_dim,
            capacity,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
            truncated: Vec::new(),
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of transitions ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(Error::Shape {
                expected: self.obs_dim,
                actual: if t.obs.len() != self.obs_dim {
                    t.obs.len()
                } else {
                    t.next_obs.len()
                },
            });
        }
        if t.terminal && t.truncated {
            return Err(Error::domain(
                "a transition cannot be both terminal and truncated",
            ));
        }
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.terminal.push(t.terminal);
            self.truncated.push(t.truncated);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            let range = slot * self.obs_dim..(slot + 1) * self.obs_dim;
            self.obs[range.clone()].copy_from_slice(&t.obs);
            self.next_obs[range].copy_from_slice(&t.next_obs);
            self.actions[slot] = t.action;
            self.rewards[slot] = t.reward;
            self.terminal[slot] = t.terminal;
            self.truncated[slot] = t.truncated;
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<Transition> {
        if index >= self.len() {
            return None;
        }
        let range = index * self.obs_dim..(index + 1) * self.obs_dim;
        Some(Transition {
            obs: self.obs[range.clone()].to_vec(),
            action: self.actions[index],
            reward: self.rewards[index],
            next_obs: self.next_obs[range].to_vec(),
            terminal: self.terminal[index],
            truncated: self.truncated[index],
        })
    }

    /// Draw `batch_size` storage indices uniformly with replacement.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::domain("cannot sample from an empty replay buffer"));
        }
        let n = self.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut dyn RngCore) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let d = self.obs_dim;
        let mut obs = Vec::with_capacity(idx.len() * d);
        let mut next_obs = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            next_obs.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
        }
        Batch {
            obs: Array2::from_shape_vec((idx.len(), d), obs).expect("consistent shape"),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Array2::from_shape_vec((idx.len(), d), next_obs).expect("consistent shape"),
            terminal: idx
                .iter()
                .map(|&i| if self.terminal[i] { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}
