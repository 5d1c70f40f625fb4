use nalgebra::DMatrix;

use super::policy::Minibatch;

/// Fixed-size store for `n_steps × n_envs` transitions, entry
/// `step * n_envs + env`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    n_steps: usize,
    n_envs: usize,
    obs_dim: usize,
    observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    /// `dones[i]`: the episode ended with this transition.
    pub dones: Vec<bool>,
    pub masks: Vec<Vec<bool>>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_envs: usize, obs_dim: usize) -> Self {
        let cap = n_steps * n_envs;
        Self {
            n_steps,
            n_envs,
            obs_dim,
            observations: Vec::with_capacity(cap * obs_dim),
            actions: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            masks: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.dones.clear();
        self.masks.clear();
        self.values.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        action: usize,
        log_prob: f64,
        reward: f64,
        done: bool,
        mask: Vec<bool>,
        value: f64,
    ) {
        assert!(!self.is_full(), "rollout buffer overflow");
        assert_eq!(obs.len(), self.obs_dim);
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.dones.push(done);
        self.masks.push(mask);
        self.values.push(value);
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    /// Generalized advantage estimation. `last_values` are the critic's
    /// estimates for the observations following the final step.
    pub fn compute_returns_and_advantages(&mut self, last_values: &[f64], gamma: f64, lambda: f64) {
        assert!(self.is_full(), "GAE needs a full buffer");
        let n = self.n_envs;
        self.advantages = vec![0.0; self.capacity()];
        for env in 0..n {
            let mut gae = 0.0;
            for step in (0..self.n_steps).rev() {
                let i = step * n + env;
                let next_value = if step + 1 == self.n_steps { last_values[env] } else { self.values[i + n] };
                let non_terminal = if self.dones[i] { 0.0 } else { 1.0 };
                let delta = self.rewards[i] + gamma * next_value * non_terminal - self.values[i];
                gae = delta + gamma * lambda * non_terminal * gae;
                self.advantages[i] = gae;
            }
        }
        self.returns = self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect();
    }

    pub fn minibatch(&self, indices: &[usize]) -> Minibatch {
        let mut observations = DMatrix::zeros(self.obs_dim, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            observations.column_mut(c).copy_from_slice(self.observation(i));
        }
        Minibatch {
            observations,
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(rewards: &[f64], dones: &[bool], values: &[f64], n_envs: usize) -> RolloutBuffer {
        let mut buf = RolloutBuffer::new(rewards.len() / n_envs, n_envs, 1);
        for i in 0..rewards.len() {
            buf.push(&[i as f64], 0, 0.0, rewards[i], dones[i], vec![true], values[i]);
        }
        buf
    }

    #[test]
    fn gae_matches_direct_sums() {
        // one env, no termination: A_t = Σ (γλ)^l δ_{t+l}
        let rewards = [1.0, 0.5, -0.2, 0.3];
        let values = [0.2, 0.1, 0.4, -0.3];
        let mut buf = filled(&rewards, &[false; 4], &values, 1);
        let (g, l) = (0.9, 0.8);
        buf.compute_returns_and_advantages(&[0.7], g, l);
        let next = [0.1, 0.4, -0.3, 0.7];
        let delta: Vec<f64> = (0..4).map(|t| rewards[t] + g * next[t] - values[t]).collect();
        for t in 0..4 {
            let direct: f64 = (t..4).map(|s| (g * l).powi((s - t) as i32) * delta[s]).sum();
            assert!((buf.advantages[t] - direct).abs() < 1e-12);
            assert!((buf.returns[t] - direct - values[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn termination_cuts_bootstrap_per_env() {
        // two envs interleaved; env 0 terminates at step 0
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let dones = [true, false, false, false];
        let values = [0.5, 0.5, 0.5, 0.5];
        let mut buf = filled(&rewards, &dones, &values, 2);
        buf.compute_returns_and_advantages(&[0.0, 0.0], 1.0, 1.0);
        assert_eq!(buf.advantages[0], 1.0 - 0.5);
        assert_eq!(buf.returns[0], 1.0);
        // env 1: returns are undiscounted sums to the end with λ=γ=1
        assert_eq!(buf.returns[1], 2.0 + 4.0);
        assert_eq!(buf.returns[3], 4.0);
        assert!(buf.is_full());
        let mb = buf.minibatch(&[3, 0]);
        assert_eq!(mb.observations.as_slice(), &[3.0, 0.0]);
        assert_eq!(mb.returns, vec![4.0, 1.0]);
    }
}
