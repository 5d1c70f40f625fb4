use serde::{Deserialize, Serialize};

/// Running mean and variance over batches (parallel-merge update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
        }
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        for d in 0..self.mean.len() {
            let bm = batch.iter().map(|x| x[d]).sum::<f64>() / n;
            let bv = batch.iter().map(|x| (x[d] - bm).powi(2)).sum::<f64>() / n;
            let delta = bm - self.mean[d];
            let total = self.count + n;
            let m2 = self.var[d] * self.count + bv * n + delta * delta * self.count * n / total;
            self.mean[d] += delta * n / total;
            self.var[d] = m2 / total;
        }
        self.count += n;
    }
}

/// Observation and reward normalization for a vectorized environment.
///
/// Observations are standardized with running statistics and clipped.
/// Rewards are divided by the running standard deviation of the discounted
/// return and clipped. With `training` off the statistics are frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_rms: RunningMeanStd,
    pub ret_rms: RunningMeanStd,
    pub gamma: f64,
    pub clip_obs: f64,
    pub clip_reward: f64,
    pub epsilon: f64,
    pub training: bool,
    returns: Vec<f64>,
}

impl Normalizer {
    pub fn new(obs_dim: usize, num_envs: usize, gamma: f64) -> Self {
        Self {
            obs_rms: RunningMeanStd::new(obs_dim),
            ret_rms: RunningMeanStd::new(1),
            gamma,
            clip_obs: 10.0,
            clip_reward: 10.0,
            epsilon: 1e-8,
            training: true,
            returns: vec![0.0; num_envs],
        }
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// Clears the discounted-return accumulators (call on a full reset).
    pub fn reset_returns(&mut self) {
        self.returns.iter_mut().for_each(|r| *r = 0.0);
    }

    /// Normalizes a batch of observations, updating statistics first when
    /// training.
    pub fn observations(&mut self, batch: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if self.training {
            self.obs_rms.update(batch);
        }
        batch.iter().map(|o| self.normalize_obs(o)).collect()
    }

    /// Normalizes one observation with the current statistics.
    pub fn normalize_obs(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.obs_rms.mean.iter().zip(&self.obs_rms.var))
            .map(|(x, (m, v))| ((x - m) / (v + self.epsilon).sqrt()).clamp(-self.clip_obs, self.clip_obs))
            .collect()
    }

    pub fn rewards(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        if self.training {
            for (ret, &r) in self.returns.iter_mut().zip(rewards) {
                *ret = *ret * self.gamma + r;
            }
            let batch: Vec<Vec<f64>> = self.returns.iter().map(|&r| vec![r]).collect();
            self.ret_rms.update(&batch);
        }
        let scale = (self.ret_rms.var[0] + self.epsilon).sqrt();
        let out = rewards
            .iter()
            .map(|r| (r / scale).clamp(-self.clip_reward, self.clip_reward))
            .collect();
        for (ret, &d) in self.returns.iter_mut().zip(dones) {
            if d {
                *ret = 0.0;
            }
        }
        out
    }
}
