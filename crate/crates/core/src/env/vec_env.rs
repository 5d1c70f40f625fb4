use super::{BestObjective, EnvError, StepInfo, TsmEnv};

/// Result of stepping every copy once. Copies that finished are reset in
/// place: their `observations`/`masks` entries are the reset ones and the
/// terminal state lives in `infos`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStep {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub masks: Vec<Vec<bool>>,
    pub infos: Vec<StepInfo>,
}

/// `N` independent copies of one environment sharing `O(s*)`.
///
/// Copies are stepped in index order, so when two of them finish in the same
/// batch the later one already sees the update made by the earlier one.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<TsmEnv>,
    best: BestObjective,
}

impl VecEnv {
    pub fn new(template: TsmEnv, n: usize, initial_best: f64) -> Self {
        assert!(n >= 1, "need at least one environment");
        Self {
            envs: vec![template; n],
            best: BestObjective::new(initial_best),
        }
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.envs[0].num_actions()
    }

    pub fn observation_dim(&self) -> usize {
        self.envs[0].observation_dim()
    }

    pub fn best_objective(&self) -> f64 {
        self.best.get()
    }

    pub fn env(&self, i: usize) -> &TsmEnv {
        &self.envs[i]
    }

    pub fn reset(&mut self) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
        self.envs.iter_mut().map(TsmEnv::reset).unzip()
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.envs.iter().map(TsmEnv::valid_mask).collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<BatchStep, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::DimensionMismatch(format!(
                "{} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        let n = self.envs.len();
        let mut batch = BatchStep {
            observations: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            infos: Vec::with_capacity(n),
        };
        for (i, (env, &a)) in self.envs.iter_mut().zip(actions).enumerate() {
            let out = env
                .step(a, &mut self.best)
                .map_err(|e| EnvError::InEnv { env: i, source: Box::new(e) })?;
            let (obs, mask) = if out.done { env.reset() } else { (out.observation, out.mask) };
            batch.observations.push(obs);
            batch.rewards.push(out.reward);
            batch.dones.push(out.done);
            batch.masks.push(mask);
            batch.infos.push(out.info);
        }
        Ok(batch)
    }
}
