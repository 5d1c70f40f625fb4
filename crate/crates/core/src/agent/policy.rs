use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::AgentError;

/// Actor (action logits over |U|) and critic (state value), both fed the
/// k-dimensional observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyParameters {
    pub fn new<R: Rng>(
        obs_dim: usize,
        num_actions: usize,
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let sizes = |hidden: &[usize], out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let hidden_gain = 2f64.sqrt();
        Self {
            actor: Mlp::orthogonal(&sizes(actor_hidden, num_actions), hidden_gain, 0.01, rng),
            critic: Mlp::orthogonal(&sizes(critic_hidden, 1), hidden_gain, 1.0, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            critic: self.critic.zeros_like(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.actor.tensors().chain(self.critic.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.actor.tensors_mut().chain(self.critic.tensors_mut())
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn num_actions(&self) -> usize {
        self.actor.output_dim()
    }

    /// Action probabilities (exactly 0 where masked) and value for one
    /// observation.
    pub fn forward(&self, obs: &[f64], mask: &[bool]) -> Result<(Vec<f64>, f64), AgentError> {
        let x = DMatrix::from_column_slice(obs.len(), 1, obs);
        let logits = self.actor.forward(&x).output;
        let logp = masked_log_softmax(logits.column(0).as_slice(), mask)?;
        let value = self.critic.forward(&x).output[(0, 0)];
        Ok((logp.iter().map(|l| l.exp()).collect(), value))
    }
}

/// Log-probabilities restricted to the valid actions; masked entries are
/// `−∞`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, AgentError> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AgentError::EmptyMask);
    }
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect())
}

/// Inverse-CDF draw from a masked distribution. Never returns a masked
/// index.
pub fn sample_masked<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_valid = None;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last_valid = Some(i);
        if u < acc {
            return i;
        }
    }
    last_valid.expect("at least one valid action")
}

pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|l| l.is_finite())
        .map(|&l| l.exp() * l)
        .sum::<f64>()
}

/// One PPO minibatch. Observations are stored one per column.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub observations: DMatrix<f64>,
    pub masks: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PpoCoefficients {
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub normalize_advantage: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Advantages standardized within the minibatch (sample std); left as is
/// for a single sample.
pub fn normalized_advantages(adv: &[f64], enabled: bool) -> Vec<f64> {
    if !enabled || adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Clipped-surrogate + value + entropy loss on a minibatch, with exact
/// gradients for every parameter.
pub fn ppo_loss_and_grad(
    params: &PolicyParameters,
    mb: &Minibatch,
    coef: &PpoCoefficients,
) -> Result<(LossTerms, PolicyParameters), AgentError> {
    let b = mb.len();
    let bf = b as f64;
    let adv = normalized_advantages(&mb.advantages, coef.normalize_advantage);

    let actor_cache = params.actor.forward(&mb.observations);
    let critic_cache = params.critic.forward(&mb.observations);
    let n_act = params.num_actions();
    let mut d_logits = DMatrix::zeros(n_act, b);
    let mut d_values = DMatrix::zeros(1, b);
    let mut terms = LossTerms::default();

    for i in 0..b {
        let logp = masked_log_softmax(actor_cache.output.column(i).as_slice(), &mb.masks[i])?;
        let a = mb.actions[i];
        let log_ratio = logp[a] - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let lo = 1.0 - coef.clip_range;
        let hi = 1.0 + coef.clip_range;
        let clipped = ratio.clamp(lo, hi);
        let s1 = ratio * adv[i];
        let s2 = clipped * adv[i];
        terms.policy_loss -= s1.min(s2) / bf;
        if (ratio - 1.0).abs() > coef.clip_range {
            terms.clip_fraction += 1.0 / bf;
        }
        terms.approx_kl += (ratio - 1.0 - log_ratio) / bf;

        // d(−min(s1, s2)/B)/d logp[a]; the clipped branch is flat outside [lo, hi]
        let live = s1 <= s2 || (lo..=hi).contains(&ratio);
        let g = if live { -ratio * adv[i] / bf } else { 0.0 };

        let h = entropy(&logp);
        terms.entropy += h / bf;
        for j in 0..n_act {
            if !mb.masks[i][j] {
                continue;
            }
            let p = logp[j].exp();
            let onehot = if j == a { 1.0 } else { 0.0 };
            // entropy term enters the loss as −ent_coef · mean(H)
            let d_ent = coef.ent_coef / bf * p * (logp[j] + h);
            d_logits[(j, i)] = g * (onehot - p) + d_ent;
        }

        let v = critic_cache.output[(0, i)];
        let err = v - mb.returns[i];
        terms.value_loss += err * err / bf;
        d_values[(0, i)] = coef.vf_coef * 2.0 * err / bf;
    }
    terms.loss = terms.policy_loss - coef.ent_coef * terms.entropy + coef.vf_coef * terms.value_loss;
    if !terms.loss.is_finite() {
        return Err(AgentError::NonFinite(format!("loss terms {terms:?}")));
    }
    let grads = PolicyParameters {
        actor: params.actor.backward(&actor_cache, &d_logits),
        critic: params.critic.backward(&critic_cache, &d_values),
    };
    Ok((terms, grads))
}
