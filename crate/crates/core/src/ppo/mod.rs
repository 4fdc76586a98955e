//! Proximal Policy Optimization with parallel experience collection, running
//! input normalization, and a fixed exploration covariance.
//!
//! The policy and value function are separate dense networks (2×128
//! rectified-linear hidden layers). Workers each own an environment and a
//! frozen snapshot of the nets for the collection phase; the trainer merges
//! their batches and normalizer deltas in worker order, so training is
//! bit-reproducible for a fixed seed regardless of thread scheduling.

pub mod checkpoint;
pub mod net;
pub mod normalizer;

use std::path::Path;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{EnvError, Observation, WalkEnv};
pub use checkpoint::CheckpointError;
pub use net::{Adam, Grads, Mlp, OutputActivation};
pub use normalizer::Normalizer;

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Trainer hyperparameters. The exploration standard deviation is fixed in
/// normalized action units and never optimized.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub lr: f64,
    pub gamma: f64,
    pub lam: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub workers: usize,
    pub sigma: f64,
    pub steps_per_iter: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> PpoConfig {
        PpoConfig {
            clip: 0.2,
            lr: 3e-4,
            gamma: 0.99,
            lam: 0.95,
            epochs: 4,
            minibatch: 512,
            workers: 8,
            sigma: 0.15,
            steps_per_iter: 8192,
            hidden: [128, 128],
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PpoError::InvalidConfig(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if !(self.clip > 0.0 && self.clip <= 0.5) {
            return Err(PpoError::InvalidConfig(format!("clip {} not in (0,0.5]", self.clip)));
        }
        if !(self.lam >= 0.0 && self.lam <= 1.0) {
            return Err(PpoError::InvalidConfig(format!("lambda {} not in [0,1]", self.lam)));
        }
        if self.sigma <= 0.0 {
            return Err(PpoError::InvalidConfig("sigma must be positive".into()));
        }
        if self.workers == 0 {
            return Err(PpoError::InvalidConfig("need at least one worker".into()));
        }
        if self.steps_per_iter == 0 || self.steps_per_iter % self.workers != 0 {
            return Err(PpoError::InvalidConfig(format!(
                "steps_per_iter {} must be a positive multiple of workers {}",
                self.steps_per_iter, self.workers
            )));
        }
        if self.minibatch == 0 || self.epochs == 0 || self.lr <= 0.0 {
            return Err(PpoError::InvalidConfig("minibatch/epochs/lr must be positive".into()));
        }
        Ok(())
    }
}

/// Policy + value nets with their observation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: Mlp,
    pub value: Mlp,
    pub normalizer: Normalizer,
    pub iteration: u64,
    pub env_steps: u64,
}

impl Agent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: &PpoConfig) -> Agent {
        let dims_p = [obs_dim, cfg.hidden[0], cfg.hidden[1], act_dim];
        let dims_v = [obs_dim, cfg.hidden[0], cfg.hidden[1], 1];
        Agent {
            policy: Mlp::new(&dims_p, OutputActivation::SigmoidSymmetric, cfg.seed.wrapping_add(101)),
            value: Mlp::new(&dims_v, OutputActivation::Linear, cfg.seed.wrapping_add(202)),
            normalizer: Normalizer::new(obs_dim),
            iteration: 0,
            env_steps: 0,
        }
    }

    /// Deterministic action (the policy mean) for a raw observation.
    pub fn act(&self, obs: &Observation) -> [f64; 3] {
        let x = DVector::from_row_slice(&obs.to_array());
        let y = self.policy.forward(&self.normalizer.normalize(&x));
        [y[0], y[1], y[2]]
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Agent, CheckpointError> {
        checkpoint::load(path)
    }
}

/// Log-density of an isotropic Gaussian with standard deviation `sigma`.
pub fn log_prob(mean: &DVector<f64>, sigma: f64, action: &DVector<f64>) -> f64 {
    let n = mean.len() as f64;
    let d = action - mean;
    -d.norm_squared() / (2.0 * sigma * sigma)
        - n * (sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Differential entropy of the sampling distribution — depends only on the
/// (fixed) covariance, so it is constant throughout training.
pub fn entropy(sigma: f64, dim: usize) -> f64 {
    dim as f64 * (0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + sigma.ln())
}

/// Draw an action: Gaussian about the mean, clipped to the normalized bounds.
/// The recorded log-probability is that of the unclipped draw.
pub fn sample_action(
    mean: &DVector<f64>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (DVector<f64>, f64) {
    let raw = DVector::from_fn(mean.len(), |i, _| {
        mean[i] + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let logp = log_prob(mean, sigma, &raw);
    (raw.map(|v| v.clamp(-1.0, 1.0)), logp)
}

/// Generalized advantage estimation. `values` carries one extra entry, the
/// bootstrap value of the state after the last transition; `flags[t]` marks
/// transitions that ended the episode (no bootstrapping across them).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    flags: &[bool],
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    assert_eq!(values.len(), t_max + 1);
    assert_eq!(flags.len(), t_max);
    let mut adv = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let cont = if flags[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        acc = delta + gamma * lam * cont * acc;
        adv[t] = acc;
    }
    let ret: Vec<f64> = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One iteration's worth of on-policy experience.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Normalized observations, as seen by the sampler.
    pub obs: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub logps: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub flags: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn append(&mut self, mut other: RolloutBatch) {
        self.obs.append(&mut other.obs);
        self.actions.append(&mut other.actions);
        self.logps.append(&mut other.logps);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.flags.append(&mut other.flags);
        self.advantages.append(&mut other.advantages);
        self.returns.append(&mut other.returns);
    }

    fn check(&self) -> Result<(), PpoError> {
        let n = self.len();
        if self.actions.len() != n
            || self.logps.len() != n
            || self.rewards.len() != n
            || self.values.len() != n
            || self.flags.len() != n
            || self.advantages.len() != n
            || self.returns.len() != n
        {
            return Err(PpoError::InvalidConfig("ragged rollout batch".into()));
        }
        if self.advantages.iter().any(|a| !a.is_finite()) {
            return Err(PpoError::InvalidConfig("non-finite advantages".into()));
        }
        Ok(())
    }

    /// Shift and scale the advantages to zero mean and unit standard
    /// deviation (the precondition of `ppo_update`).
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Diagnostics of one `ppo_update` call, averaged over minibatches.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Per-sample clipped-surrogate loss and its derivative with respect to the
/// probability ratio. loss = −min(r·A, clamp(r, 1±ε)·A).
#[inline]
pub(crate) fn surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let clamped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let loss = -(ratio * adv).min(clamped * adv);
    // gradient is zero exactly where the clipped branch is active and flat
    let flat = (adv >= 0.0 && ratio >= 1.0 + clip) || (adv <= 0.0 && ratio <= 1.0 - clip);
    (loss, if flat { 0.0 } else { -adv })
}

/// Policy loss, gradients, and diagnostics over an index set of the batch.
pub(crate) fn policy_loss_grad(
    policy: &Mlp,
    batch: &RolloutBatch,
    idx: &[usize],
    sigma: f64,
    clip: f64,
) -> (f64, Grads, f64, f64) {
    let m = idx.len() as f64;
    let inv_var = 1.0 / (sigma * sigma);
    let mut grads = Grads::zeros_like(policy);
    let mut loss = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for &i in idx {
        let (mean, cache) = policy.forward_cached(&batch.obs[i]);
        let logp = log_prob(&mean, sigma, &batch.actions[i]);
        let ratio = (logp - batch.logps[i]).exp();
        let (l, dl_dr) = surrogate(ratio, batch.advantages[i], clip);
        loss += l / m;
        kl += (batch.logps[i] - logp) / m;
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        // dL/dμ = dL/dr · r · dlogp/dμ, with dlogp/dμ = (a − μ)/σ²
        let coeff = dl_dr * ratio / m;
        let dl_dmean = (&batch.actions[i] - &mean) * (coeff * inv_var);
        policy.backward(&cache, &dl_dmean, &mut grads);
    }
    (loss, grads, kl, clipped as f64 / m)
}

/// Value loss and gradients (mean squared error against the returns).
pub(crate) fn value_loss_grad(
    value: &Mlp,
    batch: &RolloutBatch,
    idx: &[usize],
) -> (f64, Grads) {
    let m = idx.len() as f64;
    let mut grads = Grads::zeros_like(value);
    let mut loss = 0.0;
    for &i in idx {
        let (v, cache) = value.forward_cached(&batch.obs[i]);
        let err = v[0] - batch.returns[i];
        loss += err * err / m;
        let dl_dy = DVector::from_element(1, 2.0 * err / m);
        value.backward(&cache, &dl_dy, &mut grads);
    }
    (loss, grads)
}

/// `epochs` passes of shuffled minibatch gradient steps on the clipped
/// surrogate and the value regression. Expects normalized advantages.
pub fn ppo_update(
    policy: &mut Mlp,
    value: &mut Mlp,
    opt_policy: &mut Adam,
    opt_value: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    iteration: u64,
) -> Result<UpdateStats, PpoError> {
    batch.check()?;
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats { policy_loss: 0.0, value_loss: 0.0, kl: 0.0, clip_fraction: 0.0 };
    let mut nmb = 0usize;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let (pl, pg, kl, cf) = policy_loss_grad(policy, batch, chunk, cfg.sigma, cfg.clip);
            let (vl, vg) = value_loss_grad(value, batch, chunk);
            if !pl.is_finite() || !vl.is_finite() || !pg.is_finite() || !vg.is_finite() {
                return Err(PpoError::NonFiniteLoss { iteration });
            }
            opt_policy.step(policy, &pg, cfg.lr);
            opt_value.step(value, &vg, cfg.lr);
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.kl += kl;
            stats.clip_fraction += cf;
            nmb += 1;
        }
    }
    let n = nmb.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.kl /= n;
    stats.clip_fraction /= n;
    Ok(stats)
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_reward: f64,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
}

/// Persistent per-worker rollout state.
struct Worker {
    env: WalkEnv,
    rng: ChaCha8Rng,
    obs: DVector<f64>,
    ep_reward: f64,
    ep_len: usize,
}

struct Collected {
    batch: RolloutBatch,
    delta: Normalizer,
    episodes: Vec<(f64, usize)>,
}

fn collect_segment(
    w: &mut Worker,
    policy: &Mlp,
    value: &Mlp,
    norm: &Normalizer,
    cfg: &PpoConfig,
    steps: usize,
) -> Collected {
    let mut batch = RolloutBatch::default();
    let mut delta = Normalizer::new(norm.dim());
    let mut episodes = Vec::new();
    for _ in 0..steps {
        delta.update(&w.obs);
        let z = norm.normalize(&w.obs);
        let mean = policy.forward(&z);
        let (a, logp) = sample_action(&mean, cfg.sigma, &mut w.rng);
        let r = w.env.hl_step([a[0], a[1], a[2]]);
        w.ep_reward += r.reward;
        w.ep_len += 1;
        batch.values.push(value.forward(&z)[0]);
        batch.obs.push(z);
        batch.actions.push(a);
        batch.logps.push(logp);
        // A time-limit truncation is not a real terminal state: fold the
        // bootstrap value of the final observation into the last reward so
        // the cut flag below does not teach the value net a false zero.
        let mut reward = r.reward;
        if r.truncated && !r.terminated {
            let zf = norm.normalize(&DVector::from_row_slice(&r.observation.to_array()));
            reward += cfg.gamma * value.forward(&zf)[0];
        }
        batch.rewards.push(reward);
        batch.flags.push(r.terminated || r.truncated);
        if r.terminated || r.truncated {
            episodes.push((w.ep_reward, w.ep_len));
            w.ep_reward = 0.0;
            w.ep_len = 0;
            let o = w.env.reset();
            w.obs = DVector::from_row_slice(&o.to_array());
        } else {
            w.obs = DVector::from_row_slice(&r.observation.to_array());
        }
    }
    // bootstrap value of the state after the last transition
    let v_last = value.forward(&norm.normalize(&w.obs))[0];
    let mut values = batch.values.clone();
    values.push(v_last);
    let (adv, ret) = gae(&batch.rewards, &values, &batch.flags, cfg.gamma, cfg.lam);
    batch.advantages = adv;
    batch.returns = ret;
    Collected { batch, delta, episodes }
}

/// Training loop controls.
pub struct TrainOptions<'a> {
    pub iterations: usize,
    /// Where to write checkpoints (final, periodic, and on abort).
    pub checkpoint_path: Option<&'a Path>,
    /// Checkpoint every this many iterations (0 = final only).
    pub checkpoint_every: usize,
}

/// Run PPO. `make_env` builds the environment for a given worker index; each
/// worker owns its environment for the whole run. Returns the trained agent
/// and the learning curve. On a non-finite loss the last consistent agent is
/// checkpointed (if a path is set) before the error propagates.
///
/// `init` resumes from a previous agent: `opts.iterations` is the *total*
/// iteration count, so a resumed run continues until that target (optimizer
/// moments restart, which PPO tolerates; the normalizer and nets carry over).
pub fn train<F>(
    make_env: F,
    cfg: &PpoConfig,
    opts: &TrainOptions,
    init: Option<Agent>,
) -> Result<(Agent, Vec<CurvePoint>), PpoError>
where
    F: Fn(usize) -> Result<WalkEnv, EnvError>,
{
    cfg.validate()?;
    let resume_iter = init.as_ref().map(|a| a.iteration).unwrap_or(0);
    let mut workers = Vec::with_capacity(cfg.workers);
    for k in 0..cfg.workers {
        let mut env = make_env(k)?;
        let o = env.reset();
        workers.push(Worker {
            obs: DVector::from_row_slice(&o.to_array()),
            env,
            rng: ChaCha8Rng::seed_from_u64(
                cfg.seed
                    .wrapping_add(7919 * (k as u64 + 1))
                    .wrapping_add(104729 * resume_iter),
            ),
            ep_reward: 0.0,
            ep_len: 0,
        });
    }
    let obs_dim = workers[0].env.observation_dim();
    let mut agent = match init {
        Some(a) => {
            if a.normalizer.dim() != obs_dim {
                return Err(PpoError::InvalidConfig("resumed agent dimension mismatch".into()));
            }
            a
        }
        None => Agent::new(obs_dim, 3, cfg),
    };
    let mut opt_policy = Adam::new(&agent.policy);
    let mut opt_value = Adam::new(&agent.value);
    let mut update_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(331).wrapping_add(agent.iteration));
    let steps_per_worker = cfg.steps_per_iter / cfg.workers;
    let mut curve = Vec::new();
    let mut last_mean_reward = 0.0;
    let mut last_mean_len = 0.0;

    for it in agent.iteration as usize..opts.iterations {
        // collection phase: frozen nets and statistics, workers in parallel
        let (policy, value, norm) = (&agent.policy, &agent.value, &agent.normalizer);
        let collected: Vec<Collected> = std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| s.spawn(move || collect_segment(w, policy, value, norm, cfg, steps_per_worker)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });

        // merge in worker order for determinism
        let mut batch = RolloutBatch::default();
        let mut episodes: Vec<(f64, usize)> = Vec::new();
        for c in collected {
            agent.normalizer.merge(&c.delta);
            episodes.extend(c.episodes);
            batch.append(c.batch);
        }
        agent.env_steps += batch.len() as u64;
        if !episodes.is_empty() {
            let n = episodes.len() as f64;
            last_mean_reward = episodes.iter().map(|e| e.0).sum::<f64>() / n;
            last_mean_len = episodes.iter().map(|e| e.1 as f64).sum::<f64>() / n;
        }

        batch.normalize_advantages();
        let stats = match ppo_update(
            &mut agent.policy,
            &mut agent.value,
            &mut opt_policy,
            &mut opt_value,
            &batch,
            cfg,
            &mut update_rng,
            it as u64,
        ) {
            Ok(s) => s,
            Err(e) => {
                if let Some(path) = opts.checkpoint_path {
                    let _ = agent.save(path);
                }
                return Err(e);
            }
        };
        agent.iteration = it as u64 + 1;
        curve.push(CurvePoint {
            iteration: agent.iteration,
            env_steps: agent.env_steps,
            mean_reward: last_mean_reward,
            mean_ep_len: last_mean_len,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            kl: stats.kl,
        });
        if let Some(path) = opts.checkpoint_path {
            if opts.checkpoint_every > 0 && agent.iteration % opts.checkpoint_every as u64 == 0 {
                agent.save(path)?;
            }
        }
    }
    if let Some(path) = opts.checkpoint_path {
        agent.save(path)?;
    }
    Ok((agent, curve))
}

#[cfg(test)]
mod tests;
