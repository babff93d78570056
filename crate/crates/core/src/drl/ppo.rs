//! PPO with a clipped surrogate, GAE advantages and an entropy bonus,
//! trained on simulator episodes.

use std::sync::Arc;

use log::{info, warn};
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::SimEnv;
use super::mlp::{argmax, log_softmax, softmax, Mlp, MlpSpec};
use super::optim::{clip_grad_norm, Adam, Optimizer};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::norm::NormalizerSet;
use crate::reward::RewardWeights;
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub conv_kernel: Option<usize>,
    pub lr: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub rollout_steps: usize,
    pub epochs: usize,
    pub max_timesteps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub patience: usize,
    pub min_timesteps_before_stop: usize,
    pub grad_clip: f64,
    /// mean policy entropy (nats) below which training is flagged
    pub entropy_floor: f64,
    pub seed: u64,
    pub train_seed_base: u64,
    pub eval_seed_base: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: vec![64, 64],
            conv_kernel: None,
            lr: 3e-4,
            clip_eps: 0.2,
            entropy_coef: 0.002,
            vf_coef: 0.5,
            gae_lambda: 0.95,
            discount: 0.99,
            batch_size: 256,
            rollout_steps: 2048,
            epochs: 10,
            max_timesteps: 1_200_000,
            eval_every: 10_000,
            eval_episodes: 10,
            patience: 4,
            min_timesteps_before_stop: 10_000,
            grad_clip: 0.5,
            entropy_floor: 0.05,
            seed: 0,
            train_seed_base: 10_000_000,
            eval_seed_base: 20_000_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.001..=0.003).contains(&self.entropy_coef) {
            return Err(Error::config("entropy_coef", "must lie in [0.001, 0.003]"));
        }
        if self.batch_size == 0 || self.rollout_steps == 0 || self.epochs == 0 || self.max_timesteps == 0 {
            return Err(Error::config("batch_size", "batch, rollout, epochs and timesteps must be positive"));
        }
        if self.patience == 0 || self.eval_episodes == 0 || self.eval_every == 0 {
            return Err(Error::config("patience", "patience, eval episodes and eval cadence must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip_eps > 0.0) {
            return Err(Error::config("lr", "learning rate and clip epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("discount", "discount and lambda must lie in [0, 1]"));
        }
        let lo = self.train_seed_base;
        let hi = lo.saturating_add(self.max_timesteps as u64 + self.rollout_steps as u64);
        if (lo..hi).contains(&self.eval_seed_base) {
            return Err(Error::config("eval_seed_base", "evaluation seeds overlap training seeds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PpoPolicy {
    pub fn new<R: Rng + ?Sized>(input: usize, n_actions: usize, cfg: &PpoConfig, rng: &mut R) -> Result<Self> {
        let mut a_spec = MlpSpec::new(input, &cfg.hidden, n_actions);
        a_spec.conv_kernel = cfg.conv_kernel;
        let mut c_spec = MlpSpec::new(input, &cfg.hidden, 1);
        c_spec.conv_kernel = cfg.conv_kernel;
        let mut actor = Mlp::new(a_spec, rng)?;
        // near-uniform initial policy
        actor.scale_output(0.01);
        Ok(PpoPolicy {
            actor,
            critic: Mlp::new(c_spec, rng)?,
        })
    }

    pub fn logits(&self, state: &[f64]) -> Vec<f64> {
        self.actor.forward_one(state)
    }

    pub fn probabilities(&self, state: &[f64]) -> Vec<f64> {
        softmax(ArrayView1::from(&self.logits(state))).to_vec()
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.critic.forward_one(state)[0]
    }

    pub fn act(&self, state: &[f64], mode: ActMode, rng: &mut SimRng) -> usize {
        let logits = self.logits(state);
        match mode {
            ActMode::Greedy => argmax(&logits),
            ActMode::Sample => sample_categorical(&softmax(ArrayView1::from(&logits)).to_vec(), rng),
        }
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyLoss {
    pub total: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Clipped-surrogate loss with entropy bonus and its gradient with respect
/// to the logits: `−mean(min(r·A, clip(r)·A)) − c_H·mean(H)`.
pub fn ppo_policy_loss(
    logits: &Array2<f64>,
    actions: &[usize],
    old_logp: &[f64],
    adv: &[f64],
    clip_eps: f64,
    entropy_coef: f64,
) -> (PolicyLoss, Array2<f64>) {
    let b = actions.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut out = PolicyLoss::default();
    for i in 0..actions.len() {
        let lp = log_softmax(logits.row(i));
        let p = lp.mapv(f64::exp);
        let a = actions[i];
        let ratio = (lp[a] - old_logp[i]).exp();
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let unclipped_active = ratio * adv[i] <= clipped * adv[i];
        out.surrogate -= (ratio * adv[i]).min(clipped * adv[i]);
        if ratio != clipped {
            out.clip_fraction += 1.0;
        }
        out.approx_kl += old_logp[i] - lp[a];
        let h = -(&p * &lp).sum();
        out.entropy += h;
        let mut g = grad.row_mut(i);
        if unclipped_active {
            // d(−r·A)/dz = −r·A·(onehot − p)
            let coef = -ratio * adv[i] / b;
            for j in 0..p.len() {
                g[j] += coef * ((j == a) as u8 as f64 - p[j]);
            }
        }
        // d(−c·H)/dz_j = c·p_j·(log p_j + H)
        for j in 0..p.len() {
            g[j] += entropy_coef * p[j] * (lp[j] + h) / b;
        }
    }
    out.surrogate /= b;
    out.entropy /= b;
    out.clip_fraction /= b;
    out.approx_kl /= b;
    out.total = out.surrogate - entropy_coef * out.entropy;
    (out, grad)
}

/// One gradient step of the actor on a fixed minibatch.
pub fn actor_update(
    actor: &mut Mlp,
    states: &Array2<f64>,
    actions: &[usize],
    old_logp: &[f64],
    adv: &[f64],
    clip_eps: f64,
    entropy_coef: f64,
    grad_clip: f64,
    opt: &mut dyn Optimizer,
) -> PolicyLoss {
    let (logits, cache) = actor.forward_cached(states);
    let (loss, g) = ppo_policy_loss(&logits, actions, old_logp, adv, clip_eps, entropy_coef);
    let mut grads = actor.backward(&cache, &g);
    clip_grad_norm(&mut grads, grad_clip);
    opt.step(&mut actor.params, &grads);
    loss
}

/// Mean policy entropy over a batch of states.
pub fn mean_entropy(actor: &Mlp, states: &Array2<f64>) -> f64 {
    let logits = actor.forward(states);
    let n = logits.nrows() as f64;
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let lp = log_softmax(r);
            -(lp.mapv(f64::exp) * &lp).sum()
        })
        .sum::<f64>()
        / n
}

fn critic_update(critic: &mut Mlp, states: &Array2<f64>, returns: &[f64], vf_coef: f64, grad_clip: f64, opt: &mut dyn Optimizer) -> f64 {
    let (v, cache) = critic.forward_cached(states);
    let b = returns.len() as f64;
    let mut g = Array2::zeros(v.raw_dim());
    let mut loss = 0.0;
    for i in 0..returns.len() {
        let e = v[[i, 0]] - returns[i];
        loss += 0.5 * e * e;
        g[[i, 0]] = vf_coef * e / b;
    }
    let mut grads = critic.backward(&cache, &g);
    clip_grad_norm(&mut grads, grad_clip);
    opt.step(&mut critic.params, &grads);
    vf_coef * loss / b
}

struct Episode {
    states: Vec<Vec<f64>>,
    actions: Vec<usize>,
    logp: Vec<f64>,
    rewards: Vec<f64>,
}

fn collect_episode(
    policy: &PpoPolicy,
    scenario: &ScenarioConfig,
    norm: &Arc<NormalizerSet>,
    weights: &RewardWeights,
    env_seed: u64,
    rng_seed: u64,
) -> Result<Episode> {
    let mut env = SimEnv::new(scenario.clone(), norm.clone(), weights.clone())?;
    let mut rng = stream_rng(rng_seed, Stream::Policy);
    let mut s = env.reset(env_seed)?;
    let mut ep = Episode {
        states: Vec::new(),
        actions: Vec::new(),
        logp: Vec::new(),
        rewards: Vec::new(),
    };
    loop {
        let logits = policy.logits(s.as_slice());
        let lp = log_softmax(ArrayView1::from(&logits));
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let a = sample_categorical(&p, &mut rng);
        let step = env.step(a)?;
        ep.states.push(s.0);
        ep.actions.push(a);
        ep.logp.push(lp[a]);
        ep.rewards.push(step.reward);
        s = step.state;
        if step.done {
            return Ok(ep);
        }
    }
}

/// Greedy returns of `policy` on the given scenario seeds.
pub fn evaluate_returns(
    policy: &PpoPolicy,
    scenario: &ScenarioConfig,
    norm: &Arc<NormalizerSet>,
    weights: &RewardWeights,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut env = SimEnv::new(scenario.clone(), norm.clone(), weights.clone())?;
            let mut s = env.reset(seed)?;
            let mut ret = 0.0;
            loop {
                let a = argmax(&policy.logits(s.as_slice()));
                let st = env.step(a)?;
                ret += st.reward;
                s = st.state;
                if st.done {
                    return Ok(ret);
                }
            }
        })
        .collect()
}

/// Generalized advantage estimates for one terminated episode.
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + discount * next_v - values[t];
        next_adv = delta + discount * lambda * next_adv;
        adv[t] = next_adv;
    }
    adv
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLog {
    /// `(timesteps, mean greedy return)` per evaluation
    pub evaluations: Vec<(usize, f64)>,
    pub timesteps: usize,
    pub best_return: f64,
    pub stopped_early: bool,
    pub final_entropy: f64,
    pub entropy_collapsed: bool,
}

fn to_array(rows: &[&[f64]]) -> Array2<f64> {
    let dim = rows[0].len();
    let mut a = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        a.row_mut(i).assign(&ArrayView1::from(*r));
    }
    a
}

/// Trains against fresh simulator episodes; returns the parameters with the
/// best evaluation return.
pub fn train_ppo(
    scenario: &ScenarioConfig,
    norm: Arc<NormalizerSet>,
    weights: &RewardWeights,
    cfg: &PpoConfig,
) -> Result<(PpoPolicy, PpoLog)> {
    cfg.validate()?;
    let probe = SimEnv::new(scenario.clone(), norm.clone(), weights.clone())?;
    let (dim, n_actions) = (probe.state_dim(), probe.n_actions());
    let episode_len = scenario.n_intervals();
    if episode_len == 0 {
        return Err(Error::config("sim_duration", "episodes must have at least one step"));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Training);
    let mut policy = PpoPolicy::new(dim, n_actions, cfg, &mut rng)?;
    let mut actor_opt = Adam::new(cfg.lr, policy.actor.n_params());
    let mut critic_opt = Adam::new(cfg.lr, policy.critic.n_params());
    let eval_seeds: Vec<u64> = (0..cfg.eval_episodes as u64).map(|i| cfg.eval_seed_base + i).collect();
    let episodes_per_rollout = cfg.rollout_steps.div_ceil(episode_len);

    let mut log = PpoLog {
        best_return: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = policy.clone();
    let mut stale = 0;
    let mut next_eval = cfg.eval_every;
    let mut episode_counter: u64 = 0;

    while log.timesteps < cfg.max_timesteps {
        let first = episode_counter;
        episode_counter += episodes_per_rollout as u64;
        let episodes: Vec<Episode> = (first..episode_counter)
            .into_par_iter()
            .map(|e| {
                collect_episode(
                    &policy,
                    scenario,
                    &norm,
                    weights,
                    cfg.train_seed_base + e,
                    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(e),
                )
            })
            .collect::<Result<_>>()?;

        let mut states: Vec<&[f64]> = Vec::new();
        let mut actions = Vec::new();
        let mut old_logp = Vec::new();
        let mut advantages = Vec::new();
        let mut returns = Vec::new();
        for ep in &episodes {
            let rows: Vec<&[f64]> = ep.states.iter().map(Vec::as_slice).collect();
            let values: Vec<f64> = policy.critic.forward(&to_array(&rows)).column(0).to_vec();
            let adv = gae(&ep.rewards, &values, cfg.discount, cfg.gae_lambda);
            returns.extend(adv.iter().zip(&values).map(|(a, v)| a + v));
            advantages.extend(adv);
            states.extend(rows);
            actions.extend_from_slice(&ep.actions);
            old_logp.extend_from_slice(&ep.logp);
        }
        log.timesteps += states.len();
        let n = states.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let std = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
        let norm_adv: Vec<f64> = advantages.iter().map(|a| (a - mean) / std).collect();

        let mut order: Vec<usize> = (0..states.len()).collect();
        let mut last = PolicyLoss::default();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let s = to_array(&chunk.iter().map(|&i| states[i]).collect::<Vec<_>>());
                let a: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
                let lp: Vec<f64> = chunk.iter().map(|&i| old_logp[i]).collect();
                let ad: Vec<f64> = chunk.iter().map(|&i| norm_adv[i]).collect();
                let r: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                last = actor_update(
                    &mut policy.actor,
                    &s,
                    &a,
                    &lp,
                    &ad,
                    cfg.clip_eps,
                    cfg.entropy_coef,
                    cfg.grad_clip,
                    &mut actor_opt,
                );
                critic_update(&mut policy.critic, &s, &r, cfg.vf_coef, cfg.grad_clip, &mut critic_opt);
            }
        }
        if !last.total.is_finite() || policy.actor.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                step: log.timesteps,
                detail: format!("policy loss {last:?}"),
            });
        }
        log.final_entropy = last.entropy;

        if log.timesteps >= next_eval || log.timesteps >= cfg.max_timesteps {
            next_eval += cfg.eval_every;
            let rets = evaluate_returns(&policy, scenario, &norm, weights, &eval_seeds)?;
            let mean_ret = rets.iter().sum::<f64>() / rets.len() as f64;
            info!(
                "ppo {} steps: eval return {mean_ret:.3}, entropy {:.3}, clip {:.3}",
                log.timesteps, last.entropy, last.clip_fraction
            );
            log.evaluations.push((log.timesteps, mean_ret));
            if mean_ret > log.best_return {
                log.best_return = mean_ret;
                best = policy.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            if stale >= cfg.patience && log.timesteps >= cfg.min_timesteps_before_stop {
                log.stopped_early = true;
                break;
            }
        }
    }
    if log.final_entropy < cfg.entropy_floor {
        log.entropy_collapsed = true;
        warn!(
            "policy entropy {:.4} fell below {}; keeping the best checkpoint anyway",
            log.final_entropy, cfg.entropy_floor
        );
    }
    Ok((best, log))
}
