//! Offline DQN with a random ensemble mixture over Q-heads and a
//! conservative (CQL) penalty.

use log::info;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{argmax, Mlp, MlpSpec};
use super::optim::{clip_grad_norm, Adam, Optimizer};
use crate::dataset::Transition;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub conv_kernel: Option<usize>,
    pub heads: usize,
    pub cql_alpha: f64,
    pub discount: f64,
    pub target_sync: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub updates: usize,
    pub huber_delta: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![128, 128, 64],
            conv_kernel: Some(3),
            heads: 4,
            cql_alpha: 1.0,
            discount: 0.99,
            target_sync: 500,
            lr: 3e-4,
            batch_size: 256,
            updates: 20_000,
            huber_delta: 1.0,
            grad_clip: 10.0,
            seed: 0,
            log_every: 1000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::config(f, r));
        if self.heads == 0 {
            return bad("heads", "need at least one head");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount", "must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.updates == 0 {
            return bad("batch_size", "batch size, target sync and update count must be positive");
        }
        if !(self.lr > 0.0) || self.cql_alpha < 0.0 || !(self.huber_delta > 0.0) {
            return bad("lr", "learning rate and huber delta must be positive, cql_alpha non-negative");
        }
        Ok(())
    }
}

/// Q-network: a shared trunk whose output holds `heads` blocks of
/// `n_actions` values.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub net: Mlp,
    pub heads: usize,
    pub n_actions: usize,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        n_actions: usize,
        heads: usize,
        hidden: &[usize],
        conv_kernel: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut spec = MlpSpec::new(input, hidden, heads * n_actions);
        spec.conv_kernel = conv_kernel;
        Ok(QNetwork {
            net: Mlp::new(spec, rng)?,
            heads,
            n_actions,
        })
    }

    /// Mean of the heads for one state.
    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        let out = self.net.forward_one(state);
        (0..self.n_actions)
            .map(|a| (0..self.heads).map(|k| out[k * self.n_actions + a]).sum::<f64>() / self.heads as f64)
            .collect()
    }

    pub fn greedy(&self, state: &[f64]) -> usize {
        argmax(&self.q_values(state))
    }
}

/// Mixed Q-values `Σ_k α_k Q_k(s, ·)` for one row of network output.
fn mix(row: ArrayView1<'_, f64>, alpha: &[f64], n_actions: usize) -> Vec<f64> {
    (0..n_actions)
        .map(|a| alpha.iter().enumerate().map(|(k, w)| w * row[k * n_actions + a]).sum())
        .collect()
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One training batch in array form.
pub struct DqnBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl DqnBatch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let dim = ts[0].state.len();
        let mut states = Array2::zeros((ts.len(), dim));
        let mut next_states = Array2::zeros((ts.len(), dim));
        for (i, t) in ts.iter().enumerate() {
            states.row_mut(i).assign(&ArrayView1::from(t.state.as_slice()));
            next_states.row_mut(i).assign(&ArrayView1::from(t.next_state.as_slice()));
        }
        DqnBatch {
            states,
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states,
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnLoss {
    pub total: f64,
    pub td: f64,
    pub cql: f64,
}

/// Batch loss and its gradient with respect to the online network output.
///
/// Per sample: Huber(Q_α(s,a) − y) with y = r + γ(1 − done)·max Q̄_α(s',·),
/// plus `cql_alpha·(logsumexp Q_α(s,·) − Q_α(s,a))`, averaged over the batch.
pub fn dqn_loss(
    online: &Array2<f64>,
    target_next: &Array2<f64>,
    batch: &DqnBatch,
    alpha: &[f64],
    n_actions: usize,
    discount: f64,
    cql_alpha: f64,
    huber_delta: f64,
) -> (DqnLoss, Array2<f64>) {
    let b = batch.len() as f64;
    let mut grad = Array2::zeros(online.raw_dim());
    let mut td_sum = 0.0;
    let mut cql_sum = 0.0;
    for i in 0..batch.len() {
        let q = mix(online.row(i), alpha, n_actions);
        let qn = mix(target_next.row(i), alpha, n_actions);
        let a = batch.actions[i];
        let boot = if batch.dones[i] {
            0.0
        } else {
            qn.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let y = batch.rewards[i] + discount * boot;
        let err = q[a] - y;
        let (h, dh) = if err.abs() <= huber_delta {
            (0.5 * err * err, err)
        } else {
            (huber_delta * (err.abs() - 0.5 * huber_delta), huber_delta * err.signum())
        };
        td_sum += h;
        let mut dq = vec![0.0; n_actions];
        dq[a] += dh;
        if cql_alpha > 0.0 {
            let lse = logsumexp(&q);
            cql_sum += lse - q[a];
            for (j, d) in dq.iter_mut().enumerate() {
                *d += cql_alpha * (q[j] - lse).exp();
            }
            dq[a] -= cql_alpha;
        }
        for (k, w) in alpha.iter().enumerate() {
            for (j, d) in dq.iter().enumerate() {
                grad[[i, k * n_actions + j]] = w * d / b;
            }
        }
    }
    let td = td_sum / b;
    let cql = cql_sum / b;
    (
        DqnLoss {
            total: td + cql_alpha * cql,
            td,
            cql,
        },
        grad,
    )
}

/// Convex mixture weights: uniform draws normalized to sum to one.
pub fn rem_alpha<R: Rng + ?Sized>(heads: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..heads).map(|_| rng.random::<f64>() + 1e-12).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(update, loss)` pairs at the logging cadence.
    pub losses: Vec<(usize, f64)>,
    pub target_syncs: usize,
}

/// Trains a Q-network on a fixed corpus of transitions.
pub fn train_dqn(transitions: &[Transition], n_actions: usize, cfg: &DqnConfig) -> Result<(QNetwork, TrainLog)> {
    cfg.validate()?;
    if transitions.is_empty() {
        return Err(Error::EmptyDataset("no transitions to train on".into()));
    }
    if let Some(t) = transitions.iter().find(|t| t.action >= n_actions) {
        return Err(Error::Contract(format!("action {} outside 0..{n_actions}", t.action)));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Training);
    let input = transitions[0].state.len();
    let mut online = QNetwork::new(input, n_actions, cfg.heads, &cfg.hidden, cfg.conv_kernel, &mut rng)?;
    let mut target = online.clone();
    let mut opt = Adam::new(cfg.lr, online.net.n_params());
    let mut log = TrainLog::default();
    for update in 1..=cfg.updates {
        let picks: Vec<&Transition> = (0..cfg.batch_size)
            .map(|_| &transitions[rng.random_range(0..transitions.len())])
            .collect();
        let batch = DqnBatch::from_transitions(&picks);
        let alpha = rem_alpha(cfg.heads, &mut rng);
        let (out, cache) = online.net.forward_cached(&batch.states);
        let tgt = target.net.forward(&batch.next_states);
        let (loss, grad_out) = dqn_loss(&out, &tgt, &batch, &alpha, n_actions, cfg.discount, cfg.cql_alpha, cfg.huber_delta);
        if !loss.total.is_finite() {
            let mean_r = batch.rewards.iter().sum::<f64>() / batch.len() as f64;
            return Err(Error::Diverged {
                step: update,
                detail: format!(
                    "loss {:?}, batch mean reward {mean_r}, max |Q| {}",
                    loss,
                    out.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                ),
            });
        }
        let mut grads = online.net.backward(&cache, &grad_out);
        clip_grad_norm(&mut grads, cfg.grad_clip);
        opt.step(&mut online.net.params, &grads);
        if update % cfg.target_sync == 0 {
            target.net.params.clone_from(&online.net.params);
            log.target_syncs += 1;
        }
        if update % cfg.log_every == 0 || update == cfg.updates {
            info!("dqn update {update}: loss {:.5} (td {:.5}, cql {:.5})", loss.total, loss.td, loss.cql);
            log.losses.push((update, loss.total));
        }
    }
    Ok((online, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn alpha_is_convex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for k in 1..8 {
            let a = rem_alpha(k, &mut rng);
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_head_matches_hand_computed_batch() {
        // two samples, two actions, one head
        let online = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 0.5, -1.0]).unwrap();
        let target = Array2::from_shape_vec((2, 2), vec![3.0, 1.0, 4.0, 0.0]).unwrap();
        let batch = DqnBatch {
            states: Array2::zeros((2, 1)),
            actions: vec![0, 1],
            rewards: vec![0.5, 1.0],
            next_states: Array2::zeros((2, 1)),
            dones: vec![false, true],
        };
        let (loss, grad) = dqn_loss(&online, &target, &batch, &[1.0], 2, 0.9, 0.0, 1.0);
        // sample 0: y = 0.5 + 0.9·3 = 3.2, err = 1 − 3.2 = −2.2 → huber 2.2 − 0.5 = 1.7
        // sample 1: y = 1.0,            err = −1 − 1 = −2   → huber 1.5
        assert!((loss.total - (1.7 + 1.5) / 2.0).abs() < 1e-10);
        assert!((grad[[0, 0]] - (-0.5)).abs() < 1e-10);
        assert!((grad[[1, 1]] - (-0.5)).abs() < 1e-10);
        assert_eq!(grad[[0, 1]], 0.0);
        // with a CQL term: sample 0 gets lse(1,2) − 1, sample 1 lse(0.5,−1) − (−1)
        let (with_cql, _) = dqn_loss(&online, &target, &batch, &[1.0], 2, 0.9, 2.0, 1.0);
        let lse = |a: f64, b: f64| (a.exp() + b.exp()).ln();
        let cql = ((lse(1.0, 2.0) - 1.0) + (lse(0.5, -1.0) + 1.0)) / 2.0;
        assert!((with_cql.total - (1.6 + 2.0 * cql)).abs() < 1e-10);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let (b, k, a) = (3, 2, 3);
        let online = Array2::from_shape_fn((b, k * a), |_| rng.random_range(-2.0..2.0));
        let target = Array2::from_shape_fn((b, k * a), |_| rng.random_range(-2.0..2.0));
        let batch = DqnBatch {
            states: Array2::zeros((b, 1)),
            actions: vec![0, 2, 1],
            rewards: vec![0.1, -0.3, 0.7],
            next_states: Array2::zeros((b, 1)),
            dones: vec![false, false, true],
        };
        let alpha = [0.3, 0.7];
        let f = |o: &Array2<f64>| dqn_loss(o, &target, &batch, &alpha, a, 0.95, 0.5, 1.0).0.total;
        let (_, grad) = dqn_loss(&online, &target, &batch, &alpha, a, 0.95, 0.5, 1.0);
        for idx in 0..online.len() {
            let (i, j) = (idx / (k * a), idx % (k * a));
            let mut up = online.clone();
            up[[i, j]] += 1e-6;
            let mut dn = online.clone();
            dn[[i, j]] -= 1e-6;
            let num = (f(&up) - f(&dn)) / 2e-6;
            assert!((num - grad[[i, j]]).abs() < 1e-6, "{num} vs {}", grad[[i, j]]);
        }
    }
}
