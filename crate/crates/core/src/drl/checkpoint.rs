//! Versioned JSON checkpoints and the inference-side agent.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dqn::QNetwork;
use super::mlp::{argmax, LayerKind, Mlp, MlpSpec};
use super::ppo::{sample_categorical, PpoPolicy};
use crate::control::Action;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kpm::StateVector;
use crate::norm::NormalizerSet;
use crate::policy::{Policy, PolicyContext};
use crate::reward::RewardWeights;
use crate::rng::{stream_rng, SimRng, Stream};

pub const CHECKPOINT_FORMAT: &str = "cellsleep-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dqn,
    Ppo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBlob {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// row-major `in_dim × out_dim` (conv: kernel taps)
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBlob {
    pub name: String,
    pub spec: MlpSpec,
    pub layers: Vec<LayerBlob>,
}

impl NetworkBlob {
    pub fn from_mlp(name: &str, net: &Mlp) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerBlob {
                kind: l.kind,
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weights: net.params[l.w_off..l.w_off + l.n_weights()].to_vec(),
                bias: net.params[l.b_off..l.b_off + l.n_bias()].to_vec(),
            })
            .collect();
        NetworkBlob {
            name: name.to_string(),
            spec: net.spec().clone(),
            layers,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let mut net = Mlp::zeros(self.spec.clone())?;
        if net.layers().len() != self.layers.len() {
            return Err(Error::Contract(format!("network `{}`: layer count mismatch", self.name)));
        }
        for (l, blob) in net.layers().to_vec().iter().zip(&self.layers) {
            if blob.kind != l.kind
                || blob.in_dim != l.in_dim
                || blob.out_dim != l.out_dim
                || blob.weights.len() != l.n_weights()
                || blob.bias.len() != l.n_bias()
            {
                return Err(Error::Contract(format!("network `{}`: layer shape mismatch", self.name)));
            }
            net.params[l.w_off..l.w_off + l.n_weights()].copy_from_slice(&blob.weights);
            net.params[l.b_off..l.b_off + l.n_bias()].copy_from_slice(&blob.bias);
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub algo: Algo,
    pub weights: RewardWeights,
    pub normalizer_sha256: String,
    pub n_actions: usize,
    /// DQN only
    pub heads: usize,
    /// training configuration as written by the trainer
    pub config: serde_json::Value,
    pub networks: Vec<NetworkBlob>,
}

impl Checkpoint {
    pub fn from_dqn(q: &QNetwork, weights: &RewardWeights, norm: &NormalizerSet, config: &impl Serialize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            algo: Algo::Dqn,
            weights: weights.clone(),
            normalizer_sha256: norm.hash().to_string(),
            n_actions: q.n_actions,
            heads: q.heads,
            config: serde_json::to_value(config).expect("config serializes"),
            networks: vec![NetworkBlob::from_mlp("q", &q.net)],
        }
    }

    pub fn from_ppo(p: &PpoPolicy, weights: &RewardWeights, norm: &NormalizerSet, config: &impl Serialize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            algo: Algo::Ppo,
            weights: weights.clone(),
            normalizer_sha256: norm.hash().to_string(),
            n_actions: p.actor.spec().output,
            heads: 1,
            config: serde_json::to_value(config).expect("config serializes"),
            networks: vec![NetworkBlob::from_mlp("actor", &p.actor), NetworkBlob::from_mlp("critic", &p.critic)],
        }
    }

    fn network(&self, name: &str) -> Result<Mlp> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Contract(format!("checkpoint has no `{name}` network")))?
            .to_mlp()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Corruption {
                path: origin.into(),
                reason: format!("unsupported checkpoint {} v{}", c.format, c.version),
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentModel {
    Dqn(QNetwork),
    Ppo(PpoPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    Greedy,
    Sample,
}

/// A trained network bound to the normalizers it was trained with.
#[derive(Debug, Clone)]
pub struct Agent {
    pub model: AgentModel,
    pub weights: RewardWeights,
    pub norm: Arc<NormalizerSet>,
    pub mode: InferMode,
    rng: SimRng,
}

impl Agent {
    pub fn new(model: AgentModel, weights: RewardWeights, norm: Arc<NormalizerSet>) -> Self {
        Agent {
            model,
            weights,
            norm,
            mode: InferMode::Greedy,
            rng: stream_rng(0, Stream::Policy),
        }
    }

    /// Rebuilds an agent; refuses normalizers other than the training ones.
    pub fn from_checkpoint(ckpt: &Checkpoint, norm: Arc<NormalizerSet>) -> Result<Self> {
        if ckpt.normalizer_sha256 != norm.hash() {
            return Err(Error::NormalizerMismatch {
                expected: ckpt.normalizer_sha256.clone(),
                actual: norm.hash().to_string(),
            });
        }
        let model = match ckpt.algo {
            Algo::Dqn => AgentModel::Dqn(QNetwork {
                net: ckpt.network("q")?,
                heads: ckpt.heads,
                n_actions: ckpt.n_actions,
            }),
            Algo::Ppo => AgentModel::Ppo(PpoPolicy {
                actor: ckpt.network("actor")?,
                critic: ckpt.network("critic")?,
            }),
        };
        Ok(Agent::new(model, ckpt.weights.clone(), norm))
    }

    pub fn load(path: &Path, norm: Arc<NormalizerSet>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, norm)
    }

    pub fn with_sampling(mut self, seed: u64) -> Self {
        self.mode = InferMode::Sample;
        self.rng = stream_rng(seed, Stream::Policy);
        self
    }

    pub fn n_actions(&self) -> usize {
        match &self.model {
            AgentModel::Dqn(q) => q.n_actions,
            AgentModel::Ppo(p) => p.actor.spec().output,
        }
    }

    /// Raw scores per action: mean-of-heads Q or policy logits.
    pub fn scores(&self, state: &StateVector) -> Vec<f64> {
        match &self.model {
            AgentModel::Dqn(q) => q.q_values(state.as_slice()),
            AgentModel::Ppo(p) => p.logits(state.as_slice()),
        }
    }

    pub fn infer(&mut self, state: &StateVector) -> Result<usize> {
        let expected = match &self.model {
            AgentModel::Dqn(q) => q.net.spec().input,
            AgentModel::Ppo(p) => p.actor.spec().input,
        };
        if state.len() != expected {
            return Err(Error::Contract(format!("state has {} entries, network expects {expected}", state.len())));
        }
        let scores = self.scores(state);
        Ok(match (&self.model, self.mode) {
            (AgentModel::Ppo(_), InferMode::Sample) => {
                let p = super::mlp::softmax(ndarray::ArrayView1::from(&scores)).to_vec();
                sample_categorical(&p, &mut self.rng)
            }
            _ => argmax(&scores),
        })
    }
}

impl Policy for Agent {
    fn name(&self) -> String {
        let algo = match self.model {
            AgentModel::Dqn(_) => "dqn",
            AgentModel::Ppo(_) => "ppo",
        };
        format!("{algo}[{}]", self.weights.name)
    }

    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
        let state = self.norm.assemble_state(ctx.report, self.weights.quantile_kind)?;
        let idx = self.infer(&state)?;
        Action::from_index(idx, ctx.world.n_cells())
    }
}
