//! Learned controllers: a from-scratch MLP, offline REM-DQN with CQL, and
//! environment-trained PPO.

pub mod checkpoint;
pub mod dqn;
pub mod env;
pub mod mlp;
pub mod optim;
pub mod ppo;

pub use checkpoint::{Agent, AgentModel, Algo, Checkpoint, InferMode};
pub use dqn::{dqn_loss, train_dqn, DqnConfig, QNetwork};
pub use env::SimEnv;
pub use mlp::{backprop_check, Activation, Mlp, MlpSpec};
pub use optim::{Adam, Optimizer, Sgd};
pub use ppo::{ppo_policy_loss, train_ppo, PpoConfig, PpoPolicy};
