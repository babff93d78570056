//! Cell on/off energy-saving control for a small 5G RAN: a slot-level
//! simulator, KPM reporting, baseline heuristics, reward normalization,
//! an offline dataset pipeline and from-scratch DQN/PPO agents.

pub mod config;
pub mod dataset;
pub mod drl;
pub mod control;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod kpm;
pub mod norm;
pub mod policy;
pub mod radio;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod traffic;
pub mod world;

pub use config::{Placement, ScenarioConfig};
pub use control::{activation_cost, Action, CellStatus, CellTransition, TransitionReport};
pub use error::{Error, Result};
pub use kpm::{energy_of_cell, CellKpm, KpmReport, StateVector};
pub use norm::{NormalizerSet, QuantileKind, QuantileTransformer};
pub use policy::{AlwaysOn, Baseline, HeuristicParams, Policy, PolicyContext, RandomPolicy};
pub use reward::{compute_reward, RewardBreakdown, RewardWeights};
pub use sim::{run, RunSummary, Simulation};
pub use world::{build_scenario, World};
