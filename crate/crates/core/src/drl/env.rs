//! Episodic environment wrapper around the simulator for on-policy training.

use std::sync::Arc;

use crate::config::ScenarioConfig;
use crate::control::Action;
use crate::error::{Error, Result};
use crate::kpm::StateVector;
use crate::norm::NormalizerSet;
use crate::reward::{compute_reward, RewardWeights};
use crate::sim::Simulation;
use crate::world::build_scenario;

pub struct SimEnv {
    scenario: ScenarioConfig,
    norm: Arc<NormalizerSet>,
    weights: RewardWeights,
    sim: Option<Simulation>,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
    /// total PDCP bytes and energy over the interval
    pub rho: f64,
    pub gamma: f64,
}

impl SimEnv {
    pub fn new(scenario: ScenarioConfig, norm: Arc<NormalizerSet>, weights: RewardWeights) -> Result<Self> {
        scenario.validate()?;
        if norm.n_cells() != scenario.n_gnb {
            return Err(Error::Contract(format!(
                "normalizers fitted on {} cells, scenario has {}",
                norm.n_cells(),
                scenario.n_gnb
            )));
        }
        Ok(SimEnv {
            scenario,
            norm,
            weights,
            sim: None,
        })
    }

    pub fn n_actions(&self) -> usize {
        Action::count(self.scenario.n_gnb)
    }

    pub fn state_dim(&self) -> usize {
        crate::kpm::state_len(self.scenario.n_gnb)
    }

    /// Starts a fresh episode with the given scenario seed.
    pub fn reset(&mut self, seed: u64) -> Result<StateVector> {
        let cfg = ScenarioConfig {
            seed,
            ..self.scenario.clone()
        };
        let sim = Simulation::new(build_scenario(&cfg)?);
        let s = self.norm.assemble_state(sim.observation(), self.weights.quantile_kind)?;
        self.sim = Some(sim);
        Ok(s)
    }

    pub fn step(&mut self, action: usize) -> Result<EnvStep> {
        let sim = self
            .sim
            .as_mut()
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        let a = Action::from_index(action, self.scenario.n_gnb)?;
        let out = sim.step(a)?;
        let reward = compute_reward(&out.report, &self.weights, &self.norm)?.total;
        Ok(EnvStep {
            state: self.norm.assemble_state(&out.report, self.weights.quantile_kind)?,
            reward,
            done: sim.is_done(),
            rho: out.report.total_rho(),
            gamma: out.report.total_gamma(),
        })
    }
}
