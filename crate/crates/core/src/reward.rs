//! Weighted reward over normalized per-cell KPMs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpm::KpmReport;
use crate::norm::{NormalizerSet, QuantileKind, RewardComponent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub name: String,
    /// throughput
    pub w1: f64,
    /// energy and active base stations
    pub w2: f64,
    /// radio link failures
    pub w3: f64,
    /// activation cost
    pub w4: f64,
    pub quantile_kind: QuantileKind,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl RewardWeights {
    pub fn new(name: &str, w: [f64; 4], quantile_kind: QuantileKind) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("weights", format!("{name}: weights must be finite and non-negative")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::config("weights", format!("{name}: weights sum to {sum}, not 1")));
        }
        Ok(RewardWeights {
            name: name.to_string(),
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            quantile_kind,
        })
    }

    /// The six named weight sets.
    pub fn table() -> Vec<RewardWeights> {
        use QuantileKind::*;
        [
            ("PPO-1", [0.51, 0.19, 0.2, 0.1], Normal),
            ("DQN", [0.4, 0.4, 0.1, 0.1], Uniform),
            ("PPO-2", [0.4, 0.4, 0.1, 0.1], Uniform),
            ("PPO-3", [0.2, 0.4, 0.2, 0.2], Uniform),
            ("PPO-4", [0.4, 0.32, 0.18, 0.1], Uniform),
            ("PPO-5", [0.45, 0.2, 0.25, 0.1], Normal),
        ]
        .into_iter()
        .map(|(n, w, k)| RewardWeights::new(n, w, k).expect("table weights are valid"))
        .collect()
    }

    /// Case-insensitive lookup in [`RewardWeights::table`].
    pub fn by_name(name: &str) -> Result<Self> {
        Self::table()
            .into_iter()
            .find(|w| w.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub throughput_term: f64,
    pub energy_term: f64,
    pub rlf_term: f64,
    pub cost_term: f64,
    pub bson_term: f64,
    pub total: f64,
}

/// Per-cell normalized component sums `[Σρ̃, Σγ̃, Σς̃, Σδ̃]`.
pub fn normalized_sums(report: &KpmReport, norm: &NormalizerSet, kind: QuantileKind) -> Result<[f64; 4]> {
    if report.n_cells() != norm.n_cells() {
        return Err(Error::Contract(format!(
            "report has {} cells, normalizers were fitted on {}",
            report.n_cells(),
            norm.n_cells()
        )));
    }
    let mut sums = [0.0; 4];
    for (i, rc) in RewardComponent::ALL.iter().enumerate() {
        for c in 0..report.n_cells() {
            sums[i] += norm.component(report, c, *rc, kind)?;
        }
    }
    Ok(sums)
}

pub fn compute_reward(report: &KpmReport, weights: &RewardWeights, norm: &NormalizerSet) -> Result<RewardBreakdown> {
    let [rho, gamma, rlf, delta] = normalized_sums(report, norm, weights.quantile_kind)?;
    let bs_on = report.bs_on as f64 / report.n_cells().max(1) as f64;
    let b = RewardBreakdown {
        throughput_term: weights.w1 * rho,
        energy_term: weights.w2 * gamma,
        rlf_term: weights.w3 * rlf,
        cost_term: weights.w4 * delta,
        bson_term: weights.w2 * bs_on,
        total: weights.w1 * rho - weights.w2 * gamma - weights.w3 * rlf - weights.w4 * delta - weights.w2 * bs_on,
    };
    if !b.total.is_finite() {
        return Err(Error::Contract(format!("non-finite reward {b:?}")));
    }
    Ok(b)
}
