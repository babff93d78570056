//! Per-interval KPM records and their fixed flat layout.
//!
//! Layout is cell-major, feature-minor, with `bs_on` last: `12·N + 1`
//! features, 85 for seven cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURES_PER_CELL: usize = 12;

/// Per-cell feature names in layout order.
pub const CELL_FEATURES: [&str; FEATURES_PER_CELL] = [
    "rho",
    "gamma",
    "thr_energy_ratio",
    "rlf_count",
    "rlf_pct",
    "prb_count",
    "prb_pct",
    "pdu_64qam",
    "phy_bytes",
    "delta_cost",
    "active",
    "attached_ues",
];

/// Position of each feature within a cell block.
pub mod feature {
    pub const RHO: usize = 0;
    pub const GAMMA: usize = 1;
    pub const THR_ENERGY_RATIO: usize = 2;
    pub const RLF_COUNT: usize = 3;
    pub const RLF_PCT: usize = 4;
    pub const PRB_COUNT: usize = 5;
    pub const PRB_PCT: usize = 6;
    pub const PDU_64QAM: usize = 7;
    pub const PHY_BYTES: usize = 8;
    pub const DELTA_COST: usize = 9;
    pub const ACTIVE: usize = 10;
    pub const ATTACHED_UES: usize = 11;
}

pub fn state_len(n_cells: usize) -> usize {
    FEATURES_PER_CELL * n_cells + 1
}

/// Column names of the flat layout, e.g. `c0_rho … c6_attached_ues, bs_on`.
pub fn feature_names(n_cells: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..n_cells)
        .flat_map(|c| CELL_FEATURES.iter().map(move |f| format!("c{c}_{f}")))
        .collect();
    names.push("bs_on".to_string());
    names
}

/// Energy proxy: PDUs sent times transmit power.
pub fn energy_of_cell(ec: u64, p_tx: f64) -> f64 {
    ec as f64 * p_tx
}

pub use crate::control::activation_cost;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellKpm {
    /// PDCP bytes
    pub rho: u64,
    /// PDU·W
    pub gamma: f64,
    pub thr_energy_ratio: f64,
    pub rlf_count: u32,
    pub rlf_pct: f64,
    pub prb_count: u64,
    pub prb_pct: f64,
    pub pdu_64qam: u64,
    pub phy_bytes: f64,
    pub delta_cost: f64,
    pub active: bool,
    pub attached_ues: u32,
}

/// Throughput/energy ratio with the inactive-cell convention `0/0 = 0`.
pub fn thr_energy_ratio(rho: u64, gamma: f64) -> f64 {
    if gamma > 0.0 {
        rho as f64 / gamma
    } else {
        0.0
    }
}

impl CellKpm {
    pub fn to_features(&self) -> [f64; FEATURES_PER_CELL] {
        [
            self.rho as f64,
            self.gamma,
            self.thr_energy_ratio,
            self.rlf_count as f64,
            self.rlf_pct,
            self.prb_count as f64,
            self.prb_pct,
            self.pdu_64qam as f64,
            self.phy_bytes,
            self.delta_cost,
            if self.active { 1.0 } else { 0.0 },
            self.attached_ues as f64,
        ]
    }

    pub fn from_features(f: &[f64]) -> Result<Self> {
        if f.len() != FEATURES_PER_CELL {
            return Err(Error::Contract(format!("cell block has {} features", f.len())));
        }
        let count = |x: f64, name: &str| -> Result<u64> {
            if x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15 {
                Ok(x as u64)
            } else {
                Err(Error::Parse(format!("{name} must be a non-negative integer, got {x}")))
            }
        };
        Ok(CellKpm {
            rho: count(f[feature::RHO], "rho")?,
            gamma: f[feature::GAMMA],
            thr_energy_ratio: f[feature::THR_ENERGY_RATIO],
            rlf_count: count(f[feature::RLF_COUNT], "rlf_count")? as u32,
            rlf_pct: f[feature::RLF_PCT],
            prb_count: count(f[feature::PRB_COUNT], "prb_count")?,
            prb_pct: f[feature::PRB_PCT],
            pdu_64qam: count(f[feature::PDU_64QAM], "pdu_64qam")?,
            phy_bytes: f[feature::PHY_BYTES],
            delta_cost: f[feature::DELTA_COST],
            active: f[feature::ACTIVE] != 0.0,
            attached_ues: count(f[feature::ATTACHED_UES], "attached_ues")? as u32,
        })
    }
}

/// KPMs for one control interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KpmReport {
    /// control-interval index
    pub t: usize,
    pub cells: Vec<CellKpm>,
    pub bs_on: u32,
}

impl KpmReport {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(state_len(self.n_cells()));
        for c in &self.cells {
            v.extend_from_slice(&c.to_features());
        }
        v.push(self.bs_on as f64);
        v
    }

    pub fn unflatten(t: usize, values: &[f64]) -> Result<Self> {
        if values.is_empty() || (values.len() - 1) % FEATURES_PER_CELL != 0 {
            return Err(Error::Contract(format!(
                "flat report of length {} is not 12·N+1",
                values.len()
            )));
        }
        let n = (values.len() - 1) / FEATURES_PER_CELL;
        let cells = (0..n)
            .map(|c| CellKpm::from_features(&values[c * FEATURES_PER_CELL..(c + 1) * FEATURES_PER_CELL]))
            .collect::<Result<Vec<_>>>()?;
        let bs_on = values[values.len() - 1];
        Ok(KpmReport { t, cells, bs_on: bs_on as u32 })
    }

    pub fn total_rho(&self) -> f64 {
        self.cells.iter().map(|c| c.rho as f64).sum()
    }

    pub fn total_gamma(&self) -> f64 {
        self.cells.iter().map(|c| c.gamma).sum()
    }

    pub fn total_rlf(&self) -> u32 {
        self.cells.iter().map(|c| c.rlf_count).sum()
    }

    pub fn total_delta(&self) -> f64 {
        self.cells.iter().map(|c| c.delta_cost).sum()
    }

    /// Same report with cells reordered: cell `i` of the result is cell
    /// `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> KpmReport {
        KpmReport {
            t: self.t,
            cells: perm.iter().map(|&i| self.cells[i].clone()).collect(),
            bs_on: self.bs_on,
        }
    }
}

/// Normalized DRL observation in the flat layout; entries lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_85_for_seven_cells() {
        assert_eq!(state_len(7), 85);
        let names = feature_names(7);
        assert_eq!(names.len(), 85);
        assert_eq!(names[0], "c0_rho");
        assert_eq!(names[12], "c1_rho");
        assert_eq!(names[84], "bs_on");
    }

    #[test]
    fn energy_is_pdus_times_power() {
        assert_eq!(energy_of_cell(0, 1.0), 0.0);
        assert_eq!(energy_of_cell(100, 1.0), 100.0);
        assert_eq!(energy_of_cell(200, 2.5), 2.0 * energy_of_cell(100, 2.5));
    }

    #[test]
    fn ratio_zero_over_zero() {
        assert_eq!(thr_energy_ratio(0, 0.0), 0.0);
        assert_eq!(thr_energy_ratio(500, 0.0), 0.0);
        assert_eq!(thr_energy_ratio(500, 2.0), 250.0);
    }

    fn arb_cell() -> impl Strategy<Value = CellKpm> {
        (
            0u64..1_000_000_000,
            0.0f64..1e6,
            0u32..64,
            0.0f64..=1.0,
            0u64..100_000,
            0u64..100_000,
            0.0f64..1e9,
            0.0f64..=1.0,
            any::<bool>(),
            0u32..64,
        )
            .prop_map(|(rho, gamma, rlf, pct, prb, q64, phy, delta, active, att)| CellKpm {
                rho,
                gamma,
                thr_energy_ratio: thr_energy_ratio(rho, gamma),
                rlf_count: rlf,
                rlf_pct: pct,
                prb_count: prb,
                prb_pct: pct / 2.0,
                pdu_64qam: q64,
                phy_bytes: phy,
                delta_cost: delta,
                active,
                attached_ues: att,
            })
    }

    proptest! {
        #[test]
        fn flatten_round_trip(cells in proptest::collection::vec(arb_cell(), 1..9), bs_on in 0u32..9, t in 0usize..100) {
            let r = KpmReport { t, cells, bs_on };
            let flat = r.flatten();
            prop_assert_eq!(flat.len(), state_len(r.n_cells()));
            prop_assert_eq!(KpmReport::unflatten(t, &flat).unwrap(), r);
        }
    }

    #[test]
    fn unflatten_rejects_bad_length() {
        assert!(KpmReport::unflatten(0, &[0.0; 84]).is_err());
        assert!(KpmReport::unflatten(0, &[]).is_err());
    }
}
