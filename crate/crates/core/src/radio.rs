//! Abstracted downlink link model: log-distance pathloss with lognormal
//! shadowing, SINR, threshold MCS table, round-robin PRB scheduling and RLF
//! detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::traffic::INFINITE_BACKLOG;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Thermal noise density, dBm/Hz.
const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Link-budget constants derived from the scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    /// free-space loss at the reference distance, dB
    pub pl0_db: f64,
    pub exponent: f64,
    pub reference_distance: f64,
    pub noise_dbm: f64,
    /// `tx_mw · 10^(-pl0/10) · d0^n`; received power is this times `d^-n`.
    gain_const: f64,
    noise_mw: f64,
}

impl LinkBudget {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let tx_power_dbm = linear_to_db(cfg.tx_power_per_cell * 1e3);
        let pl0_db = 20.0
            * (4.0 * std::f64::consts::PI * cfg.reference_distance * cfg.carrier_freq
                / SPEED_OF_LIGHT)
                .log10();
        let noise_dbm = THERMAL_NOISE_DBM_HZ + linear_to_db(cfg.bandwidth) + cfg.noise_figure_db;
        let exponent = cfg.pathloss_exponent;
        LinkBudget {
            tx_power_dbm,
            pl0_db,
            exponent,
            reference_distance: cfg.reference_distance,
            noise_dbm,
            gain_const: db_to_linear(tx_power_dbm - pl0_db)
                * cfg.reference_distance.powf(exponent),
            noise_mw: db_to_linear(noise_dbm),
        }
    }

    /// Pathloss in dB; distances below the reference distance are clamped.
    pub fn pathloss_db(&self, distance: f64) -> f64 {
        let d = distance.max(self.reference_distance);
        self.pl0_db + 10.0 * self.exponent * (d / self.reference_distance).log10()
    }

    pub fn received_dbm(&self, distance: f64, shadowing_db: f64) -> f64 {
        self.tx_power_dbm - self.pathloss_db(distance) - shadowing_db
    }

    /// Received power in mW from a squared distance and a linear shadowing
    /// factor (`10^(-shadowing_db/10)`). Hot path: avoids logarithms.
    #[inline]
    pub fn received_mw_fast(&self, distance_sq: f64, shadow_lin: f64) -> f64 {
        let d0 = self.reference_distance;
        let d2 = distance_sq.max(d0 * d0);
        let attenuation = if self.exponent == 3.0 {
            1.0 / (d2 * d2.sqrt())
        } else {
            d2.powf(-0.5 * self.exponent)
        };
        self.gain_const * attenuation * shadow_lin
    }

    pub fn noise_mw(&self) -> f64 {
        self.noise_mw
    }
}

/// Serving-link snapshot for one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub ue_id: usize,
    /// Serving cell, or the last serving cell when detached.
    pub cell_id: usize,
    pub attached: bool,
    pub distance: f64,
    pub pathloss: f64,
    pub shadowing: f64,
    /// dB; `-inf` when no active serving cell exists.
    pub sinr: f64,
}

/// SINR in dB from linear powers.
pub fn sinr_db(signal_mw: f64, interference_mw: f64, noise_mw: f64) -> f64 {
    linear_to_db(signal_mw / (interference_mw + noise_mw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcs {
    pub index: u8,
    pub modulation: Modulation,
    /// bits per resource element
    pub efficiency: f64,
}

/// `(minimum SINR dB, modulation, efficiency)`; efficiencies follow the
/// 4-bit CQI ladder, thresholds put QPSK < 5 dB <= 16QAM < 15 dB <= 64QAM.
const MCS_TABLE: [(f64, Modulation, f64); 15] = [
    (f64::NEG_INFINITY, Modulation::Qpsk, 0.1523),
    (-4.0, Modulation::Qpsk, 0.2344),
    (-2.0, Modulation::Qpsk, 0.3770),
    (0.0, Modulation::Qpsk, 0.6016),
    (2.0, Modulation::Qpsk, 0.8770),
    (3.5, Modulation::Qpsk, 1.1758),
    (5.0, Modulation::Qam16, 1.4766),
    (8.0, Modulation::Qam16, 1.9141),
    (11.0, Modulation::Qam16, 2.4063),
    (15.0, Modulation::Qam64, 2.7305),
    (18.0, Modulation::Qam64, 3.3223),
    (20.0, Modulation::Qam64, 3.9023),
    (22.0, Modulation::Qam64, 4.5234),
    (24.0, Modulation::Qam64, 5.1152),
    (26.0, Modulation::Qam64, 5.5547),
];

/// Highest table entry whose threshold does not exceed `sinr`. NaN maps to
/// the lowest entry.
pub fn select_mcs(sinr: f64) -> Mcs {
    let idx = MCS_TABLE
        .iter()
        .rposition(|&(min, _, _)| sinr >= min)
        .unwrap_or(0);
    let (_, modulation, efficiency) = MCS_TABLE[idx];
    Mcs {
        index: idx as u8,
        modulation,
        efficiency,
    }
}

pub fn bits_per_prb(mcs: Mcs, cfg: &ScenarioConfig) -> u64 {
    (cfg.subcarriers_per_prb as f64 * cfg.symbols_per_slot as f64 * mcs.efficiency).floor() as u64
}

/// Per-cell counters accumulated over one control interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellRadioReport {
    pub cell_id: usize,
    pub prb_total: u64,
    pub prb_scheduled: u64,
    pub mac_pdu_count: u64,
    pub mac_pdu_64qam_count: u64,
    pub phy_bytes: f64,
    pub pdcp_bytes: u64,
}

impl CellRadioReport {
    pub fn new(cell_id: usize) -> Self {
        CellRadioReport {
            cell_id,
            ..Default::default()
        }
    }

    pub fn accumulate(&mut self, d: &CellRadioReport) {
        self.prb_total += d.prb_total;
        self.prb_scheduled += d.prb_scheduled;
        self.mac_pdu_count += d.mac_pdu_count;
        self.mac_pdu_64qam_count += d.mac_pdu_64qam_count;
        self.phy_bytes += d.phy_bytes;
        self.pdcp_bytes += d.pdcp_bytes;
    }

    pub fn reset(&mut self) {
        *self = CellRadioReport::new(self.cell_id);
    }
}

/// Scheduling input for one attached, connected UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeDemand {
    pub ue_id: usize,
    pub backlog: u64,
    pub mcs: Mcs,
    pub bits_per_prb: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSchedule {
    /// `(ue_id, prbs, bytes)` for every UE that received data.
    pub served: Vec<(usize, u32, u64)>,
    pub delta: CellRadioReport,
}

/// One slot of round-robin PRB allocation for an active cell.
///
/// PRBs are water-filled over UEs with backlog, starting at `rr_offset`
/// within `demands`; a UE never takes more PRBs than its backlog needs.
pub fn schedule_slot(
    cell_id: usize,
    demands: &[UeDemand],
    n_prb: u32,
    rr_offset: usize,
    phy_overhead: f64,
) -> SlotSchedule {
    let mut delta = CellRadioReport::new(cell_id);
    delta.prb_total = n_prb as u64;
    let n = demands.len();
    let order: Vec<usize> = (0..n)
        .map(|k| (k + rr_offset) % n.max(1))
        .filter(|&i| demands[i].backlog > 0 && demands[i].bits_per_prb > 0)
        .collect();
    let need: Vec<u32> = demands
        .iter()
        .map(|d| {
            if d.backlog == INFINITE_BACKLOG || d.bits_per_prb == 0 {
                u32::MAX
            } else {
                let bits = d.backlog as u128 * 8;
                bits.div_ceil(d.bits_per_prb as u128).min(u32::MAX as u128) as u32
            }
        })
        .collect();
    let mut alloc = vec![0u32; n];
    let mut remaining = n_prb;
    let mut hungry = order;
    while remaining > 0 && !hungry.is_empty() {
        let share = remaining / hungry.len() as u32;
        let extra = remaining as usize % hungry.len();
        for (pos, &i) in hungry.iter().enumerate() {
            let want = share + u32::from(pos < extra);
            let give = want.min(need[i] - alloc[i]);
            alloc[i] += give;
            remaining -= give;
        }
        hungry.retain(|&i| alloc[i] < need[i]);
    }

    let mut served = Vec::new();
    for (i, d) in demands.iter().enumerate() {
        if alloc[i] == 0 {
            continue;
        }
        let capacity = alloc[i] as u64 * d.bits_per_prb / 8;
        let bytes = capacity.min(d.backlog);
        delta.prb_scheduled += alloc[i] as u64;
        if bytes > 0 {
            delta.mac_pdu_count += 1;
            if d.mcs.modulation == Modulation::Qam64 {
                delta.mac_pdu_64qam_count += 1;
            }
            delta.pdcp_bytes += bytes;
            delta.phy_bytes += bytes as f64 * (1.0 + phy_overhead);
        }
        served.push((d.ue_id, alloc[i], bytes));
    }
    SlotSchedule { served, delta }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RlfOutcome {
    pub count: usize,
    /// UE ids in RLF keyed by their (last) serving cell.
    pub per_cell: BTreeMap<usize, Vec<usize>>,
}

/// A UE is in RLF iff its serving SINR is strictly below `threshold`; the
/// `-inf` sentinel of a detached UE always qualifies.
pub fn is_rlf(sinr: f64, threshold: f64) -> bool {
    !(sinr >= threshold)
}

pub fn detect_rlf(links: &[LinkState], threshold: f64) -> RlfOutcome {
    let mut out = RlfOutcome::default();
    for l in links {
        if !l.attached || is_rlf(l.sinr, threshold) {
            out.count += 1;
            out.per_cell.entry(l.cell_id).or_default().push(l.ue_id);
        }
    }
    out
}
