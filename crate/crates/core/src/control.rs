//! Cell on/off control: activation masks, the cell status map, and the
//! dynamic time-to-trigger handover used for load balancing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

/// Bit `i` set means cell `i` is active. The integer value of the mask is the
/// action index, so 7 cells give indices `0..128` and index 127 is all-on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    mask: u16,
    n_cells: u8,
}

impl Action {
    pub fn from_index(index: usize, n_cells: usize) -> Result<Self> {
        if n_cells == 0 || n_cells > 16 {
            return Err(Error::Contract(format!("unsupported cell count {n_cells}")));
        }
        if index >= Self::count(n_cells) {
            return Err(Error::Contract(format!(
                "action index {index} out of range for {n_cells} cells"
            )));
        }
        Ok(Action {
            mask: index as u16,
            n_cells: n_cells as u8,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mask = bits
            .iter()
            .enumerate()
            .fold(0u16, |m, (i, &on)| if on { m | (1 << i) } else { m });
        Action {
            mask,
            n_cells: bits.len() as u8,
        }
    }

    pub fn all_on(n_cells: usize) -> Self {
        Self::from_index(Self::count(n_cells) - 1, n_cells).expect("valid cell count")
    }

    pub fn all_off(n_cells: usize) -> Self {
        Self::from_index(0, n_cells).expect("valid cell count")
    }

    /// Size of the action space for `n_cells` cells.
    pub fn count(n_cells: usize) -> usize {
        1usize << n_cells
    }

    pub fn index(self) -> usize {
        self.mask as usize
    }

    pub fn n_cells(self) -> usize {
        self.n_cells as usize
    }

    pub fn is_active(self, cell: usize) -> bool {
        self.mask & (1 << cell) != 0
    }

    pub fn bits(self) -> Vec<bool> {
        (0..self.n_cells()).map(|i| self.is_active(i)).collect()
    }

    pub fn active_count(self) -> usize {
        self.mask.count_ones() as usize
    }
}

/// Renders as a bit string with cell 0 first, e.g. `1111111`.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n_cells() {
            f.write_str(if self.is_active(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Active,
    Inactive,
}

/// Exponential switching cost for a cell that has been active for `td_ms`.
pub fn activation_cost(td_ms: f64) -> f64 {
    0.9f64.powf(0.01 * td_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Activate,
    Deactivate,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Activate => "activate",
            Direction::Deactivate => "deactivate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTransition {
    pub cell_id: usize,
    /// seconds
    pub t: f64,
    pub direction: Direction,
    /// Active duration TD (ms) at the transition instant: always 0 on
    /// activation, the length of the ending active span on deactivation.
    pub td_ms: f64,
}

impl CellTransition {
    /// Activation cost charged by this transition (zero for deactivations).
    pub fn cost(&self) -> f64 {
        match self.direction {
            Direction::Activate => activation_cost(self.td_ms),
            Direction::Deactivate => 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transitions: Vec<CellTransition>,
}

impl TransitionReport {
    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn activations(&self) -> impl Iterator<Item = &CellTransition> {
        self.transitions
            .iter()
            .filter(|t| t.direction == Direction::Activate)
    }

    pub fn deactivated(&self) -> impl Iterator<Item = usize> + '_ {
        self.transitions
            .iter()
            .filter(|t| t.direction == Direction::Deactivate)
            .map(|t| t.cell_id)
    }
}

/// Which cells are on, and since when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatusMap {
    status: Vec<CellStatus>,
    /// seconds
    last_activation_time: Vec<f64>,
    /// Active duration frozen at the last deactivation, seconds.
    frozen_duration: Vec<f64>,
    /// Set once a cell has been switched on by a control action.
    reactivated: Vec<bool>,
}

impl CellStatusMap {
    /// Every cell active from t = 0; the initial state is not an activation.
    pub fn all_active(n_cells: usize) -> Self {
        CellStatusMap {
            status: vec![CellStatus::Active; n_cells],
            last_activation_time: vec![0.0; n_cells],
            frozen_duration: vec![0.0; n_cells],
            reactivated: vec![false; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.status.len()
    }

    pub fn status(&self, cell: usize) -> CellStatus {
        self.status[cell]
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.status[cell] == CellStatus::Active
    }

    pub fn active_flags(&self) -> Vec<bool> {
        self.status.iter().map(|&s| s == CellStatus::Active).collect()
    }

    pub fn bs_on(&self) -> usize {
        self.status.iter().filter(|&&s| s == CellStatus::Active).count()
    }

    pub fn as_action(&self) -> Action {
        Action::from_bits(&self.active_flags())
    }

    pub fn last_activation_time(&self, cell: usize) -> f64 {
        self.last_activation_time[cell]
    }

    /// TD of `cell` in seconds at time `now`.
    pub fn active_duration(&self, cell: usize, now: f64) -> f64 {
        match self.status[cell] {
            CellStatus::Active => (now - self.last_activation_time[cell]).max(0.0),
            CellStatus::Inactive => self.frozen_duration[cell],
        }
    }

    /// Switching cost of `cell` evaluated at `now`: `0.9^(0.01·TD_ms)` for
    /// an active cell that has been switched on by control, zero otherwise.
    /// Cells on since t = 0 were never switched and cost nothing.
    pub fn switching_cost(&self, cell: usize, now: f64) -> f64 {
        if self.is_active(cell) && self.reactivated[cell] {
            activation_cost(self.active_duration(cell, now) * 1e3)
        } else {
            0.0
        }
    }

    /// Applies `action` at time `now`. Only cells whose bit differs from the
    /// current status transition; applying the current mask is a no-op.
    pub fn apply_action(&mut self, action: Action, now: f64) -> Result<TransitionReport> {
        if action.n_cells() != self.n_cells() {
            return Err(Error::Contract(format!(
                "action for {} cells applied to {} cells",
                action.n_cells(),
                self.n_cells()
            )));
        }
        let mut report = TransitionReport::default();
        for cell in 0..self.n_cells() {
            let want = action.is_active(cell);
            match (self.status[cell], want) {
                (CellStatus::Inactive, true) => {
                    self.status[cell] = CellStatus::Active;
                    self.last_activation_time[cell] = now;
                    self.frozen_duration[cell] = 0.0;
                    self.reactivated[cell] = true;
                    report.transitions.push(CellTransition {
                        cell_id: cell,
                        t: now,
                        direction: Direction::Activate,
                        td_ms: 0.0,
                    });
                }
                (CellStatus::Active, false) => {
                    let span = self.active_duration(cell, now);
                    self.status[cell] = CellStatus::Inactive;
                    self.frozen_duration[cell] = span;
                    report.transitions.push(CellTransition {
                        cell_id: cell,
                        t: now,
                        direction: Direction::Deactivate,
                        td_ms: span * 1e3,
                    });
                }
                _ => {}
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverParams {
    /// seconds
    pub ttt_base: f64,
    /// seconds
    pub ttt_min: f64,
    pub hysteresis_db: f64,
    pub full_reduction_db: f64,
}

impl HandoverParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        HandoverParams {
            ttt_base: cfg.ttt_base,
            ttt_min: cfg.ttt_min,
            hysteresis_db: cfg.hysteresis_db,
            full_reduction_db: cfg.ttt_full_reduction_db,
        }
    }

    /// TTT shrinks linearly with the SINR advantage and bottoms out at
    /// `ttt_min` once the advantage reaches `full_reduction_db`.
    pub fn effective_ttt(&self, advantage_db: f64) -> f64 {
        let slope = (1.0 - self.ttt_min / self.ttt_base) / self.full_reduction_db;
        let scaled = self.ttt_base * (1.0 - slope * advantage_db.max(0.0)).max(0.0);
        scaled.clamp(self.ttt_min, self.ttt_base)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HandoverState {
    pub candidate: Option<usize>,
    /// seconds
    pub ttt_remaining: f64,
}

impl HandoverState {
    fn reset(&mut self) {
        self.candidate = None;
        self.ttt_remaining = 0.0;
    }
}

/// SINR a UE would see from `cell` if that cell served it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSinr {
    pub cell_id: usize,
    pub sinr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoverKind {
    /// Serving cell inactive or missing: attach without waiting.
    Forced,
    /// TTT elapsed with the target above hysteresis.
    Triggered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandoverEvent {
    pub target: usize,
    pub kind: HandoverKind,
}

fn best(cands: impl Iterator<Item = CellSinr>) -> Option<CellSinr> {
    cands.fold(None, |acc: Option<CellSinr>, c| match acc {
        Some(b) if b.sinr_db > c.sinr_db || (b.sinr_db == c.sinr_db && b.cell_id < c.cell_id) => {
            Some(b)
        }
        _ => Some(c),
    })
}

/// One slot of handover evaluation for a UE.
///
/// `candidates` lists active cells (at least the serving cell when it is
/// active, and the best alternative). An empty list leaves the UE detached.
pub fn evaluate_handover(
    state: &mut HandoverState,
    serving: Option<usize>,
    candidates: &[CellSinr],
    params: &HandoverParams,
    dt: f64,
) -> Option<HandoverEvent> {
    let current = serving.and_then(|s| candidates.iter().find(|c| c.cell_id == s).copied());
    let Some(current) = current else {
        state.reset();
        return best(candidates.iter().copied()).map(|c| HandoverEvent {
            target: c.cell_id,
            kind: HandoverKind::Forced,
        });
    };
    let target = best(candidates.iter().copied().filter(|c| c.cell_id != current.cell_id));
    let Some(target) = target else {
        state.reset();
        return None;
    };
    let advantage = target.sinr_db - current.sinr_db;
    if !(advantage > params.hysteresis_db) {
        state.reset();
        return None;
    }
    let ttt = params.effective_ttt(advantage);
    if state.candidate == Some(target.cell_id) {
        state.ttt_remaining = state.ttt_remaining.min(ttt);
    } else {
        state.candidate = Some(target.cell_id);
        state.ttt_remaining = ttt;
    }
    state.ttt_remaining = (state.ttt_remaining - dt).max(0.0);
    if state.ttt_remaining <= 1e-12 {
        state.reset();
        Some(HandoverEvent {
            target: target.cell_id,
            kind: HandoverKind::Triggered,
        })
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn index_mask_bijection() {
        for i in 0..128 {
            let a = Action::from_index(i, 7).unwrap();
            assert_eq!(Action::from_bits(&a.bits()).index(), i);
        }
        assert!(Action::from_index(128, 7).is_err());
        let all = Action::from_index(127, 7).unwrap();
        assert_eq!(all.to_string(), "1111111");
        assert_eq!(all, Action::all_on(7));
        assert_eq!(Action::all_off(7).active_count(), 0);
    }

    #[test]
    fn same_mask_is_a_no_op() {
        let mut map = CellStatusMap::all_active(7);
        let rep = map.apply_action(Action::all_on(7), 0.1).unwrap();
        assert!(rep.is_empty());
        let off = Action::from_index(0b1010101, 7).unwrap();
        let first = map.apply_action(off, 0.2).unwrap();
        assert_eq!(first.transitions.len(), 3);
        let snapshot = map.clone();
        assert!(map.apply_action(off, 0.3).unwrap().is_empty());
        assert_eq!(map, snapshot);
    }

    #[test]
    fn all_off_then_all_on() {
        let mut map = CellStatusMap::all_active(7);
        map.apply_action(Action::all_off(7), 0.5).unwrap();
        assert_eq!(map.bs_on(), 0);
        let rep = map.apply_action(Action::all_on(7), 1.2).unwrap();
        assert_eq!(rep.activations().count(), 7);
        assert_eq!(map.bs_on(), 7);
        for c in 0..7 {
            assert_eq!(map.last_activation_time(c), 1.2);
        }
    }

    #[test]
    fn toggle_twice_hundred_ms_apart() {
        let mut map = CellStatusMap::all_active(7);
        let mut bits = vec![true; 7];
        bits[3] = false;
        let down = map.apply_action(Action::from_bits(&bits), 1.0).unwrap();
        assert_eq!(down.transitions[0].direction, Direction::Deactivate);
        assert!((down.transitions[0].td_ms - 1000.0).abs() < 1e-9);
        let up = map.apply_action(Action::all_on(7), 1.1).unwrap();
        let t = &up.transitions[0];
        assert_eq!((t.cell_id, t.direction), (3, Direction::Activate));
        assert_eq!(t.td_ms, 0.0);
        assert_eq!(t.cost(), 1.0);
        assert_eq!(map.switching_cost(3, 1.1), 1.0);
        assert!((map.switching_cost(3, 1.2) - 0.9).abs() < 1e-12);
        assert!((map.active_duration(3, 1.35) - 0.25).abs() < 1e-12);
        // never-switched cells cost nothing
        assert_eq!(map.switching_cost(0, 1.2), 0.0);
    }

    #[test]
    fn cost_formula_values() {
        assert_eq!(activation_cost(0.0), 1.0);
        assert!((activation_cost(100.0) - 0.9).abs() < 1e-15);
        assert!((activation_cost(1000.0) - 0.348_678_440_1).abs() < 1e-10);
    }

    fn params() -> HandoverParams {
        HandoverParams::from_config(&ScenarioConfig::default())
    }

    #[test]
    fn ttt_endpoints() {
        let p = params();
        assert_eq!(p.effective_ttt(0.0), 0.256);
        assert!((p.effective_ttt(10.0) - 0.016).abs() < 1e-12);
        assert!((p.effective_ttt(25.0) - 0.016).abs() < 1e-12);
    }

    #[test]
    fn ttt_strictly_decreasing_below_floor() {
        let p = params();
        let grid: Vec<f64> = (0..=70).map(|i| 3.0 + i as f64 * 0.1).collect();
        for w in grid.windows(2) {
            assert!(p.effective_ttt(w[1]) < p.effective_ttt(w[0]), "{w:?}");
        }
    }

    #[test]
    fn forced_attach_when_serving_off() {
        let mut st = HandoverState::default();
        let cands = [CellSinr { cell_id: 4, sinr_db: -2.0 }];
        let ev = evaluate_handover(&mut st, Some(1), &cands, &params(), 0.001).unwrap();
        assert_eq!(ev, HandoverEvent { target: 4, kind: HandoverKind::Forced });
        assert_eq!(evaluate_handover(&mut st, Some(1), &[], &params(), 0.001), None);
    }

    #[test]
    fn below_hysteresis_never_hands_over() {
        let mut st = HandoverState::default();
        let cands = [
            CellSinr { cell_id: 0, sinr_db: 5.0 },
            CellSinr { cell_id: 1, sinr_db: 7.9 },
        ];
        for _ in 0..10_000 {
            assert_eq!(evaluate_handover(&mut st, Some(0), &cands, &params(), 0.001), None);
        }
    }

    fn slots_to_handover(advantage: f64) -> usize {
        let mut st = HandoverState::default();
        let cands = [
            CellSinr { cell_id: 0, sinr_db: 0.0 },
            CellSinr { cell_id: 1, sinr_db: advantage },
        ];
        for slot in 1..=1000 {
            if evaluate_handover(&mut st, Some(0), &cands, &params(), 0.001).is_some() {
                return slot;
            }
            assert!(st.ttt_remaining >= 0.0 && st.ttt_remaining <= 0.256);
        }
        panic!("no handover")
    }

    #[test]
    fn larger_advantage_hands_over_sooner() {
        assert_eq!(slots_to_handover(3.5), ((0.256_f64 * (1.0 - 0.09375 * 3.5)) * 1e3).round() as usize);
        assert_eq!(slots_to_handover(12.0), 16);
        let mut prev = usize::MAX;
        for adv in [3.2, 4.0, 5.5, 7.0, 9.0, 10.0] {
            let n = slots_to_handover(adv);
            assert!(n < prev);
            prev = n;
        }
    }

    proptest! {
        #[test]
        fn apply_is_idempotent(start in 0usize..128, mask in 0usize..128, t in 0.0f64..10.0) {
            let mut a = CellStatusMap::all_active(7);
            a.apply_action(Action::from_index(start, 7).unwrap(), 0.0).unwrap();
            let act = Action::from_index(mask, 7).unwrap();
            a.apply_action(act, t).unwrap();
            let once = a.clone();
            prop_assert!(a.apply_action(act, t).unwrap().is_empty());
            prop_assert_eq!(&a, &once);
            prop_assert_eq!(a.bs_on(), act.active_count());
            prop_assert_eq!(a.as_action(), act);
        }
    }
}
