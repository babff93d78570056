//! Scenario construction and the mutable per-run world state.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Placement, ScenarioConfig};
use crate::control::{
    evaluate_handover, CellSinr, CellStatusMap, HandoverKind, HandoverParams, HandoverState,
};
use crate::error::{Error, Result};
use crate::geometry::{Disc, Point};
use crate::radio::{db_to_linear, linear_to_db, LinkBudget, LinkState};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::traffic::{Motion, TrafficClass, TrafficSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ue {
    pub id: usize,
    pub class: TrafficClass,
    pub motion: Motion,
    pub traffic: TrafficSource,
    pub backlog: u64,
    pub serving: Option<usize>,
    /// Cell the UE is accounted to: the serving cell, or the last one.
    pub home_cell: usize,
    pub handover: HandoverState,
}

impl Ue {
    pub fn position(&self) -> Point {
        self.motion.position
    }

    pub fn speed(&self) -> f64 {
        self.motion.speed
    }
}

/// Slot counter; the control interval index is `slot / slots_per_interval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub current_slot: u64,
    pub slots_per_control_interval: u64,
}

impl SimClock {
    pub fn interval(&self) -> u64 {
        self.current_slot / self.slots_per_control_interval
    }

    pub fn at_boundary(&self) -> bool {
        self.current_slot % self.slots_per_control_interval == 0
    }

    pub fn time(&self, slot_duration: f64) -> f64 {
        self.current_slot as f64 * slot_duration
    }
}

/// Hexagonal layout: one cell at the origin and the rest on a ring of radius
/// `isd`, equally spaced in angle.
pub fn cell_layout(n_gnb: usize, isd: f64) -> Vec<Cell> {
    let ring = n_gnb.saturating_sub(1);
    (0..n_gnb)
        .map(|id| {
            let position = if id == 0 {
                Point::ORIGIN
            } else {
                let angle = std::f64::consts::TAU * (id - 1) as f64 / ring as f64;
                Point::new(isd * angle.cos(), isd * angle.sin())
            };
            Cell { id, position }
        })
        .collect()
}

/// Cells excluded from UE drops under non-uniform placement. Draws from the
/// placement stream first, so replaying the stream reproduces the set.
pub fn draw_excluded_cells(rng: &mut SimRng, n_gnb: usize, placement: Placement) -> Vec<usize> {
    match placement {
        Placement::Uniform => Vec::new(),
        Placement::NonUniform(xi) => {
            let mut v = index::sample(rng, n_gnb, xi).into_vec();
            v.sort_unstable();
            v
        }
    }
}

fn uniform_in_disc<R: Rng + ?Sized>(disc: &Disc, rng: &mut R) -> Point {
    let r = disc.radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    disc.center + Point::new(r * a.cos(), r * a.sin())
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: ScenarioConfig,
    pub cells: Vec<Cell>,
    pub ues: Vec<Ue>,
    pub status: CellStatusMap,
    /// Walk and drop region.
    pub region: Disc,
    pub excluded: Vec<usize>,
    pub clock: SimClock,
    pub budget: LinkBudget,
    pub handover_params: HandoverParams,
    shadowing_db: Vec<f64>,
    shadow_lin: Vec<f64>,
    /// Received power (mW), ue-major, from every cell whether on or off.
    rx_mw: Vec<f64>,
    /// Per-UE total received power from active cells.
    active_total_mw: Vec<f64>,
    pub(crate) mobility_rng: SimRng,
    pub(crate) traffic_rng: SimRng,
}

/// Builds the initial world: topology, UE drops, shadowing, initial
/// attachment. All cells start active.
pub fn build_scenario(config: &ScenarioConfig) -> Result<World> {
    config.validate()?;
    let cfg = config.clone();
    let n_cells = cfg.n_gnb;
    let cells = cell_layout(n_cells, cfg.inter_site_distance);
    let region = Disc::new(Point::ORIGIN, cfg.inter_site_distance);

    let mut placement_rng = stream_rng(cfg.seed, Stream::Placement);
    let excluded = draw_excluded_cells(&mut placement_rng, n_cells, cfg.placement);
    let hosts: Vec<usize> = (0..n_cells).filter(|c| !excluded.contains(c)).collect();

    let mut mobility_rng = stream_rng(cfg.seed, Stream::Mobility);
    let mut traffic_rng = stream_rng(cfg.seed, Stream::Traffic);
    let mut shadow_rng = stream_rng(cfg.seed, Stream::Shadowing);

    let n_ues = cfg.n_ues();
    let mut ues = Vec::with_capacity(n_ues);
    for id in 0..n_ues {
        let (position, home) = match cfg.placement {
            Placement::Uniform => (uniform_in_disc(&region, &mut placement_rng), id / cfg.n_ue_per_gnb.max(1)),
            Placement::NonUniform(_) => {
                let host = hosts[id % hosts.len()];
                let around = Disc::new(cells[host].position, cfg.inter_site_distance / 2.0);
                let mut p = uniform_in_disc(&around, &mut placement_rng);
                let mut tries = 0;
                while !region.contains(p, 0.0) && tries < 1000 {
                    p = uniform_in_disc(&around, &mut placement_rng);
                    tries += 1;
                }
                (region.clamp(p), host)
            }
        };
        let [lo, hi] = cfg.ue_speed_range;
        let speed = if hi > lo { mobility_rng.random_range(lo..=hi) } else { lo };
        let heading = mobility_rng.random_range(0.0..std::f64::consts::TAU);
        let next_turn = crate::traffic::sample_exp(cfg.walk_turn_mean, &mut mobility_rng)
            .max(f64::MIN_POSITIVE);
        let class = TrafficClass::for_ue(id);
        let traffic = TrafficSource::new(class, &cfg, &mut traffic_rng);
        ues.push(Ue {
            id,
            class,
            motion: Motion {
                position,
                heading,
                speed,
                next_turn,
                turn_mean: cfg.walk_turn_mean,
            },
            traffic,
            backlog: 0,
            serving: None,
            home_cell: home.min(n_cells - 1),
            handover: HandoverState::default(),
        });
    }

    let shadowing_db: Vec<f64> = if cfg.shadowing_std_db > 0.0 {
        let normal = Normal::new(0.0, cfg.shadowing_std_db).expect("finite std");
        (0..n_ues * n_cells).map(|_| normal.sample(&mut shadow_rng)).collect()
    } else {
        vec![0.0; n_ues * n_cells]
    };
    let shadow_lin = shadowing_db.iter().map(|&s| db_to_linear(-s)).collect();

    let mut world = World {
        budget: LinkBudget::new(&cfg),
        handover_params: HandoverParams::from_config(&cfg),
        clock: SimClock {
            current_slot: 0,
            slots_per_control_interval: cfg.slots_per_interval(),
        },
        status: CellStatusMap::all_active(n_cells),
        config: cfg,
        cells,
        ues,
        region,
        excluded,
        shadowing_db,
        shadow_lin,
        rx_mw: vec![0.0; n_ues * n_cells],
        active_total_mw: vec![0.0; n_ues],
        mobility_rng,
        traffic_rng,
    };
    world.refresh_links();
    world.reattach_orphans();
    Ok(world)
}

impl World {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn now(&self) -> f64 {
        self.clock.time(self.config.slot_duration)
    }

    pub fn shadowing_db(&self, ue: usize, cell: usize) -> f64 {
        self.shadowing_db[ue * self.n_cells() + cell]
    }

    /// Received power (mW) at `pos` from `cell`, using UE `ue`'s shadowing.
    pub fn received_mw_at(&self, ue: usize, pos: Point, cell: usize) -> f64 {
        let d2 = pos.distance_sq(self.cells[cell].position);
        self.budget
            .received_mw_fast(d2, self.shadow_lin[ue * self.n_cells() + cell])
    }

    /// SINR (dB) at `pos` served by `serving`, interfered by the other cells
    /// flagged in `active`.
    pub fn compute_sinr(&self, ue: usize, pos: Point, serving: usize, active: &[bool]) -> Result<f64> {
        if !active.get(serving).copied().unwrap_or(false) {
            return Err(Error::Contract(format!("serving cell {serving} is not active")));
        }
        let signal = self.received_mw_at(ue, pos, serving);
        let interference: f64 = (0..self.n_cells())
            .filter(|&c| c != serving && active[c])
            .map(|c| self.received_mw_at(ue, pos, c))
            .sum();
        Ok(linear_to_db(signal / (interference + self.budget.noise_mw())))
    }

    /// SINR (dB) UE `ue` would get from `cell` at its current position with
    /// interference from the currently active cells other than `cell`.
    pub fn hypothetical_sinr(&self, ue: usize, cell: usize) -> f64 {
        let n = self.n_cells();
        let signal = self.rx_mw[ue * n + cell];
        let others = self.active_total_mw[ue] - if self.status.is_active(cell) { signal } else { 0.0 };
        linear_to_db(signal / (others.max(0.0) + self.budget.noise_mw()))
    }

    /// Serving SINR in dB, `-inf` when detached.
    pub fn serving_sinr(&self, ue: usize) -> f64 {
        match self.ues[ue].serving {
            Some(c) => self.hypothetical_sinr(ue, c),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn link_state(&self, ue: usize) -> LinkState {
        let u = &self.ues[ue];
        let cell = u.serving.unwrap_or(u.home_cell);
        let distance = u.position().distance(self.cells[cell].position);
        LinkState {
            ue_id: ue,
            cell_id: cell,
            attached: u.serving.is_some(),
            distance,
            pathloss: self.budget.pathloss_db(distance),
            shadowing: self.shadowing_db(ue, cell),
            sinr: self.serving_sinr(ue),
        }
    }

    pub fn link_states(&self) -> Vec<LinkState> {
        (0..self.ues.len()).map(|u| self.link_state(u)).collect()
    }

    /// Recomputes the received-power cache after motion or status changes.
    pub fn refresh_links(&mut self) {
        let n = self.n_cells();
        for (u, ue) in self.ues.iter().enumerate() {
            let pos = ue.motion.position;
            let mut total = 0.0;
            for (c, cell) in self.cells.iter().enumerate() {
                let rx = self
                    .budget
                    .received_mw_fast(pos.distance_sq(cell.position), self.shadow_lin[u * n + c]);
                self.rx_mw[u * n + c] = rx;
                if self.status.is_active(c) {
                    total += rx;
                }
            }
            self.active_total_mw[u] = total;
        }
    }

    /// Recomputes only the active-power totals (after on/off changes).
    pub(crate) fn refresh_totals(&mut self) {
        let n = self.n_cells();
        for u in 0..self.ues.len() {
            self.active_total_mw[u] = (0..n)
                .filter(|&c| self.status.is_active(c))
                .map(|c| self.rx_mw[u * n + c])
                .sum();
        }
    }

    /// Strongest active cell for `ue`, excluding `skip`; ties go to the
    /// lower cell id.
    fn strongest_active(&self, ue: usize, skip: Option<usize>) -> Option<usize> {
        let n = self.n_cells();
        let mut best: Option<(usize, f64)> = None;
        for c in 0..n {
            if !self.status.is_active(c) || Some(c) == skip {
                continue;
            }
            let rx = self.rx_mw[ue * n + c];
            if best.is_none_or(|(_, b)| rx > b) {
                best = Some((c, rx));
            }
        }
        best.map(|(c, _)| c)
    }

    fn attach(&mut self, ue: usize, cell: Option<usize>) {
        let u = &mut self.ues[ue];
        u.serving = cell;
        if let Some(c) = cell {
            u.home_cell = c;
        }
    }

    /// Immediately attaches every UE without an active serving cell to its
    /// best active cell; UEs stay detached when every cell is off.
    pub fn reattach_orphans(&mut self) {
        for u in 0..self.ues.len() {
            let orphan = match self.ues[u].serving {
                Some(c) => !self.status.is_active(c),
                None => true,
            };
            if orphan {
                let target = self.strongest_active(u, None);
                self.ues[u].handover = HandoverState::default();
                self.attach(u, target);
            }
        }
    }

    /// One slot of dynamic-TTT handover evaluation for every UE.
    pub(crate) fn handover_pass(&mut self, dt: f64) {
        for u in 0..self.ues.len() {
            let serving = self.ues[u].serving.filter(|&c| self.status.is_active(c));
            let mut cands: [CellSinr; 2] = [CellSinr { cell_id: 0, sinr_db: 0.0 }; 2];
            let mut k = 0;
            if let Some(s) = serving {
                cands[k] = CellSinr { cell_id: s, sinr_db: self.hypothetical_sinr(u, s) };
                k += 1;
            }
            if let Some(t) = self.strongest_active(u, serving) {
                cands[k] = CellSinr { cell_id: t, sinr_db: self.hypothetical_sinr(u, t) };
                k += 1;
            }
            let params = &self.handover_params;
            let mut state = std::mem::take(&mut self.ues[u].handover);
            let event = evaluate_handover(&mut state, self.ues[u].serving, &cands[..k], params, dt);
            self.ues[u].handover = state;
            match event {
                Some(ev) => {
                    debug_assert!(ev.kind == HandoverKind::Triggered || serving.is_none());
                    self.attach(u, Some(ev.target));
                }
                None if k == 0 => self.attach(u, None),
                None => {}
            }
        }
    }
}
