//! Non-learned cell activation policies: Always On, Random, and the
//! two-phase Static and Dynamic coverage heuristics.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::Action;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kpm::KpmReport;
use crate::rng::{stream_rng, SimRng, Stream};
use crate::world::World;

/// What a policy sees at a control boundary.
pub struct PolicyContext<'a> {
    pub step: usize,
    /// seconds
    pub time: f64,
    pub report: &'a KpmReport,
    /// Ground-truth snapshot; heuristics read UE positions and speeds.
    pub world: &'a World,
}

pub trait Policy {
    fn name(&self) -> String;
    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
        (**self).decide(ctx)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysOn;

impl Policy for AlwaysOn {
    fn name(&self) -> String {
        "always-on".into()
    }
    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
        Ok(Action::all_on(ctx.world.n_cells()))
    }
}

/// Applies the same mask at every boundary.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    action: Action,
}

impl ConstantPolicy {
    pub fn new(action: Action) -> Self {
        ConstantPolicy { action }
    }
}

impl Policy for ConstantPolicy {
    fn name(&self) -> String {
        if self.action.active_count() == 0 {
            "all-off".into()
        } else {
            format!("constant:{}", self.action.index())
        }
    }
    fn decide(&mut self, _ctx: &PolicyContext<'_>) -> Result<Action> {
        Ok(self.action)
    }
}

/// Once per `period` seconds draws `k ~ U{0..N}` and switches off a uniform
/// `k`-subset; the mask is held in between.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: SimRng,
    period: f64,
    current: Option<Action>,
    next_decision: f64,
    pub decisions: usize,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self::with_period(seed, 1.0)
    }

    pub fn with_period(seed: u64, period: f64) -> Self {
        RandomPolicy {
            rng: stream_rng(seed, Stream::Policy),
            period,
            current: None,
            next_decision: 0.0,
            decisions: 0,
        }
    }

    /// One draw: a uniform count, then a uniform subset of that size.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, n_cells: usize) -> (usize, Action) {
        let k = rng.random_range(0..=n_cells);
        let off = index::sample(rng, n_cells, k);
        let mut bits = vec![true; n_cells];
        for i in off.iter() {
            bits[i] = false;
        }
        (k, Action::from_bits(&bits))
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }
    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
        // Small tolerance absorbs float drift in boundary times.
        if self.current.is_none() || ctx.time + 1e-9 >= self.next_decision {
            let (_, a) = Self::draw(&mut self.rng, ctx.world.n_cells());
            self.current = Some(a);
            self.decisions += 1;
            self.next_decision = ctx.time + self.period;
        }
        Ok(self.current.expect("set above"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub n_on_p1: usize,
    pub n_on_p2: usize,
    pub n_off: usize,
    /// dB
    pub sinr_target: i32,
    /// meters
    pub radius: u32,
}

impl HeuristicParams {
    pub fn new(n_on_p1: usize, n_on_p2: usize, n_off: usize) -> Self {
        HeuristicParams {
            n_on_p1,
            n_on_p2,
            n_off,
            sinr_target: 13,
            radius: 2000,
        }
    }

    pub fn validate(&self, n_cells: usize) -> Result<()> {
        if self.n_on_p1 + self.n_on_p2 + self.n_off != n_cells {
            return Err(Error::config(
                "heuristic",
                format!(
                    "({}, {}, {}) does not sum to {n_cells} cells",
                    self.n_on_p1, self.n_on_p2, self.n_off
                ),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for HeuristicParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.n_on_p1, self.n_on_p2, self.n_off)
    }
}

impl FromStr for HeuristicParams {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("heuristic parameters `{s}`")))?;
        match parts.as_slice() {
            [a, b, c] => Ok(HeuristicParams::new(*a, *b, *c)),
            _ => Err(Error::Parse(format!("expected three counts, got `{s}`"))),
        }
    }
}

/// Plain-data view of what the heuristics rank on.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingInput {
    pub cells: Vec<Point>,
    /// `(position, speed)`
    pub ues: Vec<(Point, f64)>,
    /// `sinr[u][c]`: SINR (dB) of UE `u` if served by cell `c`, interfered
    /// by the currently active cells other than `c`.
    pub sinr: Vec<Vec<f64>>,
}

impl RankingInput {
    pub fn from_world(world: &World) -> Self {
        RankingInput {
            cells: world.cells.iter().map(|c| c.position).collect(),
            ues: world.ues.iter().map(|u| (u.position(), u.speed())).collect(),
            sinr: (0..world.ues.len())
                .map(|u| (0..world.n_cells()).map(|c| world.hypothetical_sinr(u, c)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase2Metric {
    /// distance to the closest UE
    Distance,
    /// shortest UE travel time: distance / speed
    TravelTime,
}

/// Number of UEs within `radius` of each cell whose SINR to it meets the
/// target.
pub fn coverage_counts(input: &RankingInput, params: &HeuristicParams) -> Vec<usize> {
    let r2 = (params.radius as f64).powi(2);
    let target = params.sinr_target as f64;
    (0..input.cells.len())
        .map(|c| {
            input
                .ues
                .iter()
                .enumerate()
                .filter(|&(u, &(pos, _))| {
                    pos.distance_sq(input.cells[c]) <= r2 && input.sinr[u][c] >= target
                })
                .count()
        })
        .collect()
}

/// Phase-2 score per cell (lower is better); `+inf` with no usable UE.
pub fn phase2_scores(input: &RankingInput, metric: Phase2Metric) -> Vec<f64> {
    input
        .cells
        .iter()
        .map(|&cell| {
            input
                .ues
                .iter()
                .map(|&(pos, speed)| {
                    let d = pos.distance(cell);
                    match metric {
                        Phase2Metric::Distance => d,
                        Phase2Metric::TravelTime if d == 0.0 => 0.0,
                        Phase2Metric::TravelTime if speed > 0.0 => d / speed,
                        Phase2Metric::TravelTime => f64::INFINITY,
                    }
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Two-phase activation: the `n_on_p1` best-covering cells, then the
/// `n_on_p2` best phase-2 scores among the rest. Ties go to the lower id.
pub fn heuristic_mask(input: &RankingInput, params: &HeuristicParams, metric: Phase2Metric) -> Result<Action> {
    let n = input.cells.len();
    params.validate(n)?;
    let counts = coverage_counts(input, params);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut on = vec![false; n];
    for &c in &order[..params.n_on_p1] {
        on[c] = true;
    }
    let scores = phase2_scores(input, metric);
    let mut rest: Vec<usize> = (0..n).filter(|&c| !on[c]).collect();
    rest.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &c in &rest[..params.n_on_p2] {
        on[c] = true;
    }
    Ok(Action::from_bits(&on))
}

#[derive(Debug, Clone, Copy)]
pub struct HeuristicPolicy {
    pub params: HeuristicParams,
    pub metric: Phase2Metric,
}

impl HeuristicPolicy {
    pub fn static_policy(params: HeuristicParams) -> Self {
        HeuristicPolicy {
            params,
            metric: Phase2Metric::Distance,
        }
    }

    pub fn dynamic_policy(params: HeuristicParams) -> Self {
        HeuristicPolicy {
            params,
            metric: Phase2Metric::TravelTime,
        }
    }
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> String {
        let kind = match self.metric {
            Phase2Metric::Distance => "static",
            Phase2Metric::TravelTime => "dynamic",
        };
        format!("{kind}:{}", self.params)
    }
    fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
        heuristic_mask(&RankingInput::from_world(ctx.world), &self.params, self.metric)
    }
}

/// Named baseline, parseable from `always-on`, `all-off`, `random`,
/// `static:4,2,1` or `dynamic:3,2,2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    AlwaysOn,
    AllOff,
    Random,
    Static(HeuristicParams),
    Dynamic(HeuristicParams),
}

impl Baseline {
    /// Fresh policy instance for one run.
    pub fn instantiate(&self, n_cells: usize, seed: u64) -> Result<Box<dyn Policy + Send>> {
        Ok(match *self {
            Baseline::AlwaysOn => Box::new(AlwaysOn),
            Baseline::AllOff => Box::new(ConstantPolicy::new(Action::all_off(n_cells))),
            Baseline::Random => Box::new(RandomPolicy::new(seed)),
            Baseline::Static(p) => {
                p.validate(n_cells)?;
                Box::new(HeuristicPolicy::static_policy(p))
            }
            Baseline::Dynamic(p) => {
                p.validate(n_cells)?;
                Box::new(HeuristicPolicy::dynamic_policy(p))
            }
        })
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::AlwaysOn => write!(f, "always-on"),
            Baseline::AllOff => write!(f, "all-off"),
            Baseline::Random => write!(f, "random"),
            Baseline::Static(p) => write!(f, "static:{p}"),
            Baseline::Dynamic(p) => write!(f, "dynamic:{p}"),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "always-on" => return Ok(Baseline::AlwaysOn),
            "all-off" => return Ok(Baseline::AllOff),
            "random" => return Ok(Baseline::Random),
            _ => {}
        }
        if let Some(p) = s.strip_prefix("static:") {
            return Ok(Baseline::Static(p.parse()?));
        }
        if let Some(p) = s.strip_prefix("dynamic:") {
            return Ok(Baseline::Dynamic(p.parse()?));
        }
        Err(Error::UnknownName(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::sim::{run, NullSink};
    use crate::world::build_scenario;

    fn toy(ues: Vec<(Point, f64)>, sinr: Vec<Vec<f64>>) -> RankingInput {
        RankingInput {
            cells: vec![Point::new(0.0, 0.0), Point::new(1000.0, 0.0), Point::new(0.0, 1000.0)],
            ues,
            sinr,
        }
    }

    #[test]
    fn clustered_cell_ranks_first() {
        // Three cells, every UE sits next to cell 2 and only it covers them.
        let ues: Vec<(Point, f64)> = (0..5).map(|i| (Point::new(5.0 * i as f64, 990.0), 3.0)).collect();
        let sinr = vec![vec![-3.0, -8.0, 20.0]; 5];
        let input = toy(ues, sinr);
        assert_eq!(coverage_counts(&input, &HeuristicParams::new(1, 1, 1)), vec![0, 0, 5]);
        let a = heuristic_mask(&input, &HeuristicParams::new(1, 0, 2), Phase2Metric::Distance).unwrap();
        assert_eq!(a.bits(), vec![false, false, true]);
        // 7-cell flavour of the same check, (4,2,1)
        let mut cells: Vec<Point> = (0..7).map(|i| Point::new(1000.0 * i as f64, 0.0)).collect();
        cells[5] = Point::new(0.0, 5000.0);
        let ues: Vec<(Point, f64)> = (0..6).map(|i| (Point::new(3.0 * i as f64, 5000.0), 2.0)).collect();
        let sinr = vec![{ let mut v = vec![0.0; 7]; v[5] = 25.0; v }; 6];
        let input = RankingInput { cells, ues, sinr };
        let counts = coverage_counts(&input, &HeuristicParams::new(4, 2, 1));
        assert_eq!(counts[5], 6);
        assert!(counts.iter().enumerate().all(|(i, &c)| i == 5 || c == 0));
    }

    #[test]
    fn no_ues_breaks_ties_by_id() {
        let input = toy(vec![], vec![]);
        let a = heuristic_mask(&input, &HeuristicParams::new(1, 1, 1), Phase2Metric::TravelTime).unwrap();
        assert_eq!(a.bits(), vec![true, true, false]);
    }

    #[test]
    fn travel_time_uses_fastest_ue() {
        let ues = vec![(Point::new(100.0, 0.0), 2.0), (Point::new(-100.0, 0.0), 4.0)];
        let input = toy(ues, vec![vec![0.0; 3]; 2]);
        let t = phase2_scores(&input, Phase2Metric::TravelTime);
        assert_eq!(t[0], 25.0);
    }

    #[test]
    fn params_must_sum_to_cells() {
        assert!(HeuristicParams::new(4, 2, 1).validate(7).is_ok());
        assert!(HeuristicParams::new(4, 2, 2).validate(7).is_err());
        assert_eq!("3,2,2".parse::<HeuristicParams>().unwrap(), HeuristicParams::new(3, 2, 2));
        assert_eq!("static:4,2,1".parse::<Baseline>().unwrap(), Baseline::Static(HeuristicParams::new(4, 2, 1)));
        assert!("greedy".parse::<Baseline>().is_err());
    }

    #[test]
    fn heuristic_popcount_matches_params() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let input = RankingInput::from_world(&w);
        for p in [(4, 2, 1), (3, 2, 2), (2, 2, 3), (0, 0, 7), (7, 0, 0)] {
            let params = HeuristicParams::new(p.0, p.1, p.2);
            for metric in [Phase2Metric::Distance, Phase2Metric::TravelTime] {
                let a = heuristic_mask(&input, &params, metric).unwrap();
                assert_eq!(a.active_count(), 7 - p.2);
            }
        }
    }

    #[test]
    fn always_on_never_switches() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let s = run(w, &mut AlwaysOn, &mut NullSink).unwrap();
        assert_eq!(s.activations, 0);
        assert!(s.intervals.iter().all(|i| i.bs_on == 7 && i.delta == 0.0));
    }

    #[test]
    fn random_decides_once_per_second() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let mut p = RandomPolicy::new(3);
        let mut sink = crate::sim::CollectSink::default();
        run(w, &mut p, &mut sink).unwrap();
        assert_eq!(p.decisions, 10);
        for chunk in sink.actions.chunks(10) {
            assert!(chunk.iter().all(|&a| a == chunk[0]));
        }
    }

    #[test]
    fn random_k_zero_is_all_on() {
        // find a seed whose first draw is k = 0
        for seed in 0..1000 {
            let mut rng = stream_rng(seed, Stream::Policy);
            let (k, a) = RandomPolicy::draw(&mut rng, 7);
            if k == 0 {
                assert_eq!(a, Action::all_on(7));
                return;
            }
        }
        panic!("no k = 0 draw in 1000 seeds");
    }

    #[test]
    fn random_count_is_uniform_chi_square() {
        let mut rng = stream_rng(2024, Stream::Policy);
        let n = 10_000;
        let mut hist = [0usize; 8];
        for _ in 0..n {
            let (k, a) = RandomPolicy::draw(&mut rng, 7);
            assert_eq!(a.active_count(), 7 - k);
            hist[k] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 95th percentile of chi-square with 7 degrees of freedom
        assert!(chi2 < 14.067, "chi2 = {chi2}, hist = {hist:?}");
    }
}
