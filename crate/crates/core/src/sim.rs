//! Slot-level engine and the control loop.
//!
//! Within a slot the order is fixed: mobility, link refresh and handover,
//! traffic arrival, scheduling, KPM accumulation. At every control boundary
//! the latest report is observed, the policy is queried and its action is
//! applied before the next interval starts. A 10 s run at 100 ms has exactly
//! 100 boundaries (t = 0 s … 9.9 s) and therefore 100 policy invocations.

use serde::{Deserialize, Serialize};

use crate::control::{Action, TransitionReport};
use crate::error::{Error, Result};
use crate::kpm::{thr_energy_ratio, CellKpm, KpmReport};
use crate::policy::{Policy, PolicyContext};
use crate::radio::{bits_per_prb, is_rlf, schedule_slot, select_mcs, CellRadioReport, UeDemand};
use crate::traffic::INFINITE_BACKLOG;
use crate::world::World;

/// Result of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub transitions: TransitionReport,
    /// KPMs measured over the interval that just ran.
    pub report: KpmReport,
}

pub struct Simulation {
    world: World,
    counters: Vec<CellRadioReport>,
    rr_offset: Vec<usize>,
    interval_delta: Vec<f64>,
    interval_active: Vec<bool>,
    observation: KpmReport,
    step: usize,
    n_steps: usize,
    demands: Vec<UeDemand>,
}

impl Simulation {
    pub fn new(world: World) -> Self {
        let n = world.n_cells();
        let n_steps = world.config.n_intervals();
        let mut sim = Simulation {
            counters: (0..n).map(CellRadioReport::new).collect(),
            rr_offset: vec![0; n],
            interval_delta: vec![0.0; n],
            interval_active: world.status.active_flags(),
            observation: KpmReport::default(),
            step: 0,
            n_steps,
            demands: Vec::new(),
            world,
        };
        sim.observation = sim.build_report(0);
        sim
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Report visible at the current boundary; before the first interval
    /// it carries zero counters and the initial attachment snapshot.
    pub fn observation(&self) -> &KpmReport {
        &self.observation
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_steps
    }

    /// Applies `action` at the current boundary, then runs one interval.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Contract("simulation already finished".into()));
        }
        let now = self.world.now();
        let transitions = self.world.status.apply_action(action, now)?;
        if !transitions.is_empty() {
            self.world.refresh_totals();
            self.world.reattach_orphans();
        }
        let n = self.world.n_cells();
        for c in 0..n {
            self.interval_delta[c] = self.world.status.switching_cost(c, now);
            self.interval_active[c] = self.world.status.is_active(c);
            self.counters[c].reset();
        }
        for _ in 0..self.world.clock.slots_per_control_interval {
            self.slot();
        }
        self.step += 1;
        let report = self.build_report(self.step);
        self.observation = report.clone();
        Ok(StepOutcome { transitions, report })
    }

    fn slot(&mut self) {
        let dt = self.world.config.slot_duration;
        let threshold = self.world.config.sinr_rlf_threshold;

        // mobility
        {
            let w = &mut self.world;
            let region = w.region;
            for ue in &mut w.ues {
                ue.motion.step(dt, &region, &mut w.mobility_rng);
            }
        }
        self.world.refresh_links();
        self.world.handover_pass(dt);

        // traffic arrival
        for u in 0..self.world.ues.len() {
            let connected = self.world.ues[u].serving.is_some()
                && !is_rlf(self.world.serving_sinr(u), threshold);
            let w = &mut self.world;
            let ue = &mut w.ues[u];
            let arrivals = ue.traffic.generate_arrivals(dt, &mut w.traffic_rng);
            if arrivals == INFINITE_BACKLOG {
                ue.backlog = INFINITE_BACKLOG;
            } else if !connected && !ue.class.queues_when_disconnected() {
                ue.backlog = 0;
            } else {
                ue.backlog = ue.backlog.saturating_add(arrivals);
            }
        }

        // scheduling and accumulation
        let cfg = &self.world.config;
        for c in 0..self.world.n_cells() {
            if !self.world.status.is_active(c) {
                continue;
            }
            self.demands.clear();
            for (u, ue) in self.world.ues.iter().enumerate() {
                if ue.serving != Some(c) || ue.backlog == 0 {
                    continue;
                }
                let sinr = self.world.hypothetical_sinr(u, c);
                if is_rlf(sinr, threshold) {
                    continue;
                }
                let mcs = select_mcs(sinr);
                self.demands.push(UeDemand {
                    ue_id: u,
                    backlog: ue.backlog,
                    mcs,
                    bits_per_prb: bits_per_prb(mcs, cfg),
                });
            }
            let sched = schedule_slot(
                c,
                &self.demands,
                cfg.n_prb,
                self.rr_offset[c],
                cfg.phy_overhead_fraction,
            );
            self.rr_offset[c] = self.rr_offset[c].wrapping_add(1);
            for &(u, _, bytes) in &sched.served {
                let ue = &mut self.world.ues[u];
                if ue.backlog != INFINITE_BACKLOG {
                    ue.backlog -= bytes;
                }
            }
            self.counters[c].accumulate(&sched.delta);
        }
        self.world.clock.current_slot += 1;
    }

    fn build_report(&self, t: usize) -> KpmReport {
        let w = &self.world;
        let n = w.n_cells();
        let threshold = w.config.sinr_rlf_threshold;
        let mut accounted = vec![0u32; n];
        let mut rlf = vec![0u32; n];
        let mut attached = vec![0u32; n];
        for (u, ue) in w.ues.iter().enumerate() {
            let cell = ue.serving.unwrap_or(ue.home_cell);
            accounted[cell] += 1;
            if ue.serving.is_some() {
                attached[cell] += 1;
            }
            if ue.serving.is_none() || is_rlf(w.serving_sinr(u), threshold) {
                rlf[cell] += 1;
            }
        }
        let p_tx = w.config.tx_power_per_cell;
        let cells = (0..n)
            .map(|c| {
                let k = &self.counters[c];
                let gamma = crate::kpm::energy_of_cell(k.mac_pdu_count, p_tx);
                CellKpm {
                    rho: k.pdcp_bytes,
                    gamma,
                    thr_energy_ratio: thr_energy_ratio(k.pdcp_bytes, gamma),
                    rlf_count: rlf[c],
                    rlf_pct: if accounted[c] > 0 { rlf[c] as f64 / accounted[c] as f64 } else { 0.0 },
                    prb_count: k.prb_scheduled,
                    prb_pct: if k.prb_total > 0 { k.prb_scheduled as f64 / k.prb_total as f64 } else { 0.0 },
                    pdu_64qam: k.mac_pdu_64qam_count,
                    phy_bytes: k.phy_bytes,
                    delta_cost: self.interval_delta[c],
                    active: self.interval_active[c],
                    attached_ues: attached[c],
                }
            })
            .collect();
        KpmReport {
            t,
            cells,
            bs_on: self.interval_active.iter().filter(|&&a| a).count() as u32,
        }
    }
}

/// Everything observed at one control boundary.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub step: usize,
    /// seconds
    pub time: f64,
    pub observation: &'a KpmReport,
    pub action: Action,
    pub transitions: &'a TransitionReport,
    pub outcome: &'a KpmReport,
}

/// Receives every boundary record of a run.
pub trait ReportSink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<()>;
}

/// Sink that discards everything.
pub struct NullSink;

impl ReportSink for NullSink {
    fn record(&mut self, _rec: &StepRecord<'_>) -> Result<()> {
        Ok(())
    }
}

/// Sink that keeps full copies of every record.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub observations: Vec<KpmReport>,
    pub actions: Vec<Action>,
    pub transitions: Vec<TransitionReport>,
}

impl ReportSink for CollectSink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        self.observations.push(rec.observation.clone());
        self.actions.push(rec.action);
        self.transitions.push(rec.transitions.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTotals {
    pub t: usize,
    pub rho: f64,
    pub gamma: f64,
    pub rlf: u32,
    pub delta: f64,
    pub bs_on: u32,
}

impl IntervalTotals {
    pub fn of(r: &KpmReport) -> Self {
        IntervalTotals {
            t: r.t,
            rho: r.total_rho(),
            gamma: r.total_gamma(),
            rlf: r.total_rlf(),
            delta: r.total_delta(),
            bs_on: r.bs_on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub policy: String,
    pub n_steps: usize,
    pub n_ues: usize,
    pub intervals: Vec<IntervalTotals>,
    pub activations: usize,
    pub deactivations: usize,
    /// Per-interval reward, filled only when a reward function is supplied.
    pub rewards: Vec<f64>,
}

impl RunSummary {
    pub fn total_rho(&self) -> f64 {
        self.intervals.iter().map(|i| i.rho).sum()
    }

    pub fn total_gamma(&self) -> f64 {
        self.intervals.iter().map(|i| i.gamma).sum()
    }

    pub fn total_rlf(&self) -> u64 {
        self.intervals.iter().map(|i| i.rlf as u64).sum()
    }

    pub fn total_delta(&self) -> f64 {
        self.intervals.iter().map(|i| i.delta).sum()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

pub type RewardFn<'a> = &'a (dyn Fn(&KpmReport) -> Result<f64> + Sync);

/// Runs the whole scenario with `policy` in the loop.
pub fn run(world: World, policy: &mut dyn Policy, sink: &mut dyn ReportSink) -> Result<RunSummary> {
    run_with_reward(world, policy, sink, None)
}

pub fn run_with_reward(
    world: World,
    policy: &mut dyn Policy,
    sink: &mut dyn ReportSink,
    reward: Option<RewardFn<'_>>,
) -> Result<RunSummary> {
    let seed = world.config.seed;
    let n_ues = world.ues.len();
    let mut sim = Simulation::new(world);
    let mut summary = RunSummary {
        seed,
        policy: policy.name(),
        n_steps: sim.n_steps(),
        n_ues,
        intervals: Vec::with_capacity(sim.n_steps()),
        activations: 0,
        deactivations: 0,
        rewards: Vec::new(),
    };
    while !sim.is_done() {
        let step = sim.step_index();
        let time = sim.world().now();
        let observation = sim.observation().clone();
        let action = policy
            .decide(&PolicyContext {
                step,
                time,
                report: &observation,
                world: sim.world(),
            })
            .map_err(|e| Error::Policy {
                step,
                cause: e.to_string(),
            })?;
        let out = sim.step(action)?;
        summary.activations += out.transitions.activations().count();
        summary.deactivations += out.transitions.deactivated().count();
        summary.intervals.push(IntervalTotals::of(&out.report));
        if let Some(f) = reward {
            summary.rewards.push(f(&out.report)?);
        }
        sink.record(&StepRecord {
            step,
            time,
            observation: &observation,
            action,
            transitions: &out.transitions,
            outcome: &out.report,
        })?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::policy::{AlwaysOn, ConstantPolicy};
    use crate::world::build_scenario;

    struct Counting(usize);
    impl Policy for Counting {
        fn name(&self) -> String {
            "counting".into()
        }
        fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
            self.0 += 1;
            Ok(Action::all_on(ctx.world.n_cells()))
        }
    }

    #[test]
    fn hundred_invocations_for_ten_seconds() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let mut p = Counting(0);
        let s = run(w, &mut p, &mut NullSink).unwrap();
        assert_eq!(p.0, 100);
        assert_eq!(s.intervals.len(), 100);
        assert_eq!(s.intervals[0].t, 1);
        assert_eq!(s.intervals[99].t, 100);
    }

    #[test]
    fn zero_duration_runs_nothing() {
        let cfg = ScenarioConfig {
            sim_duration: 0.0,
            ..Default::default()
        };
        let mut p = Counting(0);
        let s = run(build_scenario(&cfg).unwrap(), &mut p, &mut NullSink).unwrap();
        assert_eq!(p.0, 0);
        assert!(s.intervals.is_empty());
    }

    #[test]
    fn identical_runs_serialize_identically() {
        let cfg = ScenarioConfig {
            seed: 77,
            ..Default::default()
        };
        let a = run(build_scenario(&cfg).unwrap(), &mut AlwaysOn, &mut NullSink).unwrap();
        let b = run(build_scenario(&cfg).unwrap(), &mut AlwaysOn, &mut NullSink).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.total_rho() > 0.0);
    }

    struct Failing;
    impl Policy for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn decide(&mut self, ctx: &PolicyContext<'_>) -> Result<Action> {
            if ctx.step == 3 {
                Err(Error::Contract("boom".into()))
            } else {
                Ok(Action::all_on(ctx.world.n_cells()))
            }
        }
    }

    #[test]
    fn policy_failure_reports_step() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        match run(w, &mut Failing, &mut NullSink) {
            Err(Error::Policy { step, cause }) => {
                assert_eq!(step, 3);
                assert!(cause.contains("boom"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_invariants_hold_under_random_masks() {
        let cfg = ScenarioConfig {
            seed: 5,
            sim_duration: 3.0,
            ..Default::default()
        };
        let mut sim = Simulation::new(build_scenario(&cfg).unwrap());
        let mut k = 0usize;
        while !sim.is_done() {
            let action = Action::from_index((k * 37 + 11) % 128, 7).unwrap();
            k += 1;
            let out = sim.step(action).unwrap();
            let r = &out.report;
            assert_eq!(r.bs_on as usize, action.active_count());
            let global_rlf = sim
                .world()
                .ues
                .iter()
                .enumerate()
                .filter(|&(u, ue)| ue.serving.is_none() || sim.world().serving_sinr(u) < -5.0)
                .count();
            assert_eq!(r.total_rlf() as usize, global_rlf);
            for (c, cell) in r.cells.iter().enumerate() {
                assert_eq!(cell.active, action.is_active(c));
                if !cell.active {
                    assert_eq!(cell.rho, 0);
                    assert_eq!(cell.gamma, 0.0);
                    assert_eq!(cell.attached_ues, 0);
                }
                assert!((0.0..=1.0).contains(&cell.rlf_pct));
                assert!((0.0..=1.0).contains(&cell.prb_pct));
                assert!((0.0..=1.0).contains(&cell.delta_cost));
                assert!(cell.pdu_64qam as f64 <= cell.gamma / cfg.tx_power_per_cell);
            }
            for ue in &sim.world().ues {
                if let Some(c) = ue.serving {
                    assert!(sim.world().status.is_active(c));
                }
            }
        }
    }

    #[test]
    fn all_off_puts_everyone_in_rlf() {
        let w = build_scenario(&ScenarioConfig::default()).unwrap();
        let mut sink = CollectSink::default();
        let s = run(w, &mut ConstantPolicy::new(Action::all_off(7)), &mut sink).unwrap();
        for i in &s.intervals {
            assert_eq!(i.rlf, 63);
            assert_eq!(i.rho, 0.0);
            assert_eq!(i.gamma, 0.0);
            assert_eq!(i.bs_on, 0);
        }
    }
}
