//! Policy-in-the-loop evaluation, paired comparison against Always On,
//! empirical CDFs and CSV output.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Placement, ScenarioConfig};
use crate::error::{Error, Result};
use crate::kpm::KpmReport;
use crate::norm::NormalizerSet;
use crate::policy::{AlwaysOn, Policy};
use crate::reward::{compute_reward, RewardWeights};
use crate::sim::{run_with_reward, NullSink, RunSummary};
use crate::world::build_scenario;

pub const ALWAYS_ON: &str = "always-on";

/// Builds a fresh policy for the run with the given seed.
pub type PolicyFactory = Arc<dyn Fn(u64) -> Result<Box<dyn Policy + Send>> + Send + Sync>;

#[derive(Clone)]
pub struct NamedPolicy {
    pub name: String,
    pub factory: PolicyFactory,
}

impl NamedPolicy {
    pub fn new(name: impl Into<String>, factory: PolicyFactory) -> Self {
        NamedPolicy {
            name: name.into(),
            factory,
        }
    }

    pub fn always_on() -> Self {
        NamedPolicy::new(ALWAYS_ON, Arc::new(|_| Ok(Box::new(AlwaysOn) as Box<dyn Policy + Send>)))
    }
}

#[derive(Clone)]
pub struct EvalConfig {
    pub scenario: ScenarioConfig,
    pub n_runs: usize,
    pub seed_base: u64,
    /// Seeds used to build the training corpus; evaluation refuses overlap.
    pub excluded_seeds: Vec<u64>,
    /// When set, episode returns are recorded under these weights.
    pub reward: Option<(RewardWeights, Arc<NormalizerSet>)>,
}

impl EvalConfig {
    pub fn new(n_runs: usize, seed_base: u64) -> Self {
        EvalConfig {
            scenario: ScenarioConfig {
                placement: Placement::Uniform,
                ..Default::default()
            },
            n_runs,
            seed_base,
            excluded_seeds: Vec::new(),
            reward: None,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_runs as u64).map(|i| self.seed_base.wrapping_add(i)).collect()
    }
}

/// Per-interval samples of the four headline metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rlf: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn metric(&self, name: &str) -> Option<&[f64]> {
        match name {
            "throughput" => Some(&self.rho),
            "energy" => Some(&self.gamma),
            "rlf" => Some(&self.rlf),
            "activation_cost" => Some(&self.delta),
            _ => None,
        }
    }

    pub const METRICS: [&'static str; 4] = ["throughput", "energy", "rlf", "activation_cost"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub name: String,
    pub samples: Samples,
    pub mean_throughput: f64,
    pub mean_energy: f64,
    pub mean_rlf: f64,
    pub mean_delta: f64,
    /// `(throughput %, energy %)` of Always On under the same seeds
    pub pct_vs_always_on: (f64, f64),
    pub returns: Vec<f64>,
    pub runs: Vec<RunSummary>,
}

impl PolicyEval {
    pub fn mean_return(&self) -> Option<f64> {
        (!self.returns.is_empty()).then(|| self.returns.iter().sum::<f64>() / self.returns.len() as f64)
    }

    /// Population standard deviation of episode returns.
    pub fn std_return(&self) -> Option<f64> {
        let m = self.mean_return()?;
        Some((self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / self.returns.len() as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyEval>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn pct(x: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        100.0 * (x / reference)
    } else {
        0.0
    }
}

fn evaluate_one(policy: &NamedPolicy, cfg: &EvalConfig, seeds: &[u64]) -> Result<PolicyEval> {
    let reward_fn = cfg.reward.as_ref().map(|(w, n)| {
        let (w, n) = (w.clone(), n.clone());
        move |r: &KpmReport| -> Result<f64> { Ok(compute_reward(r, &w, &n)?.total) }
    });
    let runs: Vec<RunSummary> = seeds
        .par_iter()
        .map(|&seed| {
            let scenario = ScenarioConfig {
                seed,
                ..cfg.scenario.clone()
            };
            let world = build_scenario(&scenario)?;
            let mut p = (policy.factory)(seed)?;
            let f = reward_fn.as_ref().map(|f| f as &(dyn Fn(&KpmReport) -> Result<f64> + Sync));
            run_with_reward(world, &mut p, &mut NullSink, f)
        })
        .collect::<Result<_>>()?;
    let mut samples = Samples::default();
    for r in &runs {
        for i in &r.intervals {
            samples.rho.push(i.rho);
            samples.gamma.push(i.gamma);
            samples.rlf.push(i.rlf as f64);
            samples.delta.push(i.delta);
        }
    }
    Ok(PolicyEval {
        name: policy.name.clone(),
        mean_throughput: mean(&samples.rho),
        mean_energy: mean(&samples.gamma),
        mean_rlf: mean(&samples.rlf),
        mean_delta: mean(&samples.delta),
        samples,
        pct_vs_always_on: (0.0, 0.0),
        returns: runs.iter().map(RunSummary::episode_return).filter(|_| cfg.reward.is_some()).collect(),
        runs,
    })
}

/// Runs every policy on the same seeds. Always On is evaluated as the
/// reference and listed first even when not requested.
pub fn evaluate(policies: &[NamedPolicy], cfg: &EvalConfig) -> Result<EvalReport> {
    let seeds = cfg.seeds();
    let excluded: BTreeSet<u64> = cfg.excluded_seeds.iter().copied().collect();
    if let Some(s) = seeds.iter().find(|s| excluded.contains(s)) {
        return Err(Error::config("seed_base", format!("evaluation seed {s} also appears in the training corpus")));
    }
    info!(
        "evaluating {} policies on seeds {}..{} (disjoint from {} corpus seeds)",
        policies.len(),
        cfg.seed_base,
        cfg.seed_base + cfg.n_runs as u64,
        excluded.len()
    );
    let mut list: Vec<NamedPolicy> = Vec::with_capacity(policies.len() + 1);
    if !policies.iter().any(|p| p.name == ALWAYS_ON) {
        list.push(NamedPolicy::always_on());
    }
    list.extend(policies.iter().cloned());
    let mut evals = list
        .iter()
        .map(|p| evaluate_one(p, cfg, &seeds))
        .collect::<Result<Vec<_>>>()?;
    let reference = evals
        .iter()
        .find(|e| e.name == ALWAYS_ON)
        .map(|e| (e.mean_throughput, e.mean_energy))
        .expect("always-on is evaluated");
    for e in &mut evals {
        e.pct_vs_always_on = (pct(e.mean_throughput, reference.0), pct(e.mean_energy, reference.1));
    }
    evals.sort_by_key(|e| e.name != ALWAYS_ON);
    Ok(EvalReport {
        n_runs: cfg.n_runs,
        seeds,
        policies: evals,
    })
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<&PolicyEval> {
        self.policies.iter().find(|p| p.name == name)
    }

    /// Trade-off table: one row per policy.
    pub fn tradeoff_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy",
            "throughput_pct",
            "energy_pct",
            "mean_throughput_bytes",
            "mean_energy",
            "mean_rlf",
            "mean_activation_cost",
            "mean_return",
        ])
        .expect("in-memory write");
        for p in &self.policies {
            let ret = p.mean_return().map(|r| r.to_string()).unwrap_or_default();
            w.write_record([
                p.name.clone(),
                p.pct_vs_always_on.0.to_string(),
                p.pct_vs_always_on.1.to_string(),
                p.mean_throughput.to_string(),
                p.mean_energy.to_string(),
                p.mean_rlf.to_string(),
                p.mean_delta.to_string(),
                ret,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub metric: String,
    pub values: Vec<f64>,
    pub ordinates: Vec<f64>,
}

/// Empirical CDF. Exact by default (one point per distinct value); with
/// `bins`, evaluated at the upper edges of equal-width bins.
pub fn emit_cdf(metric: &str, samples: &[f64], bins: Option<usize>) -> Result<CdfTable> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("no samples for the {metric} CDF")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let below = |x: f64| sorted.partition_point(|&v| v <= x) as f64 / n;
    let values: Vec<f64> = match bins {
        Some(b) if b > 0 => {
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            (1..=b).map(|i| if i == b { hi } else { lo + (hi - lo) * i as f64 / b as f64 }).collect()
        }
        _ => {
            let mut v = sorted.clone();
            v.dedup();
            v
        }
    };
    let ordinates = values.iter().map(|&x| below(x)).collect();
    Ok(CdfTable {
        metric: metric.to_string(),
        values,
        ordinates,
    })
}

impl CdfTable {
    /// Empirical CDF at `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.values.partition_point(|&v| v <= x);
        if i == 0 {
            0.0
        } else {
            self.ordinates[i - 1]
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},cdf\n", self.metric);
        for (v, o) in self.values.iter().zip(&self.ordinates) {
            let _ = writeln!(s, "{v},{o}");
        }
        s
    }
}
