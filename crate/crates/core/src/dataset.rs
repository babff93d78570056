//! Offline corpus: a seeded campaign of baseline runs written as raw CSV,
//! and the replay of those rows as normalized transitions.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Placement, ScenarioConfig};
use crate::control::Action;
use crate::error::{Error, Result};
use crate::io::{sha256_file, sha256_hex, write_atomic};
use crate::kpm::{feature_names, state_len, KpmReport, StateVector};
use crate::norm::NormalizerSet;
use crate::policy::Baseline;
use crate::reward::{compute_reward, RewardWeights};
use crate::rng::{stream_rng, Stream};
use crate::sim::{run, ReportSink, StepRecord};
use crate::world::build_scenario;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const META_COLUMNS: [&str; 6] = ["run_id", "seed", "policy", "placement", "step", "t"];
const TAIL_COLUMNS: [&str; 5] = ["action", "rho_total", "gamma_total", "rlf_total", "delta_total"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    /// Baseline names, e.g. `always-on`, `random`, `static:4,2,1`.
    pub policies: Vec<String>,
    pub placements: Vec<Placement>,
    pub runs_per_combo: usize,
    pub seed_base: u64,
    /// Scenario overrides; `seed` and `placement` are set per run.
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub run_id: usize,
    pub seed: u64,
    pub policy: Baseline,
    pub placement: Placement,
}

impl CampaignSpec {
    /// Eight baselines over four placements, about 3000 runs in total.
    pub fn full_scale() -> Self {
        let mut policies = vec!["always-on".to_string(), "random".to_string()];
        for kind in ["static", "dynamic"] {
            for p in ["4,2,1", "3,2,2", "2,2,3"] {
                policies.push(format!("{kind}:{p}"));
            }
        }
        CampaignSpec {
            policies,
            placements: vec![
                Placement::Uniform,
                Placement::NonUniform(1),
                Placement::NonUniform(2),
                Placement::NonUniform(3),
            ],
            runs_per_combo: 94,
            seed_base: 1_000_000,
            scenario: ScenarioConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: CampaignSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("campaign spec serializes")
    }

    pub fn baselines(&self) -> Result<Vec<Baseline>> {
        self.policies.iter().map(|p| p.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy is required"));
        }
        if self.placements.is_empty() {
            return Err(Error::config("placements", "at least one placement is required"));
        }
        let n = self.scenario.n_gnb;
        for b in self.baselines()? {
            if let Baseline::Static(p) | Baseline::Dynamic(p) = b {
                p.validate(n)?;
            }
        }
        for &placement in &self.placements {
            ScenarioConfig {
                placement,
                ..self.scenario.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn total_runs(&self) -> usize {
        self.policies.len() * self.placements.len() * self.runs_per_combo
    }

    /// Policy-major, then placement, then repetition; seed is
    /// `seed_base + run_id`, so seeds are pairwise distinct.
    pub fn plan(&self) -> Result<Vec<RunPlan>> {
        let baselines = self.baselines()?;
        let mut plans = Vec::with_capacity(self.total_runs());
        for &policy in &baselines {
            for &placement in &self.placements {
                for _ in 0..self.runs_per_combo {
                    let run_id = plans.len();
                    plans.push(RunPlan {
                        run_id,
                        seed: self.seed_base.wrapping_add(run_id as u64),
                        policy,
                        placement,
                    });
                }
            }
        }
        Ok(plans)
    }

    pub fn scenario_for(&self, plan: &RunPlan) -> ScenarioConfig {
        ScenarioConfig {
            seed: plan.seed,
            placement: plan.placement,
            ..self.scenario.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: usize,
    pub seed: u64,
    pub policy: String,
    pub placement: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub rows: usize,
    pub file: String,
    pub sha256: String,
    pub transitions_file: String,
    pub transitions_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub schema_version: u32,
    pub n_cells: usize,
    pub spec: CampaignSpec,
    pub runs: Vec<RunEntry>,
}

impl CampaignManifest {
    pub fn failed(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(|r| r.status != RunStatus::Ok)
    }

    pub fn total_rows(&self) -> usize {
        self.runs.iter().map(|r| r.rows).sum()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CampaignManifest = serde_json::from_str(&text)?;
        if m.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(Error::Corruption {
                path: path.into(),
                reason: format!("unsupported schema version {}", m.schema_version),
            });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

struct CsvSink {
    plan_meta: [String; 4],
    control_period: f64,
    rows: csv::Writer<Vec<u8>>,
    transitions: csv::Writer<Vec<u8>>,
    n_rows: usize,
}

impl CsvSink {
    fn new(plan: &RunPlan, n_cells: usize, control_period: f64) -> Result<Self> {
        let mut rows = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = META_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(feature_names(n_cells))
            .chain(TAIL_COLUMNS.iter().map(|s| s.to_string()))
            .collect();
        rows.write_record(&header)?;
        let mut transitions = csv::Writer::from_writer(Vec::new());
        transitions.write_record(["step", "cell_id", "t", "direction", "td_ms"])?;
        Ok(CsvSink {
            plan_meta: [
                plan.run_id.to_string(),
                plan.seed.to_string(),
                plan.policy.to_string(),
                plan.placement.to_string(),
            ],
            control_period,
            rows,
            transitions,
            n_rows: 0,
        })
    }

    fn finish(self) -> Result<(Vec<u8>, Vec<u8>, usize)> {
        let into = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Error::Contract(e.to_string()));
        Ok((into(self.rows)?, into(self.transitions)?, self.n_rows))
    }
}

impl ReportSink for CsvSink {
    fn record(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        let obs = rec.observation;
        let mut row: Vec<String> = self.plan_meta.to_vec();
        row.push(rec.step.to_string());
        row.push(fmt_f64(rec.step as f64 * self.control_period));
        row.extend(obs.flatten().into_iter().map(fmt_f64));
        row.push(rec.action.index().to_string());
        row.push(fmt_f64(obs.total_rho()));
        row.push(fmt_f64(obs.total_gamma()));
        row.push(obs.total_rlf().to_string());
        row.push(fmt_f64(obs.total_delta()));
        self.rows.write_record(&row)?;
        self.n_rows += 1;
        for tr in &rec.transitions.transitions {
            self.transitions.write_record([
                rec.step.to_string(),
                tr.cell_id.to_string(),
                fmt_f64(tr.t),
                tr.direction.to_string(),
                fmt_f64(tr.td_ms),
            ])?;
        }
        Ok(())
    }
}

fn run_file_names(run_id: usize) -> (String, String) {
    (
        format!("runs/run_{run_id:05}.csv"),
        format!("runs/run_{run_id:05}_transitions.csv"),
    )
}

fn execute_run(spec: &CampaignSpec, plan: &RunPlan, out: &Path) -> Result<RunEntry> {
    let cfg = spec.scenario_for(plan);
    let world = build_scenario(&cfg)?;
    let mut policy = plan.policy.instantiate(world.n_cells(), plan.seed)?;
    let mut sink = CsvSink::new(plan, world.n_cells(), cfg.control_period)?;
    run(world, &mut policy, &mut sink)?;
    let (rows, transitions, n_rows) = sink.finish()?;
    let (file, transitions_file) = run_file_names(plan.run_id);
    write_atomic(&out.join(&file), &rows)?;
    write_atomic(&out.join(&transitions_file), &transitions)?;
    Ok(RunEntry {
        run_id: plan.run_id,
        seed: plan.seed,
        policy: plan.policy.to_string(),
        placement: plan.placement.to_string(),
        status: RunStatus::Ok,
        rows: n_rows,
        file,
        sha256: sha256_hex(&rows),
        transitions_file,
        transitions_sha256: sha256_hex(&transitions),
    })
}

/// Runs every planned simulation on a pool of `workers` threads and writes
/// per-run CSVs plus `manifest.json` under `out`. Failed runs are recorded
/// in the manifest rather than aborting the campaign.
pub fn run_campaign(spec: &CampaignSpec, out: &Path, workers: usize) -> Result<CampaignManifest> {
    spec.validate()?;
    let plans = spec.plan()?;
    std::fs::create_dir_all(out.join("runs")).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Contract(e.to_string()))?;
    info!("campaign: {} runs on {} workers", plans.len(), workers.max(1));
    let entries: Vec<RunEntry> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let outcome = catch_unwind(AssertUnwindSafe(|| execute_run(spec, plan, out)))
                    .unwrap_or_else(|_| Err(Error::Contract("run panicked".into())));
                outcome.unwrap_or_else(|e| {
                    warn!("run {} (seed {}) failed: {e}", plan.run_id, plan.seed);
                    let (file, transitions_file) = run_file_names(plan.run_id);
                    RunEntry {
                        run_id: plan.run_id,
                        seed: plan.seed,
                        policy: plan.policy.to_string(),
                        placement: plan.placement.to_string(),
                        status: RunStatus::Failed { error: e.to_string() },
                        rows: 0,
                        file,
                        sha256: String::new(),
                        transitions_file,
                        transitions_sha256: String::new(),
                    }
                })
            })
            .collect()
    });
    let manifest = CampaignManifest {
        schema_version: CORPUS_SCHEMA_VERSION,
        n_cells: spec.scenario.n_gnb,
        spec: spec.clone(),
        runs: entries,
    };
    write_atomic(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Raw rows of one run: observation reports and the actions taken.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRows {
    pub run_id: usize,
    pub seed: u64,
    pub policy: String,
    pub reports: Vec<KpmReport>,
    pub actions: Vec<Action>,
}

/// Parses one raw run CSV.
pub fn read_run_csv(bytes: &[u8], n_cells: usize, origin: &Path) -> Result<RunRows> {
    let corrupt = |reason: String| Error::Corruption {
        path: origin.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let expected: Vec<String> = META_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(feature_names(n_cells))
        .chain(TAIL_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(corrupt("unexpected header".into()));
    }
    let n_feat = state_len(n_cells);
    let mut out = RunRows {
        run_id: 0,
        seed: 0,
        policy: String::new(),
        reports: Vec::new(),
        actions: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| corrupt(format!("row {i}: column {} is not a number", expected[j])))
        };
        if i == 0 {
            out.run_id = rec[0].parse().map_err(|_| corrupt("bad run_id".into()))?;
            out.seed = rec[1].parse().map_err(|_| corrupt("bad seed".into()))?;
            out.policy = rec[2].to_string();
        }
        let step: usize = rec[4].parse().map_err(|_| corrupt(format!("row {i}: bad step")))?;
        if step != i {
            return Err(corrupt(format!("row {i} carries step {step}")));
        }
        let values = (0..n_feat).map(|k| num(META_COLUMNS.len() + k)).collect::<Result<Vec<f64>>>()?;
        out.reports.push(KpmReport::unflatten(step, &values)?);
        let a: usize = rec[META_COLUMNS.len() + n_feat]
            .parse()
            .map_err(|_| corrupt(format!("row {i}: bad action")))?;
        out.actions.push(Action::from_index(a, n_cells)?);
    }
    Ok(out)
}

/// Loads every successful run, verifying each file against its manifest hash.
pub fn load_corpus(manifest_path: &Path) -> Result<(CampaignManifest, Vec<RunRows>)> {
    let manifest = CampaignManifest::load(manifest_path)?;
    let root: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let runs = manifest
        .runs
        .par_iter()
        .filter(|e| e.status == RunStatus::Ok)
        .map(|e| {
            let path = root.join(&e.file);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let actual = sha256_hex(&bytes);
            if actual != e.sha256 {
                return Err(Error::Corruption {
                    path,
                    reason: format!("sha256 {actual} does not match manifest {}", e.sha256),
                });
            }
            let tpath = root.join(&e.transitions_file);
            let tsha = sha256_file(&tpath)?;
            if tsha != e.transitions_sha256 {
                return Err(Error::Corruption {
                    path: tpath,
                    reason: format!("sha256 {tsha} does not match manifest {}", e.transitions_sha256),
                });
            }
            let rows = read_run_csv(&bytes, manifest.n_cells, &path)?;
            if rows.reports.len() != e.rows {
                return Err(Error::Corruption {
                    path,
                    reason: format!("{} rows, manifest says {}", rows.reports.len(), e.rows),
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, runs))
}

/// Fits normalizers on every observation row of a loaded corpus.
pub fn fit_normalizers(runs: &[RunRows]) -> Result<NormalizerSet> {
    NormalizerSet::fit(runs.iter().flat_map(|r| r.reports.iter()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub run_id: usize,
    pub step: usize,
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

/// Chains consecutive rows of each run: the reward of step `k` is computed
/// from the report observed at step `k + 1`.
pub fn build_transitions(runs: &[RunRows], weights: &RewardWeights, norm: &NormalizerSet) -> Result<Vec<Transition>> {
    let per_run: Vec<Vec<Transition>> = runs
        .par_iter()
        .map(|r| {
            let states = r
                .reports
                .iter()
                .map(|rep| norm.assemble_state(rep, weights.quantile_kind))
                .collect::<Result<Vec<_>>>()?;
            let n = states.len();
            (0..n.saturating_sub(1))
                .map(|k| {
                    Ok(Transition {
                        run_id: r.run_id,
                        step: k,
                        state: states[k].clone(),
                        action: r.actions[k].index(),
                        reward: compute_reward(&r.reports[k + 1], weights, norm)?.total,
                        next_state: states[k + 1].clone(),
                        done: k + 2 == n,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_run.into_iter().flatten().collect())
}

/// Number of places where an unshuffled transition list fails to chain.
pub fn chain_discontinuities(ts: &[Transition]) -> usize {
    ts.windows(2)
        .filter(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.run_id != b.run_id {
                !a.done
            } else {
                a.done || b.step != a.step + 1 || a.next_state != b.state
            }
        })
        .count()
        + ts.last().is_some_and(|t| !t.done) as usize
}

/// Full replay: verify, normalize, reward, optionally shuffle.
pub fn load_transitions(
    manifest_path: &Path,
    weights: &RewardWeights,
    norm: &NormalizerSet,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Transition>> {
    let (_, runs) = load_corpus(manifest_path)?;
    let mut ts = build_transitions(&runs, weights, norm)?;
    if ts.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no transitions", manifest_path.display())));
    }
    if let Some(seed) = shuffle_seed {
        ts.shuffle(&mut stream_rng(seed, Stream::Training));
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CampaignSpec {
        CampaignSpec {
            policies: vec!["always-on".into(), "static:4,2,1".into()],
            placements: vec![Placement::Uniform],
            runs_per_combo: 2,
            seed_base: 500,
            scenario: ScenarioConfig {
                sim_duration: 1.0,
                ..Default::default()
            },
        }
    }

    #[test]
    fn full_scale_is_about_three_thousand_runs() {
        let s = CampaignSpec::full_scale();
        s.validate().unwrap();
        assert_eq!(s.total_runs(), 3008);
        assert_eq!(s.total_runs() * s.scenario.n_intervals(), 300_800);
    }

    #[test]
    fn plan_seeds_are_distinct() {
        let plans = CampaignSpec::full_scale().plan().unwrap();
        let mut seeds: Vec<u64> = plans.iter().map(|p| p.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), plans.len());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = small_spec();
        let back = CampaignSpec::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
        assert!(CampaignSpec::from_toml_str("policies = [\"static:4,2,2\"]\nplacements = [\"uniform\"]\nruns_per_combo = 1\nseed_base = 0\n").is_err());
    }

    #[test]
    fn small_campaign_rows_and_transitions() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_campaign(&small_spec(), dir.path(), 2).unwrap();
        assert_eq!(m.runs.len(), 4);
        assert_eq!(m.failed().count(), 0);
        assert_eq!(m.total_rows(), 40);
        let (_, runs) = load_corpus(&dir.path().join(MANIFEST_FILE)).unwrap();
        let norm = fit_normalizers(&runs).unwrap();
        let w = RewardWeights::by_name("DQN").unwrap();
        let ts = build_transitions(&runs, &w, &norm).unwrap();
        assert_eq!(ts.len(), 4 * 9);
        assert_eq!(chain_discontinuities(&ts), 0);
        assert_eq!(ts.iter().filter(|t| t.done).count(), 4);
    }
}
