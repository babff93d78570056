use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use cellsleep_core::dataset::{
    build_transitions, fit_normalizers, load_corpus, run_campaign, CampaignManifest, CampaignSpec,
    CORPUS_SCHEMA_VERSION,
};
use cellsleep_core::drl::checkpoint::CHECKPOINT_VERSION;
use cellsleep_core::drl::{train_dqn, train_ppo, Agent, Checkpoint, DqnConfig, PpoConfig};
use cellsleep_core::eval::{emit_cdf, evaluate, EvalConfig, EvalReport, NamedPolicy, Samples};
use cellsleep_core::io::write_atomic;
use cellsleep_core::norm::NORMALIZER_VERSION;
use cellsleep_core::{Baseline, NormalizerSet, Policy, RewardWeights, ScenarioConfig};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "cellsleep", about = "Cell on/off energy-saving laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of baseline simulations and write a verified corpus.
    Campaign {
        /// Campaign TOML; defaults to the full-scale campaign.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Fit the state and reward normalizers on a corpus.
    FitNorm {
        /// Corpus manifest (or the directory holding it).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a DQN (offline, from the corpus) or PPO (online) agent.
    Train {
        #[arg(long, value_enum)]
        algo: AlgoArg,
        /// Reward weight set, e.g. PPO-1.
        #[arg(long)]
        weights: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Existing normalizers; fitted on the corpus when omitted.
        #[arg(long)]
        normalizers: Option<PathBuf>,
        /// Trainer configuration TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train_seed: Option<u64>,
        /// DQN gradient updates.
        #[arg(long)]
        updates: Option<usize>,
        /// PPO environment timesteps.
        #[arg(long)]
        max_timesteps: Option<usize>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Evaluate a checkpoint against Always On on held-out seeds.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        normalizers: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 5_000_000)]
        seed_base: u64,
        /// Training corpus; its seeds must not be reused.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory for tradeoff.csv and the CDF tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bin the CDFs instead of emitting one point per distinct value.
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Compare baselines and checkpoints on the same seeds.
    Compare {
        /// Comma-separated, e.g. `always-on,random,static:4,2,1,checkpoint:a.json`.
        #[arg(long)]
        policies: String,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 5_000_000)]
        seed_base: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Needed for `checkpoint:` entries.
        #[arg(long)]
        normalizers: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Dqn,
    Ppo,
}

/// One `--<field>` flag per scenario parameter, plus `--scenario FILE`.
#[derive(Default)]
struct ScenarioArgs {
    file: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

const HEADING: &str = "Scenario overrides";

fn flag(field: &str) -> String {
    field.replace('_', "-")
}

impl Args for ScenarioArgs {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        let mut cmd = cmd.arg(
            clap::Arg::new("scenario")
                .long("scenario")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Scenario TOML applied before individual overrides")
                .help_heading(HEADING),
        );
        for field in ScenarioConfig::field_names() {
            cmd = cmd.arg(
                clap::Arg::new(field.clone())
                    .long(flag(&field))
                    .value_name("VALUE")
                    .help_heading(HEADING),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for ScenarioArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut s = ScenarioArgs::default();
        s.update_from_arg_matches(m)?;
        Ok(s)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(p) = m.get_one::<PathBuf>("scenario") {
            self.file = Some(p.clone());
        }
        for field in ScenarioConfig::field_names() {
            if let Some(v) = m.get_one::<String>(&field) {
                self.overrides.push((field, v.clone()));
            }
        }
        Ok(())
    }
}

impl ScenarioArgs {
    fn apply(&self, base: ScenarioConfig) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.file {
            Some(p) => ScenarioConfig::load(p)?,
            None => base,
        };
        for (k, v) in &self.overrides {
            cfg.set_field(k, v).with_context(|| format!("--{} {v}", flag(k)))?;
        }
        Ok(cfg)
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(cellsleep_core::dataset::MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn eval_scenario() -> ScenarioConfig {
    EvalConfig::new(0, 0).scenario
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn campaign(spec: Option<PathBuf>, out: &Path, workers: usize, scenario: &ScenarioArgs) -> anyhow::Result<bool> {
    let mut spec = match spec {
        Some(p) => CampaignSpec::load(&p)?,
        None => CampaignSpec::full_scale(),
    };
    spec.scenario = scenario.apply(spec.scenario)?;
    let manifest = run_campaign(&spec, out, workers)?;
    let failed: Vec<_> = manifest.failed().collect();
    println!(
        "{} runs, {} rows, {} failed -> {}",
        manifest.runs.len(),
        manifest.total_rows(),
        failed.len(),
        out.display()
    );
    for r in &failed {
        eprintln!("run {} (seed {}, {}) failed", r.run_id, r.seed, r.policy);
    }
    Ok(failed.is_empty())
}

fn fit_norm(corpus: &Path, out: &Path) -> anyhow::Result<()> {
    let (_, runs) = load_corpus(&manifest_path(corpus))?;
    let norm = fit_normalizers(&runs)?;
    norm.save(out)?;
    println!("{}", norm.hash());
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".normalizers.json");
    PathBuf::from(s)
}

struct TrainArgs {
    algo: AlgoArg,
    weights: String,
    corpus: PathBuf,
    out: PathBuf,
    normalizers: Option<PathBuf>,
    config: Option<PathBuf>,
    train_seed: Option<u64>,
    updates: Option<usize>,
    max_timesteps: Option<usize>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn train(a: TrainArgs, scenario: &ScenarioArgs) -> anyhow::Result<()> {
    let weights = RewardWeights::by_name(&a.weights)?;
    let (manifest, runs) = load_corpus(&manifest_path(&a.corpus))?;
    let norm = match &a.normalizers {
        Some(p) => NormalizerSet::load(p)?,
        None => {
            let norm = fit_normalizers(&runs)?;
            let path = sidecar(&a.out);
            norm.save(&path)?;
            info!("normalizers {} written to {}", norm.hash(), path.display());
            norm
        }
    };
    if norm.n_cells() != manifest.n_cells {
        bail!("normalizers cover {} cells, corpus has {}", norm.n_cells(), manifest.n_cells);
    }
    let ckpt = match a.algo {
        AlgoArg::Dqn => {
            let mut cfg: DqnConfig = a.config.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            if let Some(u) = a.updates {
                cfg.updates = u;
            }
            if let Some(s) = a.train_seed {
                cfg.seed = s;
            }
            let transitions = build_transitions(&runs, &weights, &norm)?;
            info!("{} transitions under {}", transitions.len(), weights.name);
            let (q, log) = train_dqn(&transitions, 1 << manifest.n_cells, &cfg)?;
            if let Some((u, l)) = log.losses.last() {
                println!("update {u}: loss {l:.6}, {} target syncs", log.target_syncs);
            }
            Checkpoint::from_dqn(&q, &weights, &norm, &cfg)
        }
        AlgoArg::Ppo => {
            let mut cfg: PpoConfig = a.config.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            if let Some(t) = a.max_timesteps {
                cfg.max_timesteps = t;
            }
            if let Some(s) = a.train_seed {
                cfg.seed = s;
            }
            check_ppo_seeds(&cfg, &manifest)?;
            let scenario = scenario.apply(eval_scenario())?;
            let (policy, log) = train_ppo(&scenario, Arc::new(norm.clone()), &weights, &cfg)?;
            println!(
                "{} timesteps, best greedy return {:.3}{}",
                log.timesteps,
                log.best_return,
                if log.stopped_early { " (stopped early)" } else { "" }
            );
            if log.entropy_collapsed {
                log::warn!("policy entropy fell to {:.4} nats", log.final_entropy);
            }
            Checkpoint::from_ppo(&policy, &weights, &norm, &cfg)
        }
    };
    ckpt.save(&a.out)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn check_ppo_seeds(cfg: &PpoConfig, manifest: &CampaignManifest) -> anyhow::Result<()> {
    let span = (cfg.max_timesteps + cfg.rollout_steps) as u64;
    let train = cfg.train_seed_base..cfg.train_seed_base.saturating_add(span);
    let eval = cfg.eval_seed_base..cfg.eval_seed_base.saturating_add(cfg.eval_episodes as u64);
    if let Some(s) = manifest.seeds().into_iter().find(|s| train.contains(s) || eval.contains(s)) {
        bail!("corpus seed {s} overlaps the PPO training or evaluation seeds");
    }
    Ok(())
}

fn agent_policy(ckpt_path: &Path, norm: &Arc<NormalizerSet>) -> anyhow::Result<NamedPolicy> {
    let agent = Agent::load(ckpt_path, norm.clone()).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let name = agent.name();
    Ok(NamedPolicy::new(
        name,
        Arc::new(move |_| Ok(Box::new(agent.clone()) as Box<dyn Policy + Send>)),
    ))
}

fn baseline_policy(b: Baseline, n_cells: usize) -> NamedPolicy {
    NamedPolicy::new(b.to_string(), Arc::new(move |seed| b.instantiate(n_cells, seed)))
}

/// Splits a policy list on commas; bare integers continue the previous
/// entry so `static:4,2,1` survives.
fn split_policies(list: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match out.last_mut() {
            Some(prev) if tok.parse::<u64>().is_ok() && !prev.starts_with("checkpoint:") => {
                prev.push(',');
                prev.push_str(tok);
            }
            _ => out.push(tok.to_string()),
        }
    }
    out
}

fn print_report(report: &EvalReport) {
    println!(
        "{:<24} {:>12} {:>10} {:>10} {:>12} {:>12}",
        "policy", "throughput%", "energy%", "rlf", "act.cost", "return"
    );
    for p in &report.policies {
        let ret = match (p.mean_return(), p.std_return()) {
            (Some(m), Some(s)) => format!("{m:.2}±{s:.2}"),
            _ => "-".into(),
        };
        println!(
            "{:<24} {:>12.2} {:>10.2} {:>10.3} {:>12.4} {:>12}",
            p.name, p.pct_vs_always_on.0, p.pct_vs_always_on.1, p.mean_rlf, p.mean_delta, ret
        );
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_report(report: &EvalReport, out: &Path, bins: Option<usize>) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("tradeoff.csv"), &report.tradeoff_csv())?;
    for p in &report.policies {
        for metric in Samples::METRICS {
            let samples = p.samples.metric(metric).expect("known metric");
            let cdf = emit_cdf(metric, samples, bins)?;
            let file = out.join(format!("cdf_{}_{metric}.csv", file_safe(&p.name)));
            write_file(&file, &cdf.to_csv())?;
        }
    }
    info!("results written to {}", out.display());
    Ok(())
}

struct EvalArgs {
    checkpoint: PathBuf,
    normalizers: PathBuf,
    runs: usize,
    seed_base: u64,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    bins: Option<usize>,
}

fn evaluate_cmd(a: EvalArgs, scenario: &ScenarioArgs) -> anyhow::Result<()> {
    let norm = Arc::new(NormalizerSet::load(&a.normalizers)?);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let policy = agent_policy(&a.checkpoint, &norm)?;
    let mut cfg = EvalConfig::new(a.runs, a.seed_base);
    cfg.scenario = scenario.apply(cfg.scenario)?;
    cfg.reward = Some((ckpt.weights.clone(), norm));
    if let Some(c) = &a.corpus {
        cfg.excluded_seeds = CampaignManifest::load(&manifest_path(c))?.seeds();
    }
    let report = evaluate(&[policy], &cfg)?;
    print_report(&report);
    if let Some(out) = &a.out {
        write_report(&report, out, a.bins)?;
    }
    Ok(())
}

struct CompareArgs {
    policies: String,
    runs: usize,
    seed_base: u64,
    out: Option<PathBuf>,
    normalizers: Option<PathBuf>,
    bins: Option<usize>,
}

fn compare(a: CompareArgs, scenario: &ScenarioArgs) -> anyhow::Result<()> {
    let mut cfg = EvalConfig::new(a.runs, a.seed_base);
    cfg.scenario = scenario.apply(cfg.scenario)?;
    let norm = a.normalizers.as_deref().map(NormalizerSet::load).transpose()?.map(Arc::new);
    let mut seen = BTreeSet::new();
    let mut list = Vec::new();
    for entry in split_policies(&a.policies) {
        let named = match entry.strip_prefix("checkpoint:") {
            Some(path) => {
                let Some(norm) = &norm else {
                    bail!("`{entry}` needs --normalizers");
                };
                agent_policy(Path::new(path), norm)?
            }
            None => baseline_policy(entry.parse::<Baseline>()?, cfg.scenario.n_gnb),
        };
        if !seen.insert(named.name.clone()) {
            bail!("policy `{}` listed twice", named.name);
        }
        list.push(named);
    }
    if list.is_empty() {
        bail!("no policies given");
    }
    let report = evaluate(&list, &cfg)?;
    print_report(&report);
    if let Some(out) = &a.out {
        write_report(&report, out, a.bins)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Campaign {
            spec,
            out,
            workers,
            scenario,
        } => {
            if !campaign(spec, &out, workers, &scenario)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::FitNorm { corpus, out } => fit_norm(&corpus, &out)?,
        Command::Train {
            algo,
            weights,
            corpus,
            out,
            normalizers,
            config,
            train_seed,
            updates,
            max_timesteps,
            scenario,
        } => train(
            TrainArgs {
                algo,
                weights,
                corpus,
                out,
                normalizers,
                config,
                train_seed,
                updates,
                max_timesteps,
            },
            &scenario,
        )?,
        Command::Evaluate {
            checkpoint,
            normalizers,
            runs,
            seed_base,
            corpus,
            out,
            bins,
            scenario,
        } => evaluate_cmd(
            EvalArgs {
                checkpoint,
                normalizers,
                runs,
                seed_base,
                corpus,
                out,
                bins,
            },
            &scenario,
        )?,
        Command::Compare {
            policies,
            runs,
            seed_base,
            out,
            normalizers,
            bins,
            scenario,
        } => compare(
            CompareArgs {
                policies,
                runs,
                seed_base,
                out,
                normalizers,
                bins,
            },
            &scenario,
        )?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let version = env!("CARGO_PKG_VERSION");
    let long_version = format!(
        "{version} (corpus schema {CORPUS_SCHEMA_VERSION}, normalizers v{NORMALIZER_VERSION}, checkpoint v{CHECKPOINT_VERSION})"
    );
    let matches = Cli::command().version(version).long_version(long_version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellsleep_core::Placement;

    #[test]
    fn heuristic_params_survive_comma_splitting() {
        assert_eq!(
            split_policies("always-on, static:4,2,1,random,dynamic:3,2,2"),
            vec!["always-on", "static:4,2,1", "random", "dynamic:3,2,2"]
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn scenario_flags_reach_the_config() {
        let cli = Cli::try_parse_from(["cellsleep", "compare", "--policies", "random", "--n-ue-per-gnb", "3"]).unwrap();
        let Command::Compare { scenario, .. } = cli.command else {
            panic!("wrong subcommand");
        };
        let cfg = scenario.apply(ScenarioConfig::default()).unwrap();
        assert_eq!(cfg.n_ue_per_gnb, 3);
        assert_eq!(cfg.placement, Placement::Uniform);
    }
}
