//! Corpus → normalizers → rewards → agent checkpoints, across modules.

use std::path::Path;
use std::sync::Arc;

use cellsleep_core::dataset::{
    build_transitions, chain_discontinuities, fit_normalizers, load_corpus, load_transitions, run_campaign,
    CampaignSpec, RunRows, MANIFEST_FILE,
};
use cellsleep_core::drl::{train_dqn, Agent, AgentModel, Checkpoint, DqnConfig};
use cellsleep_core::norm::RewardComponent;
use cellsleep_core::{
    compute_reward, Action, CellKpm, Error, KpmReport, NormalizerSet, Placement, RewardWeights, ScenarioConfig,
};

fn spec(policies: &[&str], runs: usize, seconds: f64) -> CampaignSpec {
    CampaignSpec {
        policies: policies.iter().map(|s| s.to_string()).collect(),
        placements: vec![Placement::Uniform],
        runs_per_combo: runs,
        seed_base: 300,
        scenario: ScenarioConfig {
            sim_duration: seconds,
            ..Default::default()
        },
    }
}

fn corpus(dir: &Path, policies: &[&str], runs: usize, seconds: f64) -> (Vec<RunRows>, NormalizerSet) {
    run_campaign(&spec(policies, runs, seconds), dir, 1).unwrap();
    let (_, runs) = load_corpus(&dir.join(MANIFEST_FILE)).unwrap();
    let norm = fit_normalizers(&runs).unwrap();
    (runs, norm)
}

fn weights(name: &str) -> RewardWeights {
    RewardWeights::by_name(name).unwrap()
}

#[test]
fn two_policies_three_runs_give_six_files_and_600_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_campaign(&spec(&["always-on", "random"], 3, 10.0), dir.path(), 1).unwrap();
    assert_eq!(m.runs.len(), 6);
    assert_eq!(m.total_rows(), 600);
    let csvs = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.starts_with("run_") && !name.ends_with("_transitions.csv")
        })
        .count();
    assert_eq!(csvs, 6);
}

#[test]
fn one_run_yields_99_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random"], 1, 10.0);
    let ts = build_transitions(&runs, &weights("DQN"), &norm).unwrap();
    assert_eq!(ts.len(), 99);
    assert!(ts.last().unwrap().done);
    assert_eq!(ts.iter().filter(|t| t.done).count(), 1);
}

#[test]
fn weight_sets_share_states_but_not_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random", "dynamic:3,2,2"], 1, 3.0);
    let same = |x: &cellsleep_core::dataset::Transition, y: &cellsleep_core::dataset::Transition| {
        x.state == y.state && x.next_state == y.next_state && x.action == y.action
    };
    // both uniform-kind sets
    let a = build_transitions(&runs, &weights("DQN"), &norm).unwrap();
    let b = build_transitions(&runs, &weights("PPO-3"), &norm).unwrap();
    assert_eq!(a.len(), b.len());
    assert!(a.iter().zip(&b).all(|(x, y)| same(x, y)));
    assert!(a.iter().zip(&b).any(|(x, y)| x.reward != y.reward));

    // the normal-kind set reads the reward components through its own transform
    let c = build_transitions(&runs, &weights("PPO-1"), &norm).unwrap();
    assert!(a.iter().zip(&c).all(|(x, y)| x.action == y.action));
    assert!(a.iter().zip(&c).any(|(x, y)| x.reward != y.reward));
}

#[test]
fn ten_runs_chain_without_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random", "static:3,2,2"], 5, 2.0);
    let ts = build_transitions(&runs, &weights("PPO-2"), &norm).unwrap();
    assert_eq!(chain_discontinuities(&ts), 0);
    let shuffled = load_transitions(&dir.path().join(MANIFEST_FILE), &weights("PPO-2"), &norm, Some(4)).unwrap();
    assert_eq!(shuffled.len(), ts.len());
}

#[test]
fn tampered_run_file_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    run_campaign(&spec(&["always-on"], 2, 1.0), dir.path(), 1).unwrap();
    let victim = dir.path().join("runs/run_00001.csv");
    let mut text = std::fs::read_to_string(&victim).unwrap();
    text.push_str("\n");
    std::fs::write(&victim, text).unwrap();
    match load_corpus(&dir.path().join(MANIFEST_FILE)) {
        Err(Error::Corruption { path, .. }) => assert!(path.ends_with("run_00001.csv"), "{path:?}"),
        other => panic!("expected corruption, got {other:?}"),
    }
    let msg = load_corpus(&dir.path().join(MANIFEST_FILE)).unwrap_err().to_string();
    assert!(msg.contains("run_00001.csv"), "{msg}");
}

#[test]
fn all_off_reward_is_only_the_rlf_term() {
    let dir = tempfile::tempdir().unwrap();
    let (_, norm) = corpus(dir.path(), &["random"], 2, 2.0);
    let off = KpmReport {
        t: 3,
        cells: (0..7)
            .map(|_| CellKpm {
                rlf_count: 9,
                rlf_pct: 100.0,
                ..Default::default()
            })
            .collect(),
        bs_on: 0,
    };
    for w in RewardWeights::table() {
        let b = compute_reward(&off, &w, &norm).unwrap();
        let rlf: f64 = (0..7)
            .map(|c| norm.component(&off, c, RewardComponent::Rlf, w.quantile_kind).unwrap())
            .sum();
        assert_eq!(b.energy_term, 0.0);
        assert_eq!(b.bson_term, 0.0);
        assert_eq!(b.throughput_term, 0.0);
        assert_eq!(b.cost_term, 0.0);
        assert!((b.total + w.w3 * rlf).abs() < 1e-12, "{}: {}", w.name, b.total);
    }
}

#[test]
fn energy_heavy_weights_charge_more_energy_on_a_busy_report() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["always-on"], 2, 3.0);
    let report = &runs[0].reports[15];
    let heavy = compute_reward(report, &weights("PPO-3"), &norm).unwrap();
    let light = compute_reward(report, &weights("PPO-1"), &norm).unwrap();
    assert!(heavy.energy_term.abs() >= light.energy_term.abs(), "{heavy:?} vs {light:?}");
}

#[test]
fn reward_ignores_cell_order() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random"], 1, 3.0);
    let perm = [3, 0, 6, 1, 5, 2, 4];
    for r in &runs[0].reports {
        for w in RewardWeights::table() {
            let a = compute_reward(r, &w, &norm).unwrap().total;
            let b = compute_reward(&r.permuted(&perm), &w, &norm).unwrap().total;
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random"], 2, 2.0);
    let w = weights("PPO-4");
    let ts = build_transitions(&runs, &w, &norm).unwrap();
    let cfg = DqnConfig {
        hidden: vec![16, 8],
        batch_size: 8,
        updates: 30,
        ..Default::default()
    };
    let (q, _) = train_dqn(&ts, Action::count(7), &cfg).unwrap();
    let ckpt = Checkpoint::from_dqn(&q, &w, &norm, &cfg);
    let path = dir.path().join("q.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_json(), ckpt.to_json());

    let norm = Arc::new(norm);
    let original = Agent::new(AgentModel::Dqn(q), w.clone(), norm.clone());
    let mut loaded = Agent::from_checkpoint(&back, norm).unwrap();
    for t in &ts {
        let (a, b) = (original.scores(&t.state), loaded.scores(&t.state));
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let first = loaded.infer(&t.state).unwrap();
        assert_eq!(first, loaded.infer(&t.state).unwrap());
    }
}

#[test]
fn greedy_action_survives_positive_output_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, norm) = corpus(dir.path(), &["random"], 1, 2.0);
    let w = weights("DQN");
    let ts = build_transitions(&runs, &w, &norm).unwrap();
    let cfg = DqnConfig {
        hidden: vec![16],
        conv_kernel: None,
        heads: 1,
        batch_size: 8,
        updates: 20,
        ..Default::default()
    };
    let (q, _) = train_dqn(&ts, Action::count(7), &cfg).unwrap();
    let mut scaled = q.clone();
    scaled.net.scale_output(7.5);
    for t in &ts {
        assert_eq!(q.greedy(t.state.as_slice()), scaled.greedy(t.state.as_slice()));
    }
}

#[test]
fn agent_refuses_foreign_normalizers() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (runs, norm) = corpus(d1.path(), &["random"], 1, 2.0);
    let mut other = spec(&["always-on"], 1, 2.0);
    other.seed_base = 900;
    run_campaign(&other, d2.path(), 1).unwrap();
    let (_, runs2) = load_corpus(&d2.path().join(MANIFEST_FILE)).unwrap();
    let foreign = fit_normalizers(&runs2).unwrap();
    assert_ne!(norm.hash(), foreign.hash());

    let w = weights("PPO-2");
    let ts = build_transitions(&runs, &w, &norm).unwrap();
    let cfg = DqnConfig {
        hidden: vec![8],
        batch_size: 4,
        updates: 5,
        ..Default::default()
    };
    let (q, _) = train_dqn(&ts, Action::count(7), &cfg).unwrap();
    let ckpt = Checkpoint::from_dqn(&q, &w, &norm, &cfg);
    assert!(matches!(
        Agent::from_checkpoint(&ckpt, Arc::new(foreign)),
        Err(Error::NormalizerMismatch { .. })
    ));
}
