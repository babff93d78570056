use std::path::Path;
use std::process::{Command, Output};

fn cellsleep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellsleep"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellsleep(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_scenario_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellsleep(&["compare", "--policies", "random", "--n-antennas", "4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn version_lists_schema_versions() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellsleep(&["--version"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("corpus schema 1"), "{text}");
    assert!(text.contains("checkpoint v1"), "{text}");
}

#[test]
fn invalid_override_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellsleep(&["compare", "--policies", "random", "--runs", "1", "--n-gnb", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_gnb"));
}

#[test]
fn always_on_compares_to_itself_at_one_hundred_percent() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellsleep(
        &["compare", "--policies", "always-on,static:4,2,1", "--runs", "2", "--sim-duration", "1", "--out", "res"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("res/tradeoff.csv")).unwrap();
    let rows: Vec<csv::StringRecord> =
        csv::Reader::from_reader(csv.as_bytes()).records().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "always-on");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 100.0);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 100.0);
    assert_eq!(&rows[1][0], "static:4,2,1");
    assert!(dir.path().join("res/cdf_always-on_energy.csv").exists());
}

#[test]
fn campaign_to_evaluation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("spec.toml"),
        "policies = [\"always-on\", \"random\"]\nplacements = [\"uniform\"]\nruns_per_combo = 1\nseed_base = 100\n\n[scenario]\nsim_duration = 1.0\n",
    )
    .unwrap();
    let o = cellsleep(&["campaign", "--spec", "spec.toml", "--out", "corpus"], p);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cellsleep(&["fit-norm", "--corpus", "corpus", "--out", "norm.json"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let hash = stdout(&o).trim().to_string();
    assert_eq!(hash.len(), 64);

    std::fs::write(p.join("dqn.toml"), "hidden = [8]\nbatch_size = 16\nconv_kernel = 3\n").unwrap();
    let o = cellsleep(
        &[
            "train", "--algo", "dqn", "--weights", "PPO-2", "--corpus", "corpus", "--normalizers", "norm.json",
            "--config", "dqn.toml", "--updates", "20", "--out", "q.json",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cellsleep(
        &[
            "evaluate", "--checkpoint", "q.json", "--normalizers", "norm.json", "--runs", "1", "--corpus", "corpus",
            "--sim-duration", "1", "--out", "res",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("dqn[PPO-2]"));
    assert!(p.join("res/tradeoff.csv").exists());

    // evaluation on corpus seeds is refused
    let o = cellsleep(
        &[
            "evaluate", "--checkpoint", "q.json", "--normalizers", "norm.json", "--runs", "1", "--seed-base", "100",
            "--corpus", "corpus",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn checkpoint_rejects_foreign_normalizers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (name, seed) in [("a", 10), ("b", 20)] {
        std::fs::write(
            p.join(format!("{name}.toml")),
            format!("policies = [\"random\"]\nplacements = [\"uniform\"]\nruns_per_combo = 1\nseed_base = {seed}\n\n[scenario]\nsim_duration = 1.0\n"),
        )
        .unwrap();
        let o = cellsleep(&["campaign", "--spec", &format!("{name}.toml"), "--out", name], p);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = cellsleep(&["fit-norm", "--corpus", name, "--out", &format!("{name}.norm.json")], p);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    std::fs::write(p.join("dqn.toml"), "hidden = [8]\nbatch_size = 8\nconv_kernel = 3\n").unwrap();
    let o = cellsleep(
        &[
            "train", "--algo", "dqn", "--weights", "PPO-1", "--corpus", "a", "--normalizers", "a.norm.json",
            "--config", "dqn.toml", "--updates", "5", "--out", "q.json",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cellsleep(&["evaluate", "--checkpoint", "q.json", "--normalizers", "b.norm.json", "--runs", "1"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("normalizer"), "{}", stderr(&o));
}
