use std::sync::Arc;

use cellsleep_core::eval::{emit_cdf, evaluate, EvalConfig, NamedPolicy, Samples};
use cellsleep_core::sim::NullSink;
use cellsleep_core::{build_scenario, run, Action, Baseline, ScenarioConfig};
use proptest::prelude::*;

fn named(b: Baseline) -> NamedPolicy {
    NamedPolicy::new(b.to_string(), Arc::new(move |seed| b.instantiate(7, seed)))
}

#[test]
fn five_runs_give_500_samples_per_metric() {
    let report = evaluate(&[named(Baseline::Random)], &EvalConfig::new(5, 8_000_000)).unwrap();
    assert_eq!(report.policies[0].name, "always-on");
    for p in &report.policies {
        for m in Samples::METRICS {
            assert_eq!(p.samples.metric(m).unwrap().len(), 500, "{} {m}", p.name);
        }
    }
}

#[test]
fn all_off_delivers_nothing() {
    let report = evaluate(&[named(Baseline::AllOff)], &EvalConfig::new(2, 8_100_000)).unwrap();
    let off = report.get("all-off").unwrap();
    assert_eq!(off.pct_vs_always_on, (0.0, 0.0));
}

#[test]
fn always_on_keeps_every_cell_on() {
    let cfg = ScenarioConfig {
        seed: 12,
        ..Default::default()
    };
    let mut p = Baseline::AlwaysOn.instantiate(7, 12).unwrap();
    let s = run(build_scenario(&cfg).unwrap(), &mut p, &mut NullSink).unwrap();
    assert!(s.intervals.iter().all(|i| i.bs_on == 7));
    assert_eq!(s.activations, 0);
    assert_eq!(Action::from_index(127, 7).unwrap(), Action::all_on(7));
}

#[test]
fn random_toggles_are_bounded_by_its_decisions() {
    let cfg = ScenarioConfig {
        seed: 5,
        ..Default::default()
    };
    let mut random = Baseline::Random.instantiate(7, 5).unwrap();
    let s = run(build_scenario(&cfg).unwrap(), &mut random, &mut NullSink).unwrap();
    // the mask can only change on whole seconds
    let changes = s.activations + s.deactivations;
    assert!(changes <= 10 * 7);
    assert_eq!(s.n_steps, 100);
}

#[test]
fn constant_samples_step_straight_to_one() {
    let c = emit_cdf("energy", &[4.0; 9], None).unwrap();
    assert_eq!(c.values, vec![4.0]);
    assert_eq!(c.ordinates, vec![1.0]);
    assert_eq!(c.at(3.9), 0.0);
}

proptest! {
    #[test]
    fn merged_cdf_lies_between_sources(
        a in proptest::collection::vec(-50.0f64..50.0, 1..40),
        b in proptest::collection::vec(-50.0f64..50.0, 1..40),
        probes in proptest::collection::vec(-60.0f64..60.0, 1..20),
    ) {
        let merged: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (ca, cb, cm) = (
            emit_cdf("x", &a, None).unwrap(),
            emit_cdf("x", &b, None).unwrap(),
            emit_cdf("x", &merged, None).unwrap(),
        );
        for x in probes {
            let (fa, fb, fm) = (ca.at(x), cb.at(x), cm.at(x));
            prop_assert!(fm >= fa.min(fb) - 1e-12 && fm <= fa.max(fb) + 1e-12);
        }
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one(
        xs in proptest::collection::vec(-1e3f64..1e3, 1..60),
        bins in proptest::option::of(1usize..12),
    ) {
        let c = emit_cdf("x", &xs, bins).unwrap();
        prop_assert!(c.ordinates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.ordinates.last().unwrap(), 1.0);
    }
}
