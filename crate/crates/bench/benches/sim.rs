use cellsleep_core::policy::HeuristicParams;
use cellsleep_core::sim::NullSink;
use cellsleep_core::{build_scenario, run, Action, AlwaysOn, Baseline, ScenarioConfig, Simulation};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn scenario() -> ScenarioConfig {
    ScenarioConfig {
        seed: 7,
        ..Default::default()
    }
}

fn control_step(c: &mut Criterion) {
    let cfg = scenario();
    c.bench_function("control_step_100_slots", |b| {
        b.iter_batched(
            || Simulation::new(build_scenario(&cfg).unwrap()),
            |mut sim| sim.step(Action::all_on(cfg.n_gnb)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn full_run(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        sim_duration: 2.0,
        ..scenario()
    };
    let mut g = c.benchmark_group("run_2s");
    g.sample_size(10);
    g.bench_function("always_on", |b| {
        b.iter(|| run(build_scenario(&cfg).unwrap(), &mut AlwaysOn, &mut NullSink).unwrap())
    });
    g.bench_function("dynamic_3_2_2", |b| {
        let baseline = Baseline::Dynamic(HeuristicParams::new(3, 2, 2));
        b.iter(|| {
            let mut p = baseline.instantiate(cfg.n_gnb, cfg.seed).unwrap();
            run(build_scenario(&cfg).unwrap(), &mut p, &mut NullSink).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, control_step, full_run);
criterion_main!(benches);
