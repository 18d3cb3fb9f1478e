use bclab_core::bc_stats::{
    sbc_report, sprindzuk_monitor, EnsembleSummary, HitCounter, HitTrace, OrbitOutcome,
};
use bclab_core::stats::median;
use bclab_core::{MapSystem, MeasureSchedule, Orbit, Purpose, Start, StreamKey, TargetSchedule};
use proptest::prelude::*;

fn control_traces(s: MeasureSchedule, n: u64, orbits: u64, seed: u64) -> Vec<HitTrace> {
    let map = MapSystem::iid_control(s.clone()).unwrap();
    let counter = HitCounter::new(TargetSchedule::nominal(s).unwrap(), n).unwrap();
    (0..orbits)
        .map(|w| {
            counter
                .run(
                    &map,
                    &Orbit::new(Start::Uniform, n, StreamKey::new(seed, w, Purpose::Coins)),
                )
                .unwrap()
        })
        .collect()
}

#[test]
fn harmonic_control_ratio_is_near_one() {
    let traces = control_traces(MeasureSchedule::harmonic(), 1_000_000, 32, 41);
    let summary = sbc_report(&traces).unwrap();
    assert!(
        (summary.median_ratio() - 1.0).abs() < 0.25,
        "{}",
        summary.median_ratio()
    );
}

#[test]
fn control_process_meets_the_error_term() {
    let traces = control_traces(MeasureSchedule::power(0.5), 1_000_000, 100, 42);
    let rep = sprindzuk_monitor(&traces, 0.1, 5.0).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert!(rep.fitted_c <= 3.0, "{}", rep.fitted_c);
    assert!(!rep.growing);
    let ratios: Vec<f64> = traces.iter().map(|t| t.final_ratio()).collect();
    assert!((median(&ratios) - 1.0).abs() < 0.02);
}

#[test]
fn lsv_and_doubling_traces_are_reproducible() {
    let map = MapSystem::doubling();
    let targets = TargetSchedule::lebesgue_ball(&map, 0.3, MeasureSchedule::power(0.5)).unwrap();
    let counter = HitCounter::new(targets, 100_000).unwrap();
    let orbit = Orbit::new(
        Start::Uniform,
        100_000,
        StreamKey::new(7, 3, Purpose::InitialPoint),
    );
    assert_eq!(
        counter.run(&map, &orbit).unwrap(),
        counter.run(&map, &orbit).unwrap()
    );
    let other = Orbit::new(
        Start::Uniform,
        100_000,
        StreamKey::new(7, 4, Purpose::InitialPoint),
    );
    assert_ne!(
        counter.run(&map, &orbit).unwrap(),
        counter.run(&map, &other).unwrap()
    );
}

fn outcome(index: u64, hits: u64) -> OrbitOutcome {
    OrbitOutcome {
        orbit_index: index,
        n: 1000,
        hits,
        expected: 10.0,
        ratio: hits as f64 / 10.0,
        last_hit: None,
    }
}

fn summaries() -> impl Strategy<Value = Vec<EnsembleSummary>> {
    prop::collection::vec(prop::collection::btree_map(0u64..50, 0u64..40, 0..6), 3).prop_map(
        |maps| {
            maps.into_iter()
                .map(|m| EnsembleSummary {
                    outcomes: m.into_iter().map(|(i, h)| outcome(i, h)).collect(),
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn merging_is_associative_and_commutative(parts in summaries()) {
        // Summaries of one run never disagree on an orbit, so make overlaps consistent.
        let parts: Vec<EnsembleSummary> = parts
            .into_iter()
            .map(|s| EnsembleSummary { outcomes: s.outcomes.into_iter().map(|o| outcome(o.orbit_index, o.orbit_index % 7)).collect() })
            .collect();
        let (a, b, c) = (parts[0].clone(), parts[1].clone(), parts[2].clone());
        let left = a.clone().merge(b.clone()).merge(c.clone());
        let right = a.clone().merge(b.clone().merge(c.clone()));
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(a.clone().merge(b.clone()), b.merge(a));
        prop_assert!(left.outcomes.windows(2).all(|w| w[0].orbit_index < w[1].orbit_index));
    }
}
