use bclab_core::maps::{chmv_backward_sequence, Circle};
use bclab_core::targets::{
    calibrate_radii, fit_annulus_exponent, kim_interval, lsv_origin_measure, measure_profile,
    HALF_DENSITY_WIDTH,
};
use bclab_core::{MapSystem, MeasureSchedule, Purpose, StreamKey, TargetSchedule, TargetSet};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[test]
fn every_construction_is_nested() {
    let dbl = MapSystem::doubling();
    let chmv = MapSystem::chmv(3.0).unwrap();
    let seq = chmv_backward_sequence(3.0, 20_000).unwrap();
    let schedules = [
        MeasureSchedule::power(0.5),
        MeasureSchedule::log_over_i(),
        MeasureSchedule::harmonic(),
        MeasureSchedule::i_log_i(),
    ];
    let mut all = vec![
        TargetSchedule::kim(0.6).unwrap(),
        TargetSchedule::chmv(&seq),
        TargetSchedule::chmv_b(&seq),
    ];
    for s in &schedules {
        all.push(TargetSchedule::lebesgue_ball(&dbl, GOLDEN, s.clone()).unwrap());
        all.push(TargetSchedule::lebesgue_ball(&chmv, 0.3, s.clone()).unwrap());
    }
    let s = MeasureSchedule::power(0.5);
    let radii = calibrate_radii(
        &dbl,
        GOLDEN,
        &s,
        10_000,
        2_000_000,
        StreamKey::new(3, 0, Purpose::Calibration),
    )
    .unwrap();
    all.push(TargetSchedule::calibrated_ball(&dbl, GOLDEN, s, radii));
    for t in &all {
        assert!(t.is_nested(10_000).unwrap(), "{t:?}");
    }
}

#[test]
fn calibrated_balls_validate_on_an_independent_orbit() {
    let map = MapSystem::doubling();
    let s = MeasureSchedule::power(0.5);
    let radii = calibrate_radii(
        &map,
        GOLDEN,
        &s,
        2_000,
        4_000_000,
        StreamKey::new(11, 0, Purpose::Calibration),
    )
    .unwrap();
    let targets = TargetSchedule::calibrated_ball(&map, GOLDEN, s.clone(), radii);
    let indices: Vec<u64> = (1..=2_000).step_by(20).collect();
    let sets: Vec<TargetSet> = indices.iter().map(|&i| targets.set(i).unwrap()).collect();
    let samples = 1_000_000;
    let est = measure_profile(
        &map,
        &sets,
        samples,
        StreamKey::new(11, 1, Purpose::Validation),
    )
    .unwrap();
    let within = indices
        .iter()
        .zip(&est)
        .filter(|(&i, &(m, _))| {
            let mu = s.measure(i).unwrap();
            (m - mu).abs() <= 3.0 * (mu * (1.0 - mu) / samples as f64).sqrt()
        })
        .count();
    assert!(
        within as f64 >= 0.95 * indices.len() as f64,
        "{within} of {}",
        indices.len()
    );
}

#[test]
fn expectations_keep_growing() {
    // E_{4n} / E_n against the closed-form growth of each schedule.
    let n = 100_000u64;
    let e = |s: &MeasureSchedule, m: u64| s.partial_sum(m).unwrap();
    let p = MeasureSchedule::power(0.5);
    assert!(e(&p, 4 * n) / e(&p, n) > 2.0 * 0.99);
    let h = MeasureSchedule::harmonic();
    assert!(e(&h, 4 * n) - e(&h, n) > 4f64.ln() * 0.99);
    let l = MeasureSchedule::log_over_i();
    let nf = n as f64;
    let want = ((4.0 * nf).ln().powi(2) - nf.ln().powi(2)) / 2.0;
    assert!(e(&l, 4 * n) - e(&l, n) > want * 0.99);
    let k = MeasureSchedule::i_log_i();
    let want = (4.0 * nf).ln().ln() - nf.ln().ln();
    assert!(e(&k, 4 * n) - e(&k, n) > want * 0.99);
    assert!([p, h, l, k].iter().all(|s| s.diverges()));
}

#[test]
fn kim_intervals_carry_measure_of_order_one_over_n() {
    let map = MapSystem::lsv(0.6).unwrap();
    let strip = TargetSet::Interval {
        lo: 0.5,
        hi: 0.5 + HALF_DENSITY_WIDTH,
        closed_lo: true,
    };
    let wide = TargetSet::Interval {
        lo: 0.0,
        hi: 0.02,
        closed_lo: true,
    };
    let est = measure_profile(
        &map,
        &[strip, wide],
        10_000_000,
        StreamKey::new(5, 0, Purpose::Validation),
    )
    .unwrap();
    let h = est[0].0 / HALF_DENSITY_WIDTH;
    // Where time averages resolve the interval, both estimates agree.
    let induced = lsv_origin_measure(0.6, 0.02, h).unwrap();
    assert!(
        (induced / est[1].0 - 1.0).abs() < 0.05,
        "{induced} vs {}",
        est[1].0
    );
    let scaled: Vec<f64> = [10u64, 100, 1_000, 10_000, 100_000, 1_000_000]
        .iter()
        .map(|&n| {
            let TargetSet::Interval { hi, .. } = kim_interval(0.6, n).unwrap() else {
                unreachable!()
            };
            n as f64 * lsv_origin_measure(0.6, hi, h).unwrap()
        })
        .collect();
    assert!(
        scaled.iter().all(|&v| (0.3..1.2).contains(&v)),
        "{scaled:?}"
    );
}

#[test]
fn doubling_annuli_scale_linearly() {
    let fit = fit_annulus_exponent(
        &MapSystem::doubling(),
        GOLDEN,
        &[1e-2, 3e-3, 1e-3, 3e-4],
        2.0,
        2_000_000,
        StreamKey::new(8, 0, Purpose::Validation),
    )
    .unwrap();
    assert!((fit.delta_hat - 1.0).abs() < 0.1, "{}", fit.delta_hat);
    assert_eq!(Circle::UNIT, MapSystem::doubling().domain());
}
