use bclab_core::maps::{chmv_asymptotics_report, chmv_backward_sequence, solve_preimage};
use bclab_core::{MapSystem, Purpose, StreamKey};
use rand::Rng;

#[test]
fn recursion_agrees_with_root_solved_preimages_up_to_a_thousand() {
    let map = MapSystem::chmv(3.0).unwrap();
    let branches = map.branches();
    let (outer_neg, inner_pos) = (branches[0], branches[2]);
    let seq = chmv_backward_sequence(3.0, 1000).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let a = solve_preimage(&map, &outer_neg, seq.a(i)).unwrap();
        let b = solve_preimage(&map, &inner_pos, seq.a(i)).unwrap();
        worst = worst
            .max((a - seq.a(i + 1)).abs())
            .max((b - seq.b_at(i + 1)).abs());
        // The arcs really are preimages: T(a_{-(i+1)}) = T(b_{i+1}) = a_{-i}.
        assert!((map.eval(seq.a(i + 1)).unwrap() - seq.a(i)).abs() < 1e-10);
        assert!((map.eval(seq.b_at(i + 1)).unwrap() - seq.a(i)).abs() < 1e-10);
    }
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn split_identity_holds_to_the_last_bit() {
    let seq = chmv_backward_sequence(3.0, 1_000_000).unwrap();
    for i in 0..seq.len() {
        let a = seq.a(i);
        let rebuilt = seq.a(i + 1) + seq.b_at(i + 1);
        let ulp = f64::from_bits(a.abs().to_bits() + 1) - a.abs();
        assert!((rebuilt - a).abs() <= ulp, "i = {i}: {rebuilt:e} vs {a:e}");
    }
    // Strictly decreasing arcs, positive companions.
    assert!(seq.a_minus.windows(2).all(|w| w[1] < w[0] && w[1] > -1.0));
    assert!(seq.b.iter().all(|&b| b > 0.0));
}

#[test]
fn arc_lengths_approach_their_power_law() {
    let seq = chmv_backward_sequence(3.0, 1_000_000).unwrap();
    let rep = chmv_asymptotics_report(&seq).unwrap();
    let last = rep.rows.last().unwrap();
    assert_eq!(last.n, 1_000_000);
    let ratio = (1.0 + seq.a(1_000_000)) / (3f64.sqrt() / 1000.0);
    assert!((0.9..=1.1).contains(&ratio), "{ratio}");
    assert!((ratio - last.length_ratio).abs() < 1e-12);
    let tail: Vec<f64> = rep
        .rows
        .iter()
        .filter(|r| r.n >= 10)
        .map(|r| (r.length_ratio - 1.0).abs())
        .collect();
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{tail:?}");
}

#[test]
fn preimages_of_random_arcs_keep_their_length() {
    let map = MapSystem::chmv(3.0).unwrap();
    let mut rng = StreamKey::new(2024, 0, Purpose::Validation).rng();
    for _ in 0..100 {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let (u, v) = (u.min(v), u.max(v));
        let pre = map.preimage_length(u, v).unwrap();
        assert!((pre - (v - u)).abs() < 1e-8, "({u}, {v}): {pre}");
    }
}
