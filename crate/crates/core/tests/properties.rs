use parity_superposition::control::{cost, TargetSpec};
use parity_superposition::diabatic::estimate_td;
use parity_superposition::dynamics::{propagate_effective, PropagationOptions};
use parity_superposition::effective::build_effective;
use parity_superposition::experiments::SimplexHistogram;
use parity_superposition::hamiltonian::Schedule;
use parity_superposition::model::{four_spin_lhz, hamming, logical_to_physical, BitString};
use proptest::prelude::*;

fn bits(len: usize) -> impl Strategy<Value = BitString> {
    prop::collection::vec(0u8..2, len).prop_map(|b| BitString::new(b).unwrap())
}

fn same_length_triple() -> impl Strategy<Value = (BitString, BitString, BitString)> {
    (1usize..16).prop_flat_map(|n| (bits(n), bits(n), bits(n)))
}

fn strengths(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, 3)
}

fn simplex_point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 3).prop_filter_map("degenerate", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn hamming_is_a_metric((a, b, c) in same_length_triple()) {
        prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
        let ab = hamming(&a, &b).unwrap();
        prop_assert_eq!(ab, hamming(&b, &a).unwrap());
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        prop_assert_eq!(hamming(&a.complement(), &b.complement()).unwrap(), ab);
    }

    #[test]
    fn physical_image_collapses_exactly_the_global_flip((a, b, _) in same_length_triple()) {
        prop_assume!(a.len() >= 2);
        prop_assert_eq!(logical_to_physical(&a), logical_to_physical(&a.complement()));
        let same = logical_to_physical(&a) == logical_to_physical(&b);
        prop_assert_eq!(same, a == b || a == b.complement());
    }

    #[test]
    fn cost_is_nonnegative_and_zero_only_on_target(b in simplex_point(), t in simplex_point()) {
        let targets = TargetSpec::new(t.clone()).unwrap();
        let omega = cost(&b, &targets).unwrap();
        prop_assert!(omega >= 0.0);
        prop_assert_eq!(cost(&t, &targets).unwrap(), 0.0);
        let same = b.iter().zip(&t).all(|(x, y)| x == y);
        prop_assert_eq!(omega == 0.0, same);
    }

    #[test]
    fn histogram_bins_are_valid(p in simplex_point()) {
        let h = SimplexHistogram::new(20);
        let key = h.bin_of(&p);
        prop_assert!(h.bins().iter().any(|b| b.0 == key));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn ground_manifold_is_gauge_invariant(c in strengths(1.0, 10.0)) {
        prop_assert!(four_spin_lhz(&c).unwrap().ground_manifold_is_exact().unwrap());
    }

    #[test]
    fn effective_hamiltonian_is_symmetric(c in strengths(1.0, 10.0), s in 0.05f64..0.99) {
        let heff = build_effective(&four_spin_lhz(&c).unwrap()).unwrap();
        let h = heff.at_fraction(s).unwrap();
        prop_assert!((&h - h.transpose()).amax() == 0.0);
    }

    #[test]
    fn freeze_time_lies_inside_the_sweep(c in strengths(1.0, 10.0)) {
        let schedule = Schedule::linear(100.0).unwrap();
        let heff = build_effective(&four_spin_lhz(&c).unwrap()).unwrap();
        let est = estimate_td(&heff, &schedule).unwrap();
        prop_assert!(est.td > 0.0 && est.td < 100.0);
    }

    #[test]
    fn effective_dynamics_preserves_norm(c in strengths(1.0, 10.0)) {
        let schedule = Schedule::linear(100.0).unwrap();
        let heff = build_effective(&four_spin_lhz(&c).unwrap()).unwrap();
        let run = propagate_effective(&heff, &schedule, 10.0, &PropagationOptions::with_steps(500)).unwrap();
        prop_assert!((run.final_probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
