//! Cross-checks between the truncated kernels, the resolvent family and
//! simulation.

use approx::assert_abs_diff_eq;

use bgwqsd_core::kernel::{build_kernel_exact, build_kernel_mc, spectral_radius};
use bgwqsd_core::model::StateVector;
use bgwqsd_core::montecarlo::{simulate_batch, simulate_with, SimOptions, Start};
use bgwqsd_core::presets;
use bgwqsd_core::qsdfamily::{build_family, default_lambda_grid};

const CAP: usize = 1_000_000;

#[test]
fn truncated_radius_grows_with_the_box() {
    let spec = presets::model_b();
    let mut last = 0.0;
    for r in [2, 4, 8, 16, 32] {
        let k = build_kernel_exact(&spec, r, CAP).unwrap();
        let theta = spectral_radius(&k, 1e-13, 100_000).unwrap().theta;
        assert!(theta >= last - 1e-12, "theta({r}) = {theta} < {last}");
        last = theta;
    }
    assert!(last < 0.75);
}

#[test]
fn right_eigenvector_is_monotone_on_comparable_states() {
    let spec = presets::model_b();
    let k = build_kernel_exact(&spec, 24, CAP).unwrap();
    let q = spectral_radius(&k, 1e-13, 100_000).unwrap();
    for i in 0..k.len() {
        for j in 0..k.len() {
            if k.index().state(i).le(k.index().state(j)) {
                assert!(
                    q.eta[i] <= q.eta[j] * (1.0 + 1e-9),
                    "eta not monotone between {i} and {j}"
                );
            }
        }
    }
}

#[test]
fn simulated_survival_matches_kernel_powers() {
    let spec = presets::model_b();
    let k = build_kernel_exact(&spec, 60, CAP).unwrap();
    let n_traj = 400_000u64;
    let b = simulate_batch(&spec, &StateVector::new(vec![1]), 8, n_traj, 5).unwrap();
    let mut v = vec![0.0; k.len()];
    v[0] = 1.0;
    for n in 1..=8 {
        v = k.apply_left(&v);
        let exact: f64 = v.iter().sum();
        let frac = b.survivors[n] as f64 / n_traj as f64;
        let sigma = (exact * (1.0 - exact) / n_traj as f64).sqrt();
        // Mass escaping R = 60 within eight steps is negligible here.
        assert!((frac - exact).abs() <= 4.0 * sigma + 1e-6, "n = {n}: {frac} vs {exact}");
    }
}

#[test]
fn sampled_kernel_approaches_exact_kernel() {
    let spec = presets::model_a();
    let exact = build_kernel_exact(&spec, 6, CAP).unwrap();
    let mc = build_kernel_mc(&spec, 6, 200_000, 3).unwrap();
    for i in 0..exact.len() {
        for j in 0..exact.len() {
            assert_abs_diff_eq!(exact.entry(i, j), mc.entry(i, j), epsilon = 5e-3);
        }
    }
    let a = spectral_radius(&exact, 1e-13, 100_000).unwrap().theta;
    let b = spectral_radius(&mc, 1e-13, 100_000).unwrap().theta;
    assert_abs_diff_eq!(a, b, epsilon = 5e-3);
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let spec = presets::model_b();
    let start = Start::Fixed(StateVector::new(vec![2]));
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_with(&spec, &start, 10, 20_000, 99, &SimOptions::default()).unwrap())
    };
    let (one, many) = (run(1), run(4));
    assert_eq!(one.survivors, many.survivors);
    assert_eq!(one.fates, many.fates);
    assert_eq!(one.states_at, many.states_at);
}

#[test]
fn family_normalizers_are_positive_and_identities_hold() {
    let spec = presets::model_b();
    let k = build_kernel_exact(&spec, 16, CAP).unwrap();
    let theta = spectral_radius(&k, 1e-13, 100_000).unwrap().theta;
    let anchors: Vec<StateVector> = (1..=4).map(|i| StateVector::new(vec![i])).collect();
    let rep = build_family(&k, theta, &default_lambda_grid(theta), &anchors, 1e-15).unwrap();
    assert!(rep.max_identity_residual <= 1e-10);
    for e in &rep.entries {
        assert!(e.normalizer > 0.0);
        assert_abs_diff_eq!(e.mu.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn step_law_is_reproducible_bit_for_bit() {
    use bgwqsd_core::model::step_distribution;
    let spec = presets::model_b();
    let z = StateVector::new(vec![64]);
    let a = step_distribution(&spec, &z, CAP).unwrap();
    let b = step_distribution(&spec, &z, CAP).unwrap();
    let bits =
        |d: &bgwqsd_core::model::StepDistribution<f64>| d.outcomes.values().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
