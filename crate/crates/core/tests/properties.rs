//! Structural invariants of the mating operator, the eigenfunction and the
//! one-step law, checked on random inputs.

use approx::assert_relative_eq;
use proptest::prelude::*;

use bgwqsd_core::model::{step, step_distribution, ModelSpec, StateVector};
use bgwqsd_core::presets;
use bgwqsd_core::spectral::{eval_p, operator_m, power_iterate};
use bgwqsd_core::CounterRng;

const CAP: usize = 1_000_000;

fn specs() -> Vec<ModelSpec> {
    vec![presets::model_a(), presets::model_b(), presets::classical_two_type()]
}

fn point(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..8.0, p)
}

fn counts(p: usize, max: u64) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0..=max, p)
}

fn leq(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| *x <= *y + 1e-12 * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn growth_operator_is_homogeneous(which in 0usize..3, x in point(2), c in 0.05f64..20.0) {
        let spec = &specs()[which];
        let x = &x[..spec.p()];
        let mx = operator_m(spec, x).unwrap();
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let mcx = operator_m(spec, &cx).unwrap();
        for (a, b) in mx.iter().zip(&mcx) {
            assert_relative_eq!(c * a, *b, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn growth_operator_is_monotone_and_concave(which in 0usize..3, x in point(2), y in point(2), t in 0.0f64..1.0) {
        let spec = &specs()[which];
        let (x, y) = (&x[..spec.p()], &y[..spec.p()]);
        let mx = operator_m(spec, x).unwrap();
        let my = operator_m(spec, y).unwrap();
        let sum: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
        prop_assert!(leq(&mx, &operator_m(spec, &sum).unwrap()));
        let mix: Vec<f64> = x.iter().zip(y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let chord: Vec<f64> = mx.iter().zip(&my).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        prop_assert!(leq(&chord, &operator_m(spec, &mix).unwrap()));
    }

    #[test]
    fn mating_is_superadditive(which in 0usize..3, a in counts(2, 40), b in counts(2, 40)) {
        let xi = specs()[which].mating().clone();
        let (a, b) = (&a[..xi.q()], &b[..xi.q()]);
        let joint: Vec<u64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let sum = &xi.apply(a).unwrap() + &xi.apply(b).unwrap();
        prop_assert!(sum.le(&xi.apply(&joint).unwrap()));
    }

    /// Couples shared by `x ≤ y` draw the same offspring, so the coupled
    /// next states stay ordered.
    #[test]
    fn coupled_steps_preserve_order(which in 0usize..3, x in counts(2, 12), extra in counts(2, 12), seed in any::<u64>(), stream in any::<u32>()) {
        let spec = &specs()[which];
        let p = spec.p();
        let x = StateVector::new(x[..p].to_vec());
        let y = StateVector::new(x.counts().iter().zip(&extra).map(|(a, b)| a + b).collect());
        let rng = CounterRng::new(seed);
        let zx = step(spec, &x, &rng, stream as u64, 1).unwrap();
        let zy = step(spec, &y, &rng, stream as u64, 1).unwrap();
        prop_assert!(zx.le(&zy));
    }

    #[test]
    fn eigenfunction_is_a_supermartingale(which in 0usize..3, z in counts(2, 6)) {
        let spec = &specs()[which];
        let z = StateVector::new(z[..spec.p()].to_vec());
        prop_assume!(!z.is_zero());
        let s = power_iterate(spec, 1e-14, 10_000).unwrap();
        let law = step_distribution(spec, &z, CAP).unwrap();
        let mean: f64 = law.outcomes.iter().map(|(y, w)| w * eval_p(spec, &s, &y.as_f64(), 64).unwrap()).sum();
        let pz = eval_p(spec, &s, &z.as_f64(), 64).unwrap();
        prop_assert!(mean <= s.lambda_star * pz * (1.0 + 1e-10) + 1e-12, "E P(Z1) = {mean}, lambda* P(z) = {}", s.lambda_star * pz);
    }

    #[test]
    fn scaled_mean_is_bounded_by_growth_operator(which in 0usize..3, z in counts(2, 3), k in 1u64..=20) {
        let spec = &specs()[which];
        let z = StateVector::new(z[..spec.p()].to_vec());
        prop_assume!(!z.is_zero());
        let kz = StateVector::new(z.counts().iter().map(|c| c * k).collect());
        let mean = step_distribution(spec, &kz, CAP).unwrap().mean();
        let scaled: Vec<f64> = mean.iter().map(|v| v / k as f64).collect();
        prop_assert!(leq(&scaled, &operator_m(spec, &z.as_f64()).unwrap()));
    }

    #[test]
    fn step_law_is_a_probability_measure(which in 0usize..3, z in counts(2, 8)) {
        let spec = &specs()[which];
        let z = StateVector::new(z[..spec.p()].to_vec());
        let law = step_distribution(spec, &z, CAP).unwrap();
        assert_relative_eq!(law.total(), 1.0, epsilon = 1e-12);
        prop_assert!(law.outcomes.values().all(|&w| w >= 0.0));
    }
}
