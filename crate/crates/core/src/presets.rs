//! Reference models used throughout the tests, benches and examples.

use crate::model::{MatingFunction, ModelSpec, OffspringLaw, Prob};

fn ratio(n: i64, d: i64) -> Prob {
    Prob::ratio(n, d).expect("valid probability")
}

/// Perfect-fidelity model: a couple has 0, 1 or 2 children with
/// probabilities 1/2, 1/4, 1/4, each child female with probability 1/2.
/// Offspring means are (3/8, 3/8), so the growth rate is 3/8 and the
/// number of couples never increases.
pub fn model_a() -> ModelSpec {
    let law =
        OffspringLaw::sex_split(&[ratio(1, 2), ratio(1, 4), ratio(1, 4)], &ratio(1, 2)).expect("valid offspring law");
    ModelSpec::new(MatingFunction::perfect_fidelity(), law).expect("valid model")
}

/// Promiscuous model: a couple has 0 to 3 children uniformly, each child
/// female with probability 1/2. Irreducible and aperiodic on the positive
/// integers, with growth rate 3/4.
pub fn model_b() -> ModelSpec {
    let quarter = ratio(1, 4);
    let law = OffspringLaw::sex_split(
        &[quarter.clone(), quarter.clone(), quarter.clone(), quarter],
        &ratio(1, 2),
    )
    .expect("valid offspring law");
    ModelSpec::new(MatingFunction::promiscuous(), law).expect("valid model")
}

/// Classical two-type Galton-Watson process (identity mating) with mean
/// matrix `[[0.5, 0.2], [0.1, 0.4]]`, Perron root 0.6.
pub fn classical_two_type() -> ModelSpec {
    let p = |s: &str| Prob::parse(s).expect("valid probability");
    let law = OffspringLaw::new(
        2,
        vec![
            vec![
                (vec![0, 0], p("0.4")),
                (vec![1, 0], p("0.3")),
                (vec![0, 1], p("0.2")),
                (vec![2, 0], p("0.1")),
            ],
            vec![
                (vec![0, 0], p("0.6")),
                (vec![1, 0], p("0.1")),
                (vec![0, 1], p("0.2")),
                (vec![0, 2], p("0.1")),
            ],
        ],
    )
    .expect("valid offspring law");
    ModelSpec::new(MatingFunction::identity(2), law).expect("valid model")
}
