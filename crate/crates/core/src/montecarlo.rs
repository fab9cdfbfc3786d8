//! Trajectory ensembles, survival-decay estimates of `θ₀` and conditional
//! (Yaglom) laws.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{least_squares, QsdEstimate, TruncatedKernel};
use crate::model::{sample_children, ModelSpec, StateVector};
use crate::rng::{CounterRng, DrawKey};

/// Survivors required at the end of the regression window.
pub const MIN_SURVIVORS: u64 = 50;
/// Survivors required for a conditional law.
pub const CONDITIONAL_THRESHOLD: u64 = 200;
/// Bootstrap replicates for the `θ̂₀` interval.
pub const BOOTSTRAP_REPLICATES: usize = 400;
/// Fraction of the horizons treated as transient.
pub const TRANSIENT_FRACTION: f64 = 0.2;

const CHUNK: u64 = 4096;

/// Fate of one path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathFate {
    /// Extinct at the given generation (`0` only for a null start).
    Extinct(u32),
    /// Alive at the horizon.
    Censored,
    /// Population exceeded the cap at the given generation; the path is
    /// stopped and counted as alive thereafter.
    Capped(u32),
}

/// Initial state of every path.
#[derive(Clone, Debug)]
pub enum Start {
    Fixed(StateVector),
    /// Sampled from a finite law, e.g. a computed QSD.
    Law(Vec<(StateVector, f64)>),
}

#[derive(Clone, Debug)]
pub enum Recording {
    None,
    All,
    At(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub recording: Recording,
    /// Largest total number of couples before a path is stopped.
    pub population_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            recording: Recording::All,
            population_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub spec_digest: String,
    /// `None` when the start was sampled from a law.
    pub z0: Option<StateVector>,
    pub horizon: usize,
    pub n_traj: u64,
    pub seed: u64,
    pub fates: Vec<PathFate>,
    /// Paths alive at `n = 0..=horizon`.
    pub survivors: Vec<u64>,
    /// Survivor histograms at the recorded generations.
    pub states_at: BTreeMap<usize, BTreeMap<StateVector, u64>>,
    pub capped: u64,
}

impl TrajectoryBatch {
    pub fn survival_fractions(&self) -> Vec<f64> {
        self.survivors.iter().map(|&s| s as f64 / self.n_traj as f64).collect()
    }
}

/// Reserved key for sampling initial states; no couple draw uses it.
fn start_key(path: u64) -> DrawKey {
    DrawKey {
        stream: path,
        generation: (1 << 24) - 1,
        parent_type: 255,
        index: 0,
    }
}

pub fn simulate_batch(
    spec: &ModelSpec,
    z0: &StateVector,
    horizon: usize,
    n_traj: u64,
    seed: u64,
) -> Result<TrajectoryBatch> {
    simulate_with(
        spec,
        &Start::Fixed(z0.clone()),
        horizon,
        n_traj,
        seed,
        &SimOptions::default(),
    )
}

/// Path `i` uses stream `i`; couple `k` of type `t` at generation `n` draws
/// with key `(i, n, t, k)`.
pub fn simulate_with(
    spec: &ModelSpec,
    start: &Start,
    horizon: usize,
    n_traj: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<TrajectoryBatch> {
    if n_traj == 0 {
        return Err(Error::Domain("n_traj must be at least 1".into()));
    }
    if horizon >= (1 << 24) - 1 {
        return Err(Error::Domain("horizon too large for the stream layout".into()));
    }
    let cumulative = match start {
        Start::Fixed(z) => {
            if z.len() != spec.p() {
                return Err(Error::Domain(format!(
                    "start state {z} does not have length {}",
                    spec.p()
                )));
            }
            None
        }
        Start::Law(law) => {
            let total: f64 = law.iter().map(|(_, w)| w).sum();
            if law.is_empty() || !(total > 0.0) || law.iter().any(|(z, w)| *w < 0.0 || z.len() != spec.p()) {
                return Err(Error::Domain(
                    "start law must be a non-empty non-negative measure".into(),
                ));
            }
            let mut acc = 0.0;
            Some(
                law.iter()
                    .map(|(z, w)| {
                        acc += w / total;
                        (acc, z.clone())
                    })
                    .collect::<Vec<_>>(),
            )
        }
    };
    let record: Vec<bool> = (0..=horizon)
        .map(|n| match &opts.recording {
            Recording::None => false,
            Recording::All => true,
            Recording::At(list) => list.contains(&n),
        })
        .collect();
    let rng = CounterRng::new(seed);

    struct Chunk {
        fates: Vec<PathFate>,
        survivors: Vec<u64>,
        hist: Vec<HashMap<StateVector, u64>>,
    }
    let chunks: Vec<Chunk> = (0..n_traj.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = Chunk {
                fates: Vec::new(),
                survivors: vec![0; horizon + 1],
                hist: vec![HashMap::new(); horizon + 1],
            };
            let mut w = vec![0u64; spec.q()];
            let mut y = vec![0u64; spec.p()];
            for path in c * CHUNK..((c + 1) * CHUNK).min(n_traj) {
                let mut z: Vec<u64> = match (&cumulative, start) {
                    (Some(cum), _) => {
                        let u = rng.uniform(start_key(path));
                        let i = cum.partition_point(|(c, _)| *c <= u).min(cum.len() - 1);
                        cum[i].1.counts().to_vec()
                    }
                    (None, Start::Fixed(z)) => z.counts().to_vec(),
                    (None, Start::Law(_)) => unreachable!(),
                };
                let mut fate = PathFate::Censored;
                for n in 0..=horizon {
                    if z.iter().all(|&c| c == 0) {
                        fate = PathFate::Extinct(n as u32);
                        break;
                    }
                    out.survivors[n] += 1;
                    if record[n] {
                        *out.hist[n].entry(StateVector::new(z.clone())).or_default() += 1;
                    }
                    if n == horizon {
                        break;
                    }
                    if z.iter().sum::<u64>() > opts.population_cap {
                        fate = PathFate::Capped(n as u32);
                        for later in out.survivors.iter_mut().skip(n + 1) {
                            *later += 1;
                        }
                        break;
                    }
                    sample_children(spec, &z, &rng, path, n as u64 + 1, &mut w);
                    spec.mating().apply_into(&w, &mut y)?;
                    z.copy_from_slice(&y);
                }
                out.fates.push(fate);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut fates = Vec::with_capacity(n_traj as usize);
    let mut survivors = vec![0; horizon + 1];
    let mut states_at: BTreeMap<usize, BTreeMap<StateVector, u64>> = BTreeMap::new();
    for (n, &r) in record.iter().enumerate() {
        if r {
            states_at.insert(n, BTreeMap::new());
        }
    }
    for chunk in chunks {
        fates.extend(chunk.fates);
        for (acc, s) in survivors.iter_mut().zip(chunk.survivors) {
            *acc += s;
        }
        for (n, h) in chunk.hist.into_iter().enumerate() {
            if let Some(target) = states_at.get_mut(&n) {
                for (z, c) in h {
                    *target.entry(z).or_default() += c;
                }
            }
        }
    }
    let capped = fates.iter().filter(|f| matches!(f, PathFate::Capped(_))).count() as u64;
    Ok(TrajectoryBatch {
        spec_digest: spec.digest(),
        z0: match start {
            Start::Fixed(z) => Some(z.clone()),
            Start::Law(_) => None,
        },
        horizon,
        n_traj,
        seed,
        fates,
        survivors,
        states_at,
        capped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theta0Estimate {
    pub theta_hat: f64,
    /// 95% percentile bootstrap interval.
    pub ci: (f64, f64),
    pub window: (usize, usize),
}

fn window_end(survivors: &[u64]) -> Option<usize> {
    survivors.iter().rposition(|&s| s >= MIN_SURVIVORS)
}

fn regression_rate(survivors: &[u64], n_traj: u64, window: (usize, usize)) -> f64 {
    let xs: Vec<f64> = (window.0..=window.1).map(|n| n as f64).collect();
    let ys: Vec<f64> = (window.0..=window.1)
        .map(|n| (survivors[n] as f64 / n_traj as f64).ln())
        .collect();
    least_squares(&xs, &ys).0.exp()
}

/// Exponential rate of the survivor curve over the largest window ending
/// with at least [`MIN_SURVIVORS`] survivors, minus its transient head.
pub fn estimate_theta0(batch: &TrajectoryBatch) -> Result<Theta0Estimate> {
    let hi = window_end(&batch.survivors).unwrap_or(0);
    let lo = (TRANSIENT_FRACTION * hi as f64).round() as usize;
    if hi < 1 || hi - lo < 1 {
        return Err(Error::Statistics(format!(
            "fewer than {MIN_SURVIVORS} survivors beyond generation {hi}; increase n_traj"
        )));
    }
    let window = (lo, hi);
    let theta_hat = regression_rate(&batch.survivors, batch.n_traj, window);

    // Survivors at n are the paths whose fate lies beyond n, so resampling
    // the fate counts resamples whole paths.
    let mut fate_counts = vec![0u64; batch.horizon + 2];
    for f in &batch.fates {
        let slot = match *f {
            PathFate::Extinct(t) => t as usize,
            PathFate::Censored | PathFate::Capped(_) => batch.horizon + 1,
        };
        fate_counts[slot] += 1;
    }
    let mut aux = CounterRng::new(batch.seed).auxiliary(0xb007);
    let mut rates = Vec::with_capacity(BOOTSTRAP_REPLICATES);
    for _ in 0..BOOTSTRAP_REPLICATES {
        let resampled = multinomial(&mut aux, batch.n_traj, &fate_counts);
        let mut surv = vec![0u64; batch.horizon + 1];
        let mut alive = batch.n_traj;
        for (n, s) in surv.iter_mut().enumerate() {
            alive -= resampled[n];
            *s = alive;
        }
        if (lo..=hi).all(|n| surv[n] > 0) {
            rates.push(regression_rate(&surv, batch.n_traj, window));
        }
    }
    if rates.len() < BOOTSTRAP_REPLICATES / 2 {
        return Err(Error::Statistics(
            "bootstrap replicates lost every survivor; increase n_traj".into(),
        ));
    }
    rates.sort_by(f64::total_cmp);
    let q = |p: f64| rates[((p * (rates.len() - 1) as f64).round() as usize).min(rates.len() - 1)];
    Ok(Theta0Estimate {
        theta_hat,
        ci: (q(0.025), q(0.975)),
        window,
    })
}

fn multinomial(rng: &mut impl Rng, n: u64, counts: &[u64]) -> Vec<u64> {
    let total: u64 = counts.iter().sum();
    let mut remaining_n = n;
    let mut remaining_w = total;
    counts
        .iter()
        .map(|&c| {
            if remaining_n == 0 || remaining_w == 0 {
                return 0;
            }
            let p = (c as f64 / remaining_w as f64).min(1.0);
            let k = Binomial::new(remaining_n, p).expect("valid binomial").sample(rng);
            remaining_n -= k;
            remaining_w -= c;
            k
        })
        .collect()
}

/// Empirical law of the survivors at generation `n`.
pub fn conditional_law(batch: &TrajectoryBatch, n: usize, threshold: u64) -> Result<BTreeMap<StateVector, f64>> {
    let hist = batch
        .states_at
        .get(&n)
        .ok_or_else(|| Error::Domain(format!("generation {n} was not recorded")))?;
    let total: u64 = hist.values().sum();
    if total < threshold.max(1) {
        return Err(Error::Statistics(format!(
            "{total} survivors at generation {n}, below the threshold {threshold}"
        )));
    }
    Ok(hist
        .iter()
        .map(|(z, &c)| (z.clone(), c as f64 / total as f64))
        .collect())
}

/// `½ Σ |μ(z) − ν(z)|`.
pub fn tv_distance(mu: &BTreeMap<StateVector, f64>, nu: &BTreeMap<StateVector, f64>) -> f64 {
    let mut sum = 0.0;
    for (z, a) in mu {
        sum += (a - nu.get(z).copied().unwrap_or(0.0)).abs();
    }
    for (z, b) in nu {
        if !mu.contains_key(z) {
            sum += b.abs();
        }
    }
    0.5 * sum
}

/// The left eigenvector of a kernel as a law on states.
pub fn qsd_law(k: &TruncatedKernel, q: &QsdEstimate) -> BTreeMap<StateVector, f64> {
    k.index()
        .states()
        .iter()
        .zip(&q.nu)
        .filter(|(_, &w)| w > 0.0)
        .map(|(z, &w)| (z.clone(), w))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct YaglomRow {
    pub n: usize,
    pub survivors: u64,
    /// `None` below the survivor threshold.
    pub tv: Option<f64>,
    /// Expected TV of an exact sample of this size against its own law.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct YaglomReport {
    pub rows: Vec<YaglomRow>,
    /// Horizons used for the envelope fit.
    pub fit_horizons: Vec<usize>,
    pub gamma_hat: Option<f64>,
    /// `C` with `TV_n ≤ C γ̂ⁿ` on every horizon above the noise floor.
    pub envelope_c: Option<f64>,
    /// `|λ₂|/λ₁` of the kernel, if small enough for a dense solve.
    pub gamma_ref: Option<f64>,
    /// TV strictly decreasing along the fit horizons.
    pub eventually_decreasing: bool,
}

/// Horizons whose TV is at least this multiple of the noise enter the fit.
pub const SIGNAL_TO_NOISE: f64 = 4.0;

/// TV between the conditional laws of a simulated ensemble and `ν`.
pub fn yaglom_convergence(
    spec: &ModelSpec,
    start: &Start,
    horizons: &[usize],
    k: &TruncatedKernel,
    q: &QsdEstimate,
    n_traj: u64,
    seed: u64,
) -> Result<YaglomReport> {
    let horizon = horizons.iter().copied().max().unwrap_or(0);
    let opts = SimOptions {
        recording: Recording::At(horizons.to_vec()),
        ..SimOptions::default()
    };
    let batch = simulate_with(spec, start, horizon, n_traj, seed, &opts)?;
    let nu = qsd_law(k, q);
    let mut rows = Vec::with_capacity(horizons.len());
    for &n in horizons {
        let survivors = batch.survivors[n];
        let noise = nu
            .values()
            .map(|&p| 0.5 * (2.0 * p * (1.0 - p) / (std::f64::consts::PI * survivors.max(1) as f64)).sqrt())
            .sum();
        let tv = match conditional_law(&batch, n, CONDITIONAL_THRESHOLD) {
            Ok(law) => Some(tv_distance(&law, &nu)),
            Err(Error::Statistics(_)) => None,
            Err(e) => return Err(e),
        };
        rows.push(YaglomRow {
            n,
            survivors,
            tv,
            noise,
        });
    }

    let signal: Vec<&YaglomRow> = rows
        .iter()
        .filter(|r| r.tv.is_some_and(|tv| tv >= SIGNAL_TO_NOISE * r.noise))
        .collect();
    let skip = (TRANSIENT_FRACTION * signal.len() as f64).round() as usize;
    let fit: Vec<&YaglomRow> = signal[skip..].to_vec();
    let fit_horizons: Vec<usize> = fit.iter().map(|r| r.n).collect();
    let (gamma_hat, envelope_c) = if fit.len() >= 2 {
        let xs: Vec<f64> = fit.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = fit.iter().map(|r| r.tv.unwrap().ln()).collect();
        let gamma = least_squares(&xs, &ys).0.exp();
        let c = signal
            .iter()
            .map(|r| r.tv.unwrap() / gamma.powi(r.n as i32))
            .fold(0.0, f64::max);
        (Some(gamma), Some(c))
    } else {
        (None, None)
    };
    let eventually_decreasing = fit.len() >= 2 && fit.windows(2).all(|w| w[1].tv < w[0].tv);
    Ok(YaglomReport {
        rows,
        fit_horizons,
        gamma_hat,
        envelope_c,
        gamma_ref: eigen_ratio(k),
        eventually_decreasing,
    })
}

/// Size limit for the dense eigenvalue ratio.
pub const DENSE_RATIO_LIMIT: usize = 1500;

/// Second over first eigenvalue modulus of the kernel.
pub fn eigen_ratio(k: &TruncatedKernel) -> Option<f64> {
    if k.len() < 2 || k.len() > DENSE_RATIO_LIMIT {
        return None;
    }
    let mut moduli: Vec<f64> = k.to_dense().complex_eigenvalues().iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    (moduli[0] > 0.0).then(|| moduli[1] / moduli[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn sv(v: &[u64]) -> StateVector {
        StateVector::new(v.to_vec())
    }

    #[test]
    fn null_start_is_extinct_at_zero() {
        let b = simulate_batch(&presets::model_a(), &sv(&[0]), 5, 100, 1).unwrap();
        assert!(b.fates.iter().all(|f| *f == PathFate::Extinct(0)));
        assert_eq!(b.survivors, vec![0; 6]);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_batch(&presets::model_b(), &sv(&[2]), 10, 10_000, 9).unwrap();
        let b = simulate_batch(&presets::model_b(), &sv(&[2]), 10, 10_000, 9).unwrap();
        assert_eq!(a.fates, b.fates);
        assert_eq!(a.states_at, b.states_at);
        assert!(a.survivors.windows(2).all(|w| w[1] <= w[0]));
        for f in &a.fates {
            if let PathFate::Extinct(t) = f {
                assert!(*t >= 1);
            }
        }
    }

    #[test]
    fn model_a_conditional_law_is_point_mass() {
        let b = simulate_batch(&presets::model_a(), &sv(&[1]), 3, 100_000, 4).unwrap();
        for n in 0..=2 {
            let law = conditional_law(&b, n, CONDITIONAL_THRESHOLD).unwrap();
            assert_eq!(law, BTreeMap::from([(sv(&[1]), 1.0)]));
        }
        assert!(matches!(conditional_law(&b, 3, 1_000_000), Err(Error::Statistics(_))));
    }

    #[test]
    fn extinction_model_has_no_rate() {
        let law = crate::model::OffspringLaw::sex_split(
            &[crate::model::Prob::ratio(1, 1).unwrap()],
            &crate::model::Prob::ratio(1, 2).unwrap(),
        )
        .unwrap();
        let spec = ModelSpec::new(crate::model::MatingFunction::perfect_fidelity(), law).unwrap();
        let b = simulate_batch(&spec, &sv(&[3]), 5, 1000, 1).unwrap();
        assert_eq!(b.survivors[1], 0);
        assert!(matches!(estimate_theta0(&b), Err(Error::Statistics(_))));
    }

    #[test]
    fn tv_properties() {
        let a = BTreeMap::from([(sv(&[1]), 0.5), (sv(&[2]), 0.5)]);
        let b = BTreeMap::from([(sv(&[1]), 0.2), (sv(&[3]), 0.8)]);
        assert_eq!(tv_distance(&a, &a), 0.0);
        assert!((tv_distance(&a, &b) - 0.8).abs() < 1e-15);
        assert_eq!(tv_distance(&a, &b), tv_distance(&b, &a));
    }

    #[test]
    fn classical_rate() {
        let spec = presets::classical_two_type();
        let b = simulate_batch(&spec, &sv(&[1, 0]), 30, 200_000, 12).unwrap();
        let est = estimate_theta0(&b).unwrap();
        let slack = 0.01;
        assert!(est.ci.0 - slack <= 0.6 && 0.6 <= est.ci.1 + slack, "{est:?}");
    }
}
