//! Lyapunov drift for `Q_a = 𝒫^a` and the exponential-convergence
//! criterion (E1)–(E4) on truncated kernels.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::StateIndex;
use crate::kernel::{build_kernel_exact, survival_all, TruncatedKernel};
use crate::model::{sample_children, step_distribution, ModelSpec, StateVector};
use crate::qsdfamily::geometric_grid;
use crate::rng::CounterRng;
use crate::spectral::{Potential, SpectralResult};

#[derive(Clone, Debug, PartialEq)]
pub struct MomentCheck {
    pub pass: bool,
    /// `θ̂₀ − (λ*)^r`.
    pub margin: f64,
    /// `log θ̂₀ / log λ*`: exponents above it satisfy the assumption.
    pub r_min: f64,
    pub reason: Option<String>,
}

/// `(λ*)^r < θ̂₀`. Finite-support offspring laws have every moment.
pub fn check_moment_assumption(s: &SpectralResult, theta0_hat: f64, r: f64) -> MomentCheck {
    let lambda = s.lambda_star;
    if !(r > 1.0) {
        return MomentCheck {
            pass: false,
            margin: f64::NAN,
            r_min: f64::NAN,
            reason: Some(format!("moment exponent r = {r} must exceed 1")),
        };
    }
    if !(lambda < 1.0) {
        return MomentCheck {
            pass: false,
            margin: f64::NAN,
            r_min: f64::NAN,
            reason: Some(format!("not subcritical: lambda* = {lambda}")),
        };
    }
    let margin = theta0_hat - lambda.powf(r);
    let r_min = theta0_hat.ln() / lambda.ln();
    MomentCheck {
        pass: margin > 0.0,
        margin,
        r_min,
        reason: (margin <= 0.0).then(|| format!("(lambda*)^r = {} >= theta0 = {theta0_hat}", lambda.powf(r))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DriftMode {
    /// Exact one-step laws; `cap` bounds the children-law support.
    Exact {
        cap: usize,
    },
    MonteCarlo {
        samples: u64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftRow {
    pub state: StateVector,
    pub q_a: f64,
    /// `𝔼_z[Q_a(Z₁)1_{Z₁≠0}]`.
    pub lhs: f64,
    /// Half-width of the 95% interval in Monte Carlo mode.
    pub ci: Option<f64>,
}

/// Ratio `lhs/Q_a` along `k·z*`, which tends to `(λ*)^a`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOneTrend {
    pub target: f64,
    /// `(k, state, ratio)` for `k = 1..=R`.
    pub ladder: Vec<(u64, StateVector, f64)>,
    /// `|r₁ − (λ*)^a|`.
    pub band: f64,
    pub within_band: bool,
    /// Doubling continuation `k_R · 2^j`.
    pub tail: Vec<(u64, f64)>,
    /// Distance to the target strictly decreasing along the tail.
    pub tail_monotone: bool,
}

impl StepOneTrend {
    pub fn passed(&self) -> bool {
        self.within_band && self.tail_monotone
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovReport {
    pub a: f64,
    pub theta_a: f64,
    pub c_a: f64,
    pub checked_radius: u64,
    /// `(state, lhs, rhs)`.
    pub violations: Vec<(StateVector, f64, f64)>,
    /// Monte Carlo states whose interval straddles the bound.
    pub undetermined: Vec<StateVector>,
    pub mode: DriftMode,
    pub theta0_hat: f64,
    pub theta_a_below_theta0: bool,
    pub rows: Vec<DriftRow>,
    pub trend: Option<StepOneTrend>,
}

impl LyapunovReport {
    pub fn violation_free(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack when re-checking `lhs ≤ θ_a Q_a + C_a`.
const DRIFT_SLACK: f64 = 1e-12;

/// Number of grid points for `θ_a`.
pub const THETA_GRID_POINTS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct DriftFit {
    pub theta_a: f64,
    pub c_a: f64,
    /// A grid point below `θ̂₀` dominates the outer shell.
    pub feasible: bool,
}

/// Picks the smallest grid point `θ` in `((λ*)^a, θ̂₀)` with
/// `lhs ≤ θ Q_a` on the outer shell `R/2 < |z| ≤ R`; the inner states are
/// absorbed into `C_a = max(0, max_z lhs − θ Q_a)`.
pub fn fit_drift(rows: &[(u64, f64, f64)], radius: u64, lambda_a: f64, theta0_hat: f64) -> DriftFit {
    // Open interval: drop both endpoints of a 66-point grid.
    let grid = geometric_grid(lambda_a, theta0_hat, THETA_GRID_POINTS + 2);
    let grid = &grid[1..=THETA_GRID_POINTS];
    let shell_ratio = rows
        .iter()
        .filter(|&&(norm, _, _)| 2 * norm > radius)
        .map(|&(_, q, lhs)| lhs / q)
        .fold(0.0, f64::max);
    let (theta_a, feasible) = match grid.iter().find(|&&t| t >= shell_ratio) {
        Some(&t) => (t, true),
        None => (shell_ratio.max(theta0_hat), false),
    };
    let c_a = rows.iter().map(|&(_, q, lhs)| lhs - theta_a * q).fold(0.0, f64::max);
    DriftFit { theta_a, c_a, feasible }
}

/// Checks `𝔼_z[Q_a(Z₁)1] ≤ θ_a Q_a(z) + C_a` on `0 < |z| ≤ R`.
pub fn verify_drift(
    spec: &ModelSpec,
    s: &SpectralResult,
    a: f64,
    radius: u64,
    mode: &DriftMode,
    theta0_hat: f64,
) -> Result<LyapunovReport> {
    let lambda_a = s.lambda_star.powf(a);
    if !(a > 1.0) || !(lambda_a < theta0_hat) {
        return Err(Error::Domain(format!(
            "need a > 1 and (lambda*)^a = {lambda_a} below theta0 = {theta0_hat}"
        )));
    }
    if radius == 0 {
        return Err(Error::Domain("radius must be positive".into()));
    }
    let states = StateIndex::ball(spec.p(), radius).states().to_vec();
    let mut potential = Potential::new(spec, s);
    let rows = drift_rows(spec, &mut potential, a, &states, mode)?;

    let triples: Vec<(u64, f64, f64)> = rows.iter().map(|r| (r.state.norm1(), r.q_a, r.lhs)).collect();
    let fit = fit_drift(&triples, radius, lambda_a, theta0_hat);
    let mut violations = Vec::new();
    let mut undetermined = Vec::new();
    for r in &rows {
        let rhs = fit.theta_a * r.q_a + fit.c_a;
        let slack = DRIFT_SLACK * rhs.max(1.0);
        match r.ci {
            None if r.lhs > rhs + slack => violations.push((r.state.clone(), r.lhs, rhs)),
            Some(ci) if r.lhs - ci > rhs + slack => violations.push((r.state.clone(), r.lhs, rhs)),
            Some(ci) if r.lhs + ci > rhs + slack => undetermined.push(r.state.clone()),
            _ => {}
        }
    }
    let trend = match mode {
        DriftMode::Exact { cap } => Some(step_one_trend(spec, s, &mut potential, a, radius, *cap)?),
        DriftMode::MonteCarlo { .. } => None,
    };
    Ok(LyapunovReport {
        a,
        theta_a: fit.theta_a,
        c_a: fit.c_a,
        checked_radius: radius,
        violations,
        undetermined,
        mode: mode.clone(),
        theta0_hat,
        theta_a_below_theta0: fit.feasible && fit.theta_a < theta0_hat,
        rows,
        trend,
    })
}

fn drift_rows(
    spec: &ModelSpec,
    potential: &mut Potential<'_>,
    a: f64,
    states: &[StateVector],
    mode: &DriftMode,
) -> Result<Vec<DriftRow>> {
    match mode {
        DriftMode::Exact { cap } => {
            let laws = states
                .par_iter()
                .map(|z| step_distribution(spec, z, *cap))
                .collect::<Result<Vec<_>>>()?;
            states
                .iter()
                .zip(laws)
                .map(|(z, law)| {
                    let mut lhs = 0.0;
                    for (y, p) in &law.outcomes {
                        if !y.is_zero() {
                            lhs += p * potential.q_a(y, a)?;
                        }
                    }
                    Ok(DriftRow {
                        state: z.clone(),
                        q_a: potential.q_a(z, a)?,
                        lhs,
                        ci: None,
                    })
                })
                .collect()
        }
        DriftMode::MonteCarlo { samples, seed } => {
            if *samples < 2 {
                return Err(Error::Domain("Monte Carlo drift needs at least two samples".into()));
            }
            let rng = CounterRng::new(*seed);
            states
                .iter()
                .enumerate()
                .map(|(s_idx, z)| {
                    let outcomes: Vec<StateVector> = (0..*samples)
                        .into_par_iter()
                        .map(|k| {
                            let mut w = vec![0; spec.q()];
                            sample_children(spec, z.counts(), &rng, ((s_idx as u64) << 32) | k, 0, &mut w);
                            spec.mating().apply(&w)
                        })
                        .collect::<Result<_>>()?;
                    let mut tally: BTreeMap<StateVector, u64> = BTreeMap::new();
                    for y in outcomes {
                        *tally.entry(y).or_default() += 1;
                    }
                    let n = *samples as f64;
                    let (mut sum, mut sq) = (0.0, 0.0);
                    for (y, c) in &tally {
                        let v = if y.is_zero() { 0.0 } else { potential.q_a(y, a)? };
                        sum += v * *c as f64;
                        sq += v * v * *c as f64;
                    }
                    let mean = sum / n;
                    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
                    Ok(DriftRow {
                        state: z.clone(),
                        q_a: potential.q_a(z, a)?,
                        lhs: mean,
                        ci: Some(1.96 * (var / n).sqrt()),
                    })
                })
                .collect()
        }
    }
}

/// Doublings beyond the checked radius in the trend ladder.
pub const TREND_DOUBLINGS: u32 = 4;

fn step_one_trend(
    spec: &ModelSpec,
    s: &SpectralResult,
    potential: &mut Potential<'_>,
    a: f64,
    radius: u64,
    cap: usize,
) -> Result<StepOneTrend> {
    let target = s.lambda_star.powf(a);
    let top = s.z_star.iter().cloned().fold(0.0, f64::max);
    let direction: Vec<f64> = s.z_star.iter().map(|z| z / top).collect();
    let mut ratio_at = |k: u64| -> Result<Option<(StateVector, f64)>> {
        let x = StateVector::new(direction.iter().map(|d| (k as f64 * d).round() as u64).collect());
        if x.is_zero() {
            return Ok(None);
        }
        let law = step_distribution(spec, &x, cap)?;
        let mut lhs = 0.0;
        for (y, p) in &law.outcomes {
            if !y.is_zero() {
                lhs += p * potential.q_a(y, a)?;
            }
        }
        let q = potential.q_a(&x, a)?;
        Ok(Some((x, lhs / q)))
    };
    let mut ladder = Vec::new();
    for k in 1..=radius {
        if let Some((x, r)) = ratio_at(k)? {
            ladder.push((k, x, r));
        }
    }
    let band = ladder.first().map_or(f64::INFINITY, |(_, _, r)| (r - target).abs());
    let within_band = ladder.iter().all(|(_, _, r)| (r - target).abs() <= band);
    let mut tail = Vec::new();
    if let Some((k_last, _, r_last)) = ladder.last().cloned() {
        tail.push((k_last, r_last));
        for j in 1..=TREND_DOUBLINGS {
            let k = k_last << j;
            if let Some((_, r)) = ratio_at(k)? {
                tail.push((k, r));
            }
        }
    }
    let tail_monotone = tail
        .windows(2)
        .all(|w| (w[1].1 - target).abs() < (w[0].1 - target).abs());
    Ok(StepOneTrend {
        target,
        ladder,
        band,
        within_band,
        tail,
        tail_monotone,
    })
}

/// Lyapunov data restricted to a truncated kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovWeight {
    /// `Q_a` at every kernel state.
    pub q_a: Vec<f64>,
    pub theta_a: f64,
    pub c_a: f64,
}

impl LyapunovWeight {
    /// `Q_a` from the eigenfunction, with `(θ_a, C_a)` fitted to the drift
    /// of the truncated chain itself.
    pub fn from_model(spec: &ModelSpec, s: &SpectralResult, a: f64, k: &TruncatedKernel, theta0: f64) -> Result<Self> {
        let mut potential = Potential::new(spec, s);
        let q_a: Vec<f64> = k
            .index()
            .states()
            .iter()
            .map(|z| potential.q_a(z, a))
            .collect::<Result<_>>()?;
        let lhs = k.apply_right(&q_a);
        let triples: Vec<(u64, f64, f64)> = k
            .index()
            .states()
            .iter()
            .zip(q_a.iter().zip(&lhs))
            .map(|(z, (&q, &l))| (z.norm1(), q, l))
            .collect();
        let fit = fit_drift(&triples, k.radius(), s.lambda_star.powf(a), theta0);
        Ok(Self {
            q_a,
            theta_a: fit.theta_a,
            c_a: fit.c_a,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SmallSetPolicy {
    /// Smallest `r₁` with `Q_a(z) ≥ C_a/(θ₁ − θ_a)` beyond it.
    Auto,
    Radius(u64),
}

#[derive(Clone, Debug)]
pub struct EOptions {
    pub small_set: SmallSetPolicy,
    /// Harnack window `N`.
    pub window: usize,
    /// Largest `n₁` and largest `n` for the `φ₂` construction.
    pub step_cap: usize,
    /// Horizon for return-time supports.
    pub return_horizon: usize,
    /// Relative change of the Harnack ratio over the last tenth of the window.
    pub harnack_stab_tol: f64,
}

impl Default for EOptions {
    fn default() -> Self {
        Self {
            small_set: SmallSetPolicy::Auto,
            window: 200,
            step_cap: 10_000,
            return_horizon: 256,
            harnack_stab_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aperiodicity {
    pub state: StateVector,
    /// gcd of the return times seen; `None` if the state never returns.
    pub period: Option<u64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdicts {
    pub e1: bool,
    pub e2_prime: bool,
    pub e3: bool,
    pub e4: bool,
    /// (E2) through the constructed `φ₂`.
    pub e2: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.e1 && self.e2_prime && self.e3 && self.e4 && self.e2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionEReport {
    pub small_set: Vec<StateVector>,
    pub r1: u64,
    /// Reference state `(1, …, 1)`.
    pub reference: StateVector,
    pub n1: Option<usize>,
    pub c1: f64,
    pub phi1: Vec<f64>,
    pub theta0: f64,
    pub theta1: f64,
    pub c2: f64,
    /// Largest `Kφ₁ − θ₁φ₁` outside the small set (non-positive on success).
    pub drift_excess: f64,
    pub c3: f64,
    pub harnack_stabilized: bool,
    pub theta2: f64,
    /// Step count `n` of the `φ₂` construction.
    pub n_phi2: Option<usize>,
    /// `1/Σ_{k<n} θ₂^{-k}`.
    pub c_theta2: f64,
    pub phi2: Vec<f64>,
    /// `max_z |Kφ₂ − θ₂φ₂ − C θ₂(θ₂^{-n}ℙ_z(Z_n∈K) − 1_K)|`.
    pub phi2_identity_residual: f64,
    /// `min_z (Kφ₂ − θ₂φ₂)`.
    pub phi2_min_margin: f64,
    pub aperiodicity: Vec<Aperiodicity>,
    pub verdicts: Verdicts,
    pub notes: Vec<String>,
}

/// Tolerance of the inequalities re-checked on the truncation.
const E_TOL: f64 = 1e-12;

/// Runs (E1), (E2'), (E3), (E4) on the truncated chain and builds `φ₂`.
///
/// `theta0` is the absorption parameter of the truncation; it is passed in
/// so that periodic kernels, where power iteration is unusable, can still
/// be analysed with the class radius.
pub fn verify_assumption_e(
    k: &TruncatedKernel,
    theta0: f64,
    weight: &LyapunovWeight,
    opts: &EOptions,
) -> Result<AssumptionEReport> {
    let n = k.len();
    if weight.q_a.len() != n {
        return Err(Error::Validation(
            "Lyapunov weights do not match the kernel states".into(),
        ));
    }
    let inf_q = weight.q_a.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(inf_q > 0.0) {
        return Err(Error::Numeric(
            "Q_a is not bounded away from zero on the truncation".into(),
        ));
    }
    let mut notes = Vec::new();
    let states = k.index().states();
    let p = k.index().p();
    let theta_a = weight.theta_a;
    let theta1 = 0.5 * (theta_a + theta0);

    // Small set.
    let r1 = match opts.small_set {
        SmallSetPolicy::Radius(r) => r,
        SmallSetPolicy::Auto => {
            let threshold = if theta1 > theta_a {
                weight.c_a / (theta1 - theta_a)
            } else {
                f64::INFINITY
            };
            states
                .iter()
                .zip(&weight.q_a)
                .filter(|(_, &q)| q < threshold)
                .map(|(z, _)| z.norm1())
                .max()
                .unwrap_or(0)
        }
    }
    .max(p as u64)
    .min(k.radius());
    let in_k: Vec<bool> = states.iter().map(|z| z.norm1() <= r1).collect();
    let small: Vec<usize> = (0..n).filter(|&i| in_k[i]).collect();
    let small_set: Vec<StateVector> = small.iter().map(|&i| states[i].clone()).collect();

    // (E1) with ν = δ_(1,…,1).
    let reference = StateVector::new(vec![1; p]);
    let (n1, c1) = match k.index().index_of(&reference) {
        Some(r) if in_k[r] => dobrushin(k, &small, r, opts.step_cap),
        _ => {
            notes.push(format!("reference state {reference} is not in the small set"));
            (None, 0.0)
        }
    };
    let e1 = n1.is_some() && c1 > 0.0;

    // (E2') with φ₁ = Q_a / inf Q_a.
    let phi1: Vec<f64> = weight.q_a.iter().map(|q| q / inf_q).collect();
    let k_phi1 = k.apply_right(&phi1);
    let mut c2: f64 = 0.0;
    let mut drift_excess = f64::NEG_INFINITY;
    for i in 0..n {
        let excess = k_phi1[i] - theta1 * phi1[i];
        if in_k[i] {
            c2 = c2.max(excess);
        } else {
            drift_excess = drift_excess.max(excess);
        }
    }
    if drift_excess == f64::NEG_INFINITY {
        drift_excess = 0.0;
    }
    let e2_prime = theta1 < theta0 && drift_excess <= E_TOL * theta1 * phi1.iter().cloned().fold(1.0, f64::max);

    // (E3) over the window.
    let surv = survival_all(k, opts.window);
    let ratio_at = |row: &Vec<f64>| -> f64 {
        let (lo, hi) = small
            .iter()
            .map(|&i| row[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            (hi - lo).exp()
        }
    };
    let ratios: Vec<f64> = surv.iter().map(ratio_at).collect();
    let c3 = ratios.iter().cloned().fold(1.0, f64::max);
    let tail_start = opts.window - opts.window / 10;
    let last = ratios[opts.window];
    let harnack_stabilized = c3.is_finite()
        && ratios[tail_start..]
            .iter()
            .all(|r| (r - last).abs() <= opts.harnack_stab_tol * last);
    let e3 = c3.is_finite() && harnack_stabilized;

    // (E4) from the return-time supports.
    let aperiodicity: Vec<Aperiodicity> = small
        .iter()
        .map(|&i| {
            let period = return_gcd(k, i, opts.return_horizon);
            Aperiodicity {
                state: states[i].clone(),
                period,
                pass: period == Some(1),
            }
        })
        .collect();
    let e4 = !aperiodicity.is_empty() && aperiodicity.iter().all(|a| a.pass);

    // φ₂ for θ₂ in (θ₁, θ₀).
    let theta2 = 0.5 * (theta1 + theta0);
    let mut phi2 = vec![0.0; n];
    let mut n_phi2 = None;
    let mut c_theta2 = 0.0;
    let mut phi2_identity_residual = f64::INFINITY;
    let mut phi2_min_margin = f64::NEG_INFINITY;
    if theta1 < theta2 && !small.is_empty() {
        let indicator: Vec<f64> = in_k.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        // f_j(z) = ℙ_z(Z_j ∈ K); acc = Σ_{j<m} θ₂^{-j} f_j.
        let mut f = indicator.clone();
        let mut acc = vec![0.0; n];
        let mut weight_sum = 0.0;
        let mut scale = 1.0;
        for m in 1..=opts.step_cap {
            for (a, v) in acc.iter_mut().zip(&f) {
                *a += scale * v;
            }
            weight_sum += scale;
            f = k.apply_right(&f);
            scale /= theta2;
            if small.iter().all(|&i| scale * f[i] >= 1.0) {
                n_phi2 = Some(m);
                c_theta2 = 1.0 / weight_sum;
                phi2 = acc.iter().map(|v| c_theta2 * v).collect();
                let k_phi2 = k.apply_right(&phi2);
                phi2_identity_residual = (0..n)
                    .map(|i| {
                        let lhs = k_phi2[i] - theta2 * phi2[i];
                        let rhs = c_theta2 * theta2 * (scale * f[i] - indicator[i]);
                        (lhs - rhs).abs()
                    })
                    .fold(0.0, f64::max);
                phi2_min_margin = (0..n)
                    .map(|i| k_phi2[i] - theta2 * phi2[i])
                    .fold(f64::INFINITY, f64::min);
                break;
            }
        }
        if n_phi2.is_none() {
            notes.push(format!(
                "no n <= {} with inf_K theta2^-n P(Z_n in K) >= 1",
                opts.step_cap
            ));
        }
    }
    let sup_phi2 = phi2.iter().cloned().fold(0.0, f64::max);
    let inf_k_phi2 = small.iter().map(|&i| phi2[i]).fold(f64::INFINITY, f64::min);
    let e2 = e2_prime
        && n_phi2.is_some()
        && phi2_identity_residual <= 1e-10
        && phi2_min_margin >= -1e-10
        && sup_phi2 <= 1.0 + E_TOL
        && inf_k_phi2 >= c_theta2 * (1.0 - 1e-12);

    Ok(AssumptionEReport {
        small_set,
        r1,
        reference,
        n1,
        c1,
        phi1,
        theta0,
        theta1,
        c2,
        drift_excess,
        c3,
        harnack_stabilized,
        theta2,
        n_phi2,
        c_theta2,
        phi2,
        phi2_identity_residual,
        phi2_min_margin,
        aperiodicity,
        verdicts: Verdicts {
            e1,
            e2_prime,
            e3,
            e4,
            e2,
        },
        notes,
    })
}

/// Least `n₁` with `min_{x∈K} K^{n₁}(x, ref) > 0`, and that minimum.
fn dobrushin(k: &TruncatedKernel, small: &[usize], reference: usize, cap: usize) -> (Option<usize>, f64) {
    let mut rows: Vec<Vec<f64>> = small
        .iter()
        .map(|&x| {
            let mut v = vec![0.0; k.len()];
            v[x] = 1.0;
            v
        })
        .collect();
    for n1 in 1..=cap {
        rows = rows.iter().map(|v| k.apply_left(v)).collect();
        let c1 = rows.iter().map(|v| v[reference]).fold(f64::INFINITY, f64::min);
        if c1 > 0.0 {
            return (Some(n1), c1);
        }
        if rows.iter().all(|v| v.iter().all(|&x| x == 0.0)) {
            break;
        }
    }
    (None, 0.0)
}

/// gcd of `{n ≤ horizon : K^n(z, z) > 0}` on the positive-entry digraph.
fn return_gcd(k: &TruncatedKernel, z: usize, horizon: usize) -> Option<u64> {
    let mut frontier: BTreeSet<usize> = BTreeSet::from([z]);
    let mut g = 0u64;
    for n in 1..=horizon {
        let mut next = BTreeSet::new();
        for &i in &frontier {
            for &(j, v) in k.row(i) {
                if v > 0.0 {
                    next.insert(j);
                }
            }
        }
        if next.contains(&z) {
            g = gcd(g, n as u64);
            if g == 1 {
                break;
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    (g > 0).then_some(g)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Builds an exact kernel and checks (E) with `Q_a` from the model.
pub fn verify_assumption_e_for_model(
    spec: &ModelSpec,
    s: &SpectralResult,
    a: f64,
    radius: u64,
    cap: usize,
    opts: &EOptions,
) -> Result<(TruncatedKernel, AssumptionEReport)> {
    let k = build_kernel_exact(spec, radius, cap)?;
    let theta0 = crate::kernel::spectral_radius(&k, 1e-13, 200_000)?.theta;
    let weight = LyapunovWeight::from_model(spec, s, a, &k, theta0)?;
    let report = verify_assumption_e(&k, theta0, &weight, opts)?;
    Ok((k, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::spectral::power_iterate;

    #[test]
    fn moment_assumption_model_a() {
        let s = power_iterate(&presets::model_a(), 1e-14, 1000).unwrap();
        let pass = check_moment_assumption(&s, 0.125, 2.5);
        let fail = check_moment_assumption(&s, 0.125, 2.0);
        assert!(pass.pass && !fail.pass);
        assert!((pass.r_min - (0.125f64).ln() / (0.375f64).ln()).abs() < 1e-12);
        // log 8 / log(8/3) = 2.1200851…
        assert!((pass.r_min - 2.1200851).abs() < 1e-7);
    }

    #[test]
    fn moment_assumption_edge_cases() {
        let mut s = power_iterate(&presets::classical_two_type(), 1e-14, 1000).unwrap();
        let c = check_moment_assumption(&s, s.lambda_star, 1.01);
        assert!(c.pass && c.margin < 0.01);
        s.lambda_star = 1.2;
        let bad = check_moment_assumption(&s, 0.5, 2.0);
        assert!(!bad.pass && bad.reason.unwrap().contains("not subcritical"));
    }

    #[test]
    fn zero_lhs_gives_zero_constant() {
        let rows = vec![(1, 1.0, 0.0), (2, 4.0, 0.0)];
        let fit = fit_drift(&rows, 2, 0.1, 0.2);
        assert_eq!(fit.c_a, 0.0);
        assert!(fit.feasible);
    }

    #[test]
    fn fit_scales_with_weights() {
        let rows = vec![(1, 1.0, 0.3), (2, 4.0, 0.5), (3, 9.0, 1.0), (4, 16.0, 1.7)];
        let scaled: Vec<_> = rows.iter().map(|&(n, q, l)| (n, 3.0 * q, 3.0 * l)).collect();
        let f1 = fit_drift(&rows, 4, 0.05, 0.2);
        let f3 = fit_drift(&scaled, 4, 0.05, 0.2);
        assert_eq!(f1.theta_a, f3.theta_a);
        assert!((3.0 * f1.c_a - f3.c_a).abs() < 1e-12);
    }

    #[test]
    fn model_a_drift() {
        let spec = presets::model_a();
        let s = power_iterate(&spec, 1e-14, 1000).unwrap();
        let rep = verify_drift(&spec, &s, 2.5, 8, &DriftMode::Exact { cap: 100_000 }, 0.125).unwrap();
        assert!(rep.violation_free());
        assert!(rep.theta_a_below_theta0);
        assert!(rep.trend.as_ref().unwrap().passed(), "{:?}", rep.trend);
    }

    #[test]
    fn model_a_drift_monte_carlo() {
        let spec = presets::model_a();
        let s = power_iterate(&spec, 1e-14, 1000).unwrap();
        let mode = DriftMode::MonteCarlo {
            samples: 20_000,
            seed: 3,
        };
        let rep = verify_drift(&spec, &s, 2.5, 4, &mode, 0.125).unwrap();
        assert!(rep.violation_free());
        assert!(rep.rows.iter().all(|r| r.ci.unwrap() > 0.0));
    }

    #[test]
    fn drift_precondition() {
        let spec = presets::model_a();
        let s = power_iterate(&spec, 1e-14, 1000).unwrap();
        assert!(matches!(
            verify_drift(&spec, &s, 2.0, 4, &DriftMode::Exact { cap: 1000 }, 0.125),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn periodic_kernel_fails_e4() {
        let states = vec![StateVector::new(vec![1]), StateVector::new(vec![2])];
        let k = TruncatedKernel::from_dense(states, &[vec![0.0, 0.6], vec![0.3, 0.0]]).unwrap();
        let theta0 = crate::kernel::communication_classes(&k).theta_bar;
        let weight = LyapunovWeight {
            q_a: vec![1.0, 2.0],
            theta_a: 0.2,
            c_a: 1.0,
        };
        let rep = verify_assumption_e(&k, theta0, &weight, &EOptions::default()).unwrap();
        assert!(!rep.verdicts.e4);
        assert!(rep.aperiodicity.iter().all(|a| a.period == Some(2)));
    }

    #[test]
    fn model_a_returns_in_one_step() {
        let spec = presets::model_a();
        let s = power_iterate(&spec, 1e-14, 1000).unwrap();
        let (_, rep) = verify_assumption_e_for_model(&spec, &s, 2.5, 8, 100_000, &EOptions::default()).unwrap();
        let one = rep
            .aperiodicity
            .iter()
            .find(|a| a.state == StateVector::new(vec![1]))
            .unwrap();
        assert!(one.pass);
    }
}
