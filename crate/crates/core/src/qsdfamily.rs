//! Resolvent-series measures anchored at large states.
//!
//! For `λ` above the spectral radius of the truncation,
//! `μ = S⁻¹ Σ_ℓ λ^{-ℓ} δ_x K^ℓ` satisfies `μK = λμ − (λ/S) δ_x` exactly, so
//! the one-step defect `λ/S` shrinks as the anchor `x` grows and `S` blows
//! up. Different `λ` give genuinely different limits.

use crate::error::{Error, Result};
use crate::kernel::{least_squares, spectral_radius, survival_profile, TruncatedKernel};
use crate::model::StateVector;
use crate::spectral::{l1_dist, SpectralResult};

/// Hard stop for the series length.
pub const MAX_SERIES_TERMS: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct QsdFamilyEntry {
    pub lambda: f64,
    pub anchor: StateVector,
    /// Probability vector over the truncated states.
    pub mu: Vec<f64>,
    /// `Σ_ℓ λ^{-ℓ} K^ℓ(x, alive)`.
    pub normalizer: f64,
    /// `λ / S`.
    pub one_step_defect: f64,
    /// `|μK − λμ + (λ/S) δ_x|₁`.
    pub identity_residual: f64,
    pub terms: usize,
}

/// Sums the resolvent series until both the geometric bound
/// `(θ/λ)^{L+1}/(1 − θ/λ)` and the last term's relative mass fall below
/// `tail_tol`.
pub fn resolvent_measure(
    k: &TruncatedKernel,
    theta: f64,
    lambda: f64,
    anchor: &StateVector,
    tail_tol: f64,
) -> Result<QsdFamilyEntry> {
    if !(lambda < 1.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must be below 1")));
    }
    if lambda <= theta {
        return Err(Error::Divergence(format!(
            "lambda = {lambda} does not exceed the spectral radius {theta}; the series diverges"
        )));
    }
    let x = k
        .index()
        .index_of(anchor)
        .ok_or_else(|| Error::Domain(format!("anchor {anchor} is not a truncated state")))?;
    let ratio = theta / lambda;
    let mut term = vec![0.0; k.len()];
    term[x] = 1.0;
    let mut sum = term.clone();
    let mut s = 1.0;
    let mut geometric = ratio / (1.0 - ratio);
    let mut terms = 1;
    loop {
        term = k.apply_left(&term);
        term.iter_mut().for_each(|v| *v /= lambda);
        let mass: f64 = term.iter().sum();
        for (acc, v) in sum.iter_mut().zip(&term) {
            *acc += v;
        }
        s += mass;
        terms += 1;
        geometric *= ratio;
        if (geometric <= tail_tol && mass <= tail_tol * s) || mass == 0.0 {
            break;
        }
        if terms >= MAX_SERIES_TERMS {
            return Err(Error::Convergence {
                iterations: terms,
                detail: format!("resolvent series at lambda = {lambda} still has term mass {mass:e}"),
            });
        }
    }
    let mu: Vec<f64> = sum.iter().map(|v| v / s).collect();
    let mut image = k.apply_left(&mu);
    for (i, m) in image.iter_mut().zip(&mu) {
        *i -= lambda * m;
    }
    image[x] += lambda / s;
    let identity_residual = image.iter().map(|v| v.abs()).sum();
    Ok(QsdFamilyEntry {
        lambda,
        anchor: anchor.clone(),
        mu,
        normalizer: s,
        one_step_defect: lambda / s,
        identity_residual,
        terms,
    })
}

/// Anchors `round((n/m)·R·z*)` for `n = 1..=m`, pulled back inside the ball
/// and deduplicated.
pub fn auto_anchors(k: &TruncatedKernel, s: &SpectralResult, m: usize) -> Vec<StateVector> {
    let radius = k.radius() as f64;
    let mut out: Vec<StateVector> = Vec::new();
    for n in 1..=m {
        let scale = n as f64 / m as f64 * radius;
        let mut x: Vec<u64> = s.z_star.iter().map(|z| (scale * z).round() as u64).collect();
        while x.iter().sum::<u64>() as f64 > radius {
            let (i, _) = x.iter().enumerate().max_by_key(|&(_, &v)| v).expect("non-empty");
            x[i] -= 1;
        }
        let x = StateVector::new(x);
        if !x.is_zero() && k.index().index_of(&x).is_some() && !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Eight geometric points from `θ̂₀ + 0.05` to `0.95`.
pub fn default_lambda_grid(theta0: f64) -> Vec<f64> {
    geometric_grid(theta0 + 0.05, 0.95, 8)
}

pub(crate) fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

#[derive(Clone, Debug)]
pub struct LambdaTrend {
    pub lambda: f64,
    /// Defects along the anchor ladder.
    pub defects: Vec<f64>,
    /// Defect strictly decreasing along the ladder.
    pub monotone: bool,
}

#[derive(Clone, Debug)]
pub struct FamilyReport {
    pub theta: f64,
    pub entries: Vec<QsdFamilyEntry>,
    pub trends: Vec<LambdaTrend>,
    pub max_identity_residual: f64,
    /// ℓ¹ distances between the μ of consecutive λ at the largest anchor.
    pub independence_gaps: Vec<f64>,
}

impl FamilyReport {
    pub fn non_monotone(&self) -> Vec<f64> {
        self.trends.iter().filter(|t| !t.monotone).map(|t| t.lambda).collect()
    }
}

/// One entry per `(λ, anchor)`; entries are ordered by `λ`, then anchor.
pub fn build_family(
    k: &TruncatedKernel,
    theta: f64,
    lambda_grid: &[f64],
    anchors: &[StateVector],
    tail_tol: f64,
) -> Result<FamilyReport> {
    let mut entries = Vec::with_capacity(lambda_grid.len() * anchors.len());
    let mut trends = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let row: Vec<QsdFamilyEntry> = anchors
            .iter()
            .map(|x| resolvent_measure(k, theta, lambda, x, tail_tol))
            .collect::<Result<_>>()?;
        let defects: Vec<f64> = row.iter().map(|e| e.one_step_defect).collect();
        let monotone = defects.windows(2).all(|w| w[1] < w[0]);
        trends.push(LambdaTrend {
            lambda,
            defects,
            monotone,
        });
        entries.extend(row);
    }
    let max_identity_residual = entries.iter().map(|e| e.identity_residual).fold(0.0, f64::max);
    let top: Vec<&QsdFamilyEntry> = match anchors.last() {
        Some(a) => entries.iter().filter(|e| &e.anchor == a).collect(),
        None => Vec::new(),
    };
    let independence_gaps = top.windows(2).map(|w| l1_dist(&w[0].mu, &w[1].mu)).collect();
    Ok(FamilyReport {
        theta,
        entries,
        trends,
        max_identity_residual,
        independence_gaps,
    })
}

/// Domination checks for one entry.
#[derive(Clone, Debug)]
pub struct DominationCheck {
    /// `max_ℓ (μK^ℓ(alive) − λ^ℓ)` for `ℓ = 1..=depth`.
    pub max_excess: f64,
    /// `Σ_ℓ a₁^{-ℓ} μK^ℓ(alive)` with `a₁ = (λ + 1)/2`.
    pub tightness_sum: f64,
    /// `a₁ / (a₁ − λ)`.
    pub tightness_bound: f64,
}

pub fn domination_check(k: &TruncatedKernel, entry: &QsdFamilyEntry, depth: usize, tail_tol: f64) -> DominationCheck {
    let lambda = entry.lambda;
    let a1 = (lambda + 1.0) / 2.0;
    let mut v = entry.mu.clone();
    let mut max_excess = f64::NEG_INFINITY;
    let mut tightness_sum = 1.0;
    let mut weight = 1.0;
    let mut l = 0;
    loop {
        l += 1;
        v = k.apply_left(&v);
        let mass: f64 = v.iter().sum();
        if l <= depth {
            max_excess = max_excess.max(mass - lambda.powi(l as i32));
        }
        weight /= a1;
        tightness_sum += weight * mass;
        // μK^ℓ(alive) ≤ λ^ℓ bounds the remainder by a geometric tail.
        let rest = (lambda / a1).powi(l as i32 + 1) / (1.0 - lambda / a1);
        if l >= depth && (rest <= tail_tol || l >= MAX_SERIES_TERMS) {
            break;
        }
    }
    DominationCheck {
        max_excess,
        tightness_sum,
        tightness_bound: a1 / (a1 - lambda),
    }
}

#[derive(Clone, Debug)]
pub struct Upsilon0Estimate {
    /// `θ(K)`: the extinction-time tail rate on the truncation.
    pub upsilon0: f64,
    /// `exp` of the fitted linear coefficient of `log ℙ_x(alive at n)`.
    pub regression_rate: f64,
    pub window: (usize, usize),
    pub state: StateVector,
    pub consistent: bool,
}

/// `υ̂₀ = θ(K)`, cross-checked by regressing the survival of the largest
/// state on `n` and `log n` (the latter absorbs polynomial prefactors).
pub fn estimate_upsilon0(k: &TruncatedKernel, window: (usize, usize), tol: f64) -> Result<Upsilon0Estimate> {
    let theta = spectral_radius(k, 1e-13, 200_000)?.theta;
    let (lo, hi) = window;
    if lo < 1 || hi < lo + 2 {
        return Err(Error::Range(format!("invalid regression window [{lo}, {hi}]")));
    }
    let x = k.len() - 1;
    let profile = survival_profile(k, x, hi)?;
    let mut ns = Vec::new();
    let mut ys = Vec::new();
    for n in lo..=hi {
        let l = profile.log_survival[n];
        if !l.is_finite() {
            return Err(Error::Range(format!(
                "survival underflows at n = {n} inside the regression window"
            )));
        }
        ns.push(n as f64);
        ys.push(l);
    }
    let rate = fit_rate(&ns, &ys).exp();
    Ok(Upsilon0Estimate {
        upsilon0: theta,
        regression_rate: rate,
        window,
        state: k.index().state(x).clone(),
        consistent: (rate - theta).abs() <= tol,
    })
}

/// Coefficient of `n` in the least-squares fit `y ≈ a n + b log n + c`.
fn fit_rate(ns: &[f64], ys: &[f64]) -> f64 {
    // Partial out log n and the constant first (Frisch-Waugh).
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let resid = |v: &[f64]| -> Vec<f64> {
        let (b, c) = least_squares(&logs, v);
        v.iter().zip(&logs).map(|(y, l)| y - b * l - c).collect()
    };
    let rn = resid(ns);
    let ry = resid(ys);
    let num: f64 = rn.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let den: f64 = rn.iter().map(|a| a * a).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel_exact;
    use crate::presets;

    fn sv(v: &[u64]) -> StateVector {
        StateVector::new(v.to_vec())
    }

    #[test]
    fn radius_one_closed_form() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        let e = resolvent_measure(&k, 0.125, 0.5, &sv(&[1]), 1e-15).unwrap();
        assert!((e.normalizer - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(e.mu, vec![1.0]);
        assert!((e.one_step_defect - 0.375).abs() < 1e-14);
        assert!(e.identity_residual < 1e-14);
    }

    #[test]
    fn lambda_bounds() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        assert!(matches!(
            resolvent_measure(&k, 0.125, 0.125, &sv(&[1]), 1e-12),
            Err(Error::Divergence(_))
        ));
        assert!(matches!(
            resolvent_measure(&k, 0.125, 0.1, &sv(&[1]), 1e-12),
            Err(Error::Divergence(_))
        ));
        assert!(matches!(
            resolvent_measure(&k, 0.125, 1.0, &sv(&[1]), 1e-12),
            Err(Error::Domain(_))
        ));
        let e = resolvent_measure(&k, 0.125, 1.0 - 1e-6, &sv(&[1]), 1e-12).unwrap();
        assert!((e.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn defect_vanishes_near_theta() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        let far = resolvent_measure(&k, 0.125, 0.5, &sv(&[1]), 1e-14).unwrap();
        let near = resolvent_measure(&k, 0.125, 0.126, &sv(&[1]), 1e-14).unwrap();
        assert!(near.normalizer > 100.0 && near.one_step_defect < far.one_step_defect / 100.0);
    }

    #[test]
    fn model_a_family() {
        let k = build_kernel_exact(&presets::model_a(), 6, 10_000).unwrap();
        let anchors: Vec<_> = (1..=6).map(|i| sv(&[i])).collect();
        let rep = build_family(&k, 0.125, &[0.3, 0.5], &anchors, 1e-14).unwrap();
        assert_eq!(rep.entries.len(), 12);
        assert!(rep.non_monotone().is_empty());
        assert!(rep.max_identity_residual <= 1e-10);
        assert!(rep.independence_gaps[0] > 1e-9);
        for e in &rep.entries {
            let d = domination_check(&k, e, 10, 1e-12);
            assert!(d.max_excess <= 1e-10);
            assert!(d.tightness_sum <= d.tightness_bound + 1e-8);
        }
        assert!(build_family(&k, 0.125, &[], &anchors, 1e-14)
            .unwrap()
            .entries
            .is_empty());
    }

    #[test]
    fn upsilon_model_a() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        let u = estimate_upsilon0(&k, (20, 120), 1e-6).unwrap();
        assert_eq!(u.upsilon0, 0.125);
        assert!(u.consistent);
        let k6 = build_kernel_exact(&presets::model_a(), 6, 10_000).unwrap();
        let u6 = estimate_upsilon0(&k6, (20, 120), 1e-3).unwrap();
        assert!(u6.consistent, "{u6:?}");
    }

    #[test]
    fn grid_endpoints() {
        let g = default_lambda_grid(0.125);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 0.175).abs() < 1e-15 && (g[7] - 0.95).abs() < 1e-12);
    }
}
