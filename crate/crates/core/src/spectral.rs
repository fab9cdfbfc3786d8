//! The concave growth operator `𝔐` and its eigen-data.
//!
//! `𝔐(z) = lim_k ξ(⌊k z𝕍⌋)/k` is positively homogeneous, increasing and
//! concave. Its Perron eigenvalue `λ*` and eigenvector `z*` (on the ℓ¹
//! simplex) come from nonlinear power iteration; the eigenfunction `𝒫`
//! is the limit of `|𝔐ⁿ(z)|₁ / (λ*)ⁿ`, normalized so that `𝒫(z*) = 1`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{MatingKind, ModelSpec, StateVector};

/// Coordinates at or below this value count as zero after normalization.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    pub lambda_star: f64,
    /// Eigenvector with `|z*|₁ = 1`.
    pub z_star: Vec<f64>,
    /// Primitivity index, if `𝔐` was found primitive.
    pub n0: Option<usize>,
    pub iterations: usize,
    /// `|𝔐(z*) − λ* z*|₁`.
    pub residual: f64,
    pub tol: f64,
}

/// Schedule for the numeric limit defining `𝔐` on tabulated matings.
#[derive(Clone, Debug)]
pub struct CustomLimit {
    /// First scale `k₀`; `None` picks the largest scale whose `8k₀` still
    /// fits in the table box.
    pub k0: Option<u64>,
    /// Maximal ℓ¹ gap between successive evaluations.
    pub tol: f64,
}

impl Default for CustomLimit {
    fn default() -> Self {
        Self { k0: None, tol: 0.05 }
    }
}

fn row_times_means(spec: &ModelSpec, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.q()];
    for (zi, row) in z.iter().zip(spec.mean_matrix()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += zi * v;
        }
    }
    out
}

/// `𝔐(z)`.
pub fn operator_m(spec: &ModelSpec, z: &[f64]) -> Result<Vec<f64>> {
    operator_m_with(spec, z, &CustomLimit::default())
}

pub fn operator_m_with(spec: &ModelSpec, z: &[f64], limit: &CustomLimit) -> Result<Vec<f64>> {
    if z.len() != spec.p() {
        return Err(Error::Domain(format!(
            "vector of length {} but p = {}",
            z.len(),
            spec.p()
        )));
    }
    if z.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain(format!("operator argument {z:?} is not non-negative")));
    }
    let zv = row_times_means(spec, z);
    Ok(match spec.mating().kind() {
        MatingKind::Identity => zv,
        MatingKind::PerfectFidelity => vec![zv[0].min(zv[1])],
        MatingKind::Promiscuous => vec![if zv[1] > 0.0 { zv[0] } else { 0.0 }],
        MatingKind::CustomTable(table) => {
            let scale: f64 = z.iter().sum();
            if scale == 0.0 {
                return Ok(vec![0.0; spec.p()]);
            }
            // Homogeneity lets us evaluate on the simplex and rescale.
            let unit: Vec<f64> = zv.iter().map(|x| x / scale).collect();
            let top = unit.iter().cloned().fold(0.0, f64::max);
            let k0 = match limit.k0 {
                Some(k) => k,
                None if top == 0.0 => 1,
                None => (table.bound() as f64 / (8.0 * top)).floor() as u64,
            };
            if k0 == 0 {
                return Err(Error::Numeric(format!(
                    "mating table box [0,{}] too small to resolve the limit",
                    table.bound()
                )));
            }
            let mut evals: Vec<Vec<f64>> = Vec::with_capacity(4);
            for mult in [1u64, 2, 4, 8] {
                let k = k0 * mult;
                let w: Vec<u64> = unit.iter().map(|x| (k as f64 * x).floor() as u64).collect();
                let img = spec.mating().apply(&w)?;
                evals.push(img.counts().iter().map(|&c| c as f64 / k as f64).collect());
            }
            let agree = evals.windows(2).all(|pair| l1_dist(&pair[0], &pair[1]) <= limit.tol);
            if !agree {
                return Err(Error::Numeric(format!(
                    "custom mating limit did not settle at k = {k0}, {}, {}, {}: {evals:?}",
                    2 * k0,
                    4 * k0,
                    8 * k0
                )));
            }
            evals[3].iter().map(|x| x * scale).collect()
        }
    })
}

pub(crate) fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Nonlinear power iteration `zₙ₊₁ = 𝔐(zₙ)/|𝔐(zₙ)|₁` from the barycentre
/// of the simplex, stopped when both the iterate and the eigenvalue
/// estimate are Cauchy within `tol`.
pub fn power_iterate(spec: &ModelSpec, tol: f64, max_iter: usize) -> Result<SpectralResult> {
    let p = spec.p();
    let mut z = vec![1.0 / p as f64; p];
    let mut lambda_prev = f64::NAN;
    let mut trace: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let m = operator_m(spec, &z)?;
        let s = l1(&m);
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!(
                "operator vanishes at iterate {it}: z = {z:?}"
            )));
        }
        let next: Vec<f64> = m.iter().map(|x| x / s).collect();
        let step = l1_dist(&next, &z);
        let converged = step <= tol && (s - lambda_prev).abs() <= tol;
        trace.push(s);
        z = next;
        lambda_prev = s;
        if converged {
            let mz = operator_m(spec, &z)?;
            let lambda_star = l1(&mz);
            let residual = mz.iter().zip(&z).map(|(a, b)| (a - lambda_star * b).abs()).sum();
            let n0 = check_primitivity(spec, 64)?.n0;
            return Ok(SpectralResult {
                lambda_star,
                z_star: z,
                n0,
                iterations: it,
                residual,
                tol,
            });
        }
    }
    let tail: Vec<f64> = trace.iter().rev().take(5).rev().copied().collect();
    Err(Error::Convergence {
        iterations: max_iter,
        detail: format!("last eigenvalue estimates {tail:?}"),
    })
}

/// `log |𝔐ⁿ(z)|₁ − n log λ*`, computed with per-step renormalization.
fn log_growth_ratio(spec: &ModelSpec, s: &SpectralResult, z: &[f64], n: usize) -> Result<f64> {
    let mut v = z.to_vec();
    let mut log_scale = 0.0;
    let norm = l1(&v);
    if norm == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    log_scale += norm.ln();
    for _ in 0..n {
        v = operator_m(spec, &v)?;
        let norm = l1(&v);
        if norm == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        log_scale += norm.ln();
    }
    Ok(log_scale - n as f64 * s.lambda_star.ln())
}

/// Relative change tolerated between the `n`- and `2n`-step ratios.
pub const EVAL_P_TOL: f64 = 1e-8;

/// `𝒫(z)`, normalized by `𝒫(z*) = 1`.
pub fn eval_p(spec: &ModelSpec, s: &SpectralResult, z: &[f64], n: usize) -> Result<f64> {
    if z.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let anchor = log_growth_ratio(spec, s, &s.z_star, n)?;
    let at_n = (log_growth_ratio(spec, s, z, n)? - anchor).exp();
    let anchor2 = log_growth_ratio(spec, s, &s.z_star, 2 * n)?;
    let at_2n = (log_growth_ratio(spec, s, z, 2 * n)? - anchor2).exp();
    let rel = (at_2n - at_n).abs() / at_2n.abs().max(f64::MIN_POSITIVE);
    if !(rel <= EVAL_P_TOL) {
        return Err(Error::Numeric(format!(
            "eigenfunction ratio not stabilized: {at_n} at n = {n}, {at_2n} at n = {}",
            2 * n
        )));
    }
    Ok(at_2n)
}

/// Cached evaluation of `𝒫` at integer states, with `Q_a = 𝒫^a`.
#[derive(Debug)]
pub struct Potential<'a> {
    spec: &'a ModelSpec,
    spectral: &'a SpectralResult,
    n: usize,
    cache: HashMap<StateVector, f64>,
}

impl<'a> Potential<'a> {
    pub const DEFAULT_STEPS: usize = 64;

    pub fn new(spec: &'a ModelSpec, spectral: &'a SpectralResult) -> Self {
        Self {
            spec,
            spectral,
            n: Self::DEFAULT_STEPS,
            cache: HashMap::new(),
        }
    }

    pub fn p(&mut self, z: &StateVector) -> Result<f64> {
        if let Some(&v) = self.cache.get(z) {
            return Ok(v);
        }
        let v = eval_p(self.spec, self.spectral, &z.as_f64(), self.n)?;
        self.cache.insert(z.clone(), v);
        Ok(v)
    }

    pub fn q_a(&mut self, z: &StateVector, a: f64) -> Result<f64> {
        Ok(self.p(z)?.powf(a))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitivityReport {
    pub n0: Option<usize>,
    /// `(i, coordinate)` pairs where `𝔐^max_m(e_i)` vanishes.
    pub failures: Vec<(usize, usize)>,
}

/// Least `m ≤ max_m` such that `𝔐^m(e_i)` and `𝔐^{m+1}(e_i)` are positive
/// in every coordinate for every basis vector `e_i`.
pub fn check_primitivity(spec: &ModelSpec, max_m: usize) -> Result<PrimitivityReport> {
    let p = spec.p();
    let mut iterates: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut e = vec![0.0; p];
            e[i] = 1.0;
            e
        })
        .collect();
    let positive = |v: &Vec<f64>| v.iter().all(|&x| x > POSITIVITY_FLOOR);
    let mut history: Vec<bool> = Vec::with_capacity(max_m + 1);
    for _ in 0..=max_m {
        for v in iterates.iter_mut() {
            let m = operator_m(spec, v)?;
            let norm = l1(&m);
            *v = if norm > 0.0 {
                m.iter().map(|x| x / norm).collect()
            } else {
                m
            };
        }
        history.push(iterates.iter().all(positive));
        let len = history.len();
        if len >= 2 && history[len - 2] && history[len - 1] {
            return Ok(PrimitivityReport {
                n0: Some(len - 1),
                failures: Vec::new(),
            });
        }
    }
    let failures = iterates
        .iter()
        .enumerate()
        .flat_map(|(i, v)| {
            v.iter()
                .enumerate()
                .filter(|(_, &x)| x <= POSITIVITY_FLOOR)
                .map(move |(j, _)| (i, j))
        })
        .collect();
    Ok(PrimitivityReport { n0: None, failures })
}

/// Largest observed `|𝔐(x) − 𝔐(y)|₁ / |x − y|₁` on one face of the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceModulus {
    /// Coordinates allowed to be positive on this face.
    pub support: Vec<usize>,
    pub modulus: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityEstimate {
    pub faces: Vec<FaceModulus>,
    /// True only for the built-in matings, where continuity on every face
    /// holds analytically. A sampled modulus proves nothing.
    pub certifying: bool,
}

/// Faces are enumerated exhaustively, so `p` is kept small.
pub const MAX_FACE_DIMENSION: usize = 12;

/// Samples `pairs` point pairs on every face of the simplex and records the
/// largest difference quotient of `𝔐`.
pub fn continuity_estimate(spec: &ModelSpec, pairs: usize, seed: u64) -> Result<ContinuityEstimate> {
    use rand::Rng;

    let p = spec.p();
    if p > MAX_FACE_DIMENSION {
        return Err(Error::Resource(format!("{p} types give too many faces to enumerate")));
    }
    let mut rng = crate::rng::CounterRng::new(seed).auxiliary(3);
    let mut faces = Vec::new();
    for mask in 1u32..(1 << p) {
        let support: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        let point = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut x = vec![0.0; p];
            for &i in &support {
                x[i] = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
            }
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            x
        };
        let mut modulus: f64 = 0.0;
        let mut used = 0;
        for _ in 0..pairs {
            let x = point(&mut rng);
            let y = point(&mut rng);
            let d = l1_dist(&x, &y);
            if d < 1e-9 {
                continue;
            }
            let gap = l1_dist(&operator_m(spec, &x)?, &operator_m(spec, &y)?);
            modulus = modulus.max(gap / d);
            used += 1;
        }
        faces.push(FaceModulus {
            support,
            modulus,
            pairs: used,
        });
    }
    Ok(ContinuityEstimate {
        faces,
        certifying: !matches!(spec.mating().kind(), MatingKind::CustomTable(_)),
    })
}
