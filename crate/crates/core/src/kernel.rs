//! Truncated sub-Markov kernels and their quasi-stationary eigen-data.
//!
//! The kernel `K(x, y) = ℙ_x(Z₁ = y)` is restricted to the ball
//! `{0 < |z|₁ ≤ R}`. Mass leaving the ball is recorded as `escaped` and
//! never redistributed, so the spectral radius of the truncation is a lower
//! bound for the absorption parameter of the full process and increases
//! with `R`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{convolve_couple, push_forward, sample_children, ChildrenLaw, ModelSpec, Prob, StateVector};
use crate::rng::CounterRng;

/// Conservation tolerance for exactly built rows.
pub const CONSERVATION_TOL: f64 = 1e-10;
/// Classes below this size get a dense eigenvalue solve.
pub const DENSE_CLASS_LIMIT: usize = 512;
/// Minimal number of Monte Carlo samples per row.
pub const MIN_MC_SAMPLES: u64 = 10_000;

/// States `{z ∈ ℕᵖ : 0 < |z|₁ ≤ R}` in colexicographic order.
#[derive(Clone, Debug)]
pub struct StateIndex {
    p: usize,
    states: Vec<StateVector>,
    lookup: HashMap<StateVector, usize>,
}

impl StateIndex {
    pub fn ball(p: usize, radius: u64) -> Self {
        let mut states = Vec::new();
        let mut current = vec![0u64; p];
        enumerate_ball(&mut current, 0, radius, &mut states);
        states.retain(|s| !s.is_zero());
        Self::from_states(p, states).expect("ball states are distinct")
    }

    /// Arbitrary distinct non-zero states; they are sorted colexicographically.
    pub fn from_states(p: usize, mut states: Vec<StateVector>) -> Result<Self> {
        states.sort();
        let mut lookup = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if s.len() != p || s.is_zero() {
                return Err(Error::Validation(format!("invalid kernel state {s} for p = {p}")));
            }
            if lookup.insert(s.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate kernel state {s}")));
            }
        }
        Ok(Self { p, states, lookup })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &StateVector {
        &self.states[i]
    }

    pub fn index_of(&self, z: &StateVector) -> Option<usize> {
        self.lookup.get(z).copied()
    }
}

fn enumerate_ball(current: &mut Vec<u64>, pos: usize, budget: u64, out: &mut Vec<StateVector>) {
    if pos == current.len() {
        out.push(StateVector::new(current.clone()));
        return;
    }
    for c in 0..=budget {
        current[pos] = c;
        enumerate_ball(current, pos + 1, budget - c, out);
    }
    current[pos] = 0;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildMode {
    Exact,
    MonteCarlo {
        samples: u64,
        seed: u64,
    },
    /// Supplied directly as a matrix.
    Synthetic,
}

/// Raw Monte Carlo tallies of one row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowCounts {
    pub alive: Vec<(usize, u64)>,
    pub absorbed: u64,
    pub escaped: u64,
}

#[derive(Clone, Debug)]
pub struct TruncatedKernel {
    radius: u64,
    index: StateIndex,
    rows: Vec<Vec<(usize, f64)>>,
    escaped: Vec<f64>,
    absorbed: Vec<f64>,
    mode: BuildMode,
    counts: Option<Vec<RowCounts>>,
}

impl TruncatedKernel {
    /// Assembles a kernel, checking non-negativity and per-row conservation.
    pub fn from_parts(
        radius: u64,
        index: StateIndex,
        rows: Vec<Vec<(usize, f64)>>,
        absorbed: Vec<f64>,
        escaped: Vec<f64>,
        mode: BuildMode,
    ) -> Result<Self> {
        let n = index.len();
        if n == 0 {
            return Err(Error::Domain("kernel has no states".into()));
        }
        if rows.len() != n || absorbed.len() != n || escaped.len() != n {
            return Err(Error::Validation("kernel parts have inconsistent lengths".into()));
        }
        let mut sorted_rows = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for (j, v) in row {
                if j >= n {
                    return Err(Error::Validation(format!("column {j} out of range in row {i}")));
                }
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Validation(format!("negative or non-finite entry ({i}, {j})")));
                }
                if v > 0.0 {
                    *merged.entry(j).or_default() += v;
                }
            }
            let total: f64 = merged.values().sum::<f64>() + absorbed[i] + escaped[i];
            if !(absorbed[i] >= 0.0 && escaped[i] >= 0.0) || (total - 1.0).abs() > CONSERVATION_TOL {
                return Err(Error::Validation(format!(
                    "row {i} ({}) is not conservative: alive + absorbed + escaped = {total:.17}",
                    index.state(i)
                )));
            }
            sorted_rows.push(merged.into_iter().collect());
        }
        Ok(Self {
            radius,
            index,
            rows: sorted_rows,
            escaped,
            absorbed,
            mode,
            counts: None,
        })
    }

    /// A synthetic kernel from a dense sub-stochastic matrix; the missing
    /// row mass is treated as absorption.
    pub fn from_dense(states: Vec<StateVector>, matrix: &[Vec<f64>]) -> Result<Self> {
        let p = states.first().map_or(1, StateVector::len);
        let radius = states.iter().map(StateVector::norm1).max().unwrap_or(0);
        let index = StateIndex::from_states(p, states.clone())?;
        // Rows follow the caller's order; remap to the sorted index.
        let mut rows = vec![Vec::new(); states.len()];
        let mut absorbed = vec![0.0; states.len()];
        if matrix.len() != states.len() {
            return Err(Error::Validation("matrix size does not match the state list".into()));
        }
        for (r, row) in matrix.iter().enumerate() {
            if row.len() != states.len() {
                return Err(Error::Validation("matrix must be square".into()));
            }
            let i = index.index_of(&states[r]).expect("state present");
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + CONSERVATION_TOL {
                return Err(Error::Validation(format!("row {r} sums to {sum} > 1")));
            }
            absorbed[i] = (1.0 - sum).max(0.0);
            rows[i] = row
                .iter()
                .enumerate()
                .map(|(c, &v)| (index.index_of(&states[c]).expect("state present"), v))
                .collect();
        }
        let n = states.len();
        Self::from_parts(radius, index, rows, absorbed, vec![0.0; n], BuildMode::Synthetic)
    }

    pub fn radius(&self) -> u64 {
        self.radius
    }

    pub fn index(&self) -> &StateIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn mode(&self) -> &BuildMode {
        &self.mode
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    pub fn escaped(&self) -> &[f64] {
        &self.escaped
    }

    pub fn absorbed(&self) -> &[f64] {
        &self.absorbed
    }

    /// Exact Monte Carlo tallies, when built by sampling.
    pub fn counts(&self) -> Option<&[RowCounts]> {
        self.counts.as_deref()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, v)| v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `K v`.
    pub fn apply_right(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, k)| k * v[j]).sum())
            .collect()
    }

    /// `x K`.
    pub fn apply_left(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (row, &xi) in self.rows.iter().zip(x) {
            if xi != 0.0 {
                for &(j, k) in row {
                    out[j] += xi * k;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Sub-kernel on a subset of state indices (used per class).
    fn dense_block(&self, members: &[usize]) -> DMatrix<f64> {
        let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut m = DMatrix::zeros(members.len(), members.len());
        for (a, &i) in members.iter().enumerate() {
            for &(j, v) in &self.rows[i] {
                if let Some(&b) = pos.get(&j) {
                    m[(a, b)] = v;
                }
            }
        }
        m
    }
}

/// Exact kernel from the convolution oracle. `cap` bounds the children-law
/// support per state.
pub fn build_kernel_exact(spec: &ModelSpec, radius: u64, cap: usize) -> Result<TruncatedKernel> {
    if radius == 0 {
        return Err(Error::Domain("radius must be positive (empty state space)".into()));
    }
    spec.ensure_table_covers(radius)?;
    let index = StateIndex::ball(spec.p(), radius);
    let weight = |p: &Prob| p.value();

    // Children law of z is that of z - e_j convolved once with type j, where
    // j is the last non-zero coordinate; that predecessor precedes z in
    // colex order.
    let mut laws: Vec<ChildrenLaw<f64>> = Vec::with_capacity(index.len());
    let origin: ChildrenLaw<f64> = BTreeMap::from([(vec![0; spec.q()], 1.0)]);
    for z in index.states() {
        let j = z.counts().iter().rposition(|&c| c > 0).expect("non-zero state");
        let mut prev = z.counts().to_vec();
        prev[j] -= 1;
        let prev = StateVector::new(prev);
        let base = if prev.is_zero() {
            &origin
        } else {
            &laws[index.index_of(&prev).expect("predecessor in ball")]
        };
        let law =
            convolve_couple(spec, base, j, &weight, cap).map_err(|e| Error::Resource(format!("state {z}: {e}")))?;
        laws.push(law);
    }

    let rows: Vec<(Vec<(usize, f64)>, f64, f64)> = laws
        .into_par_iter()
        .map(|law| {
            let dist = push_forward(spec, law)?;
            let mut row = Vec::new();
            let (mut absorbed, mut escaped) = (0.0, 0.0);
            for (y, p) in dist.outcomes {
                if y.is_zero() {
                    absorbed += p;
                } else if y.norm1() > radius {
                    escaped += p;
                } else {
                    row.push((index.index_of(&y).expect("state in ball"), p));
                }
            }
            Ok((row, absorbed, escaped))
        })
        .collect::<Result<_>>()?;

    let mut alive = Vec::with_capacity(rows.len());
    let mut absorbed = Vec::with_capacity(rows.len());
    let mut escaped = Vec::with_capacity(rows.len());
    for (r, a, e) in rows {
        alive.push(r);
        absorbed.push(a);
        escaped.push(e);
    }
    TruncatedKernel::from_parts(radius, index, alive, absorbed, escaped, BuildMode::Exact)
}

/// Kernel estimated by sampling `samples` one-step transitions per state.
/// Sample `k` of state `s` uses stream `(s << 32) | k`.
pub fn build_kernel_mc(spec: &ModelSpec, radius: u64, samples: u64, seed: u64) -> Result<TruncatedKernel> {
    if radius == 0 {
        return Err(Error::Domain("radius must be positive (empty state space)".into()));
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::Domain(format!(
            "at least {MIN_MC_SAMPLES} samples per state are required"
        )));
    }
    if samples >= 1 << 32 {
        return Err(Error::Domain("samples per state must be below 2^32".into()));
    }
    spec.ensure_table_covers(radius)?;
    let index = StateIndex::ball(spec.p(), radius);
    let rng = CounterRng::new(seed);
    let counts: Vec<RowCounts> = (0..index.len())
        .into_par_iter()
        .map(|s| {
            let z = index.state(s).counts();
            let mut w = vec![0u64; spec.q()];
            let mut y = vec![0u64; spec.p()];
            let mut tally: BTreeMap<usize, u64> = BTreeMap::new();
            let (mut absorbed, mut escaped) = (0u64, 0u64);
            for k in 0..samples {
                sample_children(spec, z, &rng, ((s as u64) << 32) | k, 0, &mut w);
                spec.mating().apply_into(&w, &mut y)?;
                let norm: u64 = y.iter().sum();
                if norm == 0 {
                    absorbed += 1;
                } else if norm > radius {
                    escaped += 1;
                } else {
                    let j = index.index_of(&StateVector::new(y.clone())).expect("state in ball");
                    *tally.entry(j).or_default() += 1;
                }
            }
            Ok(RowCounts {
                alive: tally.into_iter().collect(),
                absorbed,
                escaped,
            })
        })
        .collect::<Result<_>>()?;

    let n = samples as f64;
    let rows = counts
        .iter()
        .map(|c| c.alive.iter().map(|&(j, k)| (j, k as f64 / n)).collect())
        .collect();
    let absorbed = counts.iter().map(|c| c.absorbed as f64 / n).collect();
    let escaped = counts.iter().map(|c| c.escaped as f64 / n).collect();
    let mut kernel = TruncatedKernel::from_parts(
        radius,
        index,
        rows,
        absorbed,
        escaped,
        BuildMode::MonteCarlo { samples, seed },
    )?;
    kernel.counts = Some(counts);
    Ok(kernel)
}

/// A communication class of the positive-entry digraph.
#[derive(Clone, Debug, PartialEq)]
pub struct CommClass {
    pub members: Vec<usize>,
    /// Spectral radius of the kernel restricted to the class.
    pub theta: f64,
    /// Single state without a self-loop: not a recurrent class.
    pub trivial: bool,
    /// Period of the class; `None` for trivial classes.
    pub period: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDecomposition {
    /// In topological order: a class can only lead to classes after it.
    pub classes: Vec<CommClass>,
    /// `max_i θ_{0,i}`.
    pub theta_bar: f64,
    /// Class index of every state.
    pub class_of: Vec<usize>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Strongly connected components with per-class spectral radius and period.
pub fn communication_classes(k: &TruncatedKernel) -> ClassDecomposition {
    let n = k.len();
    let mut graph: DiGraph<(), ()> = DiGraph::with_capacity(n, k.nnz());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for &(j, v) in k.row(i) {
            if v > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    // tarjan_scc yields components in reverse topological order.
    let mut comps = tarjan_scc(&graph);
    comps.reverse();
    let mut class_of = vec![0; n];
    for (c, comp) in comps.iter().enumerate() {
        for node in comp {
            class_of[node.index()] = c;
        }
    }
    let classes: Vec<CommClass> = comps
        .iter()
        .enumerate()
        .map(|(c, comp)| {
            let mut members: Vec<usize> = comp.iter().map(|x| x.index()).collect();
            members.sort_unstable();
            let trivial = members.len() == 1 && k.entry(members[0], members[0]) == 0.0;
            let theta = if trivial { 0.0 } else { class_radius(k, &members) };
            let period = if trivial {
                None
            } else {
                Some(class_period(k, &members, &class_of, c))
            };
            CommClass {
                members,
                theta,
                trivial,
                period,
            }
        })
        .collect();
    let theta_bar = classes.iter().map(|c| c.theta).fold(0.0, f64::max);
    ClassDecomposition {
        classes,
        theta_bar,
        class_of,
    }
}

fn class_radius(k: &TruncatedKernel, members: &[usize]) -> f64 {
    if members.len() == 1 {
        return k.entry(members[0], members[0]);
    }
    let block = k.dense_block(members);
    if members.len() < DENSE_CLASS_LIMIT {
        return block.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    }
    // Irreducible block: A + I is primitive with radius ρ(A) + 1.
    let m = members.len();
    let mut v = vec![1.0 / m as f64; m];
    let mut rho = 0.0;
    for _ in 0..100_000 {
        let mut next: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| block[(i, j)] * v[j]).sum::<f64>() + v[i])
            .collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let done = (s - 1.0 - rho).abs() < 1e-15;
        rho = s - 1.0;
        v = next;
        if done {
            break;
        }
    }
    rho
}

fn class_period(k: &TruncatedKernel, members: &[usize], class_of: &[usize], c: usize) -> u64 {
    let mut level: HashMap<usize, u64> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([members[0]]);
    level.insert(members[0], 0);
    let mut g = 0u64;
    while let Some(u) = queue.pop_front() {
        let lu = level[&u];
        for &(v, w) in k.row(u) {
            if w <= 0.0 || class_of[v] != c {
                continue;
            }
            match level.get(&v) {
                Some(&lv) => g = gcd(g, (lu + 1).abs_diff(lv)),
                None => {
                    level.insert(v, lu + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    g
}

/// Polynomial exponent estimate for one starting state.
#[derive(Clone, Debug, PartialEq)]
pub struct JEstimate {
    pub state: usize,
    /// Least-squares slope of `log ℙ(alive) − n log θ` against `log n`.
    pub slope: f64,
    /// Accepted integer exponent, or `None` when indeterminate.
    pub j: Option<u32>,
    /// Root-mean-square fit residual.
    pub residual: f64,
}

/// Quasi-stationary eigen-data of a truncated kernel.
#[derive(Clone, Debug)]
pub struct QsdEstimate {
    pub theta: f64,
    /// Left eigenvector, a probability vector.
    pub nu: Vec<f64>,
    /// Right eigenvector with maximal entry 1.
    pub eta: Vec<f64>,
    /// `|νK − θν|₁`.
    pub residual_left: f64,
    /// `|Kη − θη|∞ / |η|∞`.
    pub residual_right: f64,
    pub iterations: usize,
    /// True when the eigenvectors came from the dense fallback.
    pub dense_fallback: bool,
    pub classes: Option<ClassDecomposition>,
    pub j_estimates: Vec<JEstimate>,
}

fn residuals(k: &TruncatedKernel, theta: f64, nu: &[f64], eta: &[f64]) -> (f64, f64) {
    let nk = k.apply_left(nu);
    let left = nk.iter().zip(nu).map(|(a, b)| (a - theta * b).abs()).sum();
    let ke = k.apply_right(eta);
    let sup = eta.iter().cloned().fold(0.0, f64::max);
    let right = ke
        .iter()
        .zip(eta)
        .map(|(a, b)| (a - theta * b).abs())
        .fold(0.0, f64::max)
        / sup.max(f64::MIN_POSITIVE);
    (left, right)
}

/// Largest period checked when diagnosing oscillating iterates.
const MAX_DETECTED_PERIOD: usize = 8;

/// Left/right power iteration for the Perron eigen-data of `K`.
///
/// Iteration stops once both residuals are below `tol`. If the iterates
/// cycle, a periodicity error is returned; if they merely stall (reducible
/// kernels whose classes share the top radius), kernels with fewer than
/// [`DENSE_CLASS_LIMIT`] states are solved densely instead.
pub fn spectral_radius(k: &TruncatedKernel, tol: f64, max_iter: usize) -> Result<QsdEstimate> {
    let n = k.len();
    if (0..n).all(|i| k.row_sum(i) == 0.0) {
        return Err(Error::Domain("kernel has no state with positive row sum".into()));
    }
    let mut nu = vec![1.0 / n as f64; n];
    let mut eta = vec![1.0; n];
    let mut history: Vec<Vec<f64>> = Vec::new();
    for it in 1..=max_iter {
        let mut next_nu = k.apply_left(&nu);
        let theta_left: f64 = next_nu.iter().sum();
        if theta_left == 0.0 {
            // The mass died out: nilpotent kernel.
            return Err(Error::Degenerate("left iterates vanish; kernel is nilpotent".into()));
        }
        next_nu.iter_mut().for_each(|x| *x /= theta_left);
        let mut next_eta = k.apply_right(&eta);
        let top = next_eta.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return Err(Error::Degenerate("right iterates vanish; kernel is nilpotent".into()));
        }
        next_eta.iter_mut().for_each(|x| *x /= top);
        nu = next_nu;
        eta = next_eta;
        let ke = k.apply_right(&eta);
        let theta = rayleigh(&nu, &ke, &eta).unwrap_or(theta_left);
        let (rl, rr) = residuals(k, theta, &nu, &eta);
        if rl <= tol && rr <= tol {
            return Ok(QsdEstimate {
                theta,
                nu,
                eta,
                residual_left: rl,
                residual_right: rr,
                iterations: it,
                dense_fallback: false,
                classes: None,
                j_estimates: Vec::new(),
            });
        }
        if max_iter - it < 2 * MAX_DETECTED_PERIOD + 2 {
            history.push(nu.clone());
        }
    }

    if let Some(period) = detect_cycle(&history, tol) {
        return Err(Error::Periodicity(format!(
            "power iterates cycle with period {period}; analyse the class periods instead"
        )));
    }
    if n < DENSE_CLASS_LIMIT {
        return dense_fallback(k, max_iter);
    }
    let (rl, rr) = {
        let ke = k.apply_right(&eta);
        let theta = rayleigh(&nu, &ke, &eta).unwrap_or(0.0);
        residuals(k, theta, &nu, &eta)
    };
    Err(Error::Convergence {
        iterations: max_iter,
        detail: format!("residuals left {rl:e}, right {rr:e}"),
    })
}

fn rayleigh(nu: &[f64], ke: &[f64], eta: &[f64]) -> Option<f64> {
    let num: f64 = nu.iter().zip(ke).map(|(a, b)| a * b).sum();
    let den: f64 = nu.iter().zip(eta).map(|(a, b)| a * b).sum();
    (den > 0.0).then(|| num / den)
}

fn detect_cycle(history: &[Vec<f64>], tol: f64) -> Option<usize> {
    let last = history.last()?;
    let prev = history.get(history.len().checked_sub(2)?)?;
    let moving = crate::spectral::l1_dist(last, prev) > tol.max(1e-9);
    if !moving {
        return None;
    }
    (2..=MAX_DETECTED_PERIOD).find(|&d| {
        history
            .len()
            .checked_sub(d + 1)
            .map(|i| crate::spectral::l1_dist(last, &history[i]) <= 1e3 * tol.max(1e-12))
            .unwrap_or(false)
    })
}

/// Dense solve: `θ` from the class radii, eigenvectors as singular
/// vectors of `K − θI` for the smallest singular value.
fn dense_fallback(k: &TruncatedKernel, iterations: usize) -> Result<QsdEstimate> {
    let theta = communication_classes(k).theta_bar;
    let n = k.len();
    let shifted = k.to_dense() - DMatrix::identity(n, n) * theta;
    let null_vec = |m: DMatrix<f64>| -> Result<Vec<f64>> {
        let svd = m.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numeric("SVD did not return singular vectors".into()))?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let sign = if row.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        Ok(row.iter().map(|x| (sign * x).max(0.0)).collect())
    };
    let mut eta = null_vec(shifted.clone())?;
    let mut nu = null_vec(shifted.transpose())?;
    let s: f64 = nu.iter().sum();
    let top = eta.iter().cloned().fold(0.0, f64::max);
    if !(s > 0.0 && top > 0.0) {
        return Err(Error::Numeric("dense fallback produced a vanishing eigenvector".into()));
    }
    nu.iter_mut().for_each(|x| *x /= s);
    eta.iter_mut().for_each(|x| *x /= top);
    let (rl, rr) = residuals(k, theta, &nu, &eta);
    Ok(QsdEstimate {
        theta,
        nu,
        eta,
        residual_left: rl,
        residual_right: rr,
        iterations,
        dense_fallback: true,
        classes: None,
        j_estimates: Vec::new(),
    })
}

/// `log ℙ_z(alive in the truncation at n)` for `n = 0..=n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalProfile {
    pub log_survival: Vec<f64>,
}

impl SurvivalProfile {
    pub fn probabilities(&self) -> Vec<f64> {
        self.log_survival.iter().map(|l| l.exp()).collect()
    }
}

/// Survival of the truncated chain started at state index `z`. Escaped mass
/// is dropped, so each entry is a lower bound for the true survival.
pub fn survival_profile(k: &TruncatedKernel, z: usize, n_max: usize) -> Result<SurvivalProfile> {
    if z >= k.len() {
        return Err(Error::Domain(format!("state index {z} not in kernel")));
    }
    let mut x = vec![0.0; k.len()];
    x[z] = 1.0;
    let mut log_scale = 0.0;
    let mut log_survival = Vec::with_capacity(n_max + 1);
    log_survival.push(0.0);
    for _ in 0..n_max {
        x = k.apply_left(&x);
        let mass: f64 = x.iter().sum();
        if mass == 0.0 {
            log_survival.push(f64::NEG_INFINITY);
            x.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        log_scale += mass.ln();
        x.iter_mut().for_each(|v| *v /= mass);
        log_survival.push(log_scale);
    }
    Ok(SurvivalProfile { log_survival })
}

/// `log ℙ_z(alive at n)` for every state at once, as `out[n][z]`.
pub fn survival_all(k: &TruncatedKernel, n_max: usize) -> Vec<Vec<f64>> {
    let mut u = vec![1.0; k.len()];
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(vec![0.0; k.len()]);
    for _ in 0..n_max {
        u = k.apply_right(&u);
        let top = u.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            out.push(vec![f64::NEG_INFINITY; k.len()]);
            continue;
        }
        log_scale += top.ln();
        u.iter_mut().for_each(|v| *v /= top);
        out.push(u.iter().map(|v| v.ln() + log_scale).collect());
    }
    out
}

/// Rounding tolerance for accepting an integer exponent.
pub const J_ROUNDING_TOL: f64 = 0.2;

fn fit_exponent(state: usize, log_surv: &[f64], theta: f64, n_lo: usize, n_hi: usize) -> Result<JEstimate> {
    if n_lo < 1 || n_hi <= n_lo {
        return Err(Error::Range(format!("invalid fit range [{n_lo}, {n_hi}]")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in n_lo..=n_hi {
        let l = log_surv[n];
        if !l.is_finite() {
            return Err(Error::Range(format!(
                "survival underflows at n = {n} before the fit window ends"
            )));
        }
        xs.push((n as f64).ln());
        ys.push(l - n as f64 * theta.ln());
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    let rounded = slope.round();
    let j = (rounded >= 0.0 && (slope - rounded).abs() <= J_ROUNDING_TOL).then_some(rounded as u32);
    Ok(JEstimate {
        state,
        slope,
        j,
        residual,
    })
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits `log ℙ_z(Z_n ≠ 0) − n log θ ≈ j log n + c` over `n_range`.
pub fn estimate_j(k: &TruncatedKernel, q: &QsdEstimate, z: usize, n_range: (usize, usize)) -> Result<JEstimate> {
    let profile = survival_profile(k, z, n_range.1)?;
    fit_exponent(z, &profile.log_survival, q.theta, n_range.0, n_range.1)
}

#[derive(Clone, Debug)]
pub struct QsdOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fit window for the polynomial exponents.
    pub j_range: (usize, usize),
}

impl Default for QsdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200_000,
            j_range: (50, 200),
        }
    }
}

/// Eigen-data plus class decomposition and per-state exponents.
pub fn solve_qsd(k: &TruncatedKernel, opts: &QsdOptions) -> Result<QsdEstimate> {
    let mut q = spectral_radius(k, opts.tol, opts.max_iter)?;
    let classes = communication_classes(k);
    let surv = survival_all(k, opts.j_range.1);
    q.j_estimates = (0..k.len())
        .map(|z| {
            let column: Vec<f64> = surv.iter().map(|row| row[z]).collect();
            fit_exponent(z, &column, q.theta, opts.j_range.0, opts.j_range.1).unwrap_or(JEstimate {
                state: z,
                slope: f64::NAN,
                j: None,
                residual: f64::NAN,
            })
        })
        .collect();
    q.classes = Some(classes);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn sv(v: &[u64]) -> StateVector {
        StateVector::new(v.to_vec())
    }

    fn line(n: u64) -> Vec<StateVector> {
        (1..=n).map(|i| sv(&[i])).collect()
    }

    #[test]
    fn ball_order_is_colex() {
        let idx = StateIndex::ball(2, 2);
        let states: Vec<Vec<u64>> = idx.states().iter().map(|s| s.counts().to_vec()).collect();
        assert_eq!(states, vec![vec![1, 0], vec![2, 0], vec![0, 1], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn model_a_radius_one() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        assert_eq!(k.len(), 1);
        assert_eq!(k.entry(0, 0), 0.125);
        assert_eq!(k.absorbed()[0], 0.875);
        assert_eq!(k.escaped()[0], 0.0);
    }

    #[test]
    fn conservation_and_zero_radius() {
        let k = build_kernel_exact(&presets::model_a(), 3, 10_000).unwrap();
        for i in 0..k.len() {
            let total = k.row_sum(i) + k.absorbed()[i] + k.escaped()[i];
            assert!((total - 1.0).abs() <= 1e-12);
        }
        assert!(matches!(
            build_kernel_exact(&presets::model_a(), 0, 10),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_kernel_mc(&presets::model_a(), 0, 10_000, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cap_error_names_state() {
        let err = build_kernel_exact(&presets::model_b(), 30, 20).unwrap_err();
        match err {
            Error::Resource(msg) => assert!(msg.contains("state ("), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mc_kernel_is_deterministic_and_conservative() {
        let a = build_kernel_mc(&presets::model_a(), 3, 20_000, 5).unwrap();
        let b = build_kernel_mc(&presets::model_a(), 3, 20_000, 5).unwrap();
        assert_eq!(a.counts(), b.counts());
        for c in a.counts().unwrap() {
            let total: u64 = c.alive.iter().map(|&(_, k)| k).sum::<u64>() + c.absorbed + c.escaped;
            assert_eq!(total, 20_000);
        }
        assert!(matches!(
            build_kernel_mc(&presets::model_a(), 3, 10, 5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn radius_one_qsd() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        let q = spectral_radius(&k, 1e-14, 1000).unwrap();
        assert_eq!(q.theta, 0.125);
        assert_eq!(q.nu, vec![1.0]);
        assert_eq!(q.eta, vec![1.0]);
    }

    #[test]
    fn triangular_two_state() {
        let k = TruncatedKernel::from_dense(line(2), &[vec![0.5, 0.2], vec![0.0, 0.3]]).unwrap();
        let q = spectral_radius(&k, 1e-13, 10_000).unwrap();
        assert!((q.theta - 0.5).abs() < 1e-12);
        // νK = 0.5ν forces ν₂ = 0.2ν₁/(0.5 − 0.3) = ν₁.
        assert!((q.nu[0] - 0.5).abs() < 1e-12 && (q.nu[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn periodic_kernel_is_reported() {
        let k = TruncatedKernel::from_dense(line(2), &[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        // Start away from the symmetric fixed point: a non-uniform version.
        let k2 = TruncatedKernel::from_dense(line(2), &[vec![0.0, 0.6], vec![0.3, 0.0]]).unwrap();
        assert!(spectral_radius(&k, 1e-12, 1000).is_ok());
        assert!(matches!(spectral_radius(&k2, 1e-12, 1000), Err(Error::Periodicity(_))));
        let classes = communication_classes(&k2);
        assert_eq!(classes.classes.len(), 1);
        assert_eq!(classes.classes[0].period, Some(2));
        assert!((classes.theta_bar - 0.18f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn jordan_block_uses_dense_fallback() {
        let k = TruncatedKernel::from_dense(line(2), &[vec![0.5, 0.3], vec![0.0, 0.5]]).unwrap();
        let q = spectral_radius(&k, 1e-12, 2000).unwrap();
        assert!(q.dense_fallback);
        assert!((q.theta - 0.5).abs() < 1e-15);
        assert!(q.residual_left <= 1e-12 && q.residual_right <= 1e-12);
        assert!(q.nu[1] > 0.999 && q.eta[0] == 1.0 && q.eta[1].abs() < 1e-12);
    }

    #[test]
    fn block_diagonal_classes() {
        let k = TruncatedKernel::from_dense(
            line(3),
            &[vec![0.3, 0.0, 0.0], vec![0.0, 0.4, 0.3], vec![0.0, 0.3, 0.4]],
        )
        .unwrap();
        let d = communication_classes(&k);
        assert_eq!(d.classes.len(), 2);
        assert!((d.theta_bar - 0.7).abs() < 1e-12);
    }

    #[test]
    fn model_a_classes_are_singletons() {
        let k = build_kernel_exact(&presets::model_a(), 3, 10_000).unwrap();
        let d = communication_classes(&k);
        assert_eq!(d.classes.len(), 3);
        assert!(d.classes.iter().all(|c| c.members.len() == 1));
        let q = spectral_radius(&k, 1e-13, 10_000).unwrap();
        assert!((d.theta_bar - q.theta).abs() <= 1e-10);
        // Couples never increase: lower triangular in the colex order.
        for i in 0..k.len() {
            assert!(k.row(i).iter().all(|&(j, _)| j <= i));
        }
    }

    #[test]
    fn irreducible_kernel_single_class() {
        let k = build_kernel_exact(&presets::model_b(), 8, 100_000).unwrap();
        let d = communication_classes(&k);
        assert_eq!(d.classes.len(), 1);
        assert_eq!(d.classes[0].period, Some(1));
        let q = spectral_radius(&k, 1e-13, 100_000).unwrap();
        assert!((d.classes[0].theta - q.theta).abs() <= 1e-10);
    }

    #[test]
    fn survival_profile_radius_one() {
        let k = build_kernel_exact(&presets::model_a(), 1, 10_000).unwrap();
        let s = survival_profile(&k, 0, 20).unwrap().probabilities();
        assert_eq!(s[0], 1.0);
        for (n, v) in s.iter().enumerate() {
            assert!((v / 0.125f64.powi(n as i32) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exponents_on_jordan_block() {
        let k = TruncatedKernel::from_dense(line(2), &[vec![0.5, 0.3], vec![0.0, 0.5]]).unwrap();
        let q = spectral_radius(&k, 1e-12, 2000).unwrap();
        assert_eq!(estimate_j(&k, &q, 0, (50, 200)).unwrap().j, Some(1));
        assert_eq!(estimate_j(&k, &q, 1, (50, 200)).unwrap().j, Some(0));
    }

    #[test]
    fn exponent_zero_on_irreducible() {
        let k = build_kernel_exact(&presets::model_b(), 8, 100_000).unwrap();
        let q = solve_qsd(&k, &QsdOptions::default()).unwrap();
        assert!(q.j_estimates.iter().all(|e| e.j == Some(0)), "{:?}", q.j_estimates);
    }

    #[test]
    fn exponent_range_errors() {
        let k = TruncatedKernel::from_dense(line(1), &[vec![0.0]]).unwrap();
        let q = QsdEstimate {
            theta: 0.5,
            nu: vec![1.0],
            eta: vec![1.0],
            residual_left: 0.0,
            residual_right: 0.0,
            iterations: 0,
            dense_fallback: false,
            classes: None,
            j_estimates: vec![],
        };
        assert!(matches!(estimate_j(&k, &q, 0, (5, 10)), Err(Error::Range(_))));
    }
}
