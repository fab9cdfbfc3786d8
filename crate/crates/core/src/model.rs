//! Bisexual Galton-Watson branching processes.
//!
//! A population of couples of `p` types produces children of `q` types; a
//! mating function then groups the children into the next generation's
//! couples. Offspring laws have finite support, which allows both sampling
//! and exact enumeration of the one-generation law.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{CounterRng, DrawKey};

/// Tolerance on the total mass of each offspring law.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Numbers of couples per type. The zero vector is the unique absorbing state.
///
/// Ordering is colexicographic (last coordinate most significant).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateVector(Vec<u64>);

impl StateVector {
    pub fn new(counts: Vec<u64>) -> Self {
        Self(counts)
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0; p])
    }

    pub fn unit(p: usize, i: usize) -> Self {
        let mut v = vec![0; p];
        v[i] = 1;
        Self(v)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// ℓ¹ norm: total number of couples.
    pub fn norm1(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

impl Add for &StateVector {
    type Output = StateVector;

    fn add(self, rhs: &StateVector) -> StateVector {
        StateVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for StateVector {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.iter().rev().cmp(other.0.iter().rev()))
    }
}

impl PartialOrd for StateVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u64>> for StateVector {
    fn from(v: Vec<u64>) -> Self {
        Self(v)
    }
}

/// A probability kept both as an exact rational and as a float.
#[derive(Clone, Debug, PartialEq)]
pub struct Prob {
    exact: BigRational,
    value: f64,
}

impl Prob {
    pub fn ratio(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Parse("zero denominator".into()));
        }
        Self::from_exact(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_exact(exact: BigRational) -> Result<Self> {
        if exact < BigRational::zero() || exact > BigRational::one() {
            return Err(Error::Validation(format!("probability {exact} outside [0, 1]")));
        }
        let value = exact
            .to_f64()
            .ok_or_else(|| Error::Parse(format!("cannot represent {exact} as f64")))?;
        Ok(Self { exact, value })
    }

    /// Parses `"a/b"` or a decimal literal such as `"0.125"` or `"1e-3"`.
    /// Decimals are converted to the rational they denote, not to the
    /// nearest binary float.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num: BigInt = num
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad numerator in {text:?}")))?;
            let den: BigInt = den
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad denominator in {text:?}")))?;
            if den.is_zero() {
                return Err(Error::Parse(format!("zero denominator in {text:?}")));
            }
            return Self::from_exact(BigRational::new(num, den));
        }
        Self::from_exact(parse_decimal(text)?)
    }

    /// Uses the shortest decimal representation of `x`.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Parse(format!("non-finite probability {x}")));
        }
        Self::parse(&format!("{x:e}"))
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn exact(&self) -> &BigRational {
        &self.exact
    }
}

fn parse_decimal(text: &str) -> Result<BigRational> {
    let bad = || Error::Parse(format!("bad decimal {text:?}"));
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => {
            let e: i64 = text[pos + 1..].parse().map_err(|_| bad())?;
            (&text[..pos], e)
        }
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut num: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| bad())?
    };
    if negative {
        num = -num;
    }
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10);
    let pow = |k: i64| -> Result<BigInt> {
        let k = u32::try_from(k).map_err(|_| bad())?;
        if k > 4000 {
            return Err(bad());
        }
        Ok(num_traits::pow(ten.clone(), k as usize))
    };
    Ok(if scale >= 0 {
        BigRational::from_integer(num * pow(scale)?)
    } else {
        BigRational::new(num, pow(-scale)?)
    })
}

/// Offspring law of one parent type: finitely many children vectors.
#[derive(Clone, Debug)]
pub struct TypeLaw {
    outcomes: Vec<(Vec<u64>, Prob)>,
    cumulative: Vec<f64>,
    mean: Vec<f64>,
}

impl TypeLaw {
    pub fn outcomes(&self) -> &[(Vec<u64>, Prob)] {
        &self.outcomes
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Inverse-CDF lookup of a uniform variate.
    pub fn sample(&self, u: f64) -> &[u64] {
        let k = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.outcomes.len() - 1);
        &self.outcomes[k].0
    }

    /// `E |V|₁^r`.
    pub fn abs_moment(&self, r: f64) -> f64 {
        self.outcomes
            .iter()
            .map(|(v, p)| p.value() * (v.iter().sum::<u64>() as f64).powf(r))
            .sum()
    }

    /// Largest single coordinate of any outcome.
    pub fn max_component(&self) -> u64 {
        self.outcomes
            .iter()
            .flat_map(|(v, _)| v.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// One offspring law per parent type.
#[derive(Clone, Debug)]
pub struct OffspringLaw {
    q: usize,
    laws: Vec<TypeLaw>,
}

impl OffspringLaw {
    pub fn new(q: usize, per_type: Vec<Vec<(Vec<u64>, Prob)>>) -> Result<Self> {
        if q == 0 {
            return Err(Error::Validation("q must be positive".into()));
        }
        if per_type.is_empty() {
            return Err(Error::Validation("at least one parent type is required".into()));
        }
        let mut laws = Vec::with_capacity(per_type.len());
        for (i, outcomes) in per_type.into_iter().enumerate() {
            if outcomes.is_empty() {
                return Err(Error::Validation(format!("offspring law {i} has empty support")));
            }
            let mut merged: BTreeMap<Vec<u64>, BigRational> = BTreeMap::new();
            for (v, p) in outcomes {
                if v.len() != q {
                    return Err(Error::Validation(format!(
                        "offspring law {i}: vector {v:?} has length {} but q = {q}",
                        v.len()
                    )));
                }
                *merged.entry(v).or_insert_with(BigRational::zero) += p.exact().clone();
            }
            let outcomes = merged
                .into_iter()
                .map(|(v, p)| Prob::from_exact(p).map(|p| (v, p)))
                .collect::<Result<Vec<_>>>()?;
            let total: f64 = outcomes.iter().map(|(_, p)| p.value()).sum();
            if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
                return Err(Error::Validation(format!(
                    "offspring law {i}: probabilities sum to {total:.17}, not 1"
                )));
            }
            let mut acc = 0.0;
            let cumulative = outcomes
                .iter()
                .map(|(_, p)| {
                    acc += p.value();
                    acc
                })
                .collect();
            let mut mean = vec![0.0; q];
            for (v, p) in &outcomes {
                for (m, &c) in mean.iter_mut().zip(v) {
                    *m += p.value() * c as f64;
                }
            }
            laws.push(TypeLaw {
                outcomes,
                cumulative,
                mean,
            });
        }
        Ok(Self { q, laws })
    }

    /// Single parent type whose couple has `N` children (law `count_probs`),
    /// each independently of type 1 with probability `first` and of type 2
    /// otherwise. Children vectors are `(#type 1, #type 2)`.
    pub fn sex_split(count_probs: &[Prob], first: &Prob) -> Result<Self> {
        let f = first.exact().clone();
        let m = BigRational::one() - &f;
        let mut outcomes = Vec::new();
        for (n, pn) in count_probs.iter().enumerate() {
            for k in 0..=n {
                let binom = BigRational::from_integer(binomial(n as u64, k as u64));
                let p = pn.exact().clone() * binom * num_traits::pow(f.clone(), k) * num_traits::pow(m.clone(), n - k);
                outcomes.push((vec![k as u64, (n - k) as u64], Prob::from_exact(p)?));
            }
        }
        Self::new(2, vec![outcomes])
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.laws.len()
    }

    pub fn law(&self, i: usize) -> &TypeLaw {
        &self.laws[i]
    }

    pub fn laws(&self) -> &[TypeLaw] {
        &self.laws
    }
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

/// Upper affine bound `ξ(x) ≤ α|x|₁ + β` declared for a mating function.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Dense table of a mating function on the box `[0, bound]^q`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatingTable {
    bound: u64,
    values: Vec<Vec<u64>>,
}

impl MatingTable {
    /// `entries` must cover every point of the box exactly once.
    pub fn new(p: usize, q: usize, bound: u64, entries: Vec<(Vec<u64>, Vec<u64>)>) -> Result<Self> {
        let side = bound + 1;
        let size = side
            .checked_pow(q as u32)
            .filter(|&s| s <= 1 << 24)
            .ok_or_else(|| Error::Validation(format!("mating table box [0,{bound}]^{q} too large")))?;
        let mut values: Vec<Option<Vec<u64>>> = vec![None; size as usize];
        for (w, z) in entries {
            if w.len() != q || z.len() != p {
                return Err(Error::Validation(format!(
                    "mating table entry {w:?} -> {z:?} has wrong dimensions"
                )));
            }
            let idx = box_index(&w, bound)
                .ok_or_else(|| Error::Validation(format!("mating table entry {w:?} outside box")))?;
            if values[idx].replace(z).is_some() {
                return Err(Error::Validation(format!("duplicate mating table entry {w:?}")));
            }
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(idx, v)| {
                v.ok_or_else(|| Error::Validation(format!("mating table misses entry {:?}", box_point(idx, bound, q))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bound, values })
    }

    /// Tabulates `f` on the box.
    pub fn from_fn(p: usize, q: usize, bound: u64, f: impl Fn(&[u64]) -> Vec<u64>) -> Result<Self> {
        let side = (bound + 1) as usize;
        let size = side.pow(q as u32);
        let entries = (0..size)
            .map(|idx| {
                let w = box_point(idx, bound, q);
                let z = f(&w);
                (w, z)
            })
            .collect();
        Self::new(p, q, bound, entries)
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    fn get(&self, w: &[u64]) -> Option<&[u64]> {
        box_index(w, self.bound).map(|idx| self.values[idx].as_slice())
    }
}

fn box_index(w: &[u64], bound: u64) -> Option<usize> {
    let side = bound + 1;
    let mut idx = 0u64;
    for &c in w.iter().rev() {
        if c > bound {
            return None;
        }
        idx = idx * side + c;
    }
    Some(idx as usize)
}

fn box_point(mut idx: usize, bound: u64, q: usize) -> Vec<u64> {
    let side = (bound + 1) as usize;
    (0..q)
        .map(|_| {
            let c = idx % side;
            idx /= side;
            c as u64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatingKind {
    /// `ξ(x) = x`, requires `p = q`.
    Identity,
    /// `ξ(x, y) = min(x, y)`.
    PerfectFidelity,
    /// `ξ(x, y) = x·min(1, y)`.
    Promiscuous,
    CustomTable(MatingTable),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatingFunction {
    kind: MatingKind,
    p: usize,
    q: usize,
    certificate: Certificate,
    declared: bool,
}

impl MatingFunction {
    pub fn identity(p: usize) -> Self {
        Self {
            kind: MatingKind::Identity,
            p,
            q: p,
            certificate: Certificate {
                alpha: vec![1.0; p],
                beta: vec![0.0; p],
            },
            declared: false,
        }
    }

    pub fn perfect_fidelity() -> Self {
        Self {
            kind: MatingKind::PerfectFidelity,
            p: 1,
            q: 2,
            certificate: Certificate {
                alpha: vec![1.0],
                beta: vec![0.0],
            },
            declared: false,
        }
    }

    pub fn promiscuous() -> Self {
        Self {
            kind: MatingKind::Promiscuous,
            p: 1,
            q: 2,
            certificate: Certificate {
                alpha: vec![1.0],
                beta: vec![0.0],
            },
            declared: false,
        }
    }

    /// A tabulated mating function. Without a certificate, evaluation
    /// outside the table box is a domain error; with one, the function is
    /// extended by `⌊α|x|₁ + β⌋` beyond the box.
    pub fn custom_table(p: usize, q: usize, table: MatingTable, certificate: Option<Certificate>) -> Result<Self> {
        let declared = certificate.is_some();
        let certificate = certificate.unwrap_or(Certificate {
            alpha: vec![1.0; p],
            beta: vec![0.0; p],
        });
        check_certificate(&certificate, p)?;
        Ok(Self {
            kind: MatingKind::CustomTable(table),
            p,
            q,
            certificate,
            declared,
        })
    }

    /// Replaces the default sub-affinity certificate.
    pub fn with_certificate(mut self, certificate: Certificate) -> Result<Self> {
        check_certificate(&certificate, self.p)?;
        self.certificate = certificate;
        self.declared = true;
        Ok(self)
    }

    pub fn kind(&self) -> &MatingKind {
        &self.kind
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    /// Whether the certificate was supplied rather than defaulted.
    pub fn certificate_declared(&self) -> bool {
        self.declared
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MatingKind::Identity => "identity",
            MatingKind::PerfectFidelity => "perfect_fidelity",
            MatingKind::Promiscuous => "promiscuous",
            MatingKind::CustomTable(_) => "custom_table",
        }
    }

    /// `ξ(w)`.
    pub fn apply(&self, w: &[u64]) -> Result<StateVector> {
        let mut out = vec![0; self.p];
        self.apply_into(w, &mut out)?;
        Ok(StateVector(out))
    }

    pub(crate) fn apply_into(&self, w: &[u64], out: &mut [u64]) -> Result<()> {
        if w.len() != self.q {
            return Err(Error::Domain(format!(
                "mating input {w:?} has length {} but q = {}",
                w.len(),
                self.q
            )));
        }
        match &self.kind {
            MatingKind::Identity => out.copy_from_slice(w),
            MatingKind::PerfectFidelity => out[0] = w[0].min(w[1]),
            MatingKind::Promiscuous => out[0] = w[0] * w[1].min(1),
            MatingKind::CustomTable(table) => match table.get(w) {
                Some(z) => out.copy_from_slice(z),
                None if self.declared => {
                    let norm = w.iter().sum::<u64>() as f64;
                    for (o, (a, b)) in out
                        .iter_mut()
                        .zip(self.certificate.alpha.iter().zip(&self.certificate.beta))
                    {
                        *o = (a * norm + b).floor() as u64;
                    }
                }
                None => {
                    return Err(Error::Domain(format!(
                        "{w:?} outside the mating table box [0,{}]^{}",
                        table.bound(),
                        self.q
                    )))
                }
            },
        }
        Ok(())
    }
}

fn check_certificate(c: &Certificate, p: usize) -> Result<()> {
    if c.alpha.len() != p || c.beta.len() != p {
        return Err(Error::Validation(
            "certificate must have p entries in alpha and beta".into(),
        ));
    }
    if c.alpha.iter().chain(&c.beta).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Validation(
            "certificate entries must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Complete description of a bisexual Galton-Watson branching process.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    p: usize,
    q: usize,
    mating: MatingFunction,
    offspring: OffspringLaw,
    mean_matrix: Vec<Vec<f64>>,
}

impl ModelSpec {
    pub fn new(mating: MatingFunction, offspring: OffspringLaw) -> Result<Self> {
        let (p, q) = (mating.p(), mating.q());
        if p == 0 || q == 0 {
            return Err(Error::Validation("p and q must be positive".into()));
        }
        if offspring.p() != p || offspring.q() != q {
            return Err(Error::Validation(format!(
                "offspring law is {}x{} but mating function is {p}x{q}",
                offspring.p(),
                offspring.q()
            )));
        }
        match mating.kind() {
            MatingKind::Identity if p != q => return Err(Error::Validation("identity mating requires p = q".into())),
            MatingKind::PerfectFidelity | MatingKind::Promiscuous if (p, q) != (1, 2) => {
                return Err(Error::Validation(format!(
                    "{} mating requires p = 1, q = 2",
                    mating.name()
                )))
            }
            _ => {}
        }
        let mean_matrix = offspring.laws().iter().map(|l| l.mean().to_vec()).collect();
        Ok(Self {
            p,
            q,
            mating,
            offspring,
            mean_matrix,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mating(&self) -> &MatingFunction {
        &self.mating
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    /// `p × q` matrix of offspring means.
    pub fn mean_matrix(&self) -> &[Vec<f64>] {
        &self.mean_matrix
    }

    /// Stable fingerprint of the model, used to tag simulation output.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.mating.name().as_bytes());
        feed(&(self.p as u64).to_le_bytes());
        feed(&(self.q as u64).to_le_bytes());
        if let MatingKind::CustomTable(t) = self.mating.kind() {
            for v in &t.values {
                for c in v {
                    feed(&c.to_le_bytes());
                }
            }
        }
        for law in self.offspring.laws() {
            for (v, p) in law.outcomes() {
                for c in v {
                    feed(&c.to_le_bytes());
                }
                feed(p.exact().to_string().as_bytes());
            }
        }
        format!("{h:016x}")
    }

    /// Rejects custom tables whose box cannot hold every children vector
    /// produced from a state of norm at most `radius`, unless a certificate
    /// extends the table beyond its box.
    pub fn ensure_table_covers(&self, radius: u64) -> Result<()> {
        if self.mating.declared {
            return Ok(());
        }
        if let MatingKind::CustomTable(table) = self.mating.kind() {
            let per_couple = self
                .offspring
                .laws()
                .iter()
                .map(TypeLaw::max_component)
                .max()
                .unwrap_or(0);
            let needed = radius.saturating_mul(per_couple);
            if table.bound() < needed {
                return Err(Error::Validation(format!(
                    "mating table box [0,{}] too small for radius {radius} (needs {needed})",
                    table.bound()
                )));
            }
        }
        Ok(())
    }
}

/// One failed invariant, with the inputs that witness it.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ZeroNotFixed {
        image: Vec<u64>,
    },
    Superadditivity {
        x1: Vec<u64>,
        x2: Vec<u64>,
        sum_image: Vec<u64>,
        image_sum: Vec<u64>,
    },
    SubAffinity {
        x: Vec<u64>,
        image: Vec<u64>,
        bound: Vec<f64>,
    },
    ColumnSum {
        column: usize,
        sum: f64,
    },
    Evaluation {
        x: Vec<u64>,
        message: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroNotFixed { image } => write!(f, "xi(0) = {image:?} != 0"),
            Violation::Superadditivity {
                x1,
                x2,
                sum_image,
                image_sum,
            } => write!(
                f,
                "superadditivity fails at x1 = {x1:?}, x2 = {x2:?}: xi(x1+x2) = {sum_image:?} < {image_sum:?}"
            ),
            Violation::SubAffinity { x, image, bound } => {
                write!(f, "sub-affinity fails at x = {x:?}: xi(x) = {image:?} > {bound:?}")
            }
            Violation::ColumnSum { column, sum } => {
                write!(f, "column {column} of the mean matrix sums to {sum}")
            }
            Violation::Evaluation { x, message } => write!(f, "xi({x:?}) failed: {message}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Number of `(x1, x2)` pairs checked for superadditivity.
    pub pairs_checked: usize,
    /// True when every pair of the custom table box was enumerated.
    pub exhaustive: bool,
    /// The superadditivity and sub-affinity checks only cover a finite set
    /// of points, so a pass is a partial certificate.
    pub partial_certificate: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const SAMPLE_BOX: u64 = 24;
const EXHAUSTIVE_PAIR_LIMIT: usize = 2_000_000;

/// Checks `ξ(0) = 0`, superadditivity, sub-affinity and the column
/// condition on the mean matrix. Custom tables are checked exhaustively
/// when the box is small enough; otherwise `n_samples` random pairs are used.
pub fn validate_model(spec: &ModelSpec, n_samples: usize, seed: u64) -> Result<ValidationReport> {
    let xi = spec.mating();
    let q = spec.q();
    let mut violations = Vec::new();

    let zero = vec![0; q];
    match xi.apply(&zero) {
        Ok(img) if !img.is_zero() => violations.push(Violation::ZeroNotFixed {
            image: img.counts().to_vec(),
        }),
        Ok(_) => {}
        Err(e) => violations.push(Violation::Evaluation {
            x: zero,
            message: e.to_string(),
        }),
    }

    let bound = match xi.kind() {
        MatingKind::CustomTable(t) => t.bound(),
        _ => SAMPLE_BOX,
    };
    let points = ((bound + 1) as usize).saturating_pow(q as u32);
    let exhaustive =
        matches!(xi.kind(), MatingKind::CustomTable(_)) && points.saturating_mul(points) <= EXHAUSTIVE_PAIR_LIMIT;

    let mut pairs: Vec<(Vec<u64>, Vec<u64>)> = Vec::new();
    if exhaustive {
        for a in 0..points {
            let x1 = box_point(a, bound, q);
            for b in 0..points {
                let x2 = box_point(b, bound, q);
                if x1.iter().zip(&x2).all(|(u, v)| u + v <= bound) {
                    pairs.push((x1.clone(), x2));
                }
            }
        }
    } else {
        let mut rng = CounterRng::new(seed).auxiliary(0x76616c);
        for _ in 0..n_samples {
            let x1: Vec<u64> = (0..q).map(|_| rng.random_range(0..=bound / 2)).collect();
            let x2: Vec<u64> = (0..q).map(|_| rng.random_range(0..=bound / 2)).collect();
            pairs.push((x1, x2));
        }
    }

    let mut seen_affine: HashMap<Vec<u64>, ()> = HashMap::new();
    let cert = xi.certificate();
    let mut check_affine = |x: &Vec<u64>, img: &StateVector, violations: &mut Vec<Violation>| {
        if seen_affine.insert(x.clone(), ()).is_some() {
            return;
        }
        let norm = x.iter().sum::<u64>() as f64;
        let bound: Vec<f64> = cert.alpha.iter().zip(&cert.beta).map(|(a, b)| a * norm + b).collect();
        if img.counts().iter().zip(&bound).any(|(&z, &b)| z as f64 > b + 1e-9) {
            violations.push(Violation::SubAffinity {
                x: x.clone(),
                image: img.counts().to_vec(),
                bound,
            });
        }
    };

    for (x1, x2) in &pairs {
        let sum: Vec<u64> = x1.iter().zip(x2).map(|(a, b)| a + b).collect();
        let imgs = (xi.apply(x1), xi.apply(x2), xi.apply(&sum));
        let (i1, i2, is) = match imgs {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (a, b, c) => {
                for (x, r) in [(x1, a), (x2, b), (&sum, c)] {
                    if let Err(e) = r {
                        violations.push(Violation::Evaluation {
                            x: x.clone(),
                            message: e.to_string(),
                        });
                    }
                }
                continue;
            }
        };
        let image_sum = &i1 + &i2;
        if !image_sum.le(&is) {
            violations.push(Violation::Superadditivity {
                x1: x1.clone(),
                x2: x2.clone(),
                sum_image: is.counts().to_vec(),
                image_sum: image_sum.counts().to_vec(),
            });
        }
        check_affine(x1, &i1, &mut violations);
        check_affine(x2, &i2, &mut violations);
        check_affine(&sum, &is, &mut violations);
    }

    for j in 0..q {
        let sum: f64 = spec.mean_matrix().iter().map(|row| row[j]).sum();
        if !(sum > 0.0) {
            violations.push(Violation::ColumnSum { column: j, sum });
        }
    }

    Ok(ValidationReport {
        violations,
        pairs_checked: pairs.len(),
        exhaustive,
        partial_certificate: true,
    })
}

/// `ξ(w)` for a children vector `w`.
pub fn mating_apply(xi: &MatingFunction, w: &[u64]) -> Result<StateVector> {
    xi.apply(w)
}

/// Sums the children of every couple of `z` into `w`. Couple `k` of type
/// `i` draws with key `(stream, generation, i, k)`, so two states sharing a
/// couple share its offspring.
pub(crate) fn sample_children(
    spec: &ModelSpec,
    z: &[u64],
    rng: &CounterRng,
    stream: u64,
    generation: u64,
    w: &mut [u64],
) {
    w.iter_mut().for_each(|c| *c = 0);
    for (i, &count) in z.iter().enumerate() {
        let law = spec.offspring().law(i);
        for k in 0..count {
            let u = rng.uniform(DrawKey {
                stream,
                generation,
                parent_type: i,
                index: k,
            });
            for (acc, &c) in w.iter_mut().zip(law.sample(u)) {
                *acc += c;
            }
        }
    }
}

/// One generation of the process started from `z`.
pub fn step(spec: &ModelSpec, z: &StateVector, rng: &CounterRng, stream: u64, generation: u64) -> Result<StateVector> {
    if z.len() != spec.p() {
        return Err(Error::Domain(format!(
            "state {z} has length {} but p = {}",
            z.len(),
            spec.p()
        )));
    }
    if z.is_zero() {
        return Ok(z.clone());
    }
    let mut w = vec![0; spec.q()];
    sample_children(spec, z.counts(), rng, stream, generation, &mut w);
    spec.mating().apply(&w)
}

/// Exact law of the next generation.
#[derive(Clone, Debug)]
pub struct StepDistribution<T> {
    pub outcomes: BTreeMap<StateVector, T>,
}

impl StepDistribution<f64> {
    pub fn total(&self) -> f64 {
        self.outcomes.values().sum()
    }

    pub fn prob(&self, y: &StateVector) -> f64 {
        self.outcomes.get(y).copied().unwrap_or(0.0)
    }

    /// `E[Z₁]`.
    pub fn mean(&self) -> Vec<f64> {
        let p = self.outcomes.keys().next().map_or(0, StateVector::len);
        let mut m = vec![0.0; p];
        for (y, w) in &self.outcomes {
            for (mi, &c) in m.iter_mut().zip(y.counts()) {
                *mi += w * c as f64;
            }
        }
        m
    }
}

/// Law of the children vector `W`, keyed by `W`. Ordered, so that sums
/// over it are reproducible bit for bit.
pub(crate) type ChildrenLaw<T> = BTreeMap<Vec<u64>, T>;

/// Convolves `law` with one more couple of type `parent_type`.
pub(crate) fn convolve_couple<T>(
    spec: &ModelSpec,
    law: &ChildrenLaw<T>,
    parent_type: usize,
    weight: &impl Fn(&Prob) -> T,
    cap: usize,
) -> Result<ChildrenLaw<T>>
where
    T: Clone + Zero + Add<Output = T> + Mul<Output = T>,
{
    let outcomes = spec.offspring().law(parent_type).outcomes();
    let mut next: ChildrenLaw<T> = BTreeMap::new();
    for (w, pw) in law {
        for (v, pv) in outcomes {
            let key: Vec<u64> = w.iter().zip(v).map(|(a, b)| a + b).collect();
            let add = pw.clone() * weight(pv);
            match next.get_mut(&key) {
                Some(acc) => *acc = acc.clone() + add,
                None => {
                    next.insert(key, add);
                }
            }
        }
        if next.len() > cap {
            return Err(Error::Resource(format!(
                "children law support exceeds cap {cap}; use the Monte Carlo kernel instead"
            )));
        }
    }
    Ok(next)
}

pub(crate) fn children_law<T>(
    spec: &ModelSpec,
    z: &StateVector,
    cap: usize,
    weight: &impl Fn(&Prob) -> T,
) -> Result<ChildrenLaw<T>>
where
    T: Clone + Zero + One + Add<Output = T> + Mul<Output = T>,
{
    let mut law: ChildrenLaw<T> = BTreeMap::from([(vec![0; spec.q()], T::one())]);
    for (i, &count) in z.counts().iter().enumerate() {
        for _ in 0..count {
            law = convolve_couple(spec, &law, i, weight, cap)?;
        }
    }
    Ok(law)
}

pub(crate) fn push_forward<T>(spec: &ModelSpec, law: ChildrenLaw<T>) -> Result<StepDistribution<T>>
where
    T: Clone + Zero + Add<Output = T>,
{
    let mut outcomes: BTreeMap<StateVector, T> = BTreeMap::new();
    for (w, pw) in law {
        let y = spec.mating().apply(&w)?;
        match outcomes.get_mut(&y) {
            Some(acc) => *acc = acc.clone() + pw,
            None => {
                outcomes.insert(y, pw);
            }
        }
    }
    Ok(StepDistribution { outcomes })
}

fn check_state(spec: &ModelSpec, z: &StateVector) -> Result<()> {
    if z.len() != spec.p() {
        return Err(Error::Domain(format!(
            "state {z} has length {} but p = {}",
            z.len(),
            spec.p()
        )));
    }
    Ok(())
}

/// Exact law of `Z₁` given `Z₀ = z` by iterated convolution of the
/// per-couple laws followed by the mating function. `cap` bounds the number
/// of distinct children vectors tracked during the convolution.
pub fn step_distribution(spec: &ModelSpec, z: &StateVector, cap: usize) -> Result<StepDistribution<f64>> {
    check_state(spec, z)?;
    push_forward(spec, children_law(spec, z, cap, &|p: &Prob| p.value())?)
}

/// Same as [`step_distribution`] in exact rational arithmetic.
pub fn step_distribution_exact(spec: &ModelSpec, z: &StateVector, cap: usize) -> Result<StepDistribution<BigRational>> {
    check_state(spec, z)?;
    push_forward(spec, children_law(spec, z, cap, &|p: &Prob| p.exact().clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn prob_parsing_is_exact() {
        assert_eq!(Prob::parse("1/8").unwrap().exact(), &r(1, 8));
        assert_eq!(Prob::parse("0.125").unwrap().exact(), &r(1, 8));
        assert_eq!(Prob::parse("1.25e-1").unwrap().exact(), &r(1, 8));
        assert_eq!(Prob::parse("0.1").unwrap().exact(), &r(1, 10));
        assert_eq!(Prob::from_f64(0.1).unwrap().exact(), &r(1, 10));
        assert!(Prob::parse("3/2").is_err());
        assert!(Prob::parse("x").is_err());
        assert!(Prob::parse("1/0").is_err());
    }

    #[test]
    fn colex_order() {
        let a = StateVector::new(vec![2, 0]);
        let b = StateVector::new(vec![0, 1]);
        assert!(a < b);
        assert!(StateVector::new(vec![1, 1]) > b);
    }

    #[test]
    fn mating_examples() {
        assert_eq!(
            mating_apply(&MatingFunction::perfect_fidelity(), &[3, 5])
                .unwrap()
                .counts(),
            &[3]
        );
        assert_eq!(
            mating_apply(&MatingFunction::promiscuous(), &[4, 0]).unwrap().counts(),
            &[0]
        );
        assert_eq!(
            mating_apply(&MatingFunction::promiscuous(), &[4, 2]).unwrap().counts(),
            &[4]
        );
        assert_eq!(
            mating_apply(&MatingFunction::identity(3), &[1, 0, 2]).unwrap().counts(),
            &[1, 0, 2]
        );
        for xi in [
            MatingFunction::identity(2),
            MatingFunction::perfect_fidelity(),
            MatingFunction::promiscuous(),
        ] {
            assert!(xi.apply(&vec![0; xi.q()]).unwrap().is_zero());
        }
        assert!(matches!(
            MatingFunction::perfect_fidelity().apply(&[1]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn custom_table_domain() {
        let table = MatingTable::from_fn(1, 2, 3, |w| vec![w[0].min(w[1])]).unwrap();
        let xi = MatingFunction::custom_table(1, 2, table.clone(), None).unwrap();
        assert_eq!(xi.apply(&[2, 3]).unwrap().counts(), &[2]);
        assert!(matches!(xi.apply(&[4, 0]), Err(Error::Domain(_))));
        let capped = MatingFunction::custom_table(
            1,
            2,
            table,
            Some(Certificate {
                alpha: vec![0.5],
                beta: vec![0.0],
            }),
        )
        .unwrap();
        assert_eq!(capped.apply(&[4, 3]).unwrap().counts(), &[3]);
    }

    #[test]
    fn incomplete_table_is_rejected() {
        let err = MatingTable::new(1, 1, 2, vec![(vec![0], vec![0]), (vec![1], vec![1])]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_probabilities_are_rejected() {
        let law = vec![vec![
            (vec![0, 0], Prob::parse("0.5").unwrap()),
            (vec![1, 1], Prob::parse("0.4").unwrap()),
        ]];
        assert!(matches!(OffspringLaw::new(2, law), Err(Error::Validation(_))));
    }

    #[test]
    fn dimension_rules() {
        let law = OffspringLaw::new(2, vec![vec![(vec![1, 1], Prob::ratio(1, 1).unwrap())]; 2]).unwrap();
        assert!(ModelSpec::new(MatingFunction::perfect_fidelity(), law).is_err());
    }

    #[test]
    fn validate_builtins_pass() {
        for spec in [presets::model_a(), presets::model_b(), presets::classical_two_type()] {
            let report = validate_model(&spec, 2000, 1).unwrap();
            assert!(report.passed(), "{:?}", report.violations);
        }
    }

    #[test]
    fn validate_catches_bad_tables() {
        let a = presets::model_a();
        // xi(0,1) = 1 breaks superadditivity at (0,1) + (0,1).
        let table = MatingTable::from_fn(1, 2, 3, |w| vec![if w == [0, 1] { 1 } else { w[0].min(w[1]) }]).unwrap();
        let xi = MatingFunction::custom_table(1, 2, table, None).unwrap();
        let spec = ModelSpec::new(xi, a.offspring().clone()).unwrap();
        let report = validate_model(&spec, 0, 1).unwrap();
        assert!(report.exhaustive);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Superadditivity { .. })));

        let table = MatingTable::from_fn(1, 2, 3, |w| vec![w[0].min(w[1]) + 1]).unwrap();
        let xi = MatingFunction::custom_table(1, 2, table, None).unwrap();
        let spec = ModelSpec::new(xi, a.offspring().clone()).unwrap();
        let report = validate_model(&spec, 0, 1).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ZeroNotFixed { .. })));
    }

    #[test]
    fn validate_reports_column_sum() {
        let law = OffspringLaw::new(
            2,
            vec![vec![
                (vec![1, 0], Prob::parse("0.9").unwrap()),
                (vec![0, 0], Prob::parse("0.1").unwrap()),
            ]],
        )
        .unwrap();
        let spec = ModelSpec::new(MatingFunction::promiscuous(), law).unwrap();
        let report = validate_model(&spec, 100, 3).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ColumnSum { column: 1, .. })));
    }

    #[test]
    fn model_a_one_step_exact() {
        let spec = presets::model_a();
        let d = step_distribution_exact(&spec, &StateVector::new(vec![1]), 10_000).unwrap();
        assert_eq!(d.outcomes.len(), 2);
        assert_eq!(d.outcomes[&StateVector::new(vec![0])], r(7, 8));
        assert_eq!(d.outcomes[&StateVector::new(vec![1])], r(1, 8));
        let m = &spec.mean_matrix()[0];
        assert!((m[0] - 0.375).abs() < 1e-15 && (m[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn zero_state_and_deterministic_extinction() {
        let spec = presets::model_a();
        let d = step_distribution(&spec, &StateVector::new(vec![0]), 10).unwrap();
        assert_eq!(d.outcomes.len(), 1);
        assert_eq!(d.prob(&StateVector::new(vec![0])), 1.0);

        let law = OffspringLaw::new(1, vec![vec![(vec![0], Prob::ratio(1, 1).unwrap())]]).unwrap();
        let dead = ModelSpec::new(MatingFunction::identity(1), law).unwrap();
        let d = step_distribution(&dead, &StateVector::new(vec![5]), 10).unwrap();
        assert_eq!(d.outcomes.len(), 1);
        assert_eq!(d.prob(&StateVector::new(vec![0])), 1.0);
    }

    #[test]
    fn step_distribution_cap_is_hard() {
        let spec = presets::model_a();
        let err = step_distribution(&spec, &StateVector::new(vec![40]), 50).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn step_of_zero_is_zero() {
        let spec = presets::model_a();
        let rng = CounterRng::new(1);
        assert!(step(&spec, &StateVector::new(vec![0]), &rng, 0, 0).unwrap().is_zero());
    }

    #[test]
    fn step_matches_enumeration_model_a() {
        // 10^6 draws; binomial 3 sigma around 1/8.
        let spec = presets::model_a();
        let rng = CounterRng::new(2024);
        let n = 1_000_000u64;
        let z = StateVector::new(vec![1]);
        let ones = (0..n)
            .filter(|&s| step(&spec, &z, &rng, s, 0).unwrap().counts()[0] == 1)
            .count() as f64;
        let p = 1.0 / 8.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones / n as f64 - p).abs() <= 3.0 * sigma);
    }

    #[test]
    fn empirical_law_close_to_exact() {
        let spec = presets::model_a();
        let rng = CounterRng::new(99);
        let n = 1_000_000u64;
        for z in 1..=3u64 {
            let z = StateVector::new(vec![z]);
            let exact = step_distribution(&spec, &z, 100_000).unwrap();
            let mut counts: BTreeMap<StateVector, u64> = BTreeMap::new();
            for s in 0..n {
                *counts.entry(step(&spec, &z, &rng, s, 0).unwrap()).or_default() += 1;
            }
            let mut l1 = 0.0;
            for (y, p) in &exact.outcomes {
                l1 += (counts.get(y).copied().unwrap_or(0) as f64 / n as f64 - p).abs();
            }
            for (y, c) in &counts {
                if !exact.outcomes.contains_key(y) {
                    l1 += *c as f64 / n as f64;
                }
            }
            assert!(l1 <= 0.01, "z = {z}: l1 = {l1}");
        }
    }

    #[test]
    fn mean_matrix_matches_analytic_expectation() {
        let spec = presets::model_b();
        // N uniform on {0,1,2,3}: E N = 3/2, fair split.
        for &m in &spec.mean_matrix()[0] {
            assert!((m - 0.75).abs() <= 1e-12);
        }
        let cl = presets::classical_two_type();
        let expect = [[0.5, 0.2], [0.1, 0.4]];
        for (row, e) in cl.mean_matrix().iter().zip(expect) {
            for (a, b) in row.iter().zip(e) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
