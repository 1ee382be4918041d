//! Multi-index arithmetic, continuously increasing nestings and Taylor jets.
//!
//! A [`MultiIndex`] carries its ambient dimension explicitly so that mixing
//! indices of different dimensions is rejected at the point of use instead of
//! silently producing garbage.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest supported ambient dimension. Derivative variable names in the
/// right-hand-side language use one digit per coordinate, hence 9.
pub const MAX_DIM: usize = 9;

/// Smallest supported ambient dimension.
pub const MIN_DIM: usize = 3;

/// Largest order for which `factorial` and `multinomial` are exact in `u64`.
///
/// Derivative orders used by the potential operators stay far below this;
/// the cap exists because polynomial carriers in the solver reach degrees in
/// the high teens.
pub const MAX_EXACT_ORDER: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MultiIndexError {
    #[error("dimension {0} is outside the supported range {MIN_DIM}..={MAX_DIM}")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{gamma} is not componentwise <= {beta}")]
    NotDominated { gamma: MultiIndex, beta: MultiIndex },
    #[error("entry {0} does not fit in a multi-index slot")]
    EntryTooLarge(u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    dim: u8,
    e: [u8; MAX_DIM],
}

impl MultiIndex {
    pub fn new(entries: &[u32]) -> Result<Self, MultiIndexError> {
        let n = entries.len();
        if !(MIN_DIM..=MAX_DIM).contains(&n) {
            return Err(MultiIndexError::UnsupportedDimension(n));
        }
        let mut e = [0u8; MAX_DIM];
        for (slot, &v) in e.iter_mut().zip(entries) {
            *slot = u8::try_from(v).map_err(|_| MultiIndexError::EntryTooLarge(v))?;
        }
        Ok(MultiIndex { dim: n as u8, e })
    }

    /// Panicking constructor for literals in code and tests.
    pub fn from_slice(entries: &[u32]) -> Self {
        Self::new(entries).expect("invalid multi-index literal")
    }

    pub fn zero(n: usize) -> Self {
        assert!((MIN_DIM..=MAX_DIM).contains(&n), "unsupported dimension {n}");
        MultiIndex { dim: n as u8, e: [0; MAX_DIM] }
    }

    /// The unit multi-index along axis `i` (0-based).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut m = Self::zero(n);
        m.e[i] = 1;
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn entries(&self) -> &[u8] {
        &self.e[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, i: usize) -> u32 {
        self.e[i] as u32
    }

    /// |β|
    #[inline]
    pub fn order(&self) -> u32 {
        self.entries().iter().map(|&v| v as u32).sum()
    }

    /// β! as an exact integer.
    pub fn factorial(&self) -> u64 {
        debug_assert!(self.order() <= MAX_EXACT_ORDER);
        self.entries().iter().map(|&v| factorial(v as u32)).product()
    }

    /// |β|! / β!, the number of distinct orderings of the unit steps of β.
    pub fn multinomial(&self) -> u64 {
        let mut acc = 1u64;
        let mut total = 0u64;
        for &v in self.entries() {
            for k in 1..=v as u64 {
                total += 1;
                acc = acc * total / k;
            }
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.entries().iter().all(|&v| v == 0)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim == other.dim && self.entries().iter().zip(other.entries()).all(|(a, b)| a <= b)
    }

    /// True when every entry is even.
    pub fn all_even(&self) -> bool {
        self.entries().iter().all(|&v| v % 2 == 0)
    }

    pub fn checked_add(&self, other: &MultiIndex) -> Result<MultiIndex, MultiIndexError> {
        if self.dim != other.dim {
            return Err(MultiIndexError::DimensionMismatch(self.dim(), other.dim()));
        }
        let mut out = *self;
        for i in 0..self.dim() {
            let v = self.e[i] as u32 + other.e[i] as u32;
            out.e[i] = u8::try_from(v).map_err(|_| MultiIndexError::EntryTooLarge(v))?;
        }
        Ok(out)
    }

    /// `self - other`, failing unless `other <= self` componentwise.
    pub fn checked_sub(&self, other: &MultiIndex) -> Result<MultiIndex, MultiIndexError> {
        if self.dim != other.dim {
            return Err(MultiIndexError::DimensionMismatch(self.dim(), other.dim()));
        }
        if !other.le(self) {
            return Err(MultiIndexError::NotDominated { gamma: *other, beta: *self });
        }
        let mut out = *self;
        for i in 0..self.dim() {
            out.e[i] -= other.e[i];
        }
        Ok(out)
    }

    /// β + e_i
    pub fn incremented(&self, i: usize) -> MultiIndex {
        let mut out = *self;
        out.e[i] += 1;
        out
    }

    /// β − e_i, or `None` if β_i = 0.
    pub fn decremented(&self, i: usize) -> Option<MultiIndex> {
        if self.e[i] == 0 {
            return None;
        }
        let mut out = *self;
        out.e[i] -= 1;
        Some(out)
    }

    /// First axis with a nonzero entry.
    pub fn first_axis(&self) -> Option<usize> {
        self.entries().iter().position(|&v| v > 0)
    }

    /// x^β
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.entries()
            .iter()
            .zip(x)
            .map(|(&p, &xi)| xi.powi(p as i32))
            .product()
    }

    /// Every multi-index of dimension `n` and order `k`, in descending
    /// lexicographic order (x_1^k first).
    pub fn all_of_order(n: usize, k: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; n];
        fill_order(&mut cur, 0, k, &mut out);
        out
    }

    /// Every multi-index of dimension `n` with order at most `k`, grouped by
    /// increasing order.
    pub fn all_up_to_order(n: usize, k: u32) -> Vec<MultiIndex> {
        (0..=k).flat_map(|j| Self::all_of_order(n, j)).collect()
    }
}

fn fill_order(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    let n = cur.len();
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex::from_slice(cur));
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        fill_order(cur, pos + 1, remaining - v, out);
    }
}

pub fn factorial(k: u32) -> u64 {
    debug_assert!(k <= MAX_EXACT_ORDER);
    (1..=k as u64).product()
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.entries().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

impl std::ops::Add for MultiIndex {
    type Output = MultiIndex;
    fn add(self, rhs: MultiIndex) -> MultiIndex {
        self.checked_add(&rhs).expect("multi-index addition")
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<u32> = self.entries().iter().map(|&x| x as u32).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<u32>::deserialize(d)?;
        MultiIndex::new(&v).map_err(serde::de::Error::custom)
    }
}

/// A continuously increasing nesting β^{(1)} < … < β^{(k)} = β with
/// |β^{(j)}| = j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nesting {
    pub steps: Vec<MultiIndex>,
    pub target: MultiIndex,
}

impl Nesting {
    /// Length k = |β|.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// β^{(j)} for 1 ≤ j ≤ k (1-based like the usual notation).
    pub fn step(&self, j: usize) -> MultiIndex {
        self.steps[j - 1]
    }

    /// The axis i with β^{(j)} − β^{(j−1)} = e_i, for 2 ≤ j ≤ k. For j = 1
    /// this is the axis of β^{(1)} itself.
    pub fn axis(&self, j: usize) -> usize {
        let cur = self.step(j);
        let prev = if j == 1 { MultiIndex::zero(cur.dim()) } else { self.step(j - 1) };
        let diff = cur.checked_sub(&prev).expect("nesting steps increase");
        diff.first_axis().expect("nesting steps differ by a unit")
    }

    /// The dual of β^{(j)} with respect to β.
    pub fn dual(&self, j: usize) -> MultiIndex {
        self.target.checked_sub(&self.step(j)).expect("nesting steps are dominated by the target")
    }
}

/// Every nesting of length |β| for β, ordered by the sequence of step axes
/// (steps along lower axes first). The count equals |β|!/β!.
pub fn enumerate_nestings(beta: &MultiIndex) -> Vec<Nesting> {
    let mut out = Vec::new();
    if beta.is_zero() {
        return out;
    }
    let mut steps = Vec::with_capacity(beta.order() as usize);
    nest_rec(beta, MultiIndex::zero(beta.dim()), &mut steps, &mut out);
    out
}

fn nest_rec(beta: &MultiIndex, cur: MultiIndex, steps: &mut Vec<MultiIndex>, out: &mut Vec<Nesting>) {
    if cur == *beta {
        out.push(Nesting { steps: steps.clone(), target: *beta });
        return;
    }
    for i in 0..beta.dim() {
        if cur.get(i) < beta.get(i) {
            let next = cur.incremented(i);
            steps.push(next);
            nest_rec(beta, next, steps, out);
            steps.pop();
        }
    }
}

/// γ′ = β − γ, so that D^β = D^γ D^{γ′}.
pub fn dual(gamma: &MultiIndex, beta: &MultiIndex) -> Result<MultiIndex, MultiIndexError> {
    beta.checked_sub(gamma)
}

/// Λ = {β : |β| = 2m, at least one β_j odd}.
pub fn lambda_set(n: usize, m: u32) -> BTreeSet<MultiIndex> {
    MultiIndex::all_of_order(n, 2 * m).into_iter().filter(|b| !b.all_even()).collect()
}

/// Order-k Taylor expansion of a function at a base point. Coefficients are
/// stored pre-divided, i.e. as D^μf(x)/μ!.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    base: Vec<f64>,
    order: u32,
    terms: Vec<(MultiIndex, f64)>,
}

impl Jet {
    /// Build from a derivative oracle `deriv(μ) = D^μ f(x)`.
    pub fn from_derivatives(base: &[f64], order: u32, mut deriv: impl FnMut(&MultiIndex) -> f64) -> Jet {
        let terms = MultiIndex::all_up_to_order(base.len(), order)
            .into_iter()
            .map(|mu| {
                let c = deriv(&mu) / mu.factorial() as f64;
                (mu, c)
            })
            .collect();
        Jet { base: base.to_vec(), order, terms }
    }

    /// Build from pre-divided coefficients; missing indices are zero.
    pub fn from_coefficients(base: &[f64], order: u32, coeffs: impl IntoIterator<Item = (MultiIndex, f64)>) -> Jet {
        let terms = coeffs.into_iter().filter(|(mu, _)| mu.order() <= order).collect();
        Jet { base: base.to_vec(), order, terms }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    /// D^μ f(x)/μ!, zero when absent.
    pub fn coefficient(&self, mu: &MultiIndex) -> f64 {
        self.terms.iter().find(|(m, _)| m == mu).map_or(0.0, |t| t.1)
    }

    /// D^μ f(x)
    pub fn derivative(&self, mu: &MultiIndex) -> f64 {
        self.coefficient(mu) * mu.factorial() as f64
    }

    /// Σ_{|μ|≤k} c_μ (y − x)^μ
    pub fn eval(&self, y: &[f64]) -> f64 {
        let n = self.base.len();
        let k = self.order as usize;
        let mut pw = [[1.0f64; 24]; MAX_DIM];
        for i in 0..n {
            let d = y[i] - self.base[i];
            for p in 1..=k.min(23) {
                pw[i][p] = pw[i][p - 1] * d;
            }
        }
        self.terms
            .iter()
            .map(|(mu, c)| {
                let mut t = *c;
                for (i, &p) in mu.entries().iter().enumerate() {
                    t *= pw[i][p as usize];
                }
                t
            })
            .sum()
    }
}

/// f(y) ≈ T^x_k(f)(y)
pub fn taylor_evaluate(jet: &Jet, y: &[f64]) -> f64 {
    jet.eval(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn nestings_of_mixed_index() {
        let ns = enumerate_nestings(&mi(&[1, 1, 0]));
        assert_eq!(ns.len(), 2);
        assert_eq!(ns[0].steps, vec![mi(&[1, 0, 0]), mi(&[1, 1, 0])]);
        assert_eq!(ns[1].steps, vec![mi(&[0, 1, 0]), mi(&[1, 1, 0])]);
        assert_eq!(enumerate_nestings(&mi(&[2, 0, 0])).len(), 1);
        assert_eq!(enumerate_nestings(&mi(&[1, 1, 1])).len(), 6);
        assert!(enumerate_nestings(&mi(&[0, 0, 0])).is_empty());
    }

    #[test]
    fn nesting_axes_and_duals() {
        let ns = enumerate_nestings(&mi(&[2, 1, 0]));
        let first = &ns[0];
        assert_eq!(first.axis(1), 0);
        assert_eq!(first.axis(3), 1);
        assert_eq!(first.dual(1), mi(&[1, 1, 0]));
        assert_eq!(first.dual(3), mi(&[0, 0, 0]));
    }

    #[test]
    fn dual_cases() {
        assert_eq!(dual(&mi(&[1, 0, 0]), &mi(&[2, 1, 0])).unwrap(), mi(&[1, 1, 0]));
        assert!(dual(&mi(&[2, 1, 0]), &mi(&[2, 1, 0])).unwrap().is_zero());
        assert!(matches!(
            dual(&mi(&[0, 2, 0]), &mi(&[1, 1, 1])),
            Err(MultiIndexError::NotDominated { .. })
        ));
        assert!(matches!(
            dual(&mi(&[0, 0, 0]), &mi(&[1, 1, 1, 0])),
            Err(MultiIndexError::DimensionMismatch(4, 3))
        ));
    }

    #[test]
    fn lambda_sizes() {
        let l = lambda_set(3, 1);
        let expect: BTreeSet<_> = [mi(&[1, 1, 0]), mi(&[1, 0, 1]), mi(&[0, 1, 1])].into_iter().collect();
        assert_eq!(l, expect);
        assert_eq!(lambda_set(3, 2).len(), 9);
        assert_eq!(lambda_set(4, 1).len(), 6);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert_eq!(MultiIndex::new(&[1, 0]), Err(MultiIndexError::UnsupportedDimension(2)));
        assert!(MultiIndex::new(&[0; 10]).is_err());
    }

    #[test]
    fn json_is_integer_array() {
        let s = serde_json::to_string(&mi(&[1, 1, 0])).unwrap();
        assert_eq!(s, "[1,1,0]");
        let back: MultiIndex = serde_json::from_str(&s).unwrap();
        assert_eq!(back, mi(&[1, 1, 0]));
    }

    #[test]
    fn taylor_of_square() {
        let x = [0.0, 0.0, 0.0];
        let d = |mu: &MultiIndex| if *mu == mi(&[2, 0, 0]) { 2.0 } else { 0.0 };
        let j1 = Jet::from_derivatives(&x, 1, d);
        let j2 = Jet::from_derivatives(&x, 2, d);
        for y in [[0.3, -0.2, 0.5], [1.0, 2.0, 3.0]] {
            assert_eq!(taylor_evaluate(&j1, &y), 0.0);
            assert!((taylor_evaluate(&j2, &y) - y[0] * y[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn jet_base_value() {
        let x = [0.1, 0.2, 0.3];
        let j = Jet::from_derivatives(&x, 3, |mu| 1.0 + mu.order() as f64);
        assert_eq!(j.eval(&x), 1.0);
    }
}
