//! Sparse multivariate polynomials over `f64`, their Laplacian, and the
//! decomposition of a homogeneous polynomial into harmonic pieces
//! p = Σ_i |x|^{2i} P_{k−2i}.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::multiindex::{MultiIndex, MAX_DIM};

pub mod exact;

/// Coefficients with magnitude at or below this are not stored.
pub const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomial is not homogeneous")]
    NotHomogeneous,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("harmonic decomposition system is singular for n={n}, k={k}")]
    SingularSystem { n: usize, k: u32 },
}

#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Polynomial { dim: n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zero(n), c)
    }

    /// c·x^β
    pub fn monomial(beta: MultiIndex, c: f64) -> Self {
        let mut p = Self::zero(beta.dim());
        p.add_term(beta, c);
        p
    }

    /// x_i (0-based axis)
    pub fn variable(n: usize, i: usize) -> Self {
        Self::monomial(MultiIndex::unit(n, i), 1.0)
    }

    /// |x|²
    pub fn r_squared(n: usize) -> Self {
        let mut p = Self::zero(n);
        for i in 0..n {
            let mut b = MultiIndex::zero(n);
            b = b.incremented(i).incremented(i);
            p.add_term(b, 1.0);
        }
        p
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(n);
        for (b, c) in terms {
            assert_eq!(b.dim(), n, "term dimension");
            p.add_term(b, c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &f64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, beta: &MultiIndex) -> f64 {
        self.terms.get(beta).copied().unwrap_or(0.0)
    }

    /// Maximum order over stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|b| b.order()).max().unwrap_or(0)
    }

    /// Lowest order over stored terms; `None` for the zero polynomial.
    pub fn min_degree(&self) -> Option<u32> {
        self.terms.keys().map(|b| b.order()).min()
    }

    /// `Some(k)` when every term has order k. The zero polynomial counts as
    /// homogeneous of any degree and reports `Some(0)`.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut it = self.terms.keys().map(|b| b.order());
        match it.next() {
            None => Some(0),
            Some(k) => it.all(|j| j == k).then_some(k),
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Sum of absolute coefficients.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }

    pub fn add_term(&mut self, beta: MultiIndex, c: f64) {
        let e = self.terms.entry(beta).or_insert(0.0);
        *e += c;
        if e.abs() <= DROP_TOL {
            self.terms.remove(&beta);
        }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.dim, self.terms.iter().map(|(b, c)| (*b, c * s)))
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (b, c) in &other.terms {
            out.add_term(*b, *c);
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    /// a·self + b·other
    pub fn axpby(&self, a: f64, other: &Polynomial, b: f64) -> Polynomial {
        self.scale(a).add(&other.scale(b))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (b1, c1) in &self.terms {
            for (b2, c2) in &other.terms {
                *acc.entry(*b1 + *b2).or_insert(0.0) += c1 * c2;
            }
        }
        Polynomial::from_terms(self.dim, acc)
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.dim, 1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// ∂/∂x_i
    pub fn partial(&self, i: usize) -> Polynomial {
        let terms = self.terms.iter().filter_map(|(b, c)| {
            let p = b.get(i);
            b.decremented(i).map(|d| (d, c * p as f64))
        });
        Polynomial::from_terms(self.dim, terms)
    }

    /// D^β
    pub fn derivative(&self, beta: &MultiIndex) -> Polynomial {
        assert_eq!(beta.dim(), self.dim, "derivative dimension mismatch");
        let terms = self.terms.iter().filter_map(|(b, c)| {
            let rest = b.checked_sub(beta).ok()?;
            let mut f = *c;
            for i in 0..self.dim {
                for t in 0..beta.get(i) {
                    f *= (b.get(i) - t) as f64;
                }
            }
            Some((rest, f))
        });
        Polynomial::from_terms(self.dim, terms)
    }

    pub fn laplacian(&self) -> Polynomial {
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (b, c) in &self.terms {
            for i in 0..self.dim {
                let p = b.get(i);
                if p >= 2 {
                    let d = b.decremented(i).unwrap().decremented(i).unwrap();
                    *acc.entry(d).or_insert(0.0) += c * (p * (p - 1)) as f64;
                }
            }
        }
        Polynomial::from_terms(self.dim, acc)
    }

    /// Δ^m
    pub fn laplacian_pow(&self, m: u32) -> Polynomial {
        (0..m).fold(self.clone(), |p, _| p.laplacian())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let k = self.degree() as usize;
        let mut pw = vec![[1.0f64; MAX_DIM]; k + 1];
        for p in 1..=k {
            for i in 0..self.dim {
                pw[p][i] = pw[p - 1][i] * x[i];
            }
        }
        self.terms
            .iter()
            .map(|(b, c)| {
                let mut t = *c;
                for (i, &p) in b.entries().iter().enumerate() {
                    t *= pw[p as usize][i];
                }
                t
            })
            .sum()
    }

    /// Terms of order exactly k.
    pub fn homogeneous_part(&self, k: u32) -> Polynomial {
        Polynomial::from_terms(self.dim, self.terms.iter().filter(|(b, _)| b.order() == k).map(|(b, c)| (*b, *c)))
    }

    /// Terms of order at most k.
    pub fn truncate(&self, k: u32) -> Polynomial {
        Polynomial::from_terms(self.dim, self.terms.iter().filter(|(b, _)| b.order() <= k).map(|(b, c)| (*b, *c)))
    }

    /// Keep only terms passing the predicate.
    pub fn filter(&self, mut keep: impl FnMut(&MultiIndex) -> bool) -> Polynomial {
        Polynomial::from_terms(self.dim, self.terms.iter().filter(|(b, _)| keep(b)).map(|(b, c)| (*b, *c)))
    }

    /// The polynomial z ↦ p(x + z), i.e. the re-expansion of p about x.
    /// Its coefficients are the pre-divided Taylor coefficients of p at x.
    pub fn shift(&self, x: &[f64]) -> Polynomial {
        let n = self.dim;
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (b, c) in &self.terms {
            // Π_i Σ_t C(b_i, t) x_i^{b_i − t} z_i^t
            let mut partial: Vec<([u32; MAX_DIM], f64)> = vec![([0; MAX_DIM], *c)];
            for i in 0..n {
                let bi = b.get(i);
                let mut next = Vec::with_capacity(partial.len() * (bi as usize + 1));
                for (idx, v) in &partial {
                    let mut binom = 1.0;
                    for t in 0..=bi {
                        let w = binom * x[i].powi((bi - t) as i32);
                        if w != 0.0 {
                            let mut id = *idx;
                            id[i] = t;
                            next.push((id, v * w));
                        }
                        binom = binom * (bi - t) as f64 / (t + 1) as f64;
                    }
                }
                partial = next;
            }
            for (id, v) in partial {
                *acc.entry(MultiIndex::from_slice(&id[..n])).or_insert(0.0) += v;
            }
        }
        Polynomial::from_terms(n, acc)
    }

    /// Coefficient-wise distance max |a_β − b_β|.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        self.sub(other).max_abs_coeff()
    }

    /// Δ^m p has every coefficient at or below 1e-12.
    pub fn is_m_harmonic(&self, m: u32) -> bool {
        is_m_harmonic(self, m)
    }
}

pub fn laplacian(p: &Polynomial) -> Polynomial {
    p.laplacian()
}

pub fn is_m_harmonic(p: &Polynomial, m: u32) -> bool {
    p.laplacian_pow(m).max_abs_coeff() <= 1e-12
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (b, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (i, &p) in b.entries().iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, p)?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    idx: MultiIndex,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    dim: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolyRepr {
            dim: self.dim,
            terms: self.terms.iter().map(|(b, c)| TermRepr { idx: *b, c: *c }).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PolyRepr::deserialize(d)?;
        if let Some(t) = r.terms.iter().find(|t| t.idx.dim() != r.dim) {
            return Err(serde::de::Error::custom(format!("term {} does not match dim {}", t.idx, r.dim)));
        }
        Ok(Polynomial::from_terms(r.dim, r.terms.into_iter().map(|t| (t.idx, t.c))))
    }
}

/// p = Σ_i |x|^{2i} P_{k−2i} with each P_j homogeneous harmonic of degree j.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicDecomposition {
    pub degree: u32,
    /// (i, P_{k−2i}) for i = 0..=⌊k/2⌋.
    pub components: Vec<(u32, Polynomial)>,
}

impl HarmonicDecomposition {
    pub fn recombine(&self) -> Polynomial {
        let n = self.components[0].1.dim();
        let r2 = Polynomial::r_squared(n);
        self.components
            .iter()
            .fold(Polynomial::zero(n), |acc, (i, p)| acc.add(&r2.pow(*i).mul(p)))
    }

    /// The part annihilated by Δ^m: components with i < m.
    pub fn m_harmonic_part(&self, m: u32) -> Polynomial {
        let n = self.components[0].1.dim();
        let r2 = Polynomial::r_squared(n);
        self.components
            .iter()
            .filter(|(i, _)| *i < m)
            .fold(Polynomial::zero(n), |acc, (i, p)| acc.add(&r2.pow(*i).mul(p)))
    }
}

struct DecompSystem {
    /// Monomials of degree k (input coordinates).
    input: Vec<MultiIndex>,
    /// For each component i, the monomials of degree k−2i and their column
    /// offset in `solve_map`.
    blocks: Vec<(Vec<MultiIndex>, usize)>,
    /// Maps input coefficients to all unknown coefficients.
    solve_map: DMatrix<f64>,
}

fn decomp_cache() -> &'static Mutex<HashMap<(usize, u32), Arc<DecompSystem>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u32), Arc<DecompSystem>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn decomp_system(n: usize, k: u32) -> Result<Arc<DecompSystem>, PolyError> {
    if let Some(s) = decomp_cache().lock().unwrap().get(&(n, k)) {
        return Ok(s.clone());
    }
    let sys = Arc::new(build_decomp_system(n, k)?);
    decomp_cache().lock().unwrap().insert((n, k), sys.clone());
    Ok(sys)
}

// Square system: coefficient matching at degree k plus ΔP_j = 0 for every
// component. Unknown count equals equation count; the decomposition is
// unique, so the matrix is invertible.
fn build_decomp_system(n: usize, k: u32) -> Result<DecompSystem, PolyError> {
    let input = MultiIndex::all_of_order(n, k);
    let row_of_input: HashMap<MultiIndex, usize> = input.iter().enumerate().map(|(r, b)| (*b, r)).collect();
    let mut blocks = Vec::new();
    let mut col = 0usize;
    for i in 0..=k / 2 {
        let mons = MultiIndex::all_of_order(n, k - 2 * i);
        let len = mons.len();
        blocks.push((mons, col));
        col += len;
    }
    let unknowns = col;
    let mut a = DMatrix::<f64>::zeros(unknowns, unknowns);
    let r2 = Polynomial::r_squared(n);
    let mut row = input.len();
    for (i, (mons, off)) in blocks.iter().enumerate() {
        let radial = r2.pow(i as u32);
        let j = k - 2 * i as u32;
        let lap_rows: HashMap<MultiIndex, usize> = if j >= 2 {
            MultiIndex::all_of_order(n, j - 2).into_iter().enumerate().map(|(t, b)| (b, row + t)).collect()
        } else {
            HashMap::new()
        };
        for (t, alpha) in mons.iter().enumerate() {
            let c = off + t;
            let basis = Polynomial::monomial(*alpha, 1.0);
            for (b, v) in radial.mul(&basis).terms() {
                a[(row_of_input[b], c)] += v;
            }
            for (b, v) in basis.laplacian().terms() {
                a[(lap_rows[b], c)] += v;
            }
        }
        row += lap_rows.len();
    }
    debug_assert_eq!(row, unknowns);
    let inv = a.try_inverse().ok_or(PolyError::SingularSystem { n, k })?;
    let solve_map = inv.columns(0, input.len()).into_owned();
    Ok(DecompSystem { input, blocks, solve_map })
}

/// Decompose a homogeneous polynomial of degree k into ⌊k/2⌋+1 harmonic
/// components by solving the coefficient-matching plus harmonicity system.
pub fn harmonic_decompose(p: &Polynomial) -> Result<HarmonicDecomposition, PolyError> {
    let k = p.homogeneous_degree().ok_or(PolyError::NotHomogeneous)?;
    let n = p.dim();
    let sys = decomp_system(n, k)?;
    let rhs = DVector::from_iterator(sys.input.len(), sys.input.iter().map(|b| p.coefficient(b)));
    let sol = &sys.solve_map * rhs;
    let components = sys
        .blocks
        .iter()
        .enumerate()
        .map(|(i, (mons, off))| {
            let comp = Polynomial::from_terms(n, mons.iter().enumerate().map(|(t, b)| (*b, sol[off + t])));
            (i as u32, comp)
        })
        .collect();
    Ok(HarmonicDecomposition { degree: k, components })
}
