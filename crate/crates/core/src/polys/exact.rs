//! Exact rational backend for the Laplacian and m-harmonicity tests.
//!
//! Decomposition needs division and stays in floating point; these two
//! operations only multiply by integers, so integer-coefficient inputs stay
//! exact.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};

use super::Polynomial;
use crate::multiindex::MultiIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct RationalPolynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, BigRational>,
}

impl RationalPolynomial {
    /// Convert each `f64` coefficient exactly (every finite double is a
    /// dyadic rational).
    pub fn from_polynomial(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(b, c)| (*b, BigRational::from_f64(*c).expect("finite coefficient")))
            .collect();
        RationalPolynomial { dim: p.dim(), terms }
    }

    pub fn from_integer_terms(n: usize, terms: impl IntoIterator<Item = (MultiIndex, i64)>) -> Self {
        let mut out = RationalPolynomial { dim: n, terms: BTreeMap::new() };
        for (b, c) in terms {
            out.add_term(b, BigRational::from_integer(BigInt::from(c)));
        }
        out
    }

    fn add_term(&mut self, b: MultiIndex, c: BigRational) {
        let e = self.terms.entry(b).or_insert_with(BigRational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, b: &MultiIndex) -> BigRational {
        self.terms.get(b).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn laplacian(&self) -> RationalPolynomial {
        let mut out = RationalPolynomial { dim: self.dim, terms: BTreeMap::new() };
        for (b, c) in &self.terms {
            for i in 0..self.dim {
                let p = b.get(i);
                if p >= 2 {
                    let d = b.decremented(i).unwrap().decremented(i).unwrap();
                    out.add_term(d, c * BigRational::from_integer(BigInt::from(p * (p - 1))));
                }
            }
        }
        out
    }

    pub fn is_m_harmonic(&self, m: u32) -> bool {
        (0..m).fold(self.clone(), |p, _| p.laplacian()).is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn exact_laplacian_matches_float() {
        let p = Polynomial::from_terms(3, [(mi(&[2, 1, 0]), 3.0), (mi(&[0, 0, 4]), -1.0)]);
        let e = RationalPolynomial::from_polynomial(&p).laplacian();
        let f = RationalPolynomial::from_polynomial(&p.laplacian());
        assert_eq!(e, f);
    }

    #[test]
    fn exact_m_harmonic() {
        let r2 = RationalPolynomial::from_integer_terms(3, [(mi(&[2, 0, 0]), 1), (mi(&[0, 2, 0]), 1), (mi(&[0, 0, 2]), 1)]);
        assert!(!r2.is_m_harmonic(1));
        assert!(r2.is_m_harmonic(2));
        for beta in crate::multiindex::lambda_set(3, 2) {
            assert!(RationalPolynomial::from_integer_terms(3, [(beta, 1)]).is_m_harmonic(2));
        }
    }
}
