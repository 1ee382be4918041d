//! Scalar fields on B_R with derivative and Taylor-jet providers.

use std::sync::Arc;

use crate::multiindex::{Jet, MultiIndex};
use crate::polys::Polynomial;
use crate::specfun::dot;

/// A real function on (a neighbourhood of) the closed ball B_R.
pub trait ScalarField: Sync + Send {
    fn dim(&self) -> usize;

    fn radius(&self) -> f64;

    fn value(&self, y: &[f64]) -> f64;

    /// D^μ f(x). The default uses tensor central differences with one
    /// Richardson step.
    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        fd_derivative(&|y: &[f64]| self.value(y), mu, x, self.radius())
    }

    /// T^x_k(f) with pre-divided coefficients.
    fn jet(&self, x: &[f64], k: u32) -> Jet {
        Jet::from_derivatives(x, k, |mu| self.derivative(mu, x))
    }

    /// y ↦ f(y) − T^x_k(f)(y). Fields with exact structure override this to
    /// avoid cancellation near x.
    fn remainder<'a>(&'a self, x: &[f64], k: Option<u32>) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'a> {
        match k {
            None => Box::new(move |y| self.value(y)),
            Some(k) => {
                let jet = self.jet(x, k);
                Box::new(move |y| self.value(y) - jet.eval(y))
            }
        }
    }

    /// Distances along the ray x + ρω (0 < ρ < ρ_max) where the field is not
    /// smooth.
    fn ray_breaks(&self, _x: &[f64], _omega: &[f64], _rho_max: f64) -> Vec<f64> {
        Vec::new()
    }

    /// A ball (center, radius) outside of which the field vanishes.
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        None
    }

    fn as_polynomial(&self) -> Option<&Polynomial> {
        None
    }
}

/// Central-difference D^μ g(x) with one Richardson step, step size
/// h = scale·ε^{1/(|μ|+4)} balancing O(h⁴) truncation against rounding.
pub fn fd_derivative(g: &dyn Fn(&[f64]) -> f64, mu: &MultiIndex, x: &[f64], scale: f64) -> f64 {
    let t = mu.order();
    if t == 0 {
        return g(x);
    }
    let h = scale * f64::EPSILON.powf(1.0 / (t as f64 + 4.0));
    let d1 = central_tensor(g, mu, x, h);
    let d2 = central_tensor(g, mu, x, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

// Π_i δ_{h,i}^{μ_i} with δ^p f = Σ_k (−1)^k C(p,k) f(x + (p/2 − k)h) / h^p.
fn central_tensor(g: &dyn Fn(&[f64]) -> f64, mu: &MultiIndex, x: &[f64], h: f64) -> f64 {
    let n = x.len();
    let mut stencil: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; n], 1.0)];
    for i in 0..n {
        let p = mu.get(i);
        if p == 0 {
            continue;
        }
        let mut next = Vec::with_capacity(stencil.len() * (p as usize + 1));
        let mut binom = 1.0;
        for k in 0..=p {
            let off = (p as f64 / 2.0 - k as f64) * h;
            let c = if k % 2 == 0 { binom } else { -binom } / h.powi(p as i32);
            for (o, w) in &stencil {
                let mut o2 = o.clone();
                o2[i] += off;
                next.push((o2, w * c));
            }
            binom = binom * (p - k) as f64 / (k + 1) as f64;
        }
        stencil = next;
    }
    let mut y = vec![0.0; n];
    stencil
        .iter()
        .map(|(o, w)| {
            for i in 0..n {
                y[i] = x[i] + o[i];
            }
            w * g(&y)
        })
        .sum()
}

/// A polynomial field with exact derivatives and cancellation-free Taylor
/// remainders.
#[derive(Debug, Clone)]
pub struct PolyField {
    pub poly: Polynomial,
    pub radius: f64,
}

impl PolyField {
    pub fn new(poly: Polynomial, radius: f64) -> Self {
        PolyField { poly, radius }
    }
}

impl ScalarField for PolyField {
    fn dim(&self) -> usize {
        self.poly.dim()
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.poly.eval(y)
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        self.poly.derivative(mu).eval(x)
    }

    fn jet(&self, x: &[f64], k: u32) -> Jet {
        let shifted = self.poly.shift(x);
        Jet::from_coefficients(x, k, shifted.terms().map(|(b, c)| (*b, *c)))
    }

    fn remainder<'a>(&'a self, x: &[f64], k: Option<u32>) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'a> {
        let Some(k) = k else {
            return Box::new(move |y| self.poly.eval(y));
        };
        let high = self.poly.shift(x).filter(|b| b.order() > k);
        let x = x.to_vec();
        Box::new(move |y| {
            let z: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            high.eval(&z)
        })
    }

    fn as_polynomial(&self) -> Option<&Polynomial> {
        Some(&self.poly)
    }
}

/// A exp(−|y−c|²/σ²) with exact derivatives through Hermite polynomials.
#[derive(Debug, Clone)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
    pub radius: f64,
}

// d^k/dt^k e^{−t²} = (−1)^k H_k(t) e^{−t²} with physicists' Hermite H_k.
fn hermite(k: u32, t: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * t);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = 2.0 * t * h1 - 2.0 * j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

impl ScalarField for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn value(&self, y: &[f64]) -> f64 {
        let d2: f64 = y.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-d2 / (self.width * self.width)).exp()
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        let mut v = self.amplitude;
        for i in 0..self.dim() {
            let t = (x[i] - self.center[i]) / self.width;
            let k = mu.get(i);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            v *= sign * hermite(k, t) * (-t * t).exp() / self.width.powi(k as i32);
        }
        v
    }
}

/// A(1 − |y−c|²/s²)^p inside B_s(c), zero outside; C^{p−1} across the
/// support sphere and polynomial inside it.
#[derive(Debug, Clone)]
pub struct CompactBump {
    pub center: Vec<f64>,
    pub support_radius: f64,
    pub power: u32,
    pub amplitude: f64,
    pub radius: f64,
    inner: Polynomial,
}

impl CompactBump {
    pub fn new(center: Vec<f64>, support_radius: f64, power: u32, amplitude: f64, radius: f64) -> Self {
        let n = center.len();
        let mut q = Polynomial::constant(n, 1.0);
        let s2 = support_radius * support_radius;
        for (i, c) in center.iter().enumerate() {
            let lin = Polynomial::variable(n, i).add(&Polynomial::constant(n, -c));
            q = q.sub(&lin.mul(&lin).scale(1.0 / s2));
        }
        let inner = q.pow(power).scale(amplitude);
        CompactBump { center, support_radius, power, amplitude, radius, inner }
    }

    fn inside(&self, y: &[f64]) -> bool {
        let d2: f64 = y.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 < self.support_radius * self.support_radius
    }
}

impl ScalarField for CompactBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn value(&self, y: &[f64]) -> f64 {
        if self.inside(y) {
            self.inner.eval(y)
        } else {
            0.0
        }
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        if self.inside(x) {
            self.inner.derivative(mu).eval(x)
        } else {
            0.0
        }
    }

    fn jet(&self, x: &[f64], k: u32) -> Jet {
        if self.inside(x) {
            let shifted = self.inner.shift(x);
            Jet::from_coefficients(x, k, shifted.terms().map(|(b, c)| (*b, *c)))
        } else {
            Jet::from_coefficients(x, k, [])
        }
    }

    fn remainder<'a>(&'a self, x: &[f64], k: Option<u32>) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'a> {
        let Some(k) = k else {
            return Box::new(move |y| self.value(y));
        };
        if !self.inside(x) {
            return Box::new(move |y| self.value(y));
        }
        let shifted = self.inner.shift(x);
        let high = shifted.filter(|b| b.order() > k);
        let low = shifted.filter(|b| b.order() <= k);
        let x = x.to_vec();
        Box::new(move |y| {
            let z: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            if self.inside(y) {
                high.eval(&z)
            } else {
                -low.eval(&z)
            }
        })
    }

    fn ray_breaks(&self, x: &[f64], omega: &[f64], rho_max: f64) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let b = dot(&d, omega);
        let c = dot(&d, &d) - self.support_radius * self.support_radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        [-b - s, -b + s].into_iter().filter(|r| *r > 0.0 && *r < rho_max).collect()
    }

    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), self.support_radius))
    }
}

type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Sync + Send>;

/// A field given by a closure; derivatives by finite differences.
#[derive(Clone)]
pub struct ClosureField {
    pub dim: usize,
    pub radius: f64,
    f: FieldFn,
}

impl ClosureField {
    pub fn new(dim: usize, radius: f64, f: impl Fn(&[f64]) -> f64 + Sync + Send + 'static) -> Self {
        ClosureField { dim, radius, f: Arc::new(f) }
    }
}

impl std::fmt::Debug for ClosureField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ClosureField(dim={}, radius={})", self.dim, self.radius)
    }
}

impl ScalarField for ClosureField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn value(&self, y: &[f64]) -> f64 {
        (self.f)(y)
    }
}

/// y ↦ D^μ f(y) for an underlying field.
pub struct DerivativeField<'a> {
    pub inner: &'a dyn ScalarField,
    pub mu: MultiIndex,
}

impl<'a> DerivativeField<'a> {
    pub fn new(inner: &'a dyn ScalarField, mu: MultiIndex) -> Self {
        DerivativeField { inner, mu }
    }
}

impl ScalarField for DerivativeField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn radius(&self) -> f64 {
        self.inner.radius()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.inner.derivative(&self.mu, y)
    }

    fn derivative(&self, nu: &MultiIndex, x: &[f64]) -> f64 {
        self.inner.derivative(&(self.mu + *nu), x)
    }

    fn remainder<'b>(&'b self, x: &[f64], k: Option<u32>) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'b> {
        if let Some(p) = self.inner.as_polynomial() {
            let d = PolyField::new(p.derivative(&self.mu), self.inner.radius());
            let Some(k) = k else {
                return Box::new(move |y| d.poly.eval(y));
            };
            let high = d.poly.shift(x).filter(|b| b.order() > k);
            let x = x.to_vec();
            return Box::new(move |y| {
                let z: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                high.eval(&z)
            });
        }
        match k {
            None => Box::new(move |y| self.value(y)),
            Some(k) => {
                let jet = self.jet(x, k);
                Box::new(move |y| self.value(y) - jet.eval(y))
            }
        }
    }

    fn ray_breaks(&self, x: &[f64], omega: &[f64], rho_max: f64) -> Vec<f64> {
        self.inner.ray_breaks(x, omega, rho_max)
    }

    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.inner.support()
    }
}

/// Σ a_i f_i
pub struct LinearCombination<'a> {
    pub parts: Vec<(f64, &'a dyn ScalarField)>,
}

impl ScalarField for LinearCombination<'_> {
    fn dim(&self) -> usize {
        self.parts[0].1.dim()
    }

    fn radius(&self) -> f64 {
        self.parts[0].1.radius()
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.parts.iter().map(|(a, f)| a * f.value(y)).sum()
    }

    fn derivative(&self, mu: &MultiIndex, x: &[f64]) -> f64 {
        self.parts.iter().map(|(a, f)| a * f.derivative(mu, x)).sum()
    }

    fn remainder<'b>(&'b self, x: &[f64], k: Option<u32>) -> Box<dyn Fn(&[f64]) -> f64 + Sync + 'b> {
        let rs: Vec<(f64, Box<dyn Fn(&[f64]) -> f64 + Sync + 'b>)> =
            self.parts.iter().map(|(a, f)| (*a, f.remainder(x, k))).collect();
        Box::new(move |y| rs.iter().map(|(a, r)| a * r(y)).sum())
    }

    fn ray_breaks(&self, x: &[f64], omega: &[f64], rho_max: f64) -> Vec<f64> {
        self.parts.iter().flat_map(|(_, f)| f.ray_breaks(x, omega, rho_max)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn finite_differences_match_polynomial() {
        let p = Polynomial::from_terms(3, [(mi(&[2, 1, 0]), 1.0), (mi(&[0, 0, 3]), 0.5), (mi(&[1, 1, 1]), -2.0)]);
        let pf = PolyField::new(p.clone(), 1.0);
        let cf = {
            let p = p.clone();
            ClosureField::new(3, 1.0, move |y| p.eval(y))
        };
        let x = [0.2, -0.1, 0.3];
        for mu in MultiIndex::all_up_to_order(3, 3) {
            let exact = pf.derivative(&mu, &x);
            let fd = cf.derivative(&mu, &x);
            assert!((exact - fd).abs() < 1e-6 * (1.0 + exact.abs()), "{mu}: {exact} vs {fd}");
        }
    }

    #[test]
    fn gaussian_exact_derivatives() {
        let g = GaussianBump { center: vec![0.1, 0.0, -0.2], width: 0.5, amplitude: 2.0, radius: 1.0 };
        let x = [0.3, 0.2, 0.1];
        for mu in MultiIndex::all_up_to_order(3, 3) {
            let fd = fd_derivative(&|y| g.value(y), &mu, &x, 1.0);
            let ex = g.derivative(&mu, &x);
            assert!((ex - fd).abs() < 1e-5 * (1.0 + ex.abs()), "{mu}: {ex} vs {fd}");
        }
    }

    #[test]
    fn polynomial_remainder_is_exact() {
        let p = Polynomial::from_terms(3, [(mi(&[3, 0, 0]), 1.0), (mi(&[0, 1, 1]), 2.0)]);
        let pf = PolyField::new(p.clone(), 1.0);
        let x = [0.1, 0.2, 0.3];
        let r = pf.remainder(&x, Some(1));
        let jet = pf.jet(&x, 1);
        let y = [0.4, -0.2, 0.5];
        assert_relative_eq!(r(&y), p.eval(&y) - jet.eval(&y), epsilon = 1e-14);
        assert_eq!(jet.eval(&x), p.eval(&x));
    }

    #[test]
    fn compact_bump_breaks_and_support() {
        let b = CompactBump::new(vec![0.1, 0.0, 0.0], 0.4, 4, 1.0, 1.0);
        let x = [0.1, 0.0, 0.0];
        let br = b.ray_breaks(&x, &[1.0, 0.0, 0.0], 0.9);
        assert_eq!(br.len(), 1);
        assert_relative_eq!(br[0], 0.4, epsilon = 1e-14);
        assert_eq!(b.value(&[0.6, 0.0, 0.0]), 0.0);
        assert_relative_eq!(b.value(&x), 1.0);
        let r = b.remainder(&x, Some(0));
        assert_relative_eq!(r(&[0.9, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn derivative_field_of_polynomial() {
        let p = Polynomial::from_terms(3, [(mi(&[2, 1, 0]), 1.0)]);
        let pf = PolyField::new(p, 1.0);
        let d = DerivativeField::new(&pf, mi(&[1, 0, 0]));
        let x = [0.3, 0.5, 0.0];
        assert_relative_eq!(d.value(&x), 2.0 * 0.3 * 0.5);
        let r = d.remainder(&[0.0; 3], Some(1));
        assert_relative_eq!(r(&x), 2.0 * 0.3 * 0.5);
    }
}
