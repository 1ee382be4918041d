//! Gamma function, Gegenbauer polynomials, the fundamental solution of the
//! Laplacian and its closed-form derivatives, and the zonal expansion of the
//! kernel on spheres.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::MultiIndex;
use crate::polys::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecfunError {
    #[error("kernel derivative requested at the origin")]
    AtOrigin,
    #[error("point with |x| = {norm} is not inside the sphere of radius {radius}")]
    OutsideSphere { norm: f64, radius: f64 },
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) by the Lanczos approximation (g = 7, 9 terms) with reflection below
/// 1/2.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0)
}

/// Surface area of the unit sphere in R^n.
pub fn unit_sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// ∫_{S^{n−1}} ω^α dσ: zero unless every α_i is even, otherwise
/// 2 Π Γ((α_i+1)/2) / Γ((|α|+n)/2).
pub fn sphere_monomial_moment(alpha: &MultiIndex) -> f64 {
    if !alpha.all_even() {
        return 0.0;
    }
    let n = alpha.dim() as f64;
    let num: f64 = alpha.entries().iter().map(|&a| gamma((a as f64 + 1.0) / 2.0)).product();
    2.0 * num / gamma((alpha.order() as f64 + n) / 2.0)
}

/// C_l^{(ρ)}(t) by the three-term recurrence
/// C_l = [2t(l+ρ−1)C_{l−1} − (l+2ρ−2)C_{l−2}] / l.
pub fn gegenbauer(l: u32, rho: f64, t: f64) -> f64 {
    gegenbauer_all(l, rho, t)[l as usize]
}

/// C_0 … C_L at t.
pub fn gegenbauer_all(big_l: u32, rho: f64, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(big_l as usize + 1);
    out.push(1.0);
    if big_l >= 1 {
        out.push(2.0 * rho * t);
    }
    for l in 2..=big_l as usize {
        let lf = l as f64;
        let v = (2.0 * t * (lf + rho - 1.0) * out[l - 1] - (lf + 2.0 * rho - 2.0) * out[l - 2]) / lf;
        out.push(v);
    }
    out
}

/// ∫_{−1}^{1} [C_l^{(ρ)}(t)]² (1−t²)^{ρ−1/2} dt
/// = π 2^{1−2ρ} Γ(l+2ρ) / (l! (l+ρ) Γ(ρ)²).
pub fn gegenbauer_norm(l: u32, rho: f64) -> f64 {
    let lf = l as f64;
    PI * 2f64.powf(1.0 - 2.0 * rho) * gamma(lf + 2.0 * rho) / (gamma(lf + 1.0) * (lf + rho) * gamma(rho).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KernelConvention {
    /// c_n |x|^{2−n} normalized so that ΔN(f) = f.
    Delta,
    /// |x|^{2−n} with no constant.
    Raw,
}

impl fmt::Display for KernelConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelConvention::Delta => write!(f, "DELTA"),
            KernelConvention::Raw => write!(f, "RAW"),
        }
    }
}

/// Γ(x) = c |x|^{2−n}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalSolution {
    pub dim: usize,
    pub convention: KernelConvention,
    /// The multiplier c: c_n = 1/(n(2−n)α_n) under DELTA, 1 under RAW.
    pub c: f64,
}

impl FundamentalSolution {
    pub fn new(n: usize, convention: KernelConvention) -> Self {
        assert!(n >= 3, "fundamental solution needs n >= 3");
        let c = match convention {
            KernelConvention::Delta => 1.0 / (n as f64 * (2.0 - n as f64) * unit_ball_volume(n)),
            KernelConvention::Raw => 1.0,
        };
        FundamentalSolution { dim: n, convention, c }
    }

    pub fn delta(n: usize) -> Self {
        Self::new(n, KernelConvention::Delta)
    }

    pub fn raw(n: usize) -> Self {
        Self::new(n, KernelConvention::Raw)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        self.c * r.powf(2.0 - self.dim as f64)
    }

    /// c·s_n, the flux of Γ through any sphere about the origin up to sign.
    pub fn c_times_area(&self) -> f64 {
        self.c * unit_sphere_area(self.dim)
    }

    /// The closed-form derivative D^βΓ.
    pub fn derivative(&self, beta: &MultiIndex) -> Arc<GammaDerivative> {
        gamma_derivative(self.dim, beta)
    }
}

/// D^β |x|^{2−n} = p(x) / |x|^s with s = n − 2 + 2|β| and p homogeneous of
/// degree |β|. Multiply by the convention constant for D^βΓ.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaDerivative {
    pub beta: MultiIndex,
    pub numerator: Polynomial,
    pub s: u32,
}

impl GammaDerivative {
    /// D^β|x|^{2−n} at x ≠ 0, without the convention constant.
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.numerator.eval(x) / r2.powf(self.s as f64 / 2.0)
    }

    /// Value on the unit sphere, where the denominator is 1.
    pub fn eval_unit(&self, omega: &[f64]) -> f64 {
        self.numerator.eval(omega)
    }

    /// Degree of homogeneity 2 − n − |β|.
    pub fn homogeneity(&self) -> i32 {
        2 - self.beta.dim() as i32 - self.beta.order() as i32
    }

    // ∂_i(p/|x|^s) = (∂_i p·|x|² − s x_i p) / |x|^{s+2}
    fn differentiate(&self, i: usize) -> GammaDerivative {
        let n = self.beta.dim();
        let r2 = Polynomial::r_squared(n);
        let xi = Polynomial::variable(n, i);
        let num = self.numerator.partial(i).mul(&r2).sub(&xi.mul(&self.numerator).scale(self.s as f64));
        GammaDerivative { beta: self.beta.incremented(i), numerator: num, s: self.s + 2 }
    }
}

type DerivCache = RwLock<HashMap<MultiIndex, Arc<GammaDerivative>>>;

fn deriv_cache() -> &'static DerivCache {
    static CACHE: OnceLock<DerivCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Memoized D^β|x|^{2−n}; the dimension is carried by β.
pub fn gamma_derivative(n: usize, beta: &MultiIndex) -> Arc<GammaDerivative> {
    assert_eq!(beta.dim(), n, "multi-index dimension");
    if let Some(g) = deriv_cache().read().unwrap().get(beta) {
        return g.clone();
    }
    let g = match beta.first_axis() {
        None => GammaDerivative { beta: *beta, numerator: Polynomial::constant(n, 1.0), s: (n - 2) as u32 },
        Some(i) => gamma_derivative(n, &beta.decremented(i).unwrap()).differentiate(i),
    };
    let g = Arc::new(g);
    deriv_cache().write().unwrap().insert(*beta, g.clone());
    g
}

/// D^βΓ(x) under the given convention.
pub fn d_gamma(beta: &MultiIndex, fs: &FundamentalSolution, x: &[f64]) -> Result<f64, SpecfunError> {
    if norm(x) == 0.0 {
        return Err(SpecfunError::AtOrigin);
    }
    Ok(fs.c * gamma_derivative(fs.dim, beta).eval_raw(x))
}

/// Truncated zonal expansion of Γ(x − Rŷ) for |x| < R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionValue {
    pub value: f64,
    /// (|x|/R)^{L+1} / (1 − |x|/R)
    pub tail_bound: f64,
    /// Set when `tail_bound` exceeds the requested tolerance.
    pub slow_convergence: bool,
}

/// c R^{2−n} Σ_{l≤L} (|x|/R)^l C_l^{(λ)}(x̂·ŷ), λ = (n−2)/2.
pub fn kernel_gegenbauer_expansion(
    fs: &FundamentalSolution,
    x: &[f64],
    yhat: &[f64],
    radius: f64,
    big_l: u32,
    tol: f64,
) -> Result<ExpansionValue, SpecfunError> {
    let r = norm(x);
    if r >= radius {
        return Err(SpecfunError::OutsideSphere { norm: r, radius });
    }
    let n = fs.dim as f64;
    let lambda = (n - 2.0) / 2.0;
    let a = r / radius;
    let t = if r == 0.0 { 0.0 } else { dot(x, yhat) / (r * norm(yhat)) };
    let c = gegenbauer_all(big_l, lambda, t);
    let mut sum = 0.0;
    let mut ap = 1.0;
    for cl in &c {
        sum += ap * cl;
        ap *= a;
    }
    let tail_bound = ap / (1.0 - a);
    Ok(ExpansionValue {
        value: fs.c * radius.powf(2.0 - n) * sum,
        tail_bound,
        slow_convergence: tail_bound > tol,
    })
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn gamma_known_values() {
        assert_relative_eq!(gamma(0.5), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(5.0), 24.0, max_relative = 1e-13);
        assert_relative_eq!(gamma(10.5), 1_133_278.388_948_785_5, max_relative = 1e-12);
        assert_relative_eq!(gamma(-0.5), -2.0 * PI.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn gegenbauer_examples() {
        assert_eq!(gegenbauer(0, 0.7, 0.3), 1.0);
        assert_relative_eq!(gegenbauer(1, 0.5, 0.3), 0.3);
        assert_relative_eq!(gegenbauer(2, 0.5, 0.5), -0.125, epsilon = 1e-15);
        assert_relative_eq!(gegenbauer(2, 0.5, 0.5), (3.0 * 0.25 - 1.0) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn gegenbauer_norm_examples() {
        assert_relative_eq!(gegenbauer_norm(1, 0.5), 2.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(gegenbauer_norm(0, 0.5), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn generating_function() {
        for rho in [0.5, 1.0, 1.5] {
            for t in [-0.9, 0.0, 0.9] {
                let a: f64 = 0.5;
                let c = gegenbauer_all(100, rho, t);
                let s: f64 = c.iter().enumerate().map(|(l, v)| v * a.powi(l as i32)).sum();
                let exact = (1.0 - 2.0 * a * t + a * a).powf(-rho);
                assert!((s - exact).abs() < 1e-10, "rho={rho} t={t}");
            }
        }
    }

    #[test]
    fn delta_constant_for_n3() {
        let fs = FundamentalSolution::delta(3);
        assert_relative_eq!(fs.value(&[1.0, 0.0, 0.0]), -1.0 / (4.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(fs.c_times_area(), -1.0, max_relative = 1e-14);
        let e1 = mi(&[1, 0, 0]);
        assert_relative_eq!(d_gamma(&e1, &fs, &[1.0, 0.0, 0.0]).unwrap(), 1.0 / (4.0 * PI), max_relative = 1e-14);
        assert_eq!(d_gamma(&e1, &fs, &[0.0; 3]), Err(SpecfunError::AtOrigin));
    }

    #[test]
    fn d_gamma_matches_finite_differences() {
        let fs = FundamentalSolution::delta(4);
        let x = [0.3, -0.4, 0.5, 0.2];
        let h = 1e-5;
        for i in 0..4 {
            let beta = MultiIndex::unit(4, i);
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (fs.value(&xp) - fs.value(&xm)) / (2.0 * h);
            assert_relative_eq!(d_gamma(&beta, &fs, &x).unwrap(), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn kernel_is_harmonic_and_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 3..=5 {
            let fs = FundamentalSolution::delta(n);
            for beta in MultiIndex::all_up_to_order(n, 3) {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let lap: f64 = (0..n)
                    .map(|i| d_gamma(&beta.incremented(i).incremented(i), &fs, &x).unwrap())
                    .sum();
                let scale = d_gamma(&beta.incremented(0).incremented(0), &fs, &x).unwrap().abs() + 1.0;
                assert!(lap.abs() < 1e-12 * scale, "n={n} beta={beta} lap={lap}");
                let t = rng.gen_range(0.2..3.0);
                let xt: Vec<f64> = x.iter().map(|v| v * t).collect();
                let g = gamma_derivative(n, &beta);
                let lhs = d_gamma(&beta, &fs, &xt).unwrap();
                let rhs = t.powi(g.homogeneity()) * d_gamma(&beta, &fs, &x).unwrap();
                assert_relative_eq!(lhs, rhs, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn zonal_expansion_matches_direct_kernel() {
        let fs = FundamentalSolution::delta(3);
        let x = [0.3, 0.4, 0.0];
        let yhat = [0.0, 0.6, 0.8];
        let v = kernel_gegenbauer_expansion(&fs, &x, &yhat, 1.0, 60, 1e-12).unwrap();
        let direct = fs.value(&[x[0] - yhat[0], x[1] - yhat[1], x[2] - yhat[2]]);
        assert!((v.value - direct).abs() < 1e-12);
        assert!(!v.slow_convergence);

        let fs4 = FundamentalSolution::delta(4);
        let x = [0.5, 0.5, 0.5, 0.5];
        let yhat = [0.0, 0.0, 0.6, 0.8];
        let v = kernel_gegenbauer_expansion(&fs4, &x, &yhat, 2.0, 80, 1e-10).unwrap();
        let y: Vec<f64> = yhat.iter().map(|v| 2.0 * v).collect();
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!((v.value - fs4.value(&diff)).abs() < 1e-10);

        let at0 = kernel_gegenbauer_expansion(&fs, &[0.0; 3], &yhat, 2.0, 5, 1e-12).unwrap();
        assert_relative_eq!(at0.value, fs.c / 2.0, max_relative = 1e-14);

        let slow = kernel_gegenbauer_expansion(&fs, &[0.95, 0.0, 0.0], &yhat, 1.0, 10, 1e-6).unwrap();
        assert!(slow.slow_convergence);
    }

    #[test]
    fn sphere_moments() {
        assert_relative_eq!(sphere_monomial_moment(&mi(&[0, 0, 0])), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_monomial_moment(&mi(&[2, 0, 0])), 4.0 * PI / 3.0, max_relative = 1e-14);
        assert_eq!(sphere_monomial_moment(&mi(&[1, 2, 0])), 0.0);
        assert_relative_eq!(sphere_monomial_moment(&mi(&[0, 0, 0, 0])), 2.0 * PI * PI, max_relative = 1e-14);
    }
}
