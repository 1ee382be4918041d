//! Boundary moments of kernel derivatives on spheres and the residue-type
//! identities they satisfy.
//!
//! For a polynomial f of degree k, x ↦ ∫_{∂B_R} Γ(x−y) f(y) dσ_y is again a
//! polynomial of degree k, and ∫_{∂B_R} D^βΓ(x−y) f(y) dσ_y vanishes once
//! |β| ≥ k+1. The moments
//!
//!   I(β, μ, j)(x) = ∫_{∂B_R} D^β_xΓ(x−y) (y−x)^μ ν_j dσ_y
//!
//! are therefore constant in x and R when |β| = |μ|+1 and zero when
//! |β| ≥ |μ|+2. The constants feed the derivative corrections of the
//! Newtonian potential.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::MultiIndex;
use crate::polys::{harmonic_decompose, PolyError, Polynomial};
use crate::quadrature::{sphere_rule_aligned, unit_sphere, QuadError, RayOptions, RayRule};
use crate::specfun::{gamma, gamma_derivative, norm, sphere_monomial_moment, FundamentalSolution, KernelConvention};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidueError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("point with |x| = {norm} is not inside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("refinement did not converge: {coarse} vs {fine}")]
    NonConvergence { coarse: f64, fine: f64 },
    #[error("fit is ill-conditioned: {samples} samples for {unknowns} unknowns, condition {cond:e}")]
    IllConditioned { samples: usize, unknowns: usize, cond: f64 },
    #[error("geometry: {0}")]
    Geometry(String),
}

/// ∫_{∂B_R} D^β_xΓ(x−y) f(y) dσ_y using a sphere rule aligned with x.
pub fn boundary_integral(
    beta: &MultiIndex,
    f: &dyn Fn(&[f64]) -> f64,
    radius: f64,
    x: &[f64],
    fs: &FundamentalSolution,
    level: usize,
) -> Result<f64, ResidueError> {
    let r = norm(x);
    if r >= radius {
        return Err(ResidueError::OutsideBall { norm: r, radius });
    }
    let n = x.len();
    let rule = sphere_rule_aligned(n, radius, level, x)?;
    let g = gamma_derivative(n, beta);
    let mut diff = vec![0.0; n];
    Ok(fs.c
        * rule.integrate(|y| {
            for i in 0..n {
                diff[i] = x[i] - y[i];
            }
            g.eval_raw(&diff) * f(y)
        }))
}

/// I(β, μ, j)(x) by quadrature; `j` is a 0-based axis.
pub fn boundary_moment(
    beta: &MultiIndex,
    mu: &MultiIndex,
    j: usize,
    radius: f64,
    x: &[f64],
    fs: &FundamentalSolution,
    level: usize,
) -> Result<f64, ResidueError> {
    let weight = |y: &[f64]| {
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        mu.monomial(&d) * y[j] / radius
    };
    boundary_integral(beta, &weight, radius, x, fs, level)
}

/// As [`boundary_moment`], also evaluating at 3/2 the level and failing
/// when the two differ by more than `tol·(1+|value|)`.
#[allow(clippy::too_many_arguments)]
pub fn boundary_moment_checked(
    beta: &MultiIndex,
    mu: &MultiIndex,
    j: usize,
    radius: f64,
    x: &[f64],
    fs: &FundamentalSolution,
    level: usize,
    tol: f64,
) -> Result<f64, ResidueError> {
    let coarse = boundary_moment(beta, mu, j, radius, x, fs, level)?;
    let fine = boundary_moment(beta, mu, j, radius, x, fs, level + (level / 2).max(2))?;
    if (fine - coarse).abs() > tol * (1.0 + fine.abs()) {
        return Err(ResidueError::NonConvergence { coarse, fine });
    }
    Ok(fine)
}

/// The coefficient of x_1 in I_{B_R}(0, 0, 1) under the RAW kernel:
/// 4π^{n/2} / (n Γ((n−2)/2)). The moment has homogeneity degree zero in
/// (x, R), so the coefficient does not depend on R.
pub fn closed_form_moment(n: usize, _radius: f64) -> f64 {
    let nf = n as f64;
    4.0 * std::f64::consts::PI.powf(nf / 2.0) / (nf * gamma((nf - 2.0) / 2.0))
}

/// ∫_{∂B_R} Γ(x−y) P_j(y) dσ_y = K_j R P_j(x) for a homogeneous harmonic
/// P_j, with K_j = c s_n (n−2)/(2j+n−2).
pub fn zonal_factor(fs: &FundamentalSolution, j: u32) -> f64 {
    let n = fs.dim as f64;
    fs.c_times_area() * (n - 2.0) / (2.0 * j as f64 + n - 2.0)
}

/// Exact image of f under x ↦ ∫_{∂B_R} Γ(x−y) f(y) dσ_y, through the
/// harmonic decomposition of each homogeneous part.
pub fn boundary_potential_exact(f: &Polynomial, radius: f64, fs: &FundamentalSolution) -> Result<Polynomial, ResidueError> {
    let n = f.dim();
    let mut out = Polynomial::zero(n);
    for k in 0..=f.degree() {
        let part = f.homogeneous_part(k);
        if part.is_zero() {
            continue;
        }
        for (i, pj) in harmonic_decompose(&part)?.components {
            let j = k - 2 * i;
            let s = radius.powi(2 * i as i32) * zonal_factor(fs, j) * radius;
            out = out.add(&pj.scale(s));
        }
    }
    Ok(out)
}

/// Least-squares fit of the boundary potential of f by a polynomial of the
/// same degree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidueFit {
    pub poly: Polynomial,
    /// max |fit − sample| / max |sample|
    pub residual: f64,
    pub samples: usize,
    pub condition: f64,
}

/// Sample x ↦ ∫_{∂B_R}Γ(x−y)f(y)dσ_y at `sample_count` seeded random points
/// with |x| ≤ 0.6R and fit a polynomial of degree deg f.
pub fn residue_projection(
    f: &Polynomial,
    radius: f64,
    sample_count: usize,
    level: usize,
    fs: &FundamentalSolution,
    seed: u64,
) -> Result<ResidueFit, ResidueError> {
    let n = f.dim();
    let k = f.degree();
    let basis = MultiIndex::all_up_to_order(n, k);
    if sample_count < 2 * basis.len() {
        return Err(ResidueError::IllConditioned { samples: sample_count, unknowns: basis.len(), cond: f64::INFINITY });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..sample_count).map(|_| random_in_ball(&mut rng, n, 0.6 * radius)).collect();
    let zero = MultiIndex::zero(n);
    let fe = |y: &[f64]| f.eval(y);
    let vals: Vec<f64> = pts
        .iter()
        .map(|x| boundary_integral(&zero, &fe, radius, x, fs, level))
        .collect::<Result<_, _>>()?;
    // Columns use (x/R)^β for conditioning.
    let a = DMatrix::from_fn(sample_count, basis.len(), |r, c| {
        let s: Vec<f64> = pts[r].iter().map(|v| v / radius).collect();
        basis[c].monomial(&s)
    });
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > 1e12 {
        return Err(ResidueError::IllConditioned { samples: sample_count, unknowns: basis.len(), cond });
    }
    let b = DVector::from_vec(vals.clone());
    let coef = svd.solve(&b, 1e-14).expect("svd solve");
    let fitted = &a * &coef;
    let vmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let residual = fitted.iter().zip(&vals).fold(0.0f64, |m, (p, v)| m.max((p - v).abs())) / vmax;
    let poly = Polynomial::from_terms(
        n,
        basis.iter().enumerate().map(|(c, b)| (*b, coef[c] / radius.powi(b.order() as i32))),
    );
    Ok(ResidueFit { poly, residual, samples: sample_count, condition: cond })
}

/// ∫_{B_R∖B_ε(z)} D^β_xΓ(x−y) f(y) dy for x ∈ B_ε(z), by rays from z.
#[allow(clippy::too_many_arguments)]
pub fn annulus_vanishing(
    beta: &MultiIndex,
    f: &Polynomial,
    z: &[f64],
    eps: f64,
    radius: f64,
    x: &[f64],
    fs: &FundamentalSolution,
    level: usize,
) -> Result<f64, ResidueError> {
    let n = z.len();
    if norm(z) + eps > radius {
        return Err(ResidueError::Geometry(format!("B_{eps}(z) is not contained in B_{radius}")));
    }
    let dx: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
    if norm(&dx) >= eps {
        return Err(ResidueError::Geometry("x is not inside B_eps(z)".into()));
    }
    let opts = RayOptions { angular_level: level, radial_points: level, grading: None };
    let rule = RayRule::annulus(z, eps, radius, &opts)?;
    let g = gamma_derivative(n, beta);
    let mut diff = vec![0.0; n];
    Ok(fs.c
        * rule.integrate(|y, _, _| {
            for i in 0..n {
                diff[i] = x[i] - y[i];
            }
            g.eval_raw(&diff) * f.eval(y)
        }))
}

/// A cached residue constant C(β, μ, j) = I(β, μ, j) for |β| ≥ |μ|+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueConstant {
    pub beta: MultiIndex,
    pub mu: MultiIndex,
    /// 1-based axis of the normal component.
    pub j: usize,
    pub n: usize,
    pub convention: KernelConvention,
    pub value: f64,
}

type ConstKey = (MultiIndex, MultiIndex, usize, KernelConvention);

fn const_cache() -> &'static RwLock<HashMap<ConstKey, f64>> {
    static CACHE: OnceLock<RwLock<HashMap<ConstKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// C(β, μ, j) for |β| ≥ |μ|+1 (`j` 0-based), evaluated at x = 0 on the unit
/// sphere where the integrand is a spherical polynomial, with a rule exact
/// for its degree. Cached by (β, μ, j, convention).
pub fn residue_constant(beta: &MultiIndex, mu: &MultiIndex, j: usize, fs: &FundamentalSolution) -> f64 {
    assert!(beta.order() > mu.order(), "residue constants need |beta| >= |mu| + 1");
    if beta.order() >= mu.order() + 2 {
        return 0.0;
    }
    let key = (*beta, *mu, j, fs.convention);
    if let Some(v) = const_cache().read().unwrap().get(&key) {
        return *v;
    }
    let n = beta.dim();
    let deg = (beta.order() + mu.order() + 1) as usize;
    let u = unit_sphere(n, deg / 2 + 2);
    let g = gamma_derivative(n, beta);
    // At x = 0: (D^βΓ)(−ω) (ω)^μ ω_j on the unit sphere.
    let sign = if beta.order() % 2 == 0 { 1.0 } else { -1.0 };
    let v: f64 = (0..u.len())
        .map(|i| {
            let w = u.dir(i);
            u.weights[i] * g.eval_unit(w) * mu.monomial(w) * w[j]
        })
        .sum::<f64>()
        * sign
        * fs.c;
    const_cache().write().unwrap().insert(key, v);
    v
}

/// The same constant from exact sphere moments of the numerator
/// polynomial, an independent route used to cross-check the quadrature.
pub fn residue_constant_exact(beta: &MultiIndex, mu: &MultiIndex, j: usize, fs: &FundamentalSolution) -> f64 {
    let n = beta.dim();
    let g = gamma_derivative(n, beta);
    let sign = if beta.order() % 2 == 0 { 1.0 } else { -1.0 };
    let weight = Polynomial::monomial(mu.incremented(j), 1.0);
    let integrand = g.numerator.mul(&weight);
    sign * fs.c * integrand.terms().map(|(a, c)| c * sphere_monomial_moment(a)).sum::<f64>()
}

/// Every constant with 1 ≤ |β| ≤ max_order, |μ| ≤ |β|−1 and each axis.
pub fn constants_table(n: usize, max_order: u32, fs: &FundamentalSolution) -> Vec<ResidueConstant> {
    let mut out = Vec::new();
    for beta in MultiIndex::all_up_to_order(n, max_order).into_iter().filter(|b| b.order() >= 1) {
        for mu in MultiIndex::all_up_to_order(n, beta.order() - 1) {
            for j in 0..n {
                out.push(ResidueConstant {
                    beta,
                    mu,
                    j: j + 1,
                    n,
                    convention: fs.convention,
                    value: residue_constant(&beta, &mu, j, fs),
                });
            }
        }
    }
    out
}

/// Uniform random point in the ball of radius r.
pub fn random_in_ball(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if norm(&p) <= 1.0 {
            return p.into_iter().map(|v| v * r).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    #[test]
    fn raw_first_moment_matches_closed_form() {
        let fs = FundamentalSolution::raw(3);
        let x = [0.3, 0.1, 0.0];
        let v = boundary_moment(&mi(&[0, 0, 0]), &mi(&[0, 0, 0]), 0, 1.0, &x, &fs, 24).unwrap();
        assert_relative_eq!(v, 4.0 * PI / 3.0 * 0.3, max_relative = 1e-10);
        assert_relative_eq!(closed_form_moment(3, 1.0), 4.0 * PI / 3.0, max_relative = 1e-13);
        assert_relative_eq!(closed_form_moment(4, 1.0), PI * PI, max_relative = 1e-13);
    }

    #[test]
    fn closed_form_gamma_identity() {
        for n in 3..=6 {
            let sn = crate::specfun::unit_sphere_area(n);
            assert_relative_eq!(closed_form_moment(n, 1.0), (n as f64 - 2.0) * sn / n as f64, max_relative = 1e-13);
        }
    }

    #[test]
    fn off_diagonal_first_constant_vanishes() {
        let fs = FundamentalSolution::delta(3);
        for x in [[0.0, 0.0, 0.0], [0.2, -0.3, 0.1], [0.5, 0.1, 0.3]] {
            let v = boundary_moment(&mi(&[1, 0, 0]), &mi(&[0, 0, 0]), 1, 1.0, &x, &fs, 24).unwrap();
            assert!(v.abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn diagonal_constant_is_minus_one_over_n() {
        for n in 3..=5 {
            let fs = FundamentalSolution::delta(n);
            let e = MultiIndex::unit(n, 0);
            let v = residue_constant(&e, &MultiIndex::zero(n), 0, &fs);
            assert_relative_eq!(v, -1.0 / n as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn high_order_moments_vanish() {
        let fs = FundamentalSolution::delta(3);
        let v = boundary_moment(&mi(&[2, 1, 0]), &mi(&[0, 0, 0]), 0, 1.0, &[0.1, 0.2, -0.1], &fs, 24).unwrap();
        assert!(v.abs() < 1e-8);
    }

    #[test]
    fn exact_boundary_potential_examples() {
        let fs = FundamentalSolution::delta(3);
        let one = Polynomial::constant(3, 1.0);
        assert!(boundary_potential_exact(&one, 1.0, &fs).unwrap().max_coeff_diff(&Polynomial::constant(3, -1.0)) < 1e-13);
        let y1 = Polynomial::variable(3, 0);
        let expect = y1.scale(-1.0 / 3.0);
        assert!(boundary_potential_exact(&y1, 1.0, &fs).unwrap().max_coeff_diff(&expect) < 1e-13);
    }

    #[test]
    fn projection_examples() {
        let fs = FundamentalSolution::delta(3);
        let fit = residue_projection(&Polynomial::constant(3, 1.0), 1.0, 8, 24, &fs, 1).unwrap();
        assert!((fit.poly.coefficient(&mi(&[0, 0, 0])) + 1.0).abs() < 1e-9);
        let y1 = Polynomial::variable(3, 0);
        let fit = residue_projection(&y1, 1.0, 16, 24, &fs, 2).unwrap();
        assert!((fit.poly.coefficient(&mi(&[1, 0, 0])) + 1.0 / 3.0).abs() < 1e-9);
        let y1y2 = Polynomial::monomial(mi(&[1, 1, 0]), 1.0);
        let fit = residue_projection(&y1y2, 1.0, 40, 24, &fs, 3).unwrap();
        assert!(fit.residual < 1e-7);
        let exact = boundary_potential_exact(&y1y2, 1.0, &fs).unwrap();
        assert!(fit.poly.max_coeff_diff(&exact) < 1e-8);
        assert!(matches!(
            residue_projection(&y1y2, 1.0, 5, 24, &fs, 3),
            Err(ResidueError::IllConditioned { .. })
        ));
    }

    #[test]
    fn constants_match_exact_moments() {
        let fs = FundamentalSolution::delta(3);
        for beta in MultiIndex::all_up_to_order(3, 4).into_iter().filter(|b| b.order() >= 1) {
            for mu in MultiIndex::all_of_order(3, beta.order() - 1) {
                for j in 0..3 {
                    let q = residue_constant(&beta, &mu, j, &fs);
                    let e = residue_constant_exact(&beta, &mu, j, &fs);
                    assert!((q - e).abs() < 1e-12 * (1.0 + e.abs()), "{beta} {mu} {j}: {q} vs {e}");
                }
            }
        }
    }

    #[test]
    fn constants_are_constant_in_x() {
        let fs = FundamentalSolution::delta(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let beta = mi(&[1, 1, 0]);
        let mu = mi(&[0, 1, 0]);
        let c = residue_constant(&beta, &mu, 0, &fs);
        for _ in 0..5 {
            let x = random_in_ball(&mut rng, 3, 0.6);
            for radius in [0.5, 1.0, 2.0] {
                let xs: Vec<f64> = x.iter().map(|v| v * radius).collect();
                let v = boundary_moment(&beta, &mu, 0, radius, &xs, &fs, 28).unwrap();
                assert!((v - c).abs() < 1e-8 * (1.0 + c.abs()), "{v} vs {c}");
            }
        }
    }

    #[test]
    fn annulus_geometry_rejected() {
        let fs = FundamentalSolution::delta(3);
        let f = Polynomial::constant(3, 1.0);
        let b = mi(&[1, 1, 0]);
        assert!(annulus_vanishing(&b, &f, &[0.9, 0.0, 0.0], 0.2, 1.0, &[0.9, 0.0, 0.0], &fs, 8).is_err());
        assert!(annulus_vanishing(&b, &f, &[0.2, 0.0, 0.0], 0.2, 1.0, &[0.5, 0.0, 0.0], &fs, 8).is_err());
    }

    #[test]
    fn annulus_vanishes_for_high_order() {
        let fs = FundamentalSolution::delta(3);
        let z = [0.2, 0.0, 0.0];
        let v = annulus_vanishing(&mi(&[1, 1, 0]), &Polynomial::constant(3, 1.0), &z, 0.2, 1.0, &z, &fs, 32).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
        let v = annulus_vanishing(&mi(&[2, 1, 0]), &Polynomial::variable(3, 0), &z, 0.2, 1.0, &z, &fs, 32).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn table_shape() {
        let fs = FundamentalSolution::delta(3);
        let t = constants_table(3, 2, &fs);
        let e1 = t.iter().find(|c| c.beta == mi(&[1, 0, 0]) && c.mu.is_zero() && c.j == 1).unwrap();
        assert_relative_eq!(e1.value.abs(), 1.0 / 3.0, max_relative = 1e-12);
        let s = serde_json::to_string(&t[0]).unwrap();
        assert!(s.contains("\"convention\":\"DELTA\""));
    }
}
