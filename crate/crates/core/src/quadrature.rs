//! Quadrature on spheres, balls and annuli in R^n, ray rules recentred at a
//! singular point, and the one-dimensional rules they are built from.
//!
//! Sphere rules are nested: y = (t, √(1−t²) ω′) with ω′ on the next lower
//! sphere, Gauss–Jacobi in t with weight (1−t²)^{(d−3)/2} and a trapezoid
//! rule on the circle. A level-L rule uses L points in each t-direction and
//! 2L on the circle, which integrates every spherical polynomial of degree
//! at most 2L−1 exactly.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::specfun::{dot, gamma, norm, unit_ball_volume};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("dimension {0} is not supported (3..=5)")]
    UnsupportedDimension(usize),
    #[error("point {0:?} is not inside the ball of radius {1}")]
    OutsideDomain(Vec<f64>, f64),
    #[error("refinement did not converge: successive levels differ by {diff:e} (tolerance {tol:e})")]
    NonConvergence { diff: f64, tol: f64 },
    #[error("invalid annulus: {0}")]
    BadAnnulus(String),
}

pub const MIN_QUAD_DIM: usize = 3;
pub const MAX_QUAD_DIM: usize = 5;

fn check_dim(n: usize) -> Result<(), QuadError> {
    if (MIN_QUAD_DIM..=MAX_QUAD_DIM).contains(&n) {
        Ok(())
    } else {
        Err(QuadError::UnsupportedDimension(n))
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_m.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..(m + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = mf * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Jacobi rule for ∫_{−1}^{1} f(t)(1−t)^a(1+t)^b dt by Golub–Welsch.
pub fn gauss_jacobi(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");
    if a == 0.0 && b == 0.0 {
        return gauss_legendre(m);
    }
    let ab = a + b;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let diag = if k == 0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < m {
            let j = kf + 1.0;
            let beta = if k == 0 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                4.0 * j * (j + a) * (j + b) * (j + ab)
                    / ((2.0 * j + ab).powi(2) * (2.0 * j + ab + 1.0) * (2.0 * j + ab - 1.0))
            };
            let off = beta.sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma(a + 1.0) * gamma(b + 1.0) / gamma(ab + 2.0);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre on [a, b].
pub fn gauss_legendre_interval(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// ∫_a^b f by Gauss–Legendre on geometrically shrinking panels toward the
/// endpoint `b`; the smallest panel has width about `h_min`.
pub fn integrate_graded(f: impl Fn(f64) -> f64, a: f64, b: f64, h_min: f64, m: usize) -> f64 {
    let (x, w) = gauss_legendre(m);
    let len = b - a;
    let mut edges = vec![a];
    let mut width = len / 2.0;
    while width > h_min && edges.len() < 200 {
        edges.push(b - width);
        width /= 2.0;
    }
    edges.push(b);
    let mut sum = 0.0;
    for pair in edges.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let h = 0.5 * (hi - lo);
        for (t, wt) in x.iter().zip(&w) {
            sum += wt * h * f(lo + h * (t + 1.0));
        }
    }
    sum
}

/// Adaptive Gauss–Legendre: accept a panel when the 10- and 20-point rules
/// agree to `tol` scaled by the panel fraction, otherwise bisect.
pub fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let r10 = gauss_legendre(10);
    let r20 = gauss_legendre(20);
    adaptive_rec(f, a, b, tol, &r10, &r20, 0)
}

fn adaptive_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    r10: &(Vec<f64>, Vec<f64>),
    r20: &(Vec<f64>, Vec<f64>),
    depth: usize,
) -> f64 {
    let apply = |r: &(Vec<f64>, Vec<f64>)| {
        let h = 0.5 * (b - a);
        r.0.iter().zip(&r.1).map(|(t, w)| w * h * f(a + h * (t + 1.0))).sum::<f64>()
    };
    let coarse = apply(r10);
    let fine = apply(r20);
    // the floor keeps round-off from forcing bisection to full depth; a
    // non-finite panel cannot improve by bisection
    if !fine.is_finite() || (fine - coarse).abs() <= tol.max(64.0 * f64::EPSILON * fine.abs()) || depth >= 40 {
        return fine;
    }
    let mid = 0.5 * (a + b);
    adaptive_rec(f, a, mid, tol / 2.0, r10, r20, depth + 1) + adaptive_rec(f, mid, b, tol / 2.0, r10, r20, depth + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Sphere { radius: f64 },
    Ball { radius: f64 },
    /// B_R ∖ B_ε(center).
    Annulus { eps: f64, radius: f64, center: Vec<f64> },
}

/// Nodes and positive weights for a domain in R^n.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: Domain,
    pub dim: usize,
    /// Flat node coordinates, `dim` per node.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub level: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Σ w_i f(y_i), summed in node order.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * f(self.node(i))).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// One line per node: coordinates then weight.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("y{i}")).chain(["w".to_string()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let cols: Vec<String> = self.node(i).iter().chain([&self.weights[i]]).map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Directions and weights of the level-L rule on S^{d−1}.
#[derive(Debug)]
pub struct UnitSphereRule {
    pub dim: usize,
    pub dirs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitSphereRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dir(&self, i: usize) -> &[f64] {
        &self.dirs[i * self.dim..(i + 1) * self.dim]
    }
}

fn build_unit_sphere(d: usize, level: usize) -> (Vec<f64>, Vec<f64>) {
    if d == 2 {
        let m = 2 * level;
        let mut dirs = Vec::with_capacity(2 * m);
        let step = 2.0 * std::f64::consts::PI / m as f64;
        for k in 0..m {
            let phi = (k as f64 + 0.5) * step;
            dirs.push(phi.cos());
            dirs.push(phi.sin());
        }
        return (dirs, vec![step; m]);
    }
    let e = (d as f64 - 3.0) / 2.0;
    let (t, wt) = gauss_jacobi(level, e, e);
    let (low, wlow) = build_unit_sphere(d - 1, level);
    let nlow = wlow.len();
    let mut dirs = Vec::with_capacity(d * level * nlow);
    let mut w = Vec::with_capacity(level * nlow);
    for (ti, wi) in t.iter().zip(&wt) {
        let s = (1.0 - ti * ti).sqrt();
        for j in 0..nlow {
            dirs.push(*ti);
            dirs.extend(low[j * (d - 1)..(j + 1) * (d - 1)].iter().map(|v| s * v));
            w.push(wi * wlow[j]);
        }
    }
    (dirs, w)
}

fn sphere_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<UnitSphereRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<UnitSphereRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached level-L rule on the unit sphere S^{n−1} ⊂ R^n, polar axis e_1.
pub fn unit_sphere(n: usize, level: usize) -> Arc<UnitSphereRule> {
    let key = (n, level);
    if let Some(r) = sphere_cache().lock().unwrap().get(&key) {
        return r.clone();
    }
    let (dirs, weights) = build_unit_sphere(n, level);
    let r = Arc::new(UnitSphereRule { dim: n, dirs, weights });
    sphere_cache().lock().unwrap().insert(key, r.clone());
    r
}

/// Householder reflection taking e_1 to the unit vector `axis`.
fn reflect_e1_to(axis: &[f64]) -> impl Fn(&[f64], &mut [f64]) + '_ {
    let n = axis.len();
    let mut v = axis.iter().map(|a| -a).collect::<Vec<f64>>();
    v[0] += 1.0;
    let vv = dot(&v, &v);
    move |y: &[f64], out: &mut [f64]| {
        if vv < 1e-30 {
            out.copy_from_slice(y);
            return;
        }
        let s = 2.0 * dot(&v, y) / vv;
        for i in 0..n {
            out[i] = y[i] - s * v[i];
        }
    }
}

/// Rule on ∂B_R.
pub fn sphere_rule(n: usize, radius: f64, level: usize) -> Result<QuadratureRule, QuadError> {
    check_dim(n)?;
    let u = unit_sphere(n, level);
    let scale = radius.powi(n as i32 - 1);
    Ok(QuadratureRule {
        domain: Domain::Sphere { radius },
        dim: n,
        nodes: u.dirs.iter().map(|v| v * radius).collect(),
        weights: u.weights.iter().map(|w| w * scale).collect(),
        level,
    })
}

/// Rule on ∂B_R whose polar axis is the direction of `axis` (identity when
/// `axis` is zero). Concentrates nodes near the point of ∂B_R closest to
/// an interior target.
pub fn sphere_rule_aligned(n: usize, radius: f64, level: usize, axis: &[f64]) -> Result<QuadratureRule, QuadError> {
    let mut rule = sphere_rule(n, radius, level)?;
    let a = norm(axis);
    if a == 0.0 {
        return Ok(rule);
    }
    let unit: Vec<f64> = axis.iter().map(|v| v / a).collect();
    let h = reflect_e1_to(&unit);
    let mut tmp = vec![0.0; n];
    for i in 0..rule.len() {
        h(rule.node(i), &mut tmp);
        rule.nodes[i * n..(i + 1) * n].copy_from_slice(&tmp);
    }
    Ok(rule)
}

/// Rule on B_R: radial Gauss–Jacobi with weight r^{n−1} times the sphere rule.
pub fn ball_rule(n: usize, radius: f64, level: usize) -> Result<QuadratureRule, QuadError> {
    ball_rule_grid(n, radius, level, level)
}

/// As [`ball_rule`] with separate radial and angular resolutions.
pub fn ball_rule_grid(n: usize, radius: f64, radial: usize, sphere_level: usize) -> Result<QuadratureRule, QuadError> {
    check_dim(n)?;
    let level = sphere_level;
    let (s, ws) = gauss_jacobi(radial, 0.0, n as f64 - 1.0);
    let u = unit_sphere(n, sphere_level);
    let half = 0.5 * radius;
    let jac = half.powi(n as i32);
    let mut nodes = Vec::with_capacity(n * s.len() * u.len());
    let mut weights = Vec::with_capacity(s.len() * u.len());
    for (si, wi) in s.iter().zip(&ws) {
        let r = half * (1.0 + si);
        for j in 0..u.len() {
            nodes.extend(u.dir(j).iter().map(|v| r * v));
            weights.push(wi * jac * u.weights[j]);
        }
    }
    Ok(QuadratureRule { domain: Domain::Ball { radius }, dim: n, nodes, weights, level })
}

/// Geometric grading of the first radial panel toward the ray origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    pub ratio: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOptions {
    pub angular_level: usize,
    pub radial_points: usize,
    pub grading: Option<Grading>,
}

impl RayOptions {
    pub fn from_level(level: usize) -> Self {
        RayOptions { angular_level: level, radial_points: level, grading: None }
    }
}

/// ρ ↦ breakpoints in (0, ρ_max) along the ray from `origin` in direction ω.
pub type RayBreaks<'a> = &'a (dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Sync);

/// Quadrature in polar coordinates about an origin inside B_R: each node is
/// y = origin + ρω and the weights include ρ^p, the Jacobian-like power
/// chosen by the caller (p = n−1 gives plain volume measure).
#[derive(Debug, Clone)]
pub struct RayRule {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub nodes: Vec<f64>,
    pub rho: Vec<f64>,
    /// Index into `dirs` for each node.
    pub dir_of: Vec<u32>,
    pub dirs: Arc<UnitSphereRule>,
    pub weights: Vec<f64>,
}

/// Distance from `origin` (inside B_R about 0) to ∂B_R along ω.
pub fn exit_distance(origin: &[f64], omega: &[f64], radius: f64) -> f64 {
    let b = dot(origin, omega);
    let c = dot(origin, origin) - radius * radius;
    -b + (b * b - c).max(0.0).sqrt()
}

impl RayRule {
    /// Rays covering B_R exactly, weights ∝ ρ^p (p > −1).
    pub fn ball(
        origin: &[f64],
        radius: f64,
        opts: &RayOptions,
        p: f64,
        breaks: Option<RayBreaks<'_>>,
    ) -> Result<RayRule, QuadError> {
        let n = origin.len();
        check_dim(n)?;
        // Origins on the sphere itself are allowed: outward rays have length 0.
        if norm(origin) > radius * (1.0 + 1e-14) {
            return Err(QuadError::OutsideDomain(origin.to_vec(), radius));
        }
        let dirs = unit_sphere(n, opts.angular_level);
        let (gj_t, gj_w) = gauss_jacobi(opts.radial_points, 0.0, p);
        let (gl_t, gl_w) = gauss_legendre(opts.radial_points);
        let mut rule = RayRule {
            dim: n,
            origin: origin.to_vec(),
            nodes: Vec::new(),
            rho: Vec::new(),
            dir_of: Vec::new(),
            dirs: dirs.clone(),
            weights: Vec::new(),
        };
        for d in 0..dirs.len() {
            let omega = dirs.dir(d);
            let rmax = exit_distance(origin, omega, radius);
            let mut edges = vec![0.0];
            if let Some(g) = opts.grading {
                for j in (1..=g.depth).rev() {
                    edges.push(rmax * g.ratio.powi(j as i32));
                }
            }
            if let Some(b) = breaks {
                let mut extra: Vec<f64> = b(origin, omega, rmax).into_iter().filter(|r| *r > 0.0 && *r < rmax).collect();
                edges.append(&mut extra);
                edges.sort_by(f64::total_cmp);
                edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * rmax);
            }
            edges.push(rmax);
            for (k, pair) in edges.windows(2).enumerate() {
                let (lo, hi) = (pair[0], pair[1]);
                let h = 0.5 * (hi - lo);
                if h <= 0.0 {
                    continue;
                }
                if k == 0 {
                    // weight (ρ)^p = (h(1+t))^p absorbed into Gauss–Jacobi
                    let scale = h.powf(p + 1.0);
                    for (t, w) in gj_t.iter().zip(&gj_w) {
                        rule.push(d, omega, h * (1.0 + t), w * scale * dirs.weights[d]);
                    }
                } else {
                    for (t, w) in gl_t.iter().zip(&gl_w) {
                        let r = lo + h * (1.0 + t);
                        rule.push(d, omega, r, w * h * r.powf(p) * dirs.weights[d]);
                    }
                }
            }
        }
        Ok(rule)
    }

    /// Rays from `center` covering B_R ∖ B_ε(center), volume weights.
    pub fn annulus(center: &[f64], eps: f64, radius: f64, opts: &RayOptions) -> Result<RayRule, QuadError> {
        let n = center.len();
        check_dim(n)?;
        if eps <= 0.0 || norm(center) + eps > radius {
            return Err(QuadError::BadAnnulus(format!("B_{eps}({center:?}) is not inside B_{radius}")));
        }
        let dirs = unit_sphere(n, opts.angular_level);
        let (gl_t, gl_w) = gauss_legendre(opts.radial_points);
        let mut rule = RayRule {
            dim: n,
            origin: center.to_vec(),
            nodes: Vec::new(),
            rho: Vec::new(),
            dir_of: Vec::new(),
            dirs: dirs.clone(),
            weights: Vec::new(),
        };
        let p = n as f64 - 1.0;
        for d in 0..dirs.len() {
            let omega = dirs.dir(d);
            let rmax = exit_distance(center, omega, radius);
            let h = 0.5 * (rmax - eps);
            if h <= 0.0 {
                continue;
            }
            for (t, w) in gl_t.iter().zip(&gl_w) {
                let r = eps + h * (1.0 + t);
                rule.push(d, omega, r, w * h * r.powf(p) * dirs.weights[d]);
            }
        }
        Ok(rule)
    }

    fn push(&mut self, d: usize, omega: &[f64], r: f64, w: f64) {
        self.nodes.extend(self.origin.iter().zip(omega).map(|(o, v)| o + r * v));
        self.rho.push(r);
        self.dir_of.push(d as u32);
        self.weights.push(w);
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        self.dirs.dir(self.dir_of[i] as usize)
    }

    /// Σ w_i g(y_i, ρ_i, ω_i), summed in node order.
    pub fn integrate(&self, mut g: impl FnMut(&[f64], f64, &[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * g(self.node(i), self.rho[i], self.direction(i))).sum()
    }

    pub fn into_rule(self, domain: Domain, level: usize) -> QuadratureRule {
        QuadratureRule { domain, dim: self.dim, nodes: self.nodes, weights: self.weights, level }
    }
}

/// Volume rule for B_R ∖ B_ε(center).
pub fn annulus_rule(n: usize, eps: f64, radius: f64, center: &[f64], level: usize) -> Result<QuadratureRule, QuadError> {
    if center.len() != n {
        return Err(QuadError::BadAnnulus("center dimension".into()));
    }
    let rule = RayRule::annulus(center, eps, radius, &RayOptions::from_level(level))?;
    Ok(rule.into_rule(Domain::Annulus { eps, radius, center: center.to_vec() }, level))
}

/// ∫_{B_R} f_reg(y) |x−y|^{−s} dy in polar coordinates about x.
pub fn singular_ball_integrate(
    f_reg: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    x: &[f64],
    radius: f64,
    level: usize,
) -> Result<f64, QuadError> {
    let n = x.len() as f64;
    let rule = RayRule::ball(x, radius, &RayOptions::from_level(level), n - 1.0 - s, None)?;
    Ok(rule.integrate(|y, _, _| f_reg(y)))
}

/// As [`singular_ball_integrate`], comparing `level` with a finer level and
/// failing when they differ by more than `tol`.
pub fn singular_ball_integrate_checked(
    f_reg: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    x: &[f64],
    radius: f64,
    level: usize,
    tol: f64,
) -> Result<f64, QuadError> {
    let coarse = singular_ball_integrate(f_reg, s, x, radius, level)?;
    let fine = singular_ball_integrate(f_reg, s, x, radius, level + (level / 2).max(2))?;
    let diff = (fine - coarse).abs();
    if diff > tol {
        return Err(QuadError::NonConvergence { diff, tol });
    }
    Ok(fine)
}

/// ∫_{∂B_1} |x−y|^{α−n} dσ_y for |x| = r < 1, reduced to one polar angle
/// and graded toward the near point.
pub fn sphere_distance_power_integral(n: usize, alpha: f64, r: f64) -> f64 {
    let area_low = crate::specfun::unit_sphere_area(n - 1);
    let e = (alpha - n as f64) / 2.0;
    let f = |theta: f64| {
        let half = (0.5 * theta).sin();
        let d2 = (1.0 - r).powi(2) + 4.0 * r * half * half;
        d2.powf(e) * theta.sin().powi(n as i32 - 2)
    };
    // integrate_graded refines toward its upper endpoint, so flip θ.
    let g = |u: f64| f(std::f64::consts::PI - u);
    area_low * integrate_graded(g, 0.0, std::f64::consts::PI, 1e-3 * (1.0 - r), 24)
}

/// ∫_γ (1−|w|²)^{α−1} |dw| along the arc through z and z′ of the circle
/// orthogonal to the unit circle (a diameter segment when z, z′ and 0 are
/// collinear).
pub fn geodesic_arc_integral(alpha: f64, z: [f64; 2], zp: [f64; 2], tol: f64) -> f64 {
    let weight = |w: [f64; 2]| (1.0 - w[0] * w[0] - w[1] * w[1]).powf(alpha - 1.0);
    let det = z[0] * zp[1] - z[1] * zp[0];
    let chord = ((z[0] - zp[0]).powi(2) + (z[1] - zp[1]).powi(2)).sqrt();
    if chord == 0.0 {
        return 0.0;
    }
    let scale = (z[0].hypot(z[1])).max(zp[0].hypot(zp[1])).max(1e-300);
    if det.abs() <= 1e-12 * scale * chord {
        let f = |t: f64| weight([zp[0] + t * (z[0] - zp[0]), zp[1] + t * (z[1] - zp[1])]) * chord;
        return integrate_adaptive(&f, 0.0, 1.0, tol);
    }
    // c·z = (1+|z|²)/2 and c·z′ = (1+|z′|²)/2
    let r1 = 0.5 * (1.0 + z[0] * z[0] + z[1] * z[1]);
    let r2 = 0.5 * (1.0 + zp[0] * zp[0] + zp[1] * zp[1]);
    let c = [(r1 * zp[1] - r2 * z[1]) / det, (z[0] * r2 - zp[0] * r1) / det];
    let rad = (c[0] * c[0] + c[1] * c[1] - 1.0).sqrt();
    let a0 = (zp[1] - c[1]).atan2(zp[0] - c[0]);
    let a1 = (z[1] - c[1]).atan2(z[0] - c[0]);
    let mut da = a1 - a0;
    while da > std::f64::consts::PI {
        da -= 2.0 * std::f64::consts::PI;
    }
    while da <= -std::f64::consts::PI {
        da += 2.0 * std::f64::consts::PI;
    }
    let f = |t: f64| {
        let a = a0 + t * da;
        weight([c[0] + rad * a.cos(), c[1] + rad * a.sin()]) * rad * da.abs()
    };
    integrate_adaptive(&f, 0.0, 1.0, tol)
}

/// Measure of B_R.
pub fn ball_volume(n: usize, radius: f64) -> f64 {
    unit_ball_volume(n) * radius.powi(n as i32)
}
