//! Picard iteration for Δ^m u = a(x, u, ∇u, …, ∇^{2m}u) on a small ball.
//!
//! θ(f) = N^m(a(·, f, …)) minus its Taylor terms of degree < 2m and its
//! degree-2m terms x^β with β ∈ Λ; the iteration is f_{k+1} = h + θ(f_k)
//! from f_0 = 0 with h homogeneous m-harmonic of degree 2m.
//!
//! Iterates are carried as polynomials of a fixed degree D. Each step samples
//! the right-hand side at ball-rule nodes, projects the samples onto
//! polynomials of degree D − 2m by weighted least squares and applies N^m
//! exactly, so every derivative the right-hand side needs is exact and jets
//! at 0 are read off coefficients.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiindex::{lambda_set, MultiIndex};
use crate::polys::exact::RationalPolynomial;
use crate::polys::Polynomial;
use crate::potential::{
    d_beta_newtonian, fd_laplacian, fd_mixed, holder_norms, newtonian_polynomial, newtonian_polynomial_pow, PolyField,
    PotentialCtx, PotentialError,
};
use crate::quadrature::{ball_rule_grid, QuadError, QuadratureRule};
use crate::residue::random_in_ball;
use crate::rhs_dsl::{parse, partial, DslError, Expr, SymbolTable, Var};
use crate::specfun::{norm, FundamentalSolution};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("rhs: {0}")]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("invalid system: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("the iteration diverged: successive differences grew three times in a row")]
    Diverged(Box<SolutionReport>),
    #[error("no admissible parameters after {0} halvings")]
    NoParameters(u32),
}

/// The system as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub m: u32,
    #[serde(rename = "N")]
    pub components: usize,
    pub alpha: f64,
    pub rhs: Vec<String>,
    #[serde(default)]
    pub autonomous: bool,
    /// Declared dependence order d; checked against the parsed rhs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
}

/// A parsed, validated system.
#[derive(Debug, Clone)]
pub struct System {
    pub spec: SystemSpec,
    pub table: SymbolTable,
    pub rhs: Vec<Expr>,
    /// Highest derivative order referenced.
    pub order: u32,
    /// Referenced variables across all components.
    pub vars: Vec<Var>,
}

impl SystemSpec {
    pub fn compile(&self) -> Result<System, SolverError> {
        if !(3..=5).contains(&self.n) {
            return Err(SolverError::Spec(format!("n = {} is outside 3..=5", self.n)));
        }
        if self.m == 0 || self.components == 0 {
            return Err(SolverError::Spec("m and N must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SolverError::Spec(format!("alpha = {} is outside (0, 1)", self.alpha)));
        }
        if self.rhs.len() != self.components {
            return Err(SolverError::Spec(format!("{} rhs entries for N = {}", self.rhs.len(), self.components)));
        }
        let table = SymbolTable { n: self.n, components: self.components, max_order: 2 * self.m };
        let rhs = self.rhs.iter().map(|s| parse(s, &table)).collect::<Result<Vec<_>, _>>()?;
        System::new(self.clone(), table, rhs)
    }
}

impl System {
    fn new(spec: SystemSpec, table: SymbolTable, rhs: Vec<Expr>) -> Result<System, SolverError> {
        let vars: BTreeSet<Var> = rhs.iter().flat_map(|e| e.vars()).collect();
        let order = rhs.iter().map(Expr::order).max().unwrap_or(0);
        if let Some(d) = spec.order {
            if d != order {
                return Err(SolverError::Spec(format!("declared order {d} but the rhs uses order {order}")));
            }
        }
        if spec.autonomous && vars.iter().any(|v| matches!(v, Var::X(_))) {
            return Err(SolverError::Spec("declared autonomous but the rhs references x".into()));
        }
        Ok(System { spec, table, rhs, order, vars: vars.into_iter().collect() })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn m(&self) -> u32 {
        self.spec.m
    }

    pub fn components(&self) -> usize {
        self.spec.components
    }

    /// True when no variable of order 2m appears.
    pub fn independent_of_top_order(&self) -> bool {
        self.order < 2 * self.m()
    }

    /// a_i(x, u, …) with variables supplied by `lookup`.
    pub fn eval(&self, i: usize, lookup: &dyn Fn(&Var) -> Option<f64>) -> Result<f64, DslError> {
        self.rhs[i].eval_with(lookup)
    }
}

/// One component of h: b·x^β or an explicit polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HSpec {
    Monomial { b: f64, beta: MultiIndex },
    Polynomial { poly: Polynomial },
}

impl HSpec {
    pub fn polynomial(&self) -> Polynomial {
        match self {
            HSpec::Monomial { b, beta } => Polynomial::monomial(*beta, *b),
            HSpec::Polynomial { poly } => poly.clone(),
        }
    }
}

/// A prescribed derivative D^β u_i(0) (component 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetSpec {
    #[serde(default = "one")]
    pub component: usize,
    pub beta: MultiIndex,
    pub value: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radial: usize,
    pub sphere_level: usize,
}

fn default_iters() -> usize {
    40
}

fn default_tol() -> f64 {
    1e-10
}

fn default_level() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    #[serde(rename = "R")]
    pub radius: f64,
    pub gamma: f64,
    pub h: Vec<HSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jets: Option<Vec<JetSpec>>,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Quadrature level of the jet cross-check through the potential module.
    #[serde(default = "default_level")]
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Degree of the polynomial carrier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl SolveConfig {
    pub fn grid_for(&self, m: u32) -> GridSpec {
        self.grid.unwrap_or(if m == 1 { GridSpec { radial: 24, sphere_level: 16 } } else { GridSpec { radial: 18, sphere_level: 16 } })
    }

    /// Non-smooth right-hand sides such as |u|^p converge slowly in the
    /// degree, hence the larger default for m ≥ 2.
    pub fn degree_for(&self, m: u32) -> u32 {
        self.degree.unwrap_or(if m == 1 { 10 } else { 20 })
    }
}

/// Values on the solver nodes plus the polynomial carrier that interpolates
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub n: usize,
    pub radius: f64,
    pub carrier: Vec<Polynomial>,
    /// Solver nodes, flattened with stride n.
    pub nodes: Vec<f64>,
    /// values[component][node].
    pub values: Vec<Vec<f64>>,
}

impl GridField {
    pub fn eval(&self, component: usize, x: &[f64]) -> f64 {
        self.carrier[component].eval(x)
    }

    pub fn derivative(&self, component: usize, beta: &MultiIndex, x: &[f64]) -> f64 {
        self.carrier[component].derivative(beta).eval(x)
    }

    /// Max over components and nodes of |values|.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        let coords: Vec<String> = (1..=self.n).map(|k| format!("x{k}")).collect();
        let comps: Vec<String> = (1..=self.values.len()).map(|k| format!("u{k}")).collect();
        writeln!(out, "{},{}", coords.join(","), comps.join(","))?;
        for (i, x) in self.nodes.chunks(self.n).enumerate() {
            let row: Vec<String> = x
                .iter()
                .map(|v| format!("{v:.17e}"))
                .chain(self.values.iter().map(|c| format!("{:.17e}", c[i])))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub points: usize,
    pub step: f64,
    pub max_abs: f64,
    pub max_rhs: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetDiagnostic {
    pub component: usize,
    pub beta: MultiIndex,
    /// From the carrier's coefficients.
    pub exact: f64,
    /// Central differences of the carrier, step 1e-2·R.
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub radius: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub samples: usize,
    /// The undetermined constant, fixed to 1.
    pub c: f64,
    /// A_j, Q_j, L_j for j = −1..=2m (index j+1).
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub a_at_zero: f64,
    pub independent_of_top_order: bool,
    pub delta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub converged: bool,
    pub iterations: usize,
    pub differences: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    /// sup over nodes of |u − h − θ(u)|.
    pub fixed_point_residual: f64,
    pub residual: ResidualReport,
    pub jets: Vec<JetDiagnostic>,
    /// Smallest order with a jet above 1e-10·‖u‖, per component.
    pub vanishing_order: Vec<Option<u32>>,
    /// Max |exact − quadrature| over the jets of ω^{(m)} at 0.
    pub jet_crosscheck: f64,
    pub sup_norm: f64,
    pub degree: u32,
    pub nodes: usize,
    pub contraction: ContractionEstimate,
    /// Kept out of the JSON so that reports are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Nodes, monomial basis and the cached least-squares projector.
pub struct Solver<'a> {
    pub sys: &'a System,
    pub cfg: &'a SolveConfig,
    pub h: Vec<Polynomial>,
    pub rule: QuadratureRule,
    pub fs: FundamentalSolution,
    pub degree: u32,
    basis: Vec<MultiIndex>,
    projector: DMatrix<f64>,
    lambda: BTreeSet<MultiIndex>,
}

impl<'a> Solver<'a> {
    pub fn new(sys: &'a System, cfg: &'a SolveConfig) -> Result<Self, SolverError> {
        let h = validate_config(sys, cfg)?;
        let n = sys.n();
        let m = sys.m();
        let degree = cfg.degree_for(m);
        if degree < 2 * m {
            return Err(SolverError::Config(format!("carrier degree {degree} is below 2m = {}", 2 * m)));
        }
        let grid = cfg.grid_for(m);
        let rule = ball_rule_grid(n, cfg.radius, grid.radial, grid.sphere_level)?;
        let basis = MultiIndex::all_up_to_order(n, degree - 2 * m);
        if rule.len() < 2 * basis.len() {
            return Err(SolverError::Config(format!(
                "{} nodes cannot resolve {} basis polynomials; refine the grid",
                rule.len(),
                basis.len()
            )));
        }
        // Rows √w_i (x_i/R)^β; the projector maps samples to coefficients.
        let rows = rule.len();
        let mut a = DMatrix::zeros(rows, basis.len());
        let mut scaled = vec![0.0; n];
        for i in 0..rows {
            let sw = rule.weights[i].sqrt();
            for (k, v) in rule.node(i).iter().enumerate() {
                scaled[k] = v / cfg.radius;
            }
            for (c, b) in basis.iter().enumerate() {
                a[(i, c)] = sw * b.monomial(&scaled);
            }
        }
        let pinv = a
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|e| SolverError::Config(format!("projection: {e}")))?;
        let projector = pinv * DMatrix::from_diagonal(&DVector::from_iterator(rows, rule.weights.iter().map(|w| w.sqrt())));
        Ok(Solver {
            sys,
            cfg,
            h,
            rule,
            fs: FundamentalSolution::delta(n),
            degree,
            basis,
            projector,
            lambda: lambda_set(n, m),
        })
    }

    /// a_i(x, f, ∇f, …) at every node, per component.
    pub fn sample_rhs(&self, f: &[Polynomial]) -> Result<Vec<Vec<f64>>, SolverError> {
        let derivs: Vec<(Var, Polynomial)> = self
            .sys
            .vars
            .iter()
            .filter_map(|v| match v {
                Var::D(i, b) => Some((*v, f[*i].derivative(b))),
                Var::X(_) => None,
            })
            .collect();
        let per_node: Vec<Result<Vec<f64>, DslError>> = (0..self.rule.len())
            .into_par_iter()
            .map(|i| {
                let y = self.rule.node(i);
                let vals: Vec<f64> = derivs.iter().map(|(_, p)| p.eval(y)).collect();
                let lookup = |v: &Var| match v {
                    Var::X(k) => Some(y[*k]),
                    _ => derivs.iter().position(|(w, _)| w == v).map(|j| vals[j]),
                };
                (0..self.sys.components()).map(|c| self.sys.eval(c, &lookup)).collect()
            })
            .collect();
        let mut out = vec![Vec::with_capacity(self.rule.len()); self.sys.components()];
        for r in per_node {
            for (c, v) in r?.into_iter().enumerate() {
                out[c].push(v);
            }
        }
        Ok(out)
    }

    /// Weighted least-squares fit of node samples by a polynomial of degree
    /// D − 2m.
    pub fn project(&self, samples: &[f64]) -> Polynomial {
        let coeffs = &self.projector * DVector::from_column_slice(samples);
        Polynomial::from_terms(
            self.sys.n(),
            self.basis
                .iter()
                .zip(coeffs.iter())
                .map(|(b, c)| (*b, c / self.cfg.radius.powi(b.order() as i32))),
        )
    }

    /// The projected right-hand side for each component.
    pub fn projected_rhs(&self, f: &[Polynomial]) -> Result<Vec<Polynomial>, SolverError> {
        Ok(self.sample_rhs(f)?.iter().map(|s| self.project(s)).collect())
    }

    /// ω^{(l)}(f) = N^l(a(·, f, …)).
    pub fn omega(&self, l: u32, f: &[Polynomial]) -> Result<Vec<Polynomial>, SolverError> {
        self.projected_rhs(f)?
            .iter()
            .map(|g| newtonian_polynomial_pow(g, l, self.cfg.radius, &self.fs).map_err(SolverError::from))
            .collect()
    }

    /// Drop the Taylor terms of degree < 2m and the degree-2m terms in Λ.
    pub fn truncate(&self, p: &Polynomial) -> Polynomial {
        let two_m = 2 * self.sys.m();
        p.filter(|b| b.order() > two_m || (b.order() == two_m && !self.lambda.contains(b)))
    }

    pub fn theta(&self, f: &[Polynomial]) -> Result<Vec<Polynomial>, SolverError> {
        Ok(self.omega(self.sys.m(), f)?.iter().map(|p| self.truncate(p)).collect())
    }

    /// h + θ(f).
    pub fn theta_h(&self, f: &[Polynomial]) -> Result<Vec<Polynomial>, SolverError> {
        Ok(self.theta(f)?.iter().zip(&self.h).map(|(t, h)| t.add(h)).collect())
    }

    pub fn field(&self, carrier: Vec<Polynomial>) -> GridField {
        let values = carrier
            .iter()
            .map(|p| (0..self.rule.len()).map(|i| p.eval(self.rule.node(i))).collect())
            .collect();
        GridField { n: self.sys.n(), radius: self.cfg.radius, carrier, nodes: self.rule.nodes.clone(), values }
    }

    /// max over nodes and components of |a − b|.
    pub fn sup_diff(&self, a: &[Polynomial], b: &[Polynomial]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| {
                let d = p.sub(q);
                (0..self.rule.len()).map(|i| d.eval(self.rule.node(i)).abs()).fold(0.0f64, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Picard iteration from f_0 = 0.
    pub fn iterate(&self) -> Result<(Vec<Polynomial>, Vec<f64>, bool), SolverError> {
        let mut f = vec![Polynomial::zero(self.sys.n()); self.sys.components()];
        let mut diffs: Vec<f64> = Vec::new();
        let mut growth = 0;
        for _ in 0..self.cfg.max_iters {
            let next = self.theta_h(&f)?;
            let d = self.sup_diff(&next, &f);
            if let Some(&prev) = diffs.last() {
                growth = if d > prev { growth + 1 } else { 0 };
            }
            diffs.push(d);
            f = next;
            if d < self.cfg.tol {
                return Ok((f, diffs, true));
            }
            if growth >= 3 {
                return Err(SolverError::Diverged(Box::new(self.partial_report(&f, &diffs))));
            }
        }
        Ok((f, diffs, false))
    }

    fn partial_report(&self, f: &[Polynomial], diffs: &[f64]) -> SolutionReport {
        let field = self.field(f.to_vec());
        SolutionReport {
            converged: false,
            iterations: diffs.len(),
            differences: diffs.to_vec(),
            contraction_ratios: ratios(diffs),
            fixed_point_residual: f64::NAN,
            residual: ResidualReport { points: 0, step: 0.0, max_abs: f64::NAN, max_rhs: f64::NAN, relative: f64::NAN },
            jets: Vec::new(),
            vanishing_order: Vec::new(),
            jet_crosscheck: f64::NAN,
            sup_norm: field.sup_norm(),
            degree: self.degree,
            nodes: self.rule.len(),
            contraction: ContractionEstimate {
                radius: self.cfg.radius,
                gamma: self.cfg.gamma,
                alpha: self.sys.spec.alpha,
                samples: 0,
                c: 1.0,
                a: Vec::new(),
                q: Vec::new(),
                l: Vec::new(),
                a_at_zero: f64::NAN,
                independent_of_top_order: self.sys.independent_of_top_order(),
                delta: f64::NAN,
                eta: f64::NAN,
            },
            wall_time_s: 0.0,
        }
    }

    /// Max |exact jet − d_beta_newtonian| at 0 for ω^{(m)}(u), |β| ≤ 2m.
    pub fn jet_crosscheck(&self, u: &[Polynomial]) -> Result<f64, SolverError> {
        let m = self.sys.m();
        let n = self.sys.n();
        let ctx = PotentialCtx::new(n, self.cfg.level);
        let zero = vec![0.0; n];
        let mut worst = 0.0f64;
        for g in self.projected_rhs(u)? {
            let inner = newtonian_polynomial_pow(&g, m - 1, self.cfg.radius, &self.fs)?;
            let outer = newtonian_polynomial(&inner, self.cfg.radius, &self.fs)?;
            let field = PolyField::new(inner, self.cfg.radius);
            let betas = MultiIndex::all_up_to_order(n, 2 * m);
            let diffs: Vec<Result<f64, PotentialError>> = betas
                .par_iter()
                .map(|b| {
                    let q = d_beta_newtonian(&ctx, b, &field, &zero)?;
                    Ok((q - outer.derivative(b).eval(&zero)).abs())
                })
                .collect();
            for d in diffs {
                worst = worst.max(d?);
            }
        }
        Ok(worst)
    }
}

fn ratios(diffs: &[f64]) -> Vec<f64> {
    diffs.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
}

/// Check h (homogeneous, m-harmonic, ‖h‖^{(2m)}_α < γ/2) and the numeric
/// settings; returns the h polynomials.
pub fn validate_config(sys: &System, cfg: &SolveConfig) -> Result<Vec<Polynomial>, SolverError> {
    let n = sys.n();
    let m = sys.m();
    if !(cfg.radius > 0.0 && cfg.gamma > 0.0) {
        return Err(SolverError::Config("R and gamma must be positive".into()));
    }
    if cfg.max_iters == 0 || cfg.tol <= 0.0 {
        return Err(SolverError::Config("max_iters and tol must be positive".into()));
    }
    if cfg.h.len() != sys.components() {
        return Err(SolverError::Config(format!("{} h components for N = {}", cfg.h.len(), sys.components())));
    }
    let mut out = Vec::with_capacity(cfg.h.len());
    for (i, spec) in cfg.h.iter().enumerate() {
        let p = spec.polynomial();
        if p.dim() != n {
            return Err(SolverError::Config(format!("h{} has dimension {}", i + 1, p.dim())));
        }
        if !p.is_zero() && p.homogeneous_degree() != Some(2 * m) {
            return Err(SolverError::Config(format!("h{} is not homogeneous of degree {}", i + 1, 2 * m)));
        }
        if !RationalPolynomial::from_polynomial(&p).is_m_harmonic(m) {
            return Err(SolverError::Config(format!("h{} is not {m}-harmonic", i + 1)));
        }
        let norm = holder_norms(&PolyField::new(p.clone(), cfg.radius), sys.spec.alpha, 2 * m, 64, cfg.seed)
            .order(2 * m)
            .map(|o| o.composite)
            .unwrap_or(0.0);
        if norm >= cfg.gamma / 2.0 {
            return Err(SolverError::Config(format!(
                "h{} has order-{} norm {norm} which is not below gamma/2 = {}",
                i + 1,
                2 * m,
                cfg.gamma / 2.0
            )));
        }
        out.push(p);
    }
    Ok(out)
}

/// The order-(2m−1) Taylor polynomial prescribed by the jets, per component.
pub fn jet_polynomials(sys: &System, jets: &[JetSpec]) -> Result<Vec<Polynomial>, SolverError> {
    let n = sys.n();
    let mut seen = BTreeSet::new();
    let mut out = vec![Polynomial::zero(n); sys.components()];
    for j in jets {
        if j.component == 0 || j.component > sys.components() {
            return Err(SolverError::Config(format!("jet component {} out of range", j.component)));
        }
        if j.beta.dim() != n || j.beta.order() > 2 * sys.m() - 1 {
            return Err(SolverError::Config(format!("jet {} must have order at most 2m-1", j.beta)));
        }
        if !seen.insert((j.component, j.beta)) {
            return Err(SolverError::Config(format!("jet {} of u{} given twice", j.beta, j.component)));
        }
        out[j.component - 1].add_term(j.beta, j.value / j.beta.factorial() as f64);
    }
    Ok(out)
}

/// The system in ũ = u − T_{2m−1}: each D^βu_i becomes D^βu_i + D^βT_i.
/// The unknowns keep their names.
pub fn initial_value_shift(sys: &System, jets: &[JetSpec]) -> Result<System, SolverError> {
    if !sys.independent_of_top_order() {
        return Err(SolverError::Hypothesis("the rhs depends on order-2m derivatives".into()));
    }
    let t = jet_polynomials(sys, jets)?;
    let sub = |v: &Var| -> Option<Expr> {
        let Var::D(i, b) = v else { return None };
        let d = t[*i].derivative(b);
        (!d.is_zero()).then(|| Expr::Add(Box::new(Expr::Var(*v)), Box::new(Expr::from_polynomial(&d))))
    };
    let rhs: Vec<Expr> = sys.rhs.iter().map(|e| e.substitute(&sub)).collect();
    let spec = SystemSpec {
        rhs: rhs.iter().map(|e| e.to_string()).collect(),
        autonomous: sys.spec.autonomous && !rhs.iter().any(Expr::references_x),
        order: None,
        ..sys.spec.clone()
    };
    System::new(spec, sys.table, rhs)
}

/// Solve, returning the final iterate and its diagnostics. With jets in the
/// configuration the shifted system is solved and T_{2m−1} added back.
pub fn picard_solve(sys: &System, cfg: &SolveConfig) -> Result<(GridField, SolutionReport), SolverError> {
    let start = Instant::now();
    let (work_sys, taylor) = match &cfg.jets {
        Some(j) if !j.is_empty() => (initial_value_shift(sys, j)?, Some(jet_polynomials(sys, j)?)),
        _ => (sys.clone(), None),
    };
    let solver = Solver::new(&work_sys, cfg)?;
    let (v, diffs, converged) = solver.iterate()?;
    let fixed_point_residual = {
        let again = solver.theta_h(&v)?;
        solver.sup_diff(&again, &v)
    };
    let jet_crosscheck = solver.jet_crosscheck(&v)?;
    let u: Vec<Polynomial> = match &taylor {
        Some(t) => v.iter().zip(t).map(|(a, b)| a.add(b)).collect(),
        None => v,
    };
    let field = solver.field(u.clone());
    let residual = pde_residual(sys, &u, cfg.radius, 40, cfg.seed)?;
    let jets = jet_diagnostics(sys, &u, cfg.radius);
    let sup = field.sup_norm();
    let vanishing_order = (0..sys.components())
        .map(|c| {
            jets.iter()
                .filter(|j| j.component == c + 1 && j.exact.abs() > 1e-10 * sup.max(1e-300))
                .map(|j| j.beta.order())
                .min()
        })
        .collect();
    let contraction = estimate_contraction(sys, cfg.radius, cfg.gamma, 2000, cfg.seed)?;
    let report = SolutionReport {
        converged,
        iterations: diffs.len(),
        contraction_ratios: ratios(&diffs),
        differences: diffs,
        fixed_point_residual,
        residual,
        jets,
        vanishing_order,
        jet_crosscheck,
        sup_norm: sup,
        degree: solver.degree,
        nodes: solver.rule.len(),
        contraction,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((field, report))
}

/// ω^{(l)}(f) for a field given by its carrier.
pub fn omega(l: u32, f: &GridField, sys: &System, cfg: &SolveConfig) -> Result<GridField, SolverError> {
    if l == 0 || l > sys.m() {
        return Err(SolverError::Config(format!("omega order {l} outside 1..=m")));
    }
    let solver = Solver::new(sys, cfg)?;
    let w = solver.omega(l, &f.carrier)?;
    Ok(solver.field(w))
}

/// θ(f) for a field given by its carrier.
pub fn theta(f: &GridField, sys: &System, cfg: &SolveConfig) -> Result<GridField, SolverError> {
    let solver = Solver::new(sys, cfg)?;
    let t = solver.theta(&f.carrier)?;
    Ok(solver.field(t))
}

/// Iterated five-point Laplacian Δ^m by nesting.
pub fn fd_laplacian_pow(g: &(dyn Fn(&[f64]) -> f64 + Sync), m: u32, x: &[f64], h: f64) -> f64 {
    if m == 0 {
        return g(x);
    }
    let inner = |y: &[f64]| fd_laplacian_pow(g, m - 1, y, h);
    fd_laplacian(&inner, x, h)
}

/// max |Δ^m u − a(·, u, …)| at seeded points with |x| ≤ 0.6R, with Δ^m by
/// iterated differences of step 1e-2·R.
pub fn pde_residual(sys: &System, u: &[Polynomial], radius: f64, points: usize, seed: u64) -> Result<ResidualReport, SolverError> {
    let n = sys.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let pts: Vec<Vec<f64>> = (0..points).map(|_| random_in_ball(&mut rng, n, 0.6 * radius)).collect();
    let step = 1e-2 * radius;
    let derivs: HashMap<Var, Polynomial> = sys
        .vars
        .iter()
        .filter_map(|v| match v {
            Var::D(i, b) => Some((*v, u[*i].derivative(b))),
            Var::X(_) => None,
        })
        .collect();
    let rows: Vec<Result<(f64, f64), SolverError>> = pts
        .par_iter()
        .map(|x| {
            let lookup = |v: &Var| match v {
                Var::X(k) => Some(x[*k]),
                _ => derivs.get(v).map(|p| p.eval(x)),
            };
            let mut worst = (0.0f64, 0.0f64);
            for c in 0..sys.components() {
                let a = sys.eval(c, &lookup)?;
                let g = |y: &[f64]| u[c].eval(y);
                let lap = fd_laplacian_pow(&g, sys.m(), x, step);
                worst.0 = worst.0.max((lap - a).abs());
                worst.1 = worst.1.max(a.abs()).max(lap.abs());
            }
            Ok(worst)
        })
        .collect();
    let (mut max_abs, mut max_rhs) = (0.0f64, 0.0f64);
    for r in rows {
        let (a, b) = r?;
        max_abs = max_abs.max(a);
        max_rhs = max_rhs.max(b);
    }
    let relative = if max_rhs > 0.0 { max_abs / max_rhs } else { max_abs };
    Ok(ResidualReport { points, step, max_abs, max_rhs, relative })
}

/// D^βu(0) for |β| ≤ 2m from coefficients and from central differences.
pub fn jet_diagnostics(sys: &System, u: &[Polynomial], radius: f64) -> Vec<JetDiagnostic> {
    let n = sys.n();
    let zero = vec![0.0; n];
    let mut out = Vec::new();
    for (c, p) in u.iter().enumerate() {
        let g = |y: &[f64]| p.eval(y);
        for b in MultiIndex::all_up_to_order(n, 2 * sys.m()) {
            out.push(JetDiagnostic {
                component: c + 1,
                beta: b,
                exact: p.coefficient(&b) * b.factorial() as f64,
                finite_difference: fd_mixed(&g, &b, &zero, 1e-2 * radius),
            });
        }
    }
    out
}

/// Variables grouped by order: index 0 holds x (j = −1), index j+1 holds
/// the referenced derivative variables of order j.
fn grouped_vars(sys: &System) -> Vec<Vec<Var>> {
    let m2 = 2 * sys.m() as usize;
    let mut groups = vec![Vec::new(); m2 + 2];
    groups[0] = (0..sys.n()).map(Var::X).collect();
    for v in &sys.vars {
        if let Var::D(_, b) = v {
            groups[b.order() as usize + 1].push(*v);
        }
    }
    groups
}

fn sample_e(rng: &mut ChaCha8Rng, groups: &[Vec<Var>], radii: &[f64]) -> Vec<f64> {
    groups
        .iter()
        .zip(radii)
        .flat_map(|(g, r)| if g.is_empty() { Vec::new() } else { random_in_ball(rng, g.len(), *r) })
        .collect()
}

/// Monte-Carlo A_j, Q_j, L_j over E = {|x| ≤ R, |p_j| ≤ R^{2m−j}γ} and the
/// assembled δ(R, γ), η(R, γ) with C = 1.
pub fn estimate_contraction(
    sys: &System,
    radius: f64,
    gamma: f64,
    sample_count: usize,
    seed: u64,
) -> Result<ContractionEstimate, SolverError> {
    let m2 = 2 * sys.m();
    let alpha = sys.spec.alpha;
    let groups = grouped_vars(sys);
    let flat: Vec<Var> = groups.iter().flatten().copied().collect();
    let radii: Vec<f64> =
        std::iter::once(radius).chain((0..=m2).map(|j| radius.powi((m2 - j) as i32) * gamma)).collect();
    // ∂a_i/∂v for every variable, and ∂²a_i/∂v∂w with w of order 2m.
    let grads: Vec<Vec<Vec<Expr>>> = sys
        .rhs
        .iter()
        .map(|e| groups.iter().map(|g| g.iter().map(|v| partial(e, v)).collect()).collect())
        .collect();
    let top = &groups[m2 as usize + 1];
    let hess: Vec<Vec<Vec<Expr>>> = grads
        .iter()
        .map(|gi| {
            gi.iter()
                .map(|g| g.iter().flat_map(|d| top.iter().map(|w| partial(d, w)).collect::<Vec<_>>()).collect())
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(sample_count);
    for k in 0..sample_count {
        let p = sample_e(&mut rng, &groups, &radii);
        let q = if k % 2 == 0 {
            sample_e(&mut rng, &groups, &radii)
        } else {
            // a nearby point of E
            let scale = 10f64.powf(-3.0 * rng.gen::<f64>());
            let mut q = p.clone();
            let mut off = 0;
            for (g, r) in groups.iter().zip(&radii) {
                let d = random_in_ball(&mut rng, g.len().max(1), r * scale);
                for t in 0..g.len() {
                    q[off + t] += d[t];
                }
                let sub = &mut q[off..off + g.len()];
                let nrm = norm(sub);
                if nrm > *r {
                    sub.iter_mut().for_each(|v| *v *= r / nrm);
                }
                off += g.len();
            }
            q
        };
        pairs.push((p, q));
    }
    let eval_at = |e: &Expr, pt: &[f64]| -> Result<f64, DslError> {
        e.eval_with(&|v| flat.iter().position(|w| w == v).map(|i| pt[i]))
    };
    let ng = groups.len();
    let per_pair: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>), DslError>> = pairs
        .par_iter()
        .map(|(p, q)| {
            let (mut a, mut qv, mut l) = (vec![0.0f64; ng], vec![0.0f64; ng], vec![0.0f64; ng]);
            let dist = norm(&p.iter().zip(q).map(|(s, t)| s - t).collect::<Vec<_>>());
            for i in 0..sys.components() {
                for j in 0..ng {
                    let gp: Vec<f64> = grads[i][j].iter().map(|e| eval_at(e, p)).collect::<Result<_, _>>()?;
                    let gq: Vec<f64> = grads[i][j].iter().map(|e| eval_at(e, q)).collect::<Result<_, _>>()?;
                    a[j] = a[j].max(norm(&gp)).max(norm(&gq));
                    if dist > 0.0 {
                        let d: Vec<f64> = gp.iter().zip(&gq).map(|(s, t)| s - t).collect();
                        qv[j] = qv[j].max(norm(&d) / dist.powf(alpha));
                    }
                    let hp: Vec<f64> = hess[i][j].iter().map(|e| eval_at(e, p)).collect::<Result<_, _>>()?;
                    l[j] = l[j].max(norm(&hp));
                }
            }
            Ok((a, qv, l))
        })
        .collect();
    let (mut a, mut q, mut l) = (vec![0.0f64; ng], vec![0.0f64; ng], vec![0.0f64; ng]);
    for r in per_pair {
        let (pa, pq, pl) = r?;
        for j in 0..ng {
            a[j] = a[j].max(pa[j]);
            q[j] = q[j].max(pq[j]);
            l[j] = l[j].max(pl[j]);
        }
    }
    let zero = |_: &Var| Some(0.0);
    let a0 = (0..sys.components()).map(|i| sys.eval(i, &zero).map(f64::abs)).collect::<Result<Vec<_>, _>>()?;
    let a_at_zero = a0.into_iter().fold(0.0, f64::max);
    let indep = sys.independent_of_top_order();
    let holder_factor = radius.powf(alpha) * (1.0 + radius.powf(alpha) * gamma.powf(alpha) + gamma);
    let top_j = if indep { m2 - 1 } else { m2 };
    let delta: f64 = (0..=top_j)
        .map(|j| {
            let k = j as usize + 1;
            let lj = if indep { 0.0 } else { gamma * l[k] };
            radius.powi((m2 - j) as i32) * (a[k] + holder_factor * q[k] + lj)
        })
        .sum();
    let l_minus = if indep { 0.0 } else { gamma * l[0] };
    let eta = a_at_zero + radius * (a[0] + holder_factor * q[0] + l_minus) + gamma * delta;
    Ok(ContractionEstimate {
        radius,
        gamma,
        alpha,
        samples: sample_count,
        c: 1.0,
        a,
        q,
        l,
        a_at_zero,
        independent_of_top_order: indep,
        delta,
        eta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectionMode {
    /// Halve R with γ fixed.
    SmallBall,
    /// Fixed R, halve γ.
    AutonomousLargeR(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterChoice {
    pub radius: f64,
    pub gamma: f64,
    pub halvings: u32,
    pub estimate: ContractionEstimate,
}

const MAX_HALVINGS: u32 = 30;
const HYPOTHESIS_TOL: f64 = 1e-8;

fn check_hypotheses(sys: &System, mode: SelectionMode) -> Result<(), SolverError> {
    let zero = |_: &Var| Some(0.0);
    for (i, e) in sys.rhs.iter().enumerate() {
        let a0 = e.eval_with(&zero)?;
        if a0.abs() > HYPOTHESIS_TOL {
            return Err(SolverError::Hypothesis(format!("a(0) ≠ 0 (a{}(0) = {a0})", i + 1)));
        }
    }
    let (vars, label): (Vec<Var>, &str) = match mode {
        SelectionMode::SmallBall => (
            sys.vars.iter().filter(|v| v.order() == 2 * sys.m() && matches!(v, Var::D(..))).copied().collect(),
            "∇_{p_2m} a(0) ≠ 0",
        ),
        SelectionMode::AutonomousLargeR(_) => {
            if sys.vars.iter().any(|v| matches!(v, Var::X(_))) {
                return Err(SolverError::Hypothesis("the system is not autonomous".into()));
            }
            (sys.vars.clone(), "∇a(0) ≠ 0")
        }
    };
    for e in &sys.rhs {
        for v in &vars {
            let g = partial(e, v);
            let val = g.eval_with(&zero).map_err(|_| SolverError::Hypothesis(format!("{label}: ∂a/∂{v} undefined at 0")))?;
            if val.abs() > HYPOTHESIS_TOL {
                return Err(SolverError::Hypothesis(format!("{label} (∂a/∂{v} = {val})")));
            }
            if mode == SelectionMode::SmallBall {
                for w in &vars {
                    let h = partial(&g, w).eval_with(&zero).unwrap_or(f64::NAN);
                    if !(h.abs() <= HYPOTHESIS_TOL) {
                        return Err(SolverError::Hypothesis(format!("∇²_{{p_2m}} a(0) ≠ 0 (∂²a/∂{v}∂{w} = {h})")));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Halve R (or γ) from (1, 1) until δ ≤ 1/2 and η < γ/2.
pub fn select_parameters(
    sys: &System,
    mode: SelectionMode,
    sample_count: usize,
    seed: u64,
) -> Result<ParameterChoice, SolverError> {
    check_hypotheses(sys, mode)?;
    let (mut radius, mut gamma) = match mode {
        SelectionMode::SmallBall => (1.0, 1.0),
        SelectionMode::AutonomousLargeR(r) => (r, 1.0),
    };
    for halvings in 0..=MAX_HALVINGS {
        let estimate = estimate_contraction(sys, radius, gamma, sample_count, seed)?;
        if estimate.delta <= 0.5 && estimate.eta < gamma / 2.0 {
            return Ok(ParameterChoice { radius, gamma, halvings, estimate });
        }
        match mode {
            SelectionMode::SmallBall => radius /= 2.0,
            SelectionMode::AutonomousLargeR(_) => gamma /= 2.0,
        }
    }
    Err(SolverError::NoParameters(MAX_HALVINGS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;
    use approx::assert_relative_eq;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::from_slice(v)
    }

    fn system(m: u32, rhs: &[&str]) -> System {
        SystemSpec { n: 3, m, components: rhs.len(), alpha: 0.5, rhs: rhs.iter().map(|s| s.to_string()).collect(), autonomous: false, order: None }
            .compile()
            .unwrap()
    }

    fn config(radius: f64, h: Vec<HSpec>) -> SolveConfig {
        SolveConfig {
            radius,
            gamma: 1.0,
            h,
            jets: None,
            max_iters: 40,
            tol: 1e-12,
            level: 12,
            grid: Some(GridSpec { radial: 12, sphere_level: 10 }),
            degree: Some(8),
            seed: 3,
        }
    }

    #[test]
    fn omega_of_constant_rhs() {
        let sys = system(1, &["1"]);
        let cfg = config(1.0, vec![HSpec::Monomial { b: 0.0, beta: mi(&[1, 1, 0]) }]);
        let s = Solver::new(&sys, &cfg).unwrap();
        let zero = vec![Polynomial::zero(3)];
        let w = s.omega(1, &zero).unwrap();
        let want = Polynomial::r_squared(3).scale(1.0 / 6.0).add(&Polynomial::constant(3, -0.5));
        assert!(w[0].max_coeff_diff(&want) < 1e-12);
        let t = s.theta(&zero).unwrap();
        assert!(t[0].max_coeff_diff(&Polynomial::r_squared(3).scale(1.0 / 6.0)) < 1e-12);
    }

    #[test]
    fn omega_two_matches_radial_oracle() {
        let sys = system(2, &["1"]);
        let cfg = config(1.0, vec![HSpec::Monomial { b: 0.0, beta: mi(&[3, 1, 0]) }]);
        let s = Solver::new(&sys, &cfg).unwrap();
        let w = s.omega(2, &[Polynomial::zero(3)]).unwrap();
        // N(g)(r) = −∫_0^1 ρ² max(ρ, r)^{−1} g(ρ) dρ for radial g in n = 3
        let n1 = |r: f64| r * r / 6.0 - 0.5;
        let nn = |r: f64| {
            let k = |p: f64| -p * p / p.max(r) * n1(p);
            integrate_adaptive(&k, 0.0, r, 1e-13) + integrate_adaptive(&k, r, 1.0, 1e-13)
        };
        for r in [1e-3, 0.3, 0.7] {
            assert_relative_eq!(w[0].eval(&[r, 0.0, 0.0]), nn(r), epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let sys = system(1, &["0"]);
        let cfg = config(0.7, vec![HSpec::Monomial { b: 0.0, beta: mi(&[1, 1, 0]) }]);
        let s = Solver::new(&sys, &cfg).unwrap();
        let p = Polynomial::from_terms(
            3,
            [(mi(&[0, 0, 0]), 0.3), (mi(&[1, 2, 0]), -1.5), (mi(&[0, 1, 2]), 2.0), (mi(&[3, 0, 3]), 0.7)],
        );
        let f = s.field(vec![p.clone()]);
        assert!(s.project(&f.values[0]).max_coeff_diff(&p) < 1e-8);
    }

    #[test]
    fn theta_jets_vanish_by_finite_differences() {
        let sys = system(1, &["exp(x1) * (1 + u1) + d1_100 * d1_011"]);
        let cfg = config(0.5, vec![HSpec::Monomial { b: 0.0, beta: mi(&[1, 1, 0]) }]);
        let s = Solver::new(&sys, &cfg).unwrap();
        let f = Polynomial::from_terms(3, [(mi(&[1, 0, 0]), 0.4), (mi(&[0, 1, 1]), -0.8), (mi(&[2, 1, 0]), 0.3)]);
        let t = s.theta(&[f.clone()]).unwrap();
        // the removed terms are harmonic, so Δθ(f) is the projected rhs
        let g0 = &s.projected_rhs(&[f]).unwrap()[0];
        assert!(t[0].laplacian().max_coeff_diff(g0) < 1e-10);
        let g = |y: &[f64]| t[0].eval(y);
        let zero = [0.0; 3];
        let lam = lambda_set(3, 1);
        for b in MultiIndex::all_up_to_order(3, 2) {
            if b.order() < 2 || lam.contains(&b) {
                assert!(fd_mixed(&g, &b, &zero, 1e-2).abs() < 1e-6, "{b}");
            }
        }
    }

    #[test]
    fn zero_rhs_returns_h() {
        let sys = system(1, &["0"]);
        let cfg = config(0.5, vec![HSpec::Monomial { b: 0.1, beta: mi(&[1, 1, 0]) }]);
        let (u, rep) = picard_solve(&sys, &cfg).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 2);
        assert!(u.carrier[0].max_coeff_diff(&Polynomial::monomial(mi(&[1, 1, 0]), 0.1)) < 1e-15);
    }

    #[test]
    fn u_squared_converges_with_prescribed_jet() {
        let sys = system(1, &["u1^2"]);
        let cfg = config(0.5, vec![HSpec::Monomial { b: 0.1, beta: mi(&[1, 1, 0]) }]);
        let (u, rep) = picard_solve(&sys, &cfg).unwrap();
        assert!(rep.converged, "{:?}", rep.differences);
        assert!(rep.residual.relative < 1e-2, "{:?}", rep.residual);
        assert!(rep.fixed_point_residual < 2.0 * cfg.tol);
        let j = |b: &[u32]| rep.jets.iter().find(|d| d.beta == mi(b)).unwrap().clone();
        assert!((j(&[1, 1, 0]).finite_difference - 0.1).abs() < 1e-4);
        for b in [[0, 0, 0], [1, 0, 0], [0, 0, 1]] {
            assert!(j(&b).finite_difference.abs() < 1e-5 * u.sup_norm());
        }
        assert_eq!(rep.vanishing_order, vec![Some(2)]);
        assert_eq!(rep.contraction_ratios.len(), rep.iterations - 1);
        assert!(rep.jet_crosscheck < 1e-8);
    }

    #[test]
    fn linear_rhs_contracts_geometrically() {
        let sys = system(1, &["u1"]);
        let cfg = config(0.5, vec![HSpec::Monomial { b: 0.1, beta: mi(&[1, 0, 1]) }]);
        let (_, rep) = picard_solve(&sys, &cfg).unwrap();
        assert!(rep.converged);
        let r = &rep.contraction_ratios;
        for w in r[1..r.len() - 1].iter() {
            assert!(*w < 0.1, "{r:?}");
        }
        for w in &r[1..] {
            assert!(*w <= rep.contraction.delta.max(0.9));
        }
    }

    #[test]
    fn h_must_be_small_and_m_harmonic() {
        let sys = system(1, &["u1^2"]);
        let big = config(0.5, vec![HSpec::Monomial { b: 0.6, beta: mi(&[1, 1, 0]) }]);
        assert!(matches!(Solver::new(&sys, &big), Err(SolverError::Config(_))));
        let radial = config(0.5, vec![HSpec::Monomial { b: 0.1, beta: mi(&[2, 0, 0]) }]);
        assert!(matches!(Solver::new(&sys, &radial), Err(SolverError::Config(_))));
    }

    #[test]
    fn contraction_estimates() {
        let sys = system(1, &["u1^2"]);
        let e = estimate_contraction(&sys, 0.5, 0.5, 4000, 1).unwrap();
        // A_0 = sup 2|u1| over |u1| ≤ R²γ
        assert!(e.a[1] <= 2.0 * 0.125 + 1e-12 && e.a[1] > 0.9 * 0.25);
        let small = estimate_contraction(&sys, 0.25, 0.5, 4000, 1).unwrap();
        assert!(small.delta < e.delta);
        let k = estimate_contraction(&system(1, &["3"]), 0.5, 0.5, 100, 1).unwrap();
        assert_eq!(k.delta, 0.0);
        let sweep: Vec<f64> =
            [0.2, 0.1, 0.05].iter().map(|g| estimate_contraction(&sys, 1.0, *g, 2000, 1).unwrap().delta).collect();
        assert!(sweep[0] > sweep[1] && sweep[1] > sweep[2], "{sweep:?}");
        let mut last = 0.0;
        for count in [100, 400, 1600] {
            let q = estimate_contraction(&sys, 0.5, 0.5, count, 9).unwrap().q[1];
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn parameter_selection() {
        let sys = system(1, &["u1^2"]);
        let c = select_parameters(&sys, SelectionMode::SmallBall, 500, 1).unwrap();
        assert!(c.estimate.delta <= 0.5);
        let zero = select_parameters(&system(1, &["0"]), SelectionMode::SmallBall, 50, 1).unwrap();
        assert_eq!(zero.halvings, 0);
        let err = select_parameters(&system(1, &["1 + u1"]), SelectionMode::AutonomousLargeR(1.0), 50, 1).unwrap_err();
        assert!(err.to_string().contains("a(0)"), "{err}");
        let grad = select_parameters(&system(1, &["u1"]), SelectionMode::AutonomousLargeR(1.0), 50, 1).unwrap_err();
        assert!(grad.to_string().contains("∇a(0)"), "{grad}");
        let auto = select_parameters(&sys, SelectionMode::AutonomousLargeR(2.0), 500, 1).unwrap();
        assert_eq!(auto.radius, 2.0);
    }

    #[test]
    fn shift_examples() {
        let sys = system(1, &["u1^2"]);
        let same = initial_value_shift(&sys, &[JetSpec { component: 1, beta: mi(&[0, 0, 0]), value: 0.0 }]).unwrap();
        assert_eq!(same.rhs, sys.rhs);
        let jets = [
            JetSpec { component: 1, beta: mi(&[0, 0, 0]), value: 1.0 },
            JetSpec { component: 1, beta: mi(&[1, 0, 0]), value: 2.0 },
        ];
        let shifted = initial_value_shift(&sys, &jets).unwrap();
        assert_eq!(shifted.rhs[0], parse("(u1 + (1 + 2*x1))^2", &sys.table).unwrap());
        assert!(!shifted.spec.autonomous);
        let top = system(1, &["d1_200"]);
        assert!(matches!(initial_value_shift(&top, &jets), Err(SolverError::Hypothesis(_))));
    }

    #[test]
    fn initial_value_round_trip() {
        let sys = system(1, &["u1^2"]);
        let mut cfg = config(0.3, vec![HSpec::Monomial { b: 0.05, beta: mi(&[1, 1, 0]) }]);
        let jets = vec![
            JetSpec { component: 1, beta: mi(&[0, 0, 0]), value: 0.2 },
            JetSpec { component: 1, beta: mi(&[1, 0, 0]), value: -0.1 },
            JetSpec { component: 1, beta: mi(&[0, 0, 1]), value: 0.3 },
        ];
        cfg.jets = Some(jets.clone());
        let (_, rep) = picard_solve(&sys, &cfg).unwrap();
        assert!(rep.converged);
        for j in &jets {
            let d = rep.jets.iter().find(|d| d.beta == j.beta).unwrap();
            assert!((d.finite_difference - j.value).abs() < 1e-5, "{d:?}");
        }
        assert!(rep.residual.relative < 1e-2, "{:?}", rep.residual);
    }
}
