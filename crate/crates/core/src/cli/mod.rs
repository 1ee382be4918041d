//! Command-line front end: verification suites, residue constants, PV and
//! assembled derivatives at a point, and the Picard solver. Every output is
//! JSON (fields as CSV); exit codes are 0 on success, 1 on a failed check or
//! a non-converged solve, 2 on usage and configuration errors.

pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::multiindex::MultiIndex;
use crate::polys::Polynomial;
use crate::potential::{d_beta_newtonian, pv_derivative, CompactBump, GaussianBump, PolyField, PotentialCtx, ScalarField};
use crate::residue::{closed_form_moment, constants_table, ResidueConstant};
use crate::solver::{
    picard_solve, select_parameters, JetSpec, ParameterChoice, SelectionMode, SolutionReport, SolveConfig, SolverError,
    SystemSpec,
};
use crate::specfun::{FundamentalSolution, KernelConvention};
use verify::{all_pass, Check, VerifyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "polyharmonic", version, about = "Residue identities, Newtonian-potential derivatives and a polyharmonic Picard solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Solve Δ^m u = a(x, u, …, ∇^{2m}u) by Picard iteration.
    Solve(SolveArgs),
    /// Tabulate the residue constants C(β, μ, j).
    Constants(ConstantsArgs),
    /// Principal-value derivative of the Newtonian potential at a point.
    Pv(PointArgs),
    /// Assembled derivative D^βN(f) at a point.
    Dn(PointArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Suite {
    Residue,
    Corollary,
    Annulus,
    #[value(name = "appendixB")]
    #[serde(rename = "appendixB")]
    AppendixB,
    Potential,
    Lemmas,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub suite: Suite,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Quadrature level; each suite has its own default.
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Highest monomial degree for the residue suite.
    #[arg(long, default_value_t = 4)]
    pub deg: u32,
    /// Single annulus case: the multi-index β, e.g. 1,1,0.
    #[arg(long)]
    pub beta: Option<String>,
    /// Single annulus case: "1" or the exponents of a monomial.
    #[arg(long)]
    pub f: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, required_unless_present = "preset")]
    pub system: Option<PathBuf>,
    #[arg(long, required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// A bundled preset (laplace_usq, biharmonic_abs, gradient_H) or a path
    /// to a {system, config} file.
    #[arg(long, conflicts_with_all = ["system", "config"])]
    pub preset: Option<String>,
    /// Prescribed jets [{component, beta, value}]: initial-value mode.
    #[arg(long)]
    pub jets: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Overrides the configured successive-difference tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Check the hypotheses of a parameter-selection mode and solve with the
    /// (R, γ) it selects.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    SmallBall,
    Autonomous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Delta,
    Raw,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub max_order: u32,
    #[arg(long, value_enum, default_value_t = ConventionArg::Delta)]
    pub convention: ConventionArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    /// JSON {field, beta, x, level}.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub level: Option<usize>,
    /// Fail (exit 1) when the refinement difference exceeds this.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A field description for `pv` and `dn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSpec {
    Polynomial {
        poly: Polynomial,
        #[serde(rename = "R")]
        radius: f64,
    },
    Gaussian {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
        #[serde(rename = "R")]
        radius: f64,
    },
    Bump {
        center: Vec<f64>,
        support_radius: f64,
        power: u32,
        amplitude: f64,
        #[serde(rename = "R")]
        radius: f64,
    },
}

impl FieldSpec {
    pub fn build(&self) -> Box<dyn ScalarField> {
        match self {
            FieldSpec::Polynomial { poly, radius } => Box::new(PolyField::new(poly.clone(), *radius)),
            FieldSpec::Gaussian { center, width, amplitude, radius } => {
                Box::new(GaussianBump { center: center.clone(), width: *width, amplitude: *amplitude, radius: *radius })
            }
            FieldSpec::Bump { center, support_radius, power, amplitude, radius } => {
                Box::new(CompactBump::new(center.clone(), *support_radius, *power, *amplitude, *radius))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInput {
    pub field: FieldSpec,
    pub beta: MultiIndex,
    pub x: Vec<f64>,
    #[serde(default)]
    pub level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutput {
    pub beta: MultiIndex,
    pub x: Vec<f64>,
    pub level: usize,
    /// At 1.5× the level.
    pub value: f64,
    /// |refined − base|.
    pub error_estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub n: usize,
    pub level: usize,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<crate::potential::SignCalibration>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub n: usize,
    pub max_order: u32,
    pub convention: KernelConvention,
    /// Coefficient of x_1 in I(0, 0, 1)(x), which is linear rather than
    /// constant in x.
    pub boundary_moment_x1_coefficient: f64,
    pub constants: Vec<ResidueConstant>,
}

/// A bundled or user-supplied pair of system and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub system: SystemSpec,
    pub config: SolveConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput<'a> {
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<&'a ParameterChoice>,
    #[serde(flatten)]
    pub report: &'a SolutionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one run, written next to the main output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<FileDigest>,
    pub exit_code: i32,
}

pub const PRESETS: [(&str, &str); 3] = [
    ("laplace_usq", include_str!("../../presets/laplace_usq.json")),
    ("biharmonic_abs", include_str!("../../presets/biharmonic_abs.json")),
    ("gradient_H", include_str!("../../presets/gradient_H.json")),
];

pub fn load_preset(name: &str) -> Result<Preset, String> {
    let text = match PRESETS.iter().find(|(k, _)| *k == name) {
        Some((_, t)) => t.to_string(),
        None => fs::read_to_string(name).map_err(|e| format!("preset '{name}': {e}"))?,
    };
    serde_json::from_str(&text).map_err(|e| format!("preset '{name}': {e}"))
}

fn digest(path: &Path) -> Option<FileDigest> {
    let bytes = fs::read(path).ok()?;
    Some(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())? + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Run {
    subcommand: &'static str,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    start: Instant,
}

impl Run {
    fn new(subcommand: &'static str, seed: Option<u64>) -> Self {
        Run { subcommand, inputs: Vec::new(), outputs: Vec::new(), seed, start: Instant::now() }
    }

    /// Writes `<out>.manifest.json` when there is an output file.
    fn input(&mut self, path: &Path) {
        self.inputs.extend(digest(path));
    }

    fn finish(self, code: i32) -> i32 {
        let Some(main) = self.outputs.first() else { return code };
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            inputs: self.inputs,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            outputs: self.outputs.iter().filter_map(|p| digest(p)).collect(),
            exit_code: code,
        };
        if let Err(e) = emit(Some(&manifest_path(main)), &manifest) {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
        code
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Verify(a) => cmd_verify(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Constants(a) => cmd_constants(&a),
        Command::Pv(a) => cmd_point(&a, true),
        Command::Dn(a) => cmd_point(&a, false),
    }
}

fn usage(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_USAGE
}

/// Run one suite and return its report.
pub fn verify_suite(a: &VerifyArgs) -> Result<VerifyReport, VerifyError> {
    if !(3..=5).contains(&a.n) {
        return Err(VerifyError::Config(format!("n = {} is outside 3..=5", a.n)));
    }
    let default_level = match a.suite {
        Suite::Annulus => 32,
        Suite::Potential => 16,
        _ => 24,
    };
    let level = a.level.unwrap_or(default_level);
    let mut calibration = None;
    let checks = match a.suite {
        Suite::Residue => verify::residue(a.n, a.deg, level, a.seed)?,
        Suite::Corollary => verify::corollary(a.n, level, a.seed)?,
        Suite::Annulus => {
            let case = match (&a.beta, &a.f) {
                (Some(b), Some(f)) => Some((verify::parse_multi_index(a.n, b)?, verify::parse_monomial_field(a.n, f)?)),
                (None, None) => None,
                _ => return Err(VerifyError::Config("--beta and --f go together".into())),
            };
            verify::annulus(a.n, level, case)?
        }
        Suite::AppendixB => {
            let mut c = verify::appendix_b(a.n, level, a.seed)?;
            c.extend(verify::gegenbauer_norms());
            c
        }
        Suite::Potential => {
            let (mut c, cal) = verify::poisson(a.n, level, a.seed)?;
            calibration = Some(cal);
            c.extend(verify::derivatives(a.n, level.max(20))?);
            c.extend(verify::pv_independence(a.n, level.max(20))?);
            c
        }
        Suite::Lemmas => verify::lemmas(a.seed),
    };
    Ok(VerifyReport { suite: a.suite, n: a.n, level, seed: a.seed, pass: all_pass(&checks), checks, calibration })
}

fn cmd_verify(a: &VerifyArgs) -> i32 {
    let mut run = Run::new("verify", Some(a.seed));
    let report = match verify_suite(a) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    if let Err(e) = emit(a.out.as_deref(), &report) {
        return usage(e);
    }
    run.outputs.extend(a.out.clone());
    run.finish(if report.pass { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_constants(a: &ConstantsArgs) -> i32 {
    if !(3..=5).contains(&a.n) || a.max_order > 6 {
        return usage("constants need n in 3..=5 and max-order <= 6");
    }
    let run = Run::new("constants", None);
    let fs = match a.convention {
        ConventionArg::Delta => FundamentalSolution::delta(a.n),
        ConventionArg::Raw => FundamentalSolution::raw(a.n),
    };
    let report = ConstantsReport {
        n: a.n,
        max_order: a.max_order,
        convention: fs.convention,
        boundary_moment_x1_coefficient: fs.c * closed_form_moment(a.n, 1.0),
        constants: constants_table(a.n, a.max_order, &fs),
    };
    if let Err(e) = emit(a.out.as_deref(), &report) {
        return usage(e);
    }
    let mut run = run;
    run.outputs.extend(a.out.clone());
    run.finish(EXIT_OK)
}

/// Evaluate `pv` or `dn` at the input's level and at 1.5× that level.
pub fn point_value(input: &PointInput, level: usize, pv: bool) -> Result<PointOutput, String> {
    let f = input.field.build();
    if input.x.len() != f.dim() || input.beta.dim() != f.dim() {
        return Err("field, beta and x dimensions differ".into());
    }
    let ctx = PotentialCtx::new(f.dim(), level);
    let eval = |c: &PotentialCtx| {
        if pv {
            pv_derivative(c, &input.beta, f.as_ref(), &input.x)
        } else {
            d_beta_newtonian(c, &input.beta, f.as_ref(), &input.x)
        }
    };
    let coarse = eval(&ctx).map_err(|e| e.to_string())?;
    let fine = eval(&ctx.refined()).map_err(|e| e.to_string())?;
    Ok(PointOutput { beta: input.beta, x: input.x.clone(), level, value: fine, error_estimate: (fine - coarse).abs() })
}

fn cmd_point(a: &PointArgs, pv: bool) -> i32 {
    let mut run = Run::new(if pv { "pv" } else { "dn" }, None);
    run.input(&a.input);
    let input: PointInput = match read_json(&a.input) {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    let level = a.level.or(input.level).unwrap_or(16);
    let out = match point_value(&input, level, pv) {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    if let Err(e) = emit(a.out.as_deref(), &out) {
        return usage(e);
    }
    run.outputs.extend(a.out.clone());
    let ok = a.tol.is_none_or(|t| out.error_estimate <= t);
    run.finish(if ok { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_solve(a: &SolveArgs) -> i32 {
    let mut run = Run::new("solve", a.seed);
    let preset = match (&a.preset, &a.system, &a.config) {
        (Some(p), _, _) => {
            match PRESETS.iter().find(|(k, _)| k == p) {
                Some((k, text)) => run.inputs.push(FileDigest {
                    path: format!("preset:{k}"),
                    sha256: hex::encode(Sha256::digest(text.as_bytes())),
                }),
                None => run.input(Path::new(p)),
            }
            load_preset(p)
        }
        (None, Some(s), Some(c)) => {
            run.input(s);
            run.input(c);
            read_json::<SystemSpec>(s).and_then(|system| Ok(Preset { system, config: read_json(c)? }))
        }
        _ => Err("either --preset or both --system and --config are required".into()),
    };
    let Preset { system, mut config } = match preset {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    if let Some(j) = &a.jets {
        run.input(j);
        match read_json::<Vec<JetSpec>>(j) {
            Ok(v) => config.jets = Some(v),
            Err(e) => return usage(e),
        }
    }
    if let Some(t) = a.tol {
        config.tol = t;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    run.seed = Some(config.seed);
    let sys = match system.compile() {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let parameters = match a.mode {
        None => None,
        Some(m) => {
            let mode = match m {
                ModeArg::SmallBall => SelectionMode::SmallBall,
                ModeArg::Autonomous => SelectionMode::AutonomousLargeR(config.radius),
            };
            match select_parameters(&sys, mode, 2000, config.seed) {
                Ok(p) => {
                    config.radius = p.radius;
                    config.gamma = p.gamma;
                    Some(p)
                }
                Err(e) => return usage(e),
            }
        }
    };
    let (field, report, code) = match picard_solve(&sys, &config) {
        Ok((f, r)) => {
            let code = if r.converged { EXIT_OK } else { EXIT_FAIL };
            (Some(f), r, code)
        }
        Err(SolverError::Diverged(r)) => (None, *r, EXIT_FAIL),
        Err(e) => return usage(e),
    };
    let out = SolveOutput { converged: report.converged, parameters: parameters.as_ref(), report: &report };
    if let Err(e) = emit(a.out.as_deref(), &out) {
        return usage(e);
    }
    run.outputs.extend(a.out.clone());
    if let (Some(path), Some(f)) = (&a.field, &field) {
        let written = fs::File::create(path).and_then(|file| f.write_csv(std::io::BufWriter::new(file)));
        if let Err(e) = written {
            return usage(format!("{}: {e}", path.display()));
        }
        run.outputs.push(path.clone());
    }
    run.finish(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_compile() {
        for (name, _) in PRESETS {
            let p = load_preset(name).unwrap();
            p.system.compile().unwrap();
        }
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["polyharmonic", "verify", "nonsense"]), EXIT_USAGE);
        assert_eq!(run(["polyharmonic", "constants", "--max-order", "7"]), EXIT_USAGE);
        assert_eq!(run(["polyharmonic", "verify", "lemmas", "--n", "9"]), EXIT_USAGE);
    }

    #[test]
    fn field_spec_json() {
        let text = r#"{"type":"bump","center":[0.1,0,0],"support_radius":0.5,"power":4,"amplitude":1,"R":1}"#;
        let f: FieldSpec = serde_json::from_str(text).unwrap();
        assert!(matches!(f, FieldSpec::Bump { power: 4, .. }));
        let p: FieldSpec = serde_json::from_str(r#"{"type":"polynomial","poly":{"dim":3,"terms":[{"idx":[1,0,0],"c":2}]},"R":1}"#).unwrap();
        assert_eq!(p.build().value(&[0.5, 0.0, 0.0]), 1.0);
    }
}
