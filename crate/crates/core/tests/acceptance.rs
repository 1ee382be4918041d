//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

use std::time::Instant;

use polyharmonic::cli::load_preset;
use polyharmonic::cli::verify::{self, all_pass, Check};
use polyharmonic::multiindex::MultiIndex;
use polyharmonic::solver::{picard_solve, GridField, HSpec, JetSpec, SolutionReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_checks(checks: Result<Vec<Check>, impl std::fmt::Display>) -> Outcome {
    match checks {
        Ok(c) => {
            let failing: Vec<String> = c
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{} ({:.4e} vs bound {:.4e})", c.name, c.value, c.bound))
                .collect();
            let detail = if failing.is_empty() { format!("{} checks", c.len()) } else { failing.join("; ") };
            Outcome { pass: all_pass(&c), detail }
        }
        Err(e) => Outcome { pass: false, detail: e.to_string() },
    }
}

fn concat(parts: Vec<Result<Vec<Check>, verify::VerifyError>>) -> Result<Vec<Check>, verify::VerifyError> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn mi(v: &[u32]) -> MultiIndex {
    MultiIndex::from_slice(v)
}

fn jet(rep: &SolutionReport, beta: MultiIndex) -> f64 {
    rep.jets.iter().find(|j| j.component == 1 && j.beta == beta).map_or(f64::NAN, |j| j.finite_difference)
}

fn sup_diff(a: &GridField, b: &GridField) -> f64 {
    a.values[0].iter().zip(&b.values[0]).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn laplace_usq() -> Outcome {
    let preset = load_preset("laplace_usq").unwrap();
    let sys = preset.system.compile().unwrap();
    let cfg = preset.config;
    let run = |beta: &[u32]| {
        let mut c = cfg.clone();
        c.h = vec![HSpec::Monomial { b: 0.1, beta: mi(beta) }];
        picard_solve(&sys, &c)
    };
    let (u, rep) = match run(&[1, 1, 0]) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let (w, _) = match run(&[1, 0, 1]) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let low = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]].iter().fold(0.0f64, |m, b| m.max(jet(&rep, mi(b)).abs()));
    let d110 = jet(&rep, mi(&[1, 1, 0]));
    let apart = sup_diff(&u, &w);
    let pass = rep.converged
        && rep.iterations <= 40
        && rep.residual.relative < 1e-2
        && low < 1e-5 * u.sup_norm()
        && (d110 - 0.1).abs() < 1e-4
        && apart > 10.0 * cfg.tol;
    Outcome {
        pass,
        detail: format!(
            "converged {} in {} iterations, residual {:.2e}, low jets {:.2e}, D^(1,1,0)u(0) = {:.8}, sup|u - w| = {:.3e}",
            rep.converged, rep.iterations, rep.residual.relative, low, d110, apart
        ),
    }
}

fn biharmonic() -> Outcome {
    let preset = load_preset("biharmonic_abs").unwrap();
    let sys = preset.system.compile().unwrap();
    let (u, rep) = match picard_solve(&sys, &preset.config) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let low = rep.jets.iter().filter(|j| j.beta.order() <= 3).fold(0.0f64, |m, j| m.max(j.finite_difference.abs()));
    let pass = rep.converged && rep.residual.relative < 5e-2 && low < 1e-5 * u.sup_norm();
    Outcome {
        pass,
        detail: format!(
            "converged {} in {} iterations, residual {:.3e}, order <= 3 jets {:.2e} (sup {:.3e})",
            rep.converged, rep.iterations, rep.residual.relative, low, u.sup_norm()
        ),
    }
}

fn initial_value() -> Outcome {
    let preset = load_preset("laplace_usq").unwrap();
    let sys = preset.system.compile().unwrap();
    let mut cfg = preset.config;
    cfg.radius = 0.3;
    cfg.h = vec![HSpec::Monomial { b: 0.05, beta: mi(&[1, 1, 0]) }];
    let jets = vec![
        JetSpec { component: 1, beta: mi(&[0, 0, 0]), value: 0.2 },
        JetSpec { component: 1, beta: mi(&[1, 0, 0]), value: -0.1 },
        JetSpec { component: 1, beta: mi(&[0, 1, 0]), value: 0.0 },
        JetSpec { component: 1, beta: mi(&[0, 0, 1]), value: 0.3 },
    ];
    cfg.jets = Some(jets.clone());
    let (_, rep) = match picard_solve(&sys, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let worst = jets.iter().fold(0.0f64, |m, j| m.max((jet(&rep, j.beta) - j.value).abs()));
    Outcome {
        pass: rep.converged && worst < 1e-5,
        detail: format!("converged {}, worst jet error {:.2e}, residual {:.2e}", rep.converged, worst, rep.residual.relative),
    }
}

fn main() {
    type Criterion = (&'static str, f64, Box<dyn Fn() -> Outcome>);
    let criteria: Vec<Criterion> = vec![
        (
            "closed-form boundary moment, n = 3, 4, 5",
            30.0,
            Box::new(|| from_checks(concat((3..=5).map(|n| verify::appendix_b(n, 24, 0)).collect()))),
        ),
        ("Gegenbauer norm and orthogonality", 5.0, Box::new(|| from_checks(Ok::<_, String>(verify::gegenbauer_norms())))),
        ("boundary potential of monomials of degree <= 4 is polynomial", 120.0, Box::new(|| from_checks(verify::residue(3, 4, 24, 0)))),
        (
            "boundary and annulus vanishing with negative controls",
            120.0,
            Box::new(|| from_checks(concat(vec![verify::corollary(3, 24, 0), verify::annulus(3, 32, None)]))),
        ),
        (
            "Poisson oracle and correction signs",
            60.0,
            Box::new(|| from_checks(verify::poisson(3, 16, 0).map(|(c, _)| c))),
        ),
        ("D^beta N vs finite differences and nesting independence", 180.0, Box::new(|| from_checks(verify::derivatives(3, 20)))),
        ("principal value independent of the ball", 60.0, Box::new(|| from_checks(verify::pv_independence(3, 20)))),
        ("sphere-distance and geodesic-arc inequalities", 60.0, Box::new(|| from_checks(Ok::<_, String>(verify::lemmas(0))))),
        ("Picard solver for Laplace u = u^2", 300.0, Box::new(laplace_usq)),
        ("biharmonic |u|^2.5 solver", 600.0, Box::new(biharmonic)),
        ("initial-value round trip", 300.0, Box::new(initial_value)),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = out.pass && secs < *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {name} ({secs:.1} s of {budget:.0} s): {}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
