//! End-to-end acceptance checks. Each test prints one PASS/FAIL line straight
//! to stderr (bypassing the harness capture) and then asserts its checks.
//! Tests hold a shared lock so that timings are not skewed by each other.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use torsionlab::calibration::Family;
use torsionlab::closed_forms::{torsion_ellipse_domain, torsion_rectangle};
use torsionlab::experiments::{
    exp_approx_convergence, exp_directional_hessian, exp_fm_inequality, exp_hessian_scaling, exp_max_value_sandwich,
    exp_maxima_separation, trace_identity, verify_kernel, ExperimentReport, Settings, Verdict,
};
use torsionlab::solver::{solve_torsion, ScalarField};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn describe(v: &Verdict) -> String {
    let bounds = match (v.lo, v.hi) {
        (Some(lo), Some(hi)) => format!("in [{lo:e}, {hi:e}]"),
        (Some(lo), None) => format!(">= {lo:e}"),
        (None, Some(hi)) => format!("<= {hi:e}"),
        (None, None) => String::new(),
    };
    format!("{} {}: {:e} {bounds}", if v.passed { "ok  " } else { "FAIL" }, v.criterion, v.measured)
}

fn conclude(number: u32, title: &str, checks: &[Verdict]) {
    let passed = checks.iter().filter(|v| v.passed).count();
    let ok = !checks.is_empty() && passed == checks.len();
    let line = format!(
        "acceptance {number:>2} {}: {title} ({passed}/{} checks)\n",
        if ok { "PASS" } else { "FAIL" },
        checks.len()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    let detail: Vec<String> = checks.iter().map(describe).collect();
    assert!(ok, "criterion {number} failed:\n  {}", detail.join("\n  "));
}

fn select(report: &ExperimentReport, prefixes: &[&str]) -> Vec<Verdict> {
    report.verdicts.iter().filter(|v| prefixes.iter().any(|p| v.criterion.starts_with(p))).cloned().collect()
}

fn settings() -> &'static Settings {
    static S: OnceLock<Settings> = OnceLock::new();
    S.get_or_init(Settings::default)
}

fn kernel_report() -> &'static ExperimentReport {
    static R: OnceLock<ExperimentReport> = OnceLock::new();
    R.get_or_init(|| verify_kernel(settings()).expect("kernel verification runs"))
}

/// Every torsion field solved by this suite.
fn solved_fields() -> &'static [(String, ScalarField)] {
    static F: OnceLock<Vec<(String, ScalarField)>> = OnceLock::new();
    F.get_or_init(|| {
        let coarse = 1.0 / 64.0;
        let fine = 1.0 / 128.0;
        let mut cases = vec![(Family::Ellipse, 8.0, coarse), (Family::Ellipse, 8.0, fine), (Family::Rectangle, 4.0, coarse)];
        cases.extend([16.0, 32.0, 64.0].map(|n| (Family::Omega2, n, coarse)));
        cases.extend([16.0, 32.0, 64.0].map(|n| (Family::Omega1, n, coarse)));
        cases.extend([32.0, 64.0, 128.0].map(|n| (Family::Omega2, n, fine)));
        cases
            .into_iter()
            .map(|(f, n, h)| {
                let field = solve_torsion(&f.build(n).unwrap(), h).unwrap();
                (format!("{f}({n}), h=1/{}", (1.0 / h).round()), field)
            })
            .collect()
    })
}

fn max_node_error(field: &ScalarField, exact: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let g = &field.grid;
    g.nodes
        .par_iter()
        .map(|&node| {
            let (i, j) = g.ij(node);
            (field.values[node] - exact(g.x(i), g.y(j))).abs()
        })
        .reduce(|| 0.0, f64::max)
}

#[test]
fn ellipse_solution_is_second_order_accurate() {
    let _g = serial();
    let t = Instant::now();
    let d = Family::Ellipse.build(8.0).unwrap();
    let exact = |x: f64, y: f64| torsion_ellipse_domain(8.0, x, y).unwrap();
    let coarse = max_node_error(&solve_torsion(&d, 1.0 / 64.0).unwrap(), exact);
    let elapsed = t.elapsed().as_secs_f64();
    let fine = max_node_error(&solve_torsion(&d, 1.0 / 128.0).unwrap(), exact);
    conclude(
        1,
        "ellipse exactness",
        &[
            Verdict::at_most("max error vs closed form, h=1/64", coarse, 5e-4),
            Verdict::within("error ratio h=1/64 to h=1/128", coarse / fine, 3.0, 5.0),
            Verdict::at_most("solve and compare at h=1/64, seconds", elapsed, 60.0),
        ],
    );
}

#[test]
fn rectangle_solution_matches_the_series() {
    let _g = serial();
    let t = Instant::now();
    let field = solve_torsion(&Family::Rectangle.build(4.0).unwrap(), 1.0 / 64.0).unwrap();
    let err = max_node_error(&field, |x, y| torsion_rectangle(4.0, x, y, 1e-12).unwrap());
    conclude(
        2,
        "rectangle series cross-check",
        &[
            Verdict::at_most("max error vs series (tol 1e-12)", err, 5e-4),
            Verdict::at_most("seconds", t.elapsed().as_secs_f64(), 60.0),
        ],
    );
}

#[test]
fn poisson_summation_identity_holds() {
    let _g = serial();
    conclude(3, "Poisson summation identity", &select(kernel_report(), &["exponential side", "polynomial side"]));
}

#[test]
fn one_dimensional_kernels_have_green_function_structure() {
    let _g = serial();
    conclude(4, "kernel structure", &select(kernel_report(), &["kernel "]));
}

#[test]
fn kernel_integral_reconstructs_the_cross_section_solution() {
    let _g = serial();
    let checks = select(kernel_report(), &["rectangle(10) reconstruction", "omega2(64) reconstruction"]);
    conclude(5, "reconstruction of v1", &checks);
}

#[test]
fn approximation_error_decays_like_inverse_square() {
    let _g = serial();
    let t = Instant::now();
    let r = exp_approx_convergence(Family::Omega2, &[16.0, 32.0, 64.0], settings()).unwrap();
    let mut checks = r.verdicts.clone();
    checks.push(Verdict::at_most("seconds", t.elapsed().as_secs_f64(), 600.0));
    conclude(6, "approximation scaling", &checks);
}

#[test]
fn torsion_and_eigenfunction_maxima_separate() {
    let _g = serial();
    let r = exp_maxima_separation(Family::Omega1, &[16.0, 32.0, 64.0], settings()).unwrap();
    conclude(7, "maxima separation", &r.verdicts);
}

#[test]
fn hessian_and_superlevel_diameter_scale() {
    let _g = serial();
    let r = exp_hessian_scaling(Family::Omega2, &[32.0, 64.0, 128.0], settings()).unwrap();
    conclude(8, "Hessian scaling", &select(&r, &["slope", "superlevel diameter"]));
}

#[test]
fn maximum_value_is_sandwiched_below_one_eighth() {
    let _g = serial();
    let slack = settings().calibration.thresholds.sandwich_slack;
    let r = exp_max_value_sandwich(Family::Omega2, 64.0, None, settings()).unwrap();
    let mut checks = r.verdicts.clone();
    for (label, field) in solved_fields() {
        checks.push(Verdict::at_most(format!("max of v, {label}"), field.max_value(), 0.125 + slack));
    }
    conclude(9, "max-value sandwich", &checks);
}

#[test]
fn fitted_hessian_trace_is_minus_one() {
    let _g = serial();
    let th = &settings().calibration.thresholds;
    let checks: Vec<Verdict> = solved_fields()
        .iter()
        .map(|(label, field)| {
            let t = trace_identity(field, th.trace_probes).unwrap();
            assert_eq!(t.probes.len(), th.trace_probes);
            Verdict::at_most(format!("|trace + 1|, {label}"), t.max_deviation, th.trace_tol)
        })
        .collect();
    conclude(10, "Hessian trace identity", &checks);
}

#[test]
fn ground_state_is_dominated_by_scaled_torsion() {
    let _g = serial();
    let r = exp_fm_inequality(settings()).unwrap();
    conclude(11, "FM inequality", &r.verdicts);
}

#[test]
fn directional_second_derivatives_are_comparable() {
    let _g = serial();
    let r = exp_directional_hessian(Family::Omega2, 64.0, None, settings()).unwrap();
    conclude(12, "directional Hessian comparability", &select(&r, &["max rho", "-d2v/dy2"]));
}
