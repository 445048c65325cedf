use std::f64::consts::PI;

use proptest::prelude::*;

use torsionlab::calibration::{Calibration, Family};
use torsionlab::closed_forms::{error_budget, torsion_rectangle, v1_unchecked};
use torsionlab::domain::{find_property_max, length_scale, worst_error};
use torsionlab::experiments::{line_fit, Verdict};
use torsionlab::kernel::{approx_green, derivative_jump, expected_jump, f_n, ode_residual, KernelContext};
use torsionlab::ConvexDomain;

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn triangle(n: f64) -> ConvexDomain {
    ConvexDomain::custom("right triangle", 0.0, n, |_| 0.0, move |x| 1.0 - x / n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundaries_are_ordered_and_heights_normalized(f in family(), n in 8.0f64..256.0, s in 0.0f64..=1.0) {
        let d = f.build(n).unwrap();
        let x = d.a() + s * (d.b() - d.a());
        prop_assert!(d.f1(x) <= d.f2(x) + 1e-15);
        let h = d.h(x);
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&h), "h({x}) = {h}");
    }

    #[test]
    fn rectangle_length_scale_doubles(n in 2.0f64..200.0) {
        let l1 = length_scale(&ConvexDomain::rectangle(n).unwrap()).l;
        let l2 = length_scale(&ConvexDomain::rectangle(2.0 * n).unwrap()).l;
        prop_assert_eq!(l2, 2.0 * l1);
    }

    #[test]
    fn triangle_length_scale_grows_like_cube_root(n in 8.0f64..4096.0) {
        let l1 = length_scale(&triangle(n)).l;
        let l2 = length_scale(&triangle(2.0 * n)).l;
        prop_assert!((l2 / l1 - 2f64.cbrt()).abs() < 1e-3, "{l1} {l2}");
    }

    #[test]
    fn wide_slices_stay_thick_across_half_their_reach(
        f in family(), n in 16.0f64..128.0, s in 0.0f64..=1.0, t in -1.0f64..=1.0,
    ) {
        let d = f.build(n).unwrap();
        let xt = d.a() + s * (d.b() - d.a());
        prop_assume!(d.h(xt) >= 0.5);
        let reach = 0.5 * d.dist_to_ends(xt).unwrap();
        let xp = xt + t * reach;
        prop_assert!(d.h(xp) >= 0.25 - 1e-12, "h({xp}) = {}", d.h(xp));
    }

    #[test]
    fn rectangle_series_satisfies_the_equation(n in 2.0f64..12.0, sx in 0.05f64..0.95, y in 0.05f64..0.95) {
        let x = (sx - 0.5) * n;
        let e = 1e-3;
        let v = |x: f64, y: f64| torsion_rectangle(n, x, y, 1e-14).unwrap();
        let lap = (v(x + e, y) + v(x - e, y) + v(x, y + e) + v(x, y - e) - 4.0 * v(x, y)) / (e * e);
        prop_assert!((lap + 1.0).abs() < 1e-4, "laplacian {lap}");
    }

    #[test]
    fn rectangle_series_vanishes_on_the_ends(n in 1.0f64..20.0, y in 0.0f64..=1.0) {
        for x in [-0.5 * n, 0.5 * n] {
            prop_assert!(torsion_rectangle(n, x, y, 1e-10).unwrap().abs() <= 1e-10);
        }
    }

    #[test]
    fn cross_section_solution_is_nonnegative_and_zero_on_graphs(
        f in family(), n in 8.0f64..128.0, s in 0.0f64..=1.0, t in 0.0f64..=1.0,
    ) {
        let d = f.build(n).unwrap();
        let x = d.a() + s * (d.b() - d.a());
        let (f1, f2) = (d.f1(x), d.f2(x));
        prop_assert!(v1_unchecked(&d, x, f1 + t * (f2 - f1)) >= -1e-15);
        prop_assert_eq!(v1_unchecked(&d, x, f1), 0.0);
        prop_assert_eq!(v1_unchecked(&d, x, f2), 0.0);
    }

    #[test]
    fn rectangle_error_budget_decreases_with_distance(n in 4.0f64..40.0, s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
        let d = ConvexDomain::rectangle(n).unwrap();
        let half = 0.5 * n - 1.0;
        let (x1, x2) = (half * s1.min(s2), half * s1.max(s2));
        let e1 = error_budget(&d, x1, PI, 1.0).unwrap().total;
        let e2 = error_budget(&d, x2, PI, 1.0).unwrap().total;
        prop_assert!(e1 <= e2, "{e1} at d larger than {e2}");
    }

    #[test]
    fn kernel_modes_solve_their_ode(
        d in 2.0f64..20.0, ht in 0.5f64..=1.0, n in 1usize..=5, u in 0.05f64..0.95, w in 0.05f64..0.95,
    ) {
        let ctx = KernelContext::from_parts(0.5 * d, ht, d).unwrap();
        let (x, xp) = (u * d, w * d);
        prop_assume!((x - xp).abs() > 0.05);
        prop_assert!(ode_residual(&ctx, n, x, xp, 1e-3 * ht / n as f64) <= 1e-5);
        let jump = derivative_jump(&ctx, n, xp) / expected_jump(&ctx);
        prop_assert!((jump - 1.0).abs() <= 1e-6, "jump ratio {jump}");
        prop_assert!((f_n(&ctx, n, x, xp) - f_n(&ctx, n, xp, x)).abs() <= 1e-12);
    }

    #[test]
    fn approximate_green_function_is_symmetric(
        f in family(), n in 16.0f64..128.0, a in -1.0f64..=1.0, b in -1.0f64..=1.0, y1 in 0.05f64..0.95, y2 in 0.05f64..0.95,
    ) {
        let d = f.build(n).unwrap();
        let ctx = KernelContext::new(&d, d.x_bar()).unwrap();
        let reach = 0.4 * ctx.d_tilde;
        let (xp, xq) = (d.x_bar() + a * reach, d.x_bar() + b * reach);
        prop_assume!((xp - xq).abs() > 1e-3);
        let p = [xp, d.f1(xp) + y1 * d.h(xp)];
        let q = [xq, d.f1(xq) + y2 * d.h(xq)];
        let g1 = approx_green(&d, &ctx, p, q).unwrap();
        let g2 = approx_green(&d, &ctx, q, p).unwrap();
        prop_assert!((g1 - g2).abs() <= 1e-10, "{g1} vs {g2}");
    }

    #[test]
    fn line_fit_recovers_power_laws(slope in -4.0f64..4.0, c in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = [16.0f64, 32.0, 64.0, 128.0].iter().map(|n| (n.ln(), (c * n.powf(slope)).ln())).collect();
        let fit = line_fit(&pts);
        prop_assert!((fit.slope - slope).abs() < 1e-9);
    }

    #[test]
    fn verdicts_are_recomputable(m in -10.0f64..10.0, lo in -10.0f64..10.0, w in 0.0f64..10.0) {
        let v = Verdict::within("x", m, lo, lo + w);
        let back: Verdict = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        prop_assert_eq!(back.recheck(), v.passed);
        prop_assert_eq!(v.passed, m >= lo && m <= lo + w);
    }
}

proptest! {
    // each case sweeps the error functional on a tenfold denser grid
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn certificates_survive_denser_resampling(n in 32.0f64..96.0) {
        let d = ConvexDomain::omega2(n).unwrap();
        let k = Calibration::builtin().constants(Family::Omega2).unwrap().clone();
        let m = 8.0f64.min(0.25 * n);
        prop_assume!(m > 2.0);
        if let Some(c) = find_property_max(&d, m, k.c1, k.big_c1).unwrap() {
            let points = 10 * (((c.x_plus - c.x_minus) * 16.0).ceil() as usize + 1).max(33);
            let (worst, at) = worst_error(&d, c.x_minus, c.x_plus, points, k.c1, k.big_c1, None).unwrap();
            prop_assert!(worst <= c.delta / 100.0, "error {worst} at {at} above {}", c.delta / 100.0);
            let level = 1.0 - 2.0 * c.delta;
            for (x, clipped) in [(c.x_minus, c.clipped_minus), (c.x_plus, c.clipped_plus)] {
                if clipped {
                    prop_assert_eq!(d.h(x), d.h(d.x_bar()));
                    prop_assert!(((x - d.x_bar()).abs() - m).abs() < 1e-12);
                } else {
                    prop_assert!((d.h(x) - level).abs() < 1e-9, "h({x}) = {} vs {level}", d.h(x));
                }
            }
        }
    }
}

#[test]
fn approximate_green_function_decays_exponentially() {
    let d = ConvexDomain::omega2(64.0).unwrap();
    let ctx = KernelContext::new(&d, 0.0).unwrap();
    let q = [0.0, 0.5];
    let pts: Vec<(f64, f64)> = (0..=16)
        .map(|k| 1.0 + 0.25 * k as f64)
        .map(|t| (t, approx_green(&d, &ctx, [t, 0.5 * d.h(t)], q).unwrap().abs().ln()))
        .collect();
    let fit = line_fit(&pts);
    assert!(fit.slope <= -1.0, "slope {}", fit.slope);
}

#[test]
fn rectangle_green_function_has_a_logarithmic_singularity() {
    use torsionlab::kernel::rect_green_single_series;
    let q = [2.0, 0.5];
    let pts: Vec<(f64, f64)> = (0..=12)
        .map(|k| 10f64.powf(-4.0 + 0.25 * k as f64))
        .map(|r| ((1.0 / r).ln(), rect_green_single_series(1.0, 4.0, [2.0 + r, 0.5], q).unwrap().abs()))
        .collect();
    let fit = line_fit(&pts);
    assert!(fit.slope > 0.0 && fit.slope <= 1.0, "B = {}", fit.slope);
    // the sharp constant is 1/(2 pi)
    assert!((fit.slope - 0.5 / PI).abs() < 1e-2, "B = {}", fit.slope);
}
