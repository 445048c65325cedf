use torsionlab::calibration::Family;
use torsionlab::closed_forms::torsion_rectangle;
use torsionlab::experiments::{
    exp_directional_hessian, exp_max_value_sandwich, exp_torsion_near_eigenmax, ExperimentReport, Settings,
};
use torsionlab::Error;

#[test]
fn reports_are_bit_for_bit_reproducible() {
    let s = Settings::default();
    let a = exp_max_value_sandwich(Family::Omega2, 32.0, None, &s).unwrap();
    let b = exp_max_value_sandwich(Family::Omega2, 32.0, None, &s).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn written_verdicts_can_be_rechecked() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = exp_max_value_sandwich(Family::Omega2, 32.0, None, &Settings::default()).unwrap();
    r.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("max_value_sandwich.json")).unwrap();
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert!(!back.verdicts.is_empty());
    for v in &back.verdicts {
        assert_eq!(v.recheck(), v.passed, "{v:?}");
        assert!(v.lo.is_some() || v.hi.is_some());
    }
    assert_eq!(back.calibration_version, Settings::default().calibration.version);
    assert!(r.passed(), "{}", r.summary());
}

#[test]
fn rectangle_maximum_matches_the_series() {
    let r = exp_max_value_sandwich(Family::Rectangle, 16.0, None, &Settings::default()).unwrap();
    assert!(r.passed(), "{}", r.summary());
    let exact = torsion_rectangle(16.0, 0.0, 0.5, 1e-14).unwrap();
    assert!((r.metrics["v_star"] - exact).abs() <= 1e-9, "{} vs {exact}", r.metrics["v_star"]);
}

#[test]
fn torsion_is_flat_near_the_eigenfunction_maximum() {
    let s = Settings::default();
    for (family, n) in [(Family::Rectangle, 16.0), (Family::Omega2, 64.0)] {
        let r = exp_torsion_near_eigenmax(family, n, &s).unwrap();
        assert!(r.passed(), "{}", r.summary());
        assert!(r.metrics["K"].is_finite());
    }
}

#[test]
fn missing_certificate_is_a_prerequisite_error() {
    let mut s = Settings::default();
    let k = s.calibration.families.get_mut("omega2").unwrap();
    k.big_c1 = 1e6;
    let err = exp_directional_hessian(Family::Omega2, 64.0, None, &s).unwrap_err();
    assert!(matches!(err, Error::Prerequisite(_)), "{err}");
}
