//! Versioned empirical constants and thresholds.
//!
//! The error functional carries two constants `(c1, C1)` that are only known
//! to exist. `c1` is taken from the measured exponential decay of the first
//! kernel mode; `C1` is then fitted per domain family by least squares of
//! `log |v - v1|` against the log of the error shape. Thresholds that depend
//! on such constants live in the same file so reports can cite one version.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::closed_forms::{fit_error_constants, v1_unchecked, ErrorSample};
use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::kernel::{f_n, KernelContext};
use crate::solver::{solve_torsion, ScalarField};

const BUILTIN: &str = include_str!("../calibration.json");

/// Built-in domain families used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rectangle,
    Ellipse,
    Omega1,
    Omega2,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Rectangle, Family::Ellipse, Family::Omega1, Family::Omega2];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rectangle => "rectangle",
            Family::Ellipse => "ellipse",
            Family::Omega1 => "omega1",
            Family::Omega2 => "omega2",
        }
    }

    pub fn build(self, n: f64) -> Result<ConvexDomain> {
        match self {
            Family::Rectangle => ConvexDomain::rectangle(n),
            Family::Ellipse => ConvexDomain::ellipse(n),
            Family::Omega1 => ConvexDomain::omega1(n),
            Family::Omega2 => ConvexDomain::omega2(n),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown domain family `{s}`")))
    }
}

/// Fitted decay rate of `|f_1(x; x')|` in `|x - x'|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDecay {
    pub c1: f64,
    pub h_tilde: f64,
    pub d_tilde: f64,
    pub distances: Vec<f64>,
}

/// Constants of one family, with the pilot that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub c1: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
    /// Smallest `C1` that bounds every pilot sample.
    #[serde(rename = "C1_envelope")]
    pub big_c1_envelope: f64,
    pub rss: f64,
    pub samples: usize,
    #[serde(rename = "N")]
    pub n_list: Vec<f64>,
    pub target_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub approx_slope: f64,
    pub approx_slope_tol: f64,
    /// Offset from `x̄` of the column where `d v / d x` is measured when the
    /// derivative vanishes at `x̄` by symmetry.
    pub derivative_offset: f64,
    pub separation_min_ratio: f64,
    pub separation_max_spread: f64,
    pub separation_u_max: f64,
    /// Allowed `|x* - x1|` for symmetric domains, in grid cells.
    pub separation_symmetric_cells: f64,
    /// Upper bound on `K = max (v* - v) L^2` per family.
    pub near_max_k: BTreeMap<String, f64>,
    pub near_max_floor: f64,
    pub hessian_slope: f64,
    pub hessian_slope_tol: f64,
    pub pure_y: [f64; 2],
    pub superlevel_factor: f64,
    pub diameter_slack_cells: f64,
    /// Half-width in `x` of the quadratic fits used for Hessians.
    pub hessian_fit_half_width: f64,
    pub directional_spread: f64,
    pub pure_x_ratio: [f64; 2],
    pub certificate_m: f64,
    /// `M` for the directional Hessian ratios. With `delta(M) ~ M^2 / (2 N^2)`
    /// and `-v_xx ~ 1 / (2 N^2)` the pure-x ratio is about `1 / M^2`.
    pub directional_m: f64,
    pub sandwich_slack: f64,
    pub trace_tol: f64,
    pub trace_probes: usize,
    pub fm_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: String,
    pub kernel_decay: KernelDecay,
    pub families: BTreeMap<String, FamilyConstants>,
    pub thresholds: Thresholds,
}

impl Calibration {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("built-in calibration parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("calibration: {e}")))
    }

    pub fn constants(&self, family: Family) -> Result<&FamilyConstants> {
        self.families
            .get(family.name())
            .ok_or_else(|| Error::Config(format!("calibration {} has no constants for {family}", self.version)))
    }
}

/// Least-squares slope of `log |f_1|` against distance from the source, on a
/// slice long enough that the lattice images do not matter.
pub fn kernel_decay_rate(h_tilde: f64, d_tilde: f64, distances: &[f64]) -> Result<f64> {
    let ctx = KernelContext::from_parts(0.5 * d_tilde, h_tilde, d_tilde)?;
    let xp = 0.5 * d_tilde;
    let pts: Vec<(f64, f64)> = distances.iter().map(|&t| (t, f_n(&ctx, 1, xp + t, xp).abs().ln())).collect();
    let fit = crate::experiments::line_fit(&pts);
    Ok(-fit.slope)
}

/// `sup |v - v1|` over nodes of column `i` with `y` in `[f1 + 1/4, f2 - 1/4]`.
pub fn column_error(field: &ScalarField, domain: &ConvexDomain, i: usize) -> f64 {
    let g = &field.grid;
    let x = g.x(i);
    let (f1, f2) = (domain.f1(x), domain.f2(x));
    (0..g.ny)
        .map(|j| g.y(j))
        .enumerate()
        .filter(|&(_, y)| y >= f1 + 0.25 - 1e-12 && y <= f2 - 0.25 + 1e-12)
        .map(|(j, y)| (field.at(i, j) - v1_unchecked(domain, x, y)).abs())
        .fold(0.0, f64::max)
}

/// Pilot error samples: every quarter unit along the domain where
/// `h >= 1/2` and the distance to the ends is at least one.
pub fn pilot_samples(family: Family, n_list: &[f64], target_h: f64) -> Result<Vec<ErrorSample>> {
    let mut samples = Vec::new();
    for &n in n_list {
        let domain = family.build(n)?;
        let field = solve_torsion(&domain, target_h)?;
        let g = &field.grid;
        let stride = ((0.25 / g.dx).round() as usize).max(1);
        for i in (0..g.nx).step_by(stride) {
            let x = g.x(i);
            if domain.h(x) < 0.5 || domain.dist_to_ends(x)? < 1.0 {
                continue;
            }
            let measured = column_error(&field, &domain, i);
            samples.push(ErrorSample { domain: domain.clone(), x_tilde: x, measured });
        }
    }
    Ok(samples)
}

/// Fits `C1` for a family at the given `c1`.
pub fn pilot_family(family: Family, n_list: &[f64], target_h: f64, c1: f64) -> Result<FamilyConstants> {
    let samples = pilot_samples(family, n_list, target_h)?;
    let fit = fit_error_constants(&samples, &[c1])?;
    Ok(FamilyConstants {
        c1: fit.c1,
        big_c1: fit.big_c1,
        big_c1_envelope: fit.big_c1_envelope,
        rss: fit.rss,
        samples: fit.samples,
        n_list: n_list.to_vec(),
        target_h,
    })
}

/// Pilot lists used for the built-in calibration.
pub fn pilot_lists() -> Vec<(Family, Vec<f64>)> {
    vec![
        (Family::Rectangle, vec![4.0, 8.0, 16.0]),
        (Family::Ellipse, vec![8.0, 16.0, 32.0]),
        (Family::Omega1, vec![16.0, 32.0, 64.0]),
        (Family::Omega2, vec![16.0, 32.0, 64.0]),
    ]
}

/// Re-runs every pilot, keeping `version` and `thresholds`.
pub fn recalibrate(base: &Calibration) -> Result<Calibration> {
    let kd = &base.kernel_decay;
    let c1 = kernel_decay_rate(kd.h_tilde, kd.d_tilde, &kd.distances)?;
    let mut families = BTreeMap::new();
    for (family, n_list) in pilot_lists() {
        let target_h = base.families.get(family.name()).map_or(1.0 / 64.0, |f| f.target_h);
        families.insert(family.name().to_string(), pilot_family(family, &n_list, target_h, c1)?);
    }
    Ok(Calibration {
        version: base.version.clone(),
        kernel_decay: KernelDecay { c1, ..kd.clone() },
        families,
        thresholds: base.thresholds.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses_and_covers_families() {
        let c = Calibration::builtin();
        for f in Family::ALL {
            let k = c.constants(f).unwrap();
            assert!(k.c1 > 0.0 && k.big_c1 > 0.0 && k.big_c1_envelope >= k.big_c1);
        }
    }

    #[test]
    fn kernel_decay_is_pi_over_height() {
        let rate = kernel_decay_rate(1.0, 20.0, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((rate - std::f64::consts::PI).abs() < 1e-9, "{rate}");
        let rate = kernel_decay_rate(0.5, 20.0, &[0.5, 1.0, 1.5]).unwrap();
        assert!((rate - 2.0 * std::f64::consts::PI).abs() < 1e-9, "{rate}");
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("square".parse::<Family>().is_err());
    }
}
