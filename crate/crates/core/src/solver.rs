//! Torsion and ground-state solves on a cut-cell grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::closed_forms::v1_unchecked;
use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, GridOptions, Operator};
use crate::linalg::{pcg, BandedLdl};
use crate::sum::dot;

/// Relative residual required of the linear solver.
pub const CG_TOL: f64 = 1e-10;
pub const CG_MAX_ITER: usize = 100_000;
/// Outer iterations before the eigensolver reports stagnation.
pub const EIGEN_MAX_OUTER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Torsion,
    Eigenfunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
    pub unknowns: usize,
}

/// Node values on a grid (zero outside the domain).
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub kind: FieldKind,
    pub meta: SolverStats,
}

impl ScalarField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.node(i, j)]
    }

    /// Largest value and its node; ties go to the smallest `x`, then `y`.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let g = &self.grid;
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let v = self.values[g.node(i, j)];
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        best
    }

    pub fn max_value(&self) -> f64 {
        self.argmax().2
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation (exterior nodes count as zero).
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = ((x - g.x0) / g.dx).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((y - g.y0) / g.dy).clamp(0.0, (g.ny - 1) as f64);
        let (i, j) = ((fx.floor() as usize).min(g.nx - 2), (fy.floor() as usize).min(g.ny - 2));
        let (s, t) = (fx - i as f64, fy - j as f64);
        (1.0 - s) * (1.0 - t) * self.at(i, j)
            + s * (1.0 - t) * self.at(i + 1, j)
            + (1.0 - s) * t * self.at(i, j + 1)
            + s * t * self.at(i + 1, j + 1)
    }

    fn from_unknowns(grid: Arc<Grid>, u: &[f64], kind: FieldKind, meta: SolverStats) -> Self {
        let mut values = vec![0.0; grid.len()];
        for (k, &node) in grid.nodes.iter().enumerate() {
            values[node] = u[k];
        }
        Self { grid, values, kind, meta }
    }

    /// Values at the unknowns, in unknown order.
    pub fn unknown_values(&self) -> Vec<f64> {
        self.grid.nodes.iter().map(|&n| self.values[n]).collect()
    }
}

/// Discrete ground state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub lambda: f64,
    pub x1: f64,
    pub y1: f64,
    /// `||A u - lambda u|| / ||u||` at exit.
    pub residual: f64,
    pub outer_iterations: usize,
}

fn v1_guess(domain: &ConvexDomain, grid: &Grid) -> Vec<f64> {
    grid.nodes
        .iter()
        .map(|&node| {
            let (i, j) = grid.ij(node);
            v1_unchecked(domain, grid.x(i), grid.y(j)).max(0.0)
        })
        .collect()
}

/// Solves `-Δv = 1`, `v = 0` on the boundary.
pub fn solve_torsion(domain: &ConvexDomain, target_h: f64) -> Result<ScalarField> {
    solve_torsion_with(domain, GridOptions::isotropic(target_h))
}

pub fn solve_torsion_with(domain: &ConvexDomain, options: GridOptions) -> Result<ScalarField> {
    let grid = Arc::new(build_grid(domain, options)?);
    let op = Operator::new(&grid);
    let b = vec![1.0; op.len()];
    let mut x = v1_guess(domain, &grid);
    let stats = pcg(&op, &b, &mut x, CG_TOL, CG_MAX_ITER)?;
    let meta = SolverStats {
        method: "jacobi_pcg".into(),
        iterations: stats.iterations,
        residual: stats.relative_residual,
        unknowns: op.len(),
    };
    Ok(ScalarField::from_unknowns(grid, &x, FieldKind::Torsion, meta))
}

fn normalize(u: &mut [f64]) {
    let norm = dot(u, u).sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
}

fn rayleigh(op: &Operator, u: &[f64], au: &mut [f64]) -> (f64, f64) {
    op.apply(u, au);
    let uu = dot(u, u);
    let rho = dot(u, au) / uu;
    let res: Vec<f64> = au.iter().zip(u).map(|(a, v)| a - rho * v).collect();
    (rho, (dot(&res, &res) / uu).sqrt())
}

fn finish_eigen(grid: Arc<Grid>, mut u: Vec<f64>, rho: f64, residual: f64, outer: usize, method: &str) -> (ScalarField, EigenReport) {
    let sum: f64 = u.iter().sum();
    if sum < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    u.iter_mut().for_each(|v| *v /= max);
    let meta = SolverStats { method: method.into(), iterations: outer, residual, unknowns: u.len() };
    let field = ScalarField::from_unknowns(grid, &u, FieldKind::Eigenfunction, meta);
    let (i, j, _) = field.argmax();
    let report = EigenReport {
        lambda: rho,
        x1: field.grid.x(i),
        y1: field.grid.y(j),
        residual,
        outer_iterations: outer,
    };
    (field, report)
}

/// Smallest eigenpair of the discrete Dirichlet Laplacian by shift-and-invert
/// iteration with banded factorizations. Each new shift `rho - 2 r` is accepted
/// only if the factorization has no negative pivots, which certifies that it
/// lies below the smallest eigenvalue.
pub fn solve_ground_state(domain: &ConvexDomain, target_h: f64) -> Result<(ScalarField, EigenReport)> {
    solve_ground_state_with(domain, GridOptions::isotropic(target_h))
}

pub fn solve_ground_state_with(domain: &ConvexDomain, options: GridOptions) -> Result<(ScalarField, EigenReport)> {
    let grid = Arc::new(build_grid(domain, options)?);
    let op = Operator::new(&grid);
    let n = op.len();
    let mut u = v1_guess(domain, &grid);
    normalize(&mut u);
    let mut au = vec![0.0; n];
    let mut shift = 0.0;
    let mut factor = BandedLdl::factor(&op, shift)?;
    let (mut rho, mut res) = rayleigh(&op, &u, &mut au);
    let mut res_at_shift = f64::INFINITY;
    for outer in 1..=EIGEN_MAX_OUTER {
        let candidate = rho - 2.0 * res;
        if res < 0.1 * res_at_shift && candidate > shift {
            if let Ok(f) = BandedLdl::factor(&op, candidate) {
                if f.negative_pivots() == 0 {
                    factor = f;
                    shift = candidate;
                }
            }
            res_at_shift = res;
        }
        u = factor.solve(&u);
        normalize(&mut u);
        let (r, rr) = rayleigh(&op, &u, &mut au);
        let change = (r - rho).abs();
        rho = r;
        res = rr;
        if change <= 1e-13 * rho && res <= 1e-9 * rho {
            return Ok(finish_eigen(grid, u, rho, res, outer, "banded_shift_invert"));
        }
    }
    Err(Error::Numerical {
        message: "eigenvalue iteration stagnated".into(),
        iterations: EIGEN_MAX_OUTER,
        residual: res,
    })
}

/// Shift-free inverse power iteration with conjugate-gradient inner solves.
/// Slow when the spectral gap is small; used as a cross-check.
pub fn solve_ground_state_cg(domain: &ConvexDomain, target_h: f64) -> Result<(ScalarField, EigenReport)> {
    let grid = Arc::new(build_grid(domain, GridOptions::isotropic(target_h))?);
    let op = Operator::new(&grid);
    let n = op.len();
    let mut u = v1_guess(domain, &grid);
    normalize(&mut u);
    let mut au = vec![0.0; n];
    let (mut rho, mut res) = rayleigh(&op, &u, &mut au);
    for outer in 1..=EIGEN_MAX_OUTER {
        let mut w = u.clone();
        w.iter_mut().for_each(|v| *v /= rho);
        pcg(&op, &u, &mut w, 1e-12, CG_MAX_ITER)?;
        normalize(&mut w);
        u = w;
        let (r, rr) = rayleigh(&op, &u, &mut au);
        let change = (r - rho).abs();
        rho = r;
        res = rr;
        if change <= 1e-10 * rho && res <= 1e-6 * rho {
            return Ok(finish_eigen(grid, u, rho, res, outer, "inverse_iteration_cg"));
        }
    }
    Err(Error::Numerical {
        message: "eigenvalue change above 1e-10 after the iteration limit".into(),
        iterations: EIGEN_MAX_OUTER,
        residual: res,
    })
}
