//! Post-processing of solved fields: maxima, Hessians, superlevel sets and
//! pointwise inequalities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::convex_hull;
use crate::error::{Error, Result};
use crate::grid::{EAST, NORTH, SOUTH, WEST};
use crate::solver::ScalarField;

/// Strides of the 5x5 fitting stencil, in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitStencil {
    pub x_stride: usize,
    pub y_stride: usize,
}

impl Default for FitStencil {
    fn default() -> Self {
        Self { x_stride: 1, y_stride: 1 }
    }
}

impl FitStencil {
    /// Stride in `x` covering about `half_width` on each side of the centre.
    pub fn spanning(field: &ScalarField, half_width: f64) -> Self {
        let sx = ((half_width / (2.0 * field.grid.dx)).round() as usize).max(1);
        Self { x_stride: sx, y_stride: 1 }
    }
}

/// Least-squares quadratic `c0 + gx X + gy Y + (hxx X^2 + 2 hxy X Y + hyy Y^2)/2`
/// around a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub gradient: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    /// Root-mean-square misfit over the stencil.
    pub rms: f64,
}

fn solve6(mut m: [[f64; 6]; 6], mut r: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..6 {
            let f = m[row][col] / m[col][col];
            for k in col..6 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 6];
    for row in (0..6).rev() {
        let mut s = r[row];
        for k in row + 1..6 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// Fits a quadratic to the 5x5 stencil centred at node `(i, j)`. Every stencil
/// node must be interior.
pub fn fit_quadratic(field: &ScalarField, i: usize, j: usize, stencil: FitStencil) -> Result<QuadraticFit> {
    let g = &field.grid;
    let (sx, sy) = (stencil.x_stride as isize, stencil.y_stride as isize);
    let mut ata = [[0.0; 6]; 6];
    let mut atb = [0.0; 6];
    let mut samples = Vec::with_capacity(25);
    for p in -2isize..=2 {
        for q in -2isize..=2 {
            let (ni, nj) = (i as isize + p * sx, j as isize + q * sy);
            if !g.is_interior(ni, nj) {
                return Err(Error::Geometry(format!(
                    "fitting stencil at ({}, {}) leaves the interior",
                    g.x(i),
                    g.y(j)
                )));
            }
            let v = field.at(ni as usize, nj as usize);
            let (pf, qf) = (p as f64, q as f64);
            let row = [1.0, pf, qf, pf * pf, pf * qf, qf * qf];
            for a in 0..6 {
                for b in 0..6 {
                    ata[a][b] += row[a] * row[b];
                }
                atb[a] += row[a] * v;
            }
            samples.push((row, v));
        }
    }
    let c = solve6(ata, atb).ok_or_else(|| Error::Numerical {
        message: "singular quadratic fit".into(),
        iterations: 0,
        residual: f64::NAN,
    })?;
    let rms = (samples
        .iter()
        .map(|(row, v)| {
            let fit: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            (fit - v).powi(2)
        })
        .sum::<f64>()
        / 25.0)
        .sqrt();
    let (hx, hy) = (sx as f64 * g.dx, sy as f64 * g.dy);
    Ok(QuadraticFit {
        x: g.x(i),
        y: g.y(j),
        value: c[0],
        gradient: [c[1] / hx, c[2] / hy],
        hessian: [[2.0 * c[3] / (hx * hx), c[4] / (hx * hy)], [c[4] / (hx * hy), 2.0 * c[5] / (hy * hy)]],
        rms,
    })
}

/// Second derivative along the unit vector at angle `theta`.
pub fn directional(hessian: &[[f64; 2]; 2], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    c * c * hessian[0][0] + 2.0 * s * c * hessian[0][1] + s * s * hessian[1][1]
}

/// Number of directions `k pi / 16` reported by [`locate_max`].
pub const DIRECTIONS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxReport {
    pub x_star: f64,
    pub y_star: f64,
    pub v_star: f64,
    pub hessian: [[f64; 2]; 2],
    /// `(angle, second derivative)` for angles `k pi / 16`, `k = 0..16`.
    pub directional: Vec<(f64, f64)>,
    pub grid_max: f64,
    pub stencil: FitStencil,
    pub fit_rms: f64,
    /// The stationary point of the fit fell outside the stencil; the grid
    /// node was kept instead.
    pub fallback_to_node: bool,
}

/// Grid maximum refined by a least-squares quadratic.
pub fn locate_max(field: &ScalarField) -> Result<MaxReport> {
    locate_max_with(field, FitStencil::default())
}

pub fn locate_max_with(field: &ScalarField, stencil: FitStencil) -> Result<MaxReport> {
    let g = &field.grid;
    let (i, j, grid_max) = field.argmax();
    if !g.interior[g.node(i, j)] {
        return Err(Error::Geometry("maximum lies on the boundary ring".into()));
    }
    let fit = fit_quadratic(field, i, j, stencil)?;
    let [[a, b], [_, d]] = fit.hessian;
    let det = a * d - b * b;
    let (hx, hy) = (stencil.x_stride as f64 * g.dx, stencil.y_stride as f64 * g.dy);
    let mut offset = None;
    if det > 0.0 && a < 0.0 {
        let [gx, gy] = fit.gradient;
        let ox = -(d * gx - b * gy) / det;
        let oy = -(-b * gx + a * gy) / det;
        if ox.abs() <= 2.0 * hx && oy.abs() <= 2.0 * hy {
            offset = Some((ox, oy));
        }
    }
    let (ox, oy) = offset.unwrap_or((0.0, 0.0));
    let v_star = fit.value
        + fit.gradient[0] * ox
        + fit.gradient[1] * oy
        + 0.5 * (a * ox * ox + 2.0 * b * ox * oy + d * oy * oy);
    let directional = (0..DIRECTIONS)
        .map(|k| {
            let theta = k as f64 * PI / DIRECTIONS as f64;
            (theta, directional(&fit.hessian, theta))
        })
        .collect();
    Ok(MaxReport {
        x_star: fit.x + ox,
        y_star: fit.y + oy,
        v_star: if offset.is_some() { v_star } else { grid_max },
        hessian: fit.hessian,
        directional,
        grid_max,
        stencil,
        fit_rms: fit.rms,
        fallback_to_node: offset.is_none(),
    })
}

// ---------------------------------------------------------------------------
// superlevel sets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperlevelReport {
    pub level: f64,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub x_length: f64,
    pub y_length: f64,
    pub diameter: f64,
    /// Level crossings along grid edges.
    pub crossings: usize,
}

/// Level crossings of `field` along grid edges (including edges cut by the
/// boundary, where the field vanishes at the intercept).
pub fn level_crossings(field: &ScalarField, level: f64) -> Vec<[f64; 2]> {
    let g = &field.grid;
    let mut pts = Vec::new();
    for (k, &node) in g.nodes.iter().enumerate() {
        let (i, j) = g.ij(node);
        let (x, y) = (g.x(i), g.y(j));
        let v0 = field.values[node];
        for dir in [WEST, EAST, SOUTH, NORTH] {
            let (dxu, dyu) = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)][dir];
            let (end, v1) = match g.neighbour(k, dir) {
                Some(m) => {
                    // visit interior edges once
                    if dir == WEST || dir == SOUTH {
                        continue;
                    }
                    let (ni, nj) = g.ij(g.nodes[m]);
                    ([g.x(ni), g.y(nj)], field.values[g.nodes[m]])
                }
                None => {
                    let t = g.theta[k][dir];
                    ([x + dxu * t * g.dx, y + dyu * t * g.dy], 0.0)
                }
            };
            if (v0 >= level) != (v1 >= level) {
                let t = (level - v0) / (v1 - v0);
                pts.push([x + t * (end[0] - x), y + t * (end[1] - y)]);
            }
        }
    }
    pts
}

/// Bounding intervals and diameter of `{field >= level}`.
pub fn superlevel_projection(field: &ScalarField, level: f64) -> Result<SuperlevelReport> {
    if level >= field.max_value() {
        return Err(Error::Level(format!("level {level} is not below the maximum {}", field.max_value())));
    }
    let pts = level_crossings(field, level);
    if pts.is_empty() {
        return Err(Error::Level(format!("no crossings at level {level}")));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, c: usize| pts.iter().map(|p| p[c]).fold(init, f);
    let x_range = [fold(f64::min, f64::INFINITY, 0), fold(f64::max, f64::NEG_INFINITY, 0)];
    let y_range = [fold(f64::min, f64::INFINITY, 1), fold(f64::max, f64::NEG_INFINITY, 1)];
    let hull = convex_hull(&pts);
    let mut diameter: f64 = 0.0;
    for (a, p) in hull.iter().enumerate() {
        for q in &hull[a + 1..] {
            diameter = diameter.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }
    if hull.len() < 2 {
        diameter = 0.0;
    }
    Ok(SuperlevelReport {
        level,
        x_range,
        y_range,
        x_length: x_range[1] - x_range[0],
        y_length: y_range[1] - y_range[0],
        diameter,
        crossings: pts.len(),
    })
}

/// Per grid column, the `y`-interval of `{field >= level}` (columns missing
/// the set are skipped).
pub fn column_intervals(field: &ScalarField, level: f64) -> Vec<(f64, [f64; 2])> {
    let g = &field.grid;
    let mut out = Vec::new();
    for i in 0..g.nx {
        let above: Vec<usize> = (0..g.ny).filter(|&j| field.at(i, j) >= level).collect();
        if let (Some(&lo), Some(&hi)) = (above.first(), above.last()) {
            let edge = |j_in: usize, j_out: isize| -> f64 {
                if j_out < 0 || j_out as usize >= g.ny {
                    return g.y(j_in);
                }
                let (v0, v1) = (field.at(i, j_in), field.at(i, j_out as usize));
                let t = (level - v0) / (v1 - v0);
                g.y(j_in) + t * (g.y(j_out as usize) - g.y(j_in))
            };
            out.push((g.x(i), [edge(lo, lo as isize - 1), edge(hi, hi as isize + 1)]));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// pointwise inequalities

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmReport {
    /// `max (u / ||u|| - lambda v)` over interior nodes.
    pub max_violation: f64,
    pub at: [f64; 2],
    /// `v` at the maximum of `u`, to compare with `1/lambda`.
    pub v_at_u_max: f64,
    pub inv_lambda: f64,
}

/// Pointwise comparison `u <= lambda v ||u||_inf`.
pub fn check_fm_inequality(v: &ScalarField, u: &ScalarField, lambda: f64) -> Result<FmReport> {
    let (gv, gu) = (&v.grid, &u.grid);
    if gv.nx != gu.nx || gv.ny != gu.ny || gv.dx != gu.dx || gv.dy != gu.dy || gv.nodes != gu.nodes {
        return Err(Error::Config("fields live on different grids".into()));
    }
    let unorm = u.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = (f64::NEG_INFINITY, [0.0, 0.0]);
    for &node in &gv.nodes {
        let excess = u.values[node] / unorm - lambda * v.values[node];
        if excess > worst.0 {
            let (i, j) = gv.ij(node);
            worst = (excess, [gv.x(i), gv.y(j)]);
        }
    }
    let (i, j, _) = u.argmax();
    Ok(FmReport { max_violation: worst.0, at: worst.1, v_at_u_max: v.at(i, j), inv_lambda: 1.0 / lambda })
}

/// Lattice directions used by [`sqrt_concavity_check`].
pub const CONCAVITY_DIRECTIONS: [(isize, isize); 8] =
    [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    /// `max (v d_n^2 v - (d_n v)^2 / 2)` over probes and directions.
    pub max_violation: f64,
    pub at: [f64; 2],
    pub probes: usize,
}

/// Discrete check of the concavity of `sqrt(v)` at interior nodes where
/// `include(x, y)` holds.
pub fn sqrt_concavity_check_where<F: Fn(f64, f64) -> bool>(v: &ScalarField, include: F) -> ConcavityReport {
    let g = &v.grid;
    let mut worst = (f64::NEG_INFINITY, [0.0, 0.0]);
    let mut probes = 0;
    for &node in &g.nodes {
        let (i, j) = g.ij(node);
        let (x, y) = (g.x(i), g.y(j));
        if !include(x, y) {
            continue;
        }
        let (ii, jj) = (i as isize, j as isize);
        let usable = CONCAVITY_DIRECTIONS
            .iter()
            .all(|&(p, q)| g.is_interior(ii + p, jj + q) && g.is_interior(ii - p, jj - q));
        if !usable {
            continue;
        }
        probes += 1;
        let v0 = v.values[node];
        for &(p, q) in &CONCAVITY_DIRECTIONS {
            let plus = v.at((ii + p) as usize, (jj + q) as usize);
            let minus = v.at((ii - p) as usize, (jj - q) as usize);
            let s = ((p as f64 * g.dx).powi(2) + (q as f64 * g.dy).powi(2)).sqrt();
            let d1 = (plus - minus) / (2.0 * s);
            let d2 = (plus - 2.0 * v0 + minus) / (s * s);
            let val = v0 * d2 - 0.5 * d1 * d1;
            if val > worst.0 {
                worst = (val, [x, y]);
            }
        }
    }
    ConcavityReport { max_violation: worst.0, at: worst.1, probes }
}

pub fn sqrt_concavity_check(v: &ScalarField) -> ConcavityReport {
    sqrt_concavity_check_where(v, |_, _| true)
}
