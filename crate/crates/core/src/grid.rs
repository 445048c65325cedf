//! Uniform grids over a domain with cut-cell boundary intercepts.
//!
//! Nodes are `x_i = a + i dx`, `y_j = j dy` over the bounding box `[a, b] x [0, 1]`,
//! stored row-major (`node = j * nx + i`). A node is interior when it lies
//! strictly inside the domain. For every interior node and each of the four
//! axis directions, `theta` is the distance to the next interior node (1) or to
//! the boundary crossing, in units of the spacing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};

/// Directions in `theta` and neighbour arrays.
pub const WEST: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const NORTH: usize = 3;

/// Smallest admissible intercept fraction.
pub const THETA_MIN: f64 = 1e-10;
/// Nodes closer than this to the boundary count as boundary nodes.
const INSIDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Target spacing in `y`; `0 < target_h <= 1/16`.
    pub target_h: f64,
    /// Ratio of the target `x` spacing to `target_h`, in `[1, 4]`.
    pub x_aspect: f64,
}

impl GridOptions {
    pub fn isotropic(target_h: f64) -> Self {
        Self { target_h, x_aspect: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub interior: Vec<bool>,
    /// Unknown index of each interior node, `u32::MAX` elsewhere.
    pub unknown: Vec<u32>,
    /// Node of each unknown; unknowns are numbered column by column.
    pub nodes: Vec<usize>,
    /// Per unknown: `[west, east, south, north]` intercept fractions in `(0, 1]`.
    pub theta: Vec<[f64; 4]>,
}

impl Grid {
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn unknowns(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_interior(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.nx
            && (j as usize) < self.ny
            && self.interior[self.node(i as usize, j as usize)]
    }

    /// Number of unknowns with at least one cut side.
    pub fn cut_cells(&self) -> usize {
        self.theta.iter().filter(|t| t.iter().any(|&v| v < 1.0)).count()
    }

    /// Neighbour unknown in direction `dir`, if it is interior.
    pub fn neighbour(&self, k: usize, dir: usize) -> Option<usize> {
        let (i, j) = self.ij(self.nodes[k]);
        let (di, dj) = [(-1, 0), (1, 0), (0, -1), (0, 1)][dir];
        let (ni, nj) = (i as isize + di, j as isize + dj);
        if self.is_interior(ni, nj) {
            Some(self.unknown[self.node(ni as usize, nj as usize)] as usize)
        } else {
            None
        }
    }
}

fn inside(domain: &ConvexDomain, x: f64, y: f64) -> bool {
    x > domain.a() + INSIDE_EPS
        && x < domain.b() - INSIDE_EPS
        && y > domain.f1(x) + INSIDE_EPS
        && y < domain.f2(x) - INSIDE_EPS
}

/// Vertical clearance: positive strictly between `f1` and `f2`.
fn clearance(domain: &ConvexDomain, x: f64, y: f64) -> f64 {
    (y - domain.f1(x)).min(domain.f2(x) - y)
}

/// Fraction of the step from `x` towards `x + dir * dx` at which the horizontal
/// segment leaves the domain. Crossings of the ends `x = a, b` are exact; the
/// graphs of `f1`, `f2` are located by bisection.
fn horizontal_intercept(domain: &ConvexDomain, x: f64, y: f64, dir: f64, dx: f64) -> f64 {
    let end = if dir < 0.0 { x - domain.a() } else { domain.b() - x };
    let t_end = (end / dx).min(1.0);
    if clearance(domain, x + dir * t_end * dx, y) > 0.0 {
        return t_end;
    }
    let (mut lo, mut hi) = (0.0, t_end);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if clearance(domain, x + dir * mid * dx, y) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Builds the grid and its cut-cell intercepts.
pub fn build_grid(domain: &ConvexDomain, options: GridOptions) -> Result<Grid> {
    let h = options.target_h;
    if !(h > 0.0 && h <= 1.0 / 16.0) {
        return Err(Error::OutOfRange { what: "target_h", value: h, lo: 0.0, hi: 1.0 / 16.0 });
    }
    if !(1.0..=4.0).contains(&options.x_aspect) {
        return Err(Error::OutOfRange { what: "x_aspect", value: options.x_aspect, lo: 1.0, hi: 4.0 });
    }
    let cells_y = (1.0 / h - 1e-9).ceil() as usize;
    let dy = 1.0 / cells_y as f64;
    let len = domain.length();
    let cells_x = (len / (h * options.x_aspect) - 1e-9).ceil() as usize;
    let dx = len / cells_x as f64;
    let (nx, ny) = (cells_x + 1, cells_y + 1);

    // thin slices must still carry a few cells
    let thin = domain
        .invariant_samples(crate::domain::INVARIANT_SAMPLES)
        .into_iter()
        .find(|&x| {
            let hx = domain.h(x);
            hx > 0.1 && hx < 4.0 * dy
        });
    if let Some(x) = thin {
        return Err(Error::Resolution(format!(
            "h({x}) = {} spans fewer than 4 cells of size {dy}",
            domain.h(x)
        )));
    }

    let x0 = domain.a();
    let interior: Vec<bool> = (0..nx * ny)
        .into_par_iter()
        .map(|node| {
            let (i, j) = (node % nx, node / nx);
            inside(domain, x0 + i as f64 * dx, j as f64 * dy)
        })
        .collect();
    let mut unknown = vec![u32::MAX; nx * ny];
    let mut nodes = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let node = j * nx + i;
            if interior[node] {
                unknown[node] = nodes.len() as u32;
                nodes.push(node);
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::Resolution("grid has no interior nodes".into()));
    }
    let is_int = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && interior[j as usize * nx + i as usize]
    };
    let theta: Vec<[f64; 4]> = nodes
        .par_iter()
        .map(|&node| {
            let (i, j) = (node % nx, node / nx);
            let (x, y) = (x0 + i as f64 * dx, j as f64 * dy);
            let (ii, jj) = (i as isize, j as isize);
            let mut t = [1.0; 4];
            if !is_int(ii - 1, jj) {
                t[WEST] = horizontal_intercept(domain, x, y, -1.0, dx);
            }
            if !is_int(ii + 1, jj) {
                t[EAST] = horizontal_intercept(domain, x, y, 1.0, dx);
            }
            if !is_int(ii, jj - 1) {
                t[SOUTH] = (y - domain.f1(x)) / dy;
            }
            if !is_int(ii, jj + 1) {
                t[NORTH] = (domain.f2(x) - y) / dy;
            }
            for v in &mut t {
                *v = v.clamp(THETA_MIN, 1.0);
            }
            t
        })
        .collect();
    Ok(Grid { x0, y0: 0.0, dx, dy, nx, ny, interior, unknown, nodes, theta })
}

/// The negated Laplacian with the symmetric ghost-point boundary closure:
/// a cut side contributes `1/(theta h^2)` to the diagonal and nothing
/// off-diagonal, which keeps the matrix symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Operator {
    pub diag: Vec<f64>,
    /// `[west, east, south, north]` neighbour unknowns, `u32::MAX` if cut.
    pub nbr: Vec<[u32; 4]>,
    pub cx: f64,
    pub cy: f64,
}

impl Operator {
    pub fn new(grid: &Grid) -> Self {
        let (cx, cy) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
        let n = grid.unknowns();
        let mut diag = vec![0.0; n];
        let mut nbr = vec![[u32::MAX; 4]; n];
        for k in 0..n {
            let mut d = 0.0;
            for dir in 0..4 {
                let c = if dir < 2 { cx } else { cy };
                match grid.neighbour(k, dir) {
                    Some(m) => {
                        d += c;
                        nbr[k][dir] = m as u32;
                    }
                    None => d += c / grid.theta[k][dir],
                }
            }
            diag[k] = d;
        }
        Self { diag, nbr, cx, cy }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn row(&self, k: usize, u: &[f64]) -> f64 {
        let mut s = self.diag[k] * u[k];
        let [w, e, so, no] = self.nbr[k];
        if w != u32::MAX {
            s -= self.cx * u[w as usize];
        }
        if e != u32::MAX {
            s -= self.cx * u[e as usize];
        }
        if so != u32::MAX {
            s -= self.cy * u[so as usize];
        }
        if no != u32::MAX {
            s -= self.cy * u[no as usize];
        }
        s
    }

    /// `out = A u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(crate::sum::CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * crate::sum::CHUNK;
                for (off, o) in chunk.iter_mut().enumerate() {
                    *o = self.row(base + off, u);
                }
            });
    }

    /// Half bandwidth under the unknown numbering.
    pub fn bandwidth(&self) -> usize {
        self.nbr
            .iter()
            .enumerate()
            .flat_map(|(k, nb)| nb.iter().filter(|&&m| m != u32::MAX).map(move |&m| k.abs_diff(m as usize)))
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_grid_is_aligned() {
        let r = ConvexDomain::rectangle(4.0).unwrap();
        let g = build_grid(&r, GridOptions::isotropic(1.0 / 64.0)).unwrap();
        assert_eq!((g.nx, g.ny), (257, 65));
        assert_eq!(g.unknowns(), 255 * 63);
        assert!(g.theta.iter().all(|t| t.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn spacing_bounds() {
        assert!(build_grid(&ConvexDomain::rectangle(4.0).unwrap(), GridOptions::isotropic(0.1)).is_err());
        let e = ConvexDomain::ellipse(8.0).unwrap();
        assert!(matches!(
            build_grid(&e, GridOptions::isotropic(1.0 / 32.0)),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn ramp_intercepts_follow_the_line() {
        // the ramp slope 1/sqrt(20) is irrational, so crossings fall between nodes
        let o1 = ConvexDomain::omega1(20.0).unwrap();
        let root = 20f64.sqrt();
        let g = build_grid(&o1, GridOptions::isotropic(1.0 / 64.0)).unwrap();
        let mut checked = 0;
        for (k, &node) in g.nodes.iter().enumerate() {
            let (i, j) = g.ij(node);
            let (x, y) = (g.x(i), g.y(j));
            if x < root - 0.1 && g.theta[k][WEST] < 1.0 {
                let exact = (x - root * y) / g.dx;
                assert!((g.theta[k][WEST] - exact).abs() < 1e-10, "{} vs {}", g.theta[k][WEST], exact);
                checked += 1;
            }
        }
        // one cut per grid row below the top of the ramp
        assert!(checked >= 50, "{checked}");
    }

    #[test]
    fn operator_is_symmetric() {
        let e = ConvexDomain::ellipse(8.0).unwrap();
        let g = build_grid(&e, GridOptions::isotropic(1.0 / 64.0)).unwrap();
        let op = Operator::new(&g);
        for (k, nb) in op.nbr.iter().enumerate() {
            for (dir, &m) in nb.iter().enumerate() {
                if m != u32::MAX {
                    let back = [EAST, WEST, NORTH, SOUTH][dir];
                    assert_eq!(op.nbr[m as usize][back] as usize, k);
                }
            }
        }
        assert!(g.cut_cells() > 0);
        assert!(op.bandwidth() <= g.ny);
    }
}
