//! Green's function kernels on a slice of the domain.
//!
//! Around a base point `x̃` the domain is compared with the rectangle
//! `[x̃ - d/2, x̃ + d/2] x [0, h̃]` (`d = d(x̃)`, `h̃ = h(x̃)`), mapped by the vertical
//! warp `e(x, y) = (y - f1(x)) h̃ / h(x)`. In translated coordinates `[0, d]`
//! the rectangle Green's function separates into
//! `sum_n f_n(x; x') g_n(x, y) g_n(x', y')` where `f_n` is a lattice sum of
//! exponentials obtained by Poisson summation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::sum::pairwise;

/// Default lattice cutoff `|m| <= 16`.
pub const DEFAULT_M_CUTOFF: usize = 16;
/// Default cap on the Fourier index in adaptive sums.
pub const DEFAULT_N_CUTOFF: usize = 1 << 24;
/// Kernel evaluation is refused when `|x - x'|` is below this radius.
pub const SINGULAR_RADIUS: f64 = 1e-6;

/// Parameters of the approximate Green's function at `x̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelContext {
    pub x_tilde: f64,
    pub h_tilde: f64,
    pub d_tilde: f64,
    pub n_cutoff: usize,
    pub m_cutoff: usize,
}

impl KernelContext {
    pub fn new(domain: &ConvexDomain, x_tilde: f64) -> Result<Self> {
        let h_tilde = domain.height(x_tilde)?;
        let d_tilde = domain.dist_to_ends(x_tilde)?;
        Self::from_parts(x_tilde, h_tilde, d_tilde)
    }

    /// Context from explicit values; `h̃` must lie in `[1/2, 1]` and `d̃ >= 1`.
    pub fn from_parts(x_tilde: f64, h_tilde: f64, d_tilde: f64) -> Result<Self> {
        if !(0.5..=1.0 + 1e-12).contains(&h_tilde) {
            return Err(Error::OutOfRange { what: "h_tilde", value: h_tilde, lo: 0.5, hi: 1.0 });
        }
        if !(d_tilde >= 1.0) {
            return Err(Error::OutOfRange { what: "d_tilde", value: d_tilde, lo: 1.0, hi: f64::INFINITY });
        }
        Ok(Self { x_tilde, h_tilde, d_tilde, n_cutoff: DEFAULT_N_CUTOFF, m_cutoff: DEFAULT_M_CUTOFF })
    }

    pub fn with_m_cutoff(mut self, m_cutoff: usize) -> Self {
        self.m_cutoff = m_cutoff.max(1);
        self
    }

    pub fn with_n_cutoff(mut self, n_cutoff: usize) -> Self {
        self.n_cutoff = n_cutoff.max(1);
        self
    }

    /// Left end of the slice `x̃ - d̃/2`; translated coordinates subtract it.
    pub fn origin(&self) -> f64 {
        self.x_tilde - 0.5 * self.d_tilde
    }

    pub fn translate(&self, x: f64) -> f64 {
        x - self.origin()
    }

    /// `2 pi n d̃ / h̃`, the lattice decay rate of the n-th mode.
    fn rate(&self, n: usize) -> f64 {
        2.0 * PI * self.d_tilde / self.h_tilde * n as f64
    }

    /// Bound on the dropped lattice terms `|m| > m_cutoff` of `f_n`.
    pub fn lattice_tail(&self, n: usize) -> f64 {
        let a = self.rate(n);
        let m = self.m_cutoff as f64;
        4.0 / (PI * n as f64) * (-a * m).exp() / (1.0 - (-a).exp())
    }
}

/// The warp `e(x, y) = (y - f1(x)) h̃ / h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpMap {
    pub h_tilde: f64,
}

impl WarpMap {
    pub fn eval(&self, domain: &ConvexDomain, x: f64, y: f64) -> Result<f64> {
        let h = domain.h(x);
        if h <= 0.0 {
            return Err(Error::DegenerateSlice { x });
        }
        Ok((y - domain.f1(x)) * self.h_tilde / h)
    }
}

/// Truncated double eigenfunction series of the Green's function of the
/// Laplacian on `[0, d] x [0, c]` (slow; an oracle for the single series).
pub fn rect_green_double_series(c: f64, d: f64, p: [f64; 2], q: [f64; 2], n_cutoff: usize) -> Result<f64> {
    if p == q {
        return Err(Error::Singularity(format!("p = q = ({}, {})", p[0], p[1])));
    }
    let k = n_cutoff.max(1);
    let sines = |t: f64, len: f64| -> Vec<f64> { (1..=k).map(|n| (n as f64 * PI * t / len).sin()).collect() };
    let (sx, sxp, sy, syp) = (sines(p[0], d), sines(q[0], d), sines(p[1], c), sines(q[1], c));
    let rows: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let ax = sx[i] * sxp[i];
            let n1 = (i + 1) as f64 / d;
            let terms: Vec<f64> = (0..k)
                .map(|j| {
                    let n2 = (j + 1) as f64 / c;
                    ax * sy[j] * syp[j] / (n1 * n1 + n2 * n2)
                })
                .collect();
            pairwise(&terms)
        })
        .collect();
    Ok(-4.0 / (PI * PI * c * d) * pairwise(&rows))
}

/// Lattice exponents and signs of `f_n` (per unit `n`): `f_n = (1/(pi n))
/// sum_k s_k exp(-n E_k)`.
fn lattice_terms(ctx: &KernelContext, x: f64, xp: f64) -> Vec<(f64, f64)> {
    let a1 = ctx.rate(1);
    let two_d = 2.0 * ctx.d_tilde;
    let (xi_plus, xi_minus) = ((x + xp) / two_d, (x - xp) / two_d);
    let m = ctx.m_cutoff as i64;
    let mut out = Vec::with_capacity(2 * (2 * m as usize + 1));
    for k in -m..=m {
        let kf = k as f64;
        out.push((a1 * (xi_plus + kf).abs(), 1.0));
        out.push((a1 * (xi_minus + kf).abs(), -1.0));
    }
    out
}

/// `f_n(x; x')` in translated coordinates `x, x' in [0, d̃]`.
pub fn f_n(ctx: &KernelContext, n: usize, x: f64, xp: f64) -> f64 {
    let nf = n.max(1) as f64;
    let terms: Vec<f64> = lattice_terms(ctx, x, xp)
        .into_iter()
        .map(|(e, s)| s * (-nf * e).exp())
        .collect();
    pairwise(&terms) / (PI * nf)
}

/// One-sided `x`-derivative of `f_n` (side `+1` or `-1` selects the limit at
/// the kink `x = x'`).
pub fn f_n_dx(ctx: &KernelContext, n: usize, x: f64, xp: f64, side: f64) -> f64 {
    let nf = n.max(1) as f64;
    let a = ctx.rate(n);
    let two_d = 2.0 * ctx.d_tilde;
    let m = ctx.m_cutoff as i64;
    let mut terms = Vec::with_capacity(4 * m as usize + 2);
    for k in -m..=m {
        let kf = k as f64;
        for (xi, s) in [((x + xp) / two_d + kf, 1.0), ((x - xp) / two_d + kf, -1.0)] {
            let sign = if xi == 0.0 { side } else { xi.signum() };
            terms.push(-s * a * sign / two_d * (-a * xi.abs()).exp());
        }
    }
    pairwise(&terms) / (PI * nf)
}

/// `g_n(x, y) = sin(n pi (y - f1(x)) / h(x))`.
pub fn g_n(domain: &ConvexDomain, n: usize, x: f64, y: f64) -> Result<f64> {
    if !domain.contains(x, y) {
        return Err(Error::OutsideDomain { x, y });
    }
    let h = domain.h(x);
    if h <= 0.0 {
        return Err(Error::DegenerateSlice { x });
    }
    Ok((n as f64 * PI * (y - domain.f1(x)) / h).sin())
}

/// All `f_n`, `n = 1..=count`, by geometric recurrences on the lattice terms.
fn f_n_all(ctx: &KernelContext, x: f64, xp: f64, count: usize) -> Vec<f64> {
    let mut active: Vec<(f64, f64, f64)> = lattice_terms(ctx, x, xp)
        .into_iter()
        .filter(|(e, _)| *e < 700.0)
        .map(|(e, s)| {
            let q = (-e).exp();
            (q, q, s)
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for n in 1..=count {
        let mut sum = 0.0;
        for t in active.iter_mut() {
            sum += t.2 * t.1;
            t.1 *= t.0;
        }
        active.retain(|t| t.1 > 1e-300);
        out.push(sum / (PI * n as f64));
    }
    out
}

fn singular_check(x: f64, xp: f64) -> Result<()> {
    if (x - xp).abs() < SINGULAR_RADIUS {
        return Err(Error::Singularity(format!("|x - x'| = {:e} below {SINGULAR_RADIUS:e}", (x - xp).abs())));
    }
    Ok(())
}

/// Fourier cutoff for pointwise kernel evaluation at separation `dx`.
pub fn pointwise_cutoff(ctx: &KernelContext, dx: f64) -> usize {
    ((40.0 * ctx.h_tilde / dx).ceil() as usize).clamp(1, ctx.n_cutoff)
}

fn check_slice(ctx: &KernelContext, x: f64) -> Result<()> {
    let lo = ctx.origin();
    let hi = lo + ctx.d_tilde;
    if x < lo - 1e-12 || x > hi + 1e-12 {
        return Err(Error::OutOfRange { what: "x (slice)", value: x, lo, hi });
    }
    Ok(())
}

/// Approximate Green's function `G^x̃(p; q)` in domain coordinates.
pub fn approx_green(domain: &ConvexDomain, ctx: &KernelContext, p: [f64; 2], q: [f64; 2]) -> Result<f64> {
    check_slice(ctx, p[0])?;
    check_slice(ctx, q[0])?;
    singular_check(p[0], q[0])?;
    let count = pointwise_cutoff(ctx, (p[0] - q[0]).abs());
    let fs = f_n_all(ctx, ctx.translate(p[0]), ctx.translate(q[0]), count);
    let (hp, hq) = (domain.h(p[0]), domain.h(q[0]));
    if hp <= 0.0 {
        return Err(Error::DegenerateSlice { x: p[0] });
    }
    if hq <= 0.0 {
        return Err(Error::DegenerateSlice { x: q[0] });
    }
    if !domain.contains(p[0], p[1]) {
        return Err(Error::OutsideDomain { x: p[0], y: p[1] });
    }
    if !domain.contains(q[0], q[1]) {
        return Err(Error::OutsideDomain { x: q[0], y: q[1] });
    }
    let (ep, eq) = ((p[1] - domain.f1(p[0])) / hp, (q[1] - domain.f1(q[0])) / hq);
    let terms: Vec<f64> = fs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let nf = (i + 1) as f64;
            f * (nf * PI * ep).sin() * (nf * PI * eq).sin()
        })
        .collect();
    Ok(pairwise(&terms))
}

/// Approximate Green's function of a rectangle in its own coordinates
/// `[0, d] x [0, c]`, via the single Poisson-summed series.
pub fn rect_green_single_series(c: f64, d: f64, p: [f64; 2], q: [f64; 2]) -> Result<f64> {
    singular_check(p[0], q[0])?;
    let ctx = KernelContext { x_tilde: 0.5 * d, h_tilde: c, d_tilde: d, n_cutoff: DEFAULT_N_CUTOFF, m_cutoff: DEFAULT_M_CUTOFF };
    let count = pointwise_cutoff(&ctx, (p[0] - q[0]).abs());
    let fs = f_n_all(&ctx, p[0], q[0], count);
    let terms: Vec<f64> = fs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let nf = (i + 1) as f64;
            f * (nf * PI * p[1] / c).sin() * (nf * PI * q[1] / c).sin()
        })
        .collect();
    Ok(pairwise(&terms))
}

// ---------------------------------------------------------------------------
// Poisson summation identity

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonResidual {
    pub a: f64,
    pub xi: f64,
    pub m_cutoff: usize,
    /// Real part of `sum 1/(a^2 + 4 pi^2 m^2) e^{2 pi i m xi}` over `|m| <= M`.
    pub lhs: f64,
    /// `sum (1/2a) e^{-a |xi + m|}` over `|m| <= M`.
    pub rhs: f64,
    /// `sum_{|m| > M} 1/(4 pi^2 m^2)`, bounding the dropped part of `lhs`.
    pub lhs_tail_bound: f64,
    /// Bound on the dropped part of `rhs`.
    pub rhs_tail_bound: f64,
    pub residual: f64,
}

/// Truncated polynomially convergent side.
pub fn poisson_lhs(a: f64, xi: f64, m_cutoff: usize) -> f64 {
    let terms: Vec<f64> = (1..=m_cutoff)
        .rev()
        .map(|m| {
            let mf = m as f64;
            2.0 * (2.0 * PI * mf * xi).cos() / (a * a + 4.0 * PI * PI * mf * mf)
        })
        .collect();
    1.0 / (a * a) + pairwise(&terms)
}

/// Truncated exponentially convergent side.
pub fn poisson_rhs(a: f64, xi: f64, m_cutoff: usize) -> f64 {
    let m = m_cutoff as i64;
    let terms: Vec<f64> = (-m..=m).map(|k| (-a * (xi + k as f64).abs()).exp()).collect();
    pairwise(&terms) / (2.0 * a)
}

/// `coth(a/2) / (2a)`, the common value of both sides at `xi = 0`.
pub fn poisson_closed_form_xi0(a: f64) -> f64 {
    1.0 / ((0.5 * a).tanh() * 2.0 * a)
}

pub fn poisson_lhs_tail_bound(m_cutoff: usize) -> f64 {
    // 2 sum_{m > M} 1/(4 pi^2 m^2) <= 2/(4 pi^2 M)
    2.0 / (4.0 * PI * PI * m_cutoff.max(1) as f64)
}

/// Both sides of the identity truncated at `|m| <= m_cutoff`.
pub fn poisson_identity_residual(a: f64, xi: f64, m_cutoff: usize) -> Result<PoissonResidual> {
    if !(a > 0.0) {
        return Err(Error::OutOfRange { what: "a", value: a, lo: 0.0, hi: f64::INFINITY });
    }
    let m = m_cutoff.max(1);
    let lhs = poisson_lhs(a, xi, m);
    let rhs = poisson_rhs(a, xi, m);
    let frac = xi - xi.round();
    let nearest = m as f64 - frac.abs();
    let rhs_tail_bound = (-a * nearest).exp() / (a * (1.0 - (-a).exp()));
    Ok(PoissonResidual {
        a,
        xi,
        m_cutoff: m,
        lhs,
        rhs,
        lhs_tail_bound: poisson_lhs_tail_bound(m),
        rhs_tail_bound,
        residual: (lhs - rhs).abs(),
    })
}

/// Richardson extrapolation of the polynomial side at integer `xi` from cutoffs
/// `M, 2M, 4M`; the truncation error has an expansion in powers of `1/M`.
pub fn poisson_lhs_accelerated(a: f64, m_cutoff: usize) -> f64 {
    let m = m_cutoff.max(8);
    let s1 = poisson_lhs(a, 0.0, m);
    let s2 = poisson_lhs(a, 0.0, 2 * m);
    let s4 = poisson_lhs(a, 0.0, 4 * m);
    let r1 = 2.0 * s2 - s1;
    let r2 = 2.0 * s4 - s2;
    (4.0 * r2 - r1) / 3.0
}

// ---------------------------------------------------------------------------
// structural checks on f_n

/// Relative defect of `f_n'' = (n pi / h̃)^2 f_n` from a centred second difference.
pub fn ode_residual(ctx: &KernelContext, n: usize, x: f64, xp: f64, step: f64) -> f64 {
    let f0 = f_n(ctx, n, x, xp);
    let second = (f_n(ctx, n, x + step, xp) - 2.0 * f0 + f_n(ctx, n, x - step, xp)) / (step * step);
    let k = n as f64 * PI / ctx.h_tilde;
    let rhs = k * k * f0;
    (second - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
}

/// One-sided derivative by Richardson extrapolation of forward differences
/// with steps `s, s/2, s/4`.
pub fn one_sided_derivative<F: Fn(f64) -> f64>(f: F, x: f64, step: f64) -> f64 {
    let fd = |s: f64| (f(x + s) - f(x)) / s;
    let (d1, d2, d4) = (fd(step), fd(0.5 * step), fd(0.25 * step));
    let r1 = 2.0 * d2 - d1;
    let r2 = 2.0 * d4 - d2;
    (4.0 * r2 - r1) / 3.0
}

/// Derivative jump of `f_n` across `x = x'`, measured numerically.
pub fn derivative_jump(ctx: &KernelContext, n: usize, xp: f64) -> f64 {
    let step = 1e-3 * ctx.h_tilde / n as f64;
    let right = one_sided_derivative(|x| f_n(ctx, n, x, xp), xp, step);
    let left = one_sided_derivative(|x| f_n(ctx, n, x, xp), xp, -step);
    right - left
}

/// The jump expected of `f_n`: the `y`-eigenfunctions `sin(n pi y / h̃)` are
/// not normalized, so `f_n` is `2/h̃` times the unit-jump Green's function of
/// `d^2/dx^2 - (n pi / h̃)^2`.
pub fn expected_jump(ctx: &KernelContext) -> f64 {
    2.0 / ctx.h_tilde
}

// ---------------------------------------------------------------------------
// reconstruction of v1 by integrating the kernel

/// Levels of geometric refinement around `x = x'`.
pub const REFINE_LEVELS: usize = 8;
/// Midpoint cells per unit length in `x`.
pub const CELLS_PER_UNIT: f64 = 1024.0;
/// Allowed disagreement between the last two refinement levels.
pub const QUADRATURE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub value: f64,
    /// Same quadrature with one refinement level fewer.
    pub coarser: f64,
    pub cells: usize,
}

/// `-(integral over the slice of sum_n f_n Y_n(x)) g_n(x', y')`, with the
/// `y`-integral `Y_n(x) = h(x)(1 - (-1)^n)/(n pi)` done exactly.
fn integrand(ctx: &KernelContext, domain: &ConvexDomain, x: f64, xp_t: f64, gq: &[f64]) -> f64 {
    let xt = ctx.translate(x);
    let dx = (xt - xp_t).abs();
    // terms decay at least like e^{-n E_min} / n^2
    let e_min = lattice_terms(ctx, xt, xp_t)
        .into_iter()
        .map(|(e, _)| e)
        .fold(f64::INFINITY, f64::min)
        .max(PI * dx / ctx.h_tilde)
        .max(1e-300);
    let lattice = 4.0 * ctx.m_cutoff as f64 + 2.0;
    let tol = 1e-13;
    let mut count = 1usize;
    while count < ctx.n_cutoff {
        let k = (count + 1) as f64;
        let tail = 2.0 * lattice / (PI * PI) * (-k * e_min).exp() / (k * k * (1.0 - (-e_min).exp()));
        if tail < tol {
            break;
        }
        count = (count * 2).min(ctx.n_cutoff);
    }
    let count = count.min(gq.len());
    let fs = f_n_all(ctx, xt, xp_t, count);
    let h = domain.h(x);
    let terms: Vec<f64> = fs
        .iter()
        .enumerate()
        .step_by(2)
        .map(|(i, f)| {
            let nf = (i + 1) as f64;
            f * 2.0 * h / (nf * PI) * gq[i]
        })
        .collect();
    -pairwise(&terms)
}

/// Reconstructs `v1(x', y')` as `-integral G^x̃(x, y; x', y') dx dy` over the
/// slice `|x - x̃| <= d̃/2`.
pub fn reconstruct_v1(domain: &ConvexDomain, ctx: &KernelContext, q: [f64; 2]) -> Result<Reconstruction> {
    let [xq, yq] = q;
    if (xq - ctx.x_tilde).abs() > 1.0 + 1e-12 {
        return Err(Error::OutOfRange { what: "x'", value: xq, lo: ctx.x_tilde - 1.0, hi: ctx.x_tilde + 1.0 });
    }
    if !domain.contains(xq, yq) {
        return Err(Error::OutsideDomain { x: xq, y: yq });
    }
    let hq = domain.h(xq);
    if hq <= 0.0 {
        return Err(Error::DegenerateSlice { x: xq });
    }
    let eta = (yq - domain.f1(xq)) / hq;
    let cap = ctx.n_cutoff.min(1 << 22);
    let gq: Vec<f64> = (1..=cap).map(|n| (n as f64 * PI * eta).sin()).collect();
    let xp_t = ctx.translate(xq);

    let lo = ctx.origin();
    let cells = (ctx.d_tilde * CELLS_PER_UNIT).ceil() as usize;
    let w = ctx.d_tilde / cells as f64;
    let singular = (((xq - lo) / w).floor() as usize).min(cells - 1);
    let f = |x: f64| integrand(ctx, domain, x, xp_t, &gq);

    let regular: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|k| if k == singular { 0.0 } else { w * f(lo + (k as f64 + 0.5) * w) })
        .collect();
    let regular = pairwise(&regular);

    // split the singular cell at x' and refine geometrically towards x'
    let c0 = lo + singular as f64 * w;
    let c1 = c0 + w;
    let side = |len: f64, dir: f64, levels: usize| -> f64 {
        if len <= 0.0 {
            return 0.0;
        }
        let mut parts = Vec::with_capacity(levels + 1);
        let mut outer = len;
        for _ in 0..levels {
            let inner = 0.5 * outer;
            parts.push((outer - inner) * f(xq + dir * 0.5 * (outer + inner)));
            outer = inner;
        }
        parts.push(outer * f(xq + dir * 0.5 * outer));
        pairwise(&parts)
    };
    let fine = side(c1 - xq, 1.0, REFINE_LEVELS) + side(xq - c0, -1.0, REFINE_LEVELS);
    let coarse = side(c1 - xq, 1.0, REFINE_LEVELS - 1) + side(xq - c0, -1.0, REFINE_LEVELS - 1);
    let value = regular + fine;
    let coarser = regular + coarse;
    if (value - coarser).abs() > QUADRATURE_TOL {
        return Err(Error::Quadrature { disagreement: (value - coarser).abs() });
    }
    Ok(Reconstruction { value, coarser, cells })
}
