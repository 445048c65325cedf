//! Normalized convex planar domains described by boundary height functions.
//!
//! A domain is `{(x, y) : a <= x <= b, f1(x) <= y <= f2(x)}` with `f1` convex,
//! `f2` concave, `0 <= f1 <= f2 <= 1` and `max (f2 - f1) = 1`.  The built-in
//! families place the thickest cross-section where the analysis expects it:
//! rectangles and ellipses are centred at the origin, `Omega1(N)` lives on
//! `[0, N]` and `Omega2(N)` on `[-N/2, N/2]`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::closed_forms::error_budget;
use crate::error::{Error, Result};

/// Uniform samples used by invariant checks (breakpoints are added on top).
pub const INVARIANT_SAMPLES: usize = 4096;
/// Tolerance on `max h = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Bisection tolerance in `x` for level crossings of `h`.
pub const CROSSING_TOL: f64 = 1e-10;

type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which family a domain belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Rectangle {
        #[serde(rename = "N")]
        n: f64,
    },
    Ellipse {
        #[serde(rename = "N")]
        n: f64,
    },
    Omega1 {
        #[serde(rename = "N")]
        n: f64,
    },
    Omega2 {
        #[serde(rename = "N")]
        n: f64,
    },
    PiecewiseLinear {
        vertices: Vec<[f64; 2]>,
    },
    CustomHeight {
        label: String,
    },
}

#[derive(Clone)]
enum Boundary {
    Rectangle,
    Ellipse { n: f64 },
    Omega1 { n: f64 },
    Omega2 { n: f64 },
    Piecewise { lower: Vec<[f64; 2]>, upper: Vec<[f64; 2]> },
    Custom { f1: BoundaryFn, f2: BoundaryFn, breakpoints: Vec<f64> },
}

/// First and second derivatives of both boundary curves at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDerivatives {
    pub f1: [f64; 3],
    pub f2: [f64; 3],
}

/// A normalized convex domain.
#[derive(Clone)]
pub struct ConvexDomain {
    a: f64,
    b: f64,
    kind: DomainKind,
    boundary: Boundary,
}

impl fmt::Debug for ConvexDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexDomain")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("kind", &self.kind)
            .finish()
    }
}

fn check_n(n: f64, min: f64) -> Result<()> {
    if !(n.is_finite() && n >= min) {
        return Err(Error::OutOfRange { what: "N", value: n, lo: min, hi: f64::INFINITY });
    }
    Ok(())
}

impl ConvexDomain {
    /// `[-N/2, N/2] x [0, 1]`.
    pub fn rectangle(n: f64) -> Result<Self> {
        check_n(n, f64::MIN_POSITIVE)?;
        Ok(Self {
            a: -0.5 * n,
            b: 0.5 * n,
            kind: DomainKind::Rectangle { n },
            boundary: Boundary::Rectangle,
        })
    }

    /// Ellipse with semi-axes `N/2` and `1/2`, centred at `(0, 1/2)`.
    pub fn ellipse(n: f64) -> Result<Self> {
        check_n(n, 1.0)?;
        Ok(Self {
            a: -0.5 * n,
            b: 0.5 * n,
            kind: DomainKind::Ellipse { n },
            boundary: Boundary::Ellipse { n },
        })
    }

    /// Triangle-like family with a steep ramp on `[0, N^(1/2)]` and a very slowly
    /// decaying top on `[N^(1/2), N]`.
    pub fn omega1(n: f64) -> Result<Self> {
        check_n(n, 2.0)?;
        Ok(Self {
            a: 0.0,
            b: n,
            kind: DomainKind::Omega1 { n },
            boundary: Boundary::Omega1 { n },
        })
    }

    /// Symmetric family: quadratic cap `1 - x^2/N^2` for `|x| <= N^(1/4)`, linear
    /// flanks down to zero at `|x| = N/2`.
    pub fn omega2(n: f64) -> Result<Self> {
        check_n(n, 4.0)?;
        Ok(Self {
            a: -0.5 * n,
            b: 0.5 * n,
            kind: DomainKind::Omega2 { n },
            boundary: Boundary::Omega2 { n },
        })
    }

    /// Polygon taken in its current orientation. The vertices are split into a
    /// lower and an upper chain between the leftmost and rightmost vertices.
    /// Convexity and normalization are not enforced here; see [`validate`].
    pub fn piecewise_linear(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain("polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidDomain("non-finite vertex".into()));
        }
        let (lower, upper) = split_chains(vertices)?;
        let a = lower[0][0];
        let b = lower[lower.len() - 1][0];
        if b - a <= 0.0 {
            return Err(Error::InvalidDomain("polygon has zero horizontal extent".into()));
        }
        Ok(Self {
            a,
            b,
            kind: DomainKind::PiecewiseLinear { vertices: vertices.to_vec() },
            boundary: Boundary::Piecewise { lower, upper },
        })
    }

    /// Convex hull of `points`, rotated so that its vertical extent is the
    /// minimal width, uniformly dilated to unit width and translated to `x >= 0`,
    /// `y >= 0`.
    pub fn polygon_normalized(points: &[[f64; 2]]) -> Result<Self> {
        let normalized = normalize_polygon(points)?;
        Self::piecewise_linear(&normalized)
    }

    /// Domain from explicit boundary functions on `[a, b]`. Not loadable from
    /// configuration files.
    pub fn custom<F1, F2>(label: &str, a: f64, b: f64, f1: F1, f2: F2) -> Result<Self>
    where
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::custom_with_breakpoints(label, a, b, f1, f2, Vec::new())
    }

    pub fn custom_with_breakpoints<F1, F2>(
        label: &str,
        a: f64,
        b: f64,
        f1: F1,
        f2: F2,
        breakpoints: Vec<f64>,
    ) -> Result<Self>
    where
        F1: Fn(f64) -> f64 + Send + Sync + 'static,
        F2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::InvalidDomain(format!("need a < b, got [{a}, {b}]")));
        }
        Ok(Self {
            a,
            b,
            kind: DomainKind::CustomHeight { label: label.to_string() },
            boundary: Boundary::Custom { f1: Arc::new(f1), f2: Arc::new(f2), breakpoints },
        })
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Horizontal extent `N = b - a`.
    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Short human label such as `omega2(N=64)`.
    pub fn label(&self) -> String {
        match &self.kind {
            DomainKind::Rectangle { n } => format!("rectangle(N={n})"),
            DomainKind::Ellipse { n } => format!("ellipse(N={n})"),
            DomainKind::Omega1 { n } => format!("omega1(N={n})"),
            DomainKind::Omega2 { n } => format!("omega2(N={n})"),
            DomainKind::PiecewiseLinear { vertices } => {
                format!("piecewise_linear({} vertices)", vertices.len())
            }
            DomainKind::CustomHeight { label } => format!("custom({label})"),
        }
    }

    pub fn contains_x(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    fn check_x(&self, x: f64) -> Result<()> {
        if self.contains_x(x) {
            Ok(())
        } else {
            Err(Error::OutOfRange { what: "x", value: x, lo: self.a, hi: self.b })
        }
    }

    /// Lower boundary `f1(x)`, evaluated without a range check.
    pub fn f1(&self, x: f64) -> f64 {
        match &self.boundary {
            Boundary::Rectangle | Boundary::Omega1 { .. } | Boundary::Omega2 { .. } => 0.0,
            Boundary::Ellipse { n } => 0.5 - ellipse_half_height(*n, x),
            Boundary::Piecewise { lower, .. } => interpolate_chain(lower, x),
            Boundary::Custom { f1, .. } => f1(x),
        }
    }

    /// Upper boundary `f2(x)`, evaluated without a range check.
    pub fn f2(&self, x: f64) -> f64 {
        match &self.boundary {
            Boundary::Rectangle => 1.0,
            Boundary::Ellipse { n } => 0.5 + ellipse_half_height(*n, x),
            Boundary::Omega1 { n } => omega1_height(*n, x),
            Boundary::Omega2 { n } => omega2_height(*n, x),
            Boundary::Piecewise { upper, .. } => interpolate_chain(upper, x),
            Boundary::Custom { f2, .. } => f2(x),
        }
    }

    /// `h(x) = f2(x) - f1(x)` without a range check.
    pub fn h(&self, x: f64) -> f64 {
        self.f2(x) - self.f1(x)
    }

    /// Height of the vertical cross-section at `x`.
    pub fn height(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.h(x))
    }

    /// `d(x) = min(x - a, b - x)`.
    pub fn dist_to_ends(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok((x - self.a).min(self.b - x))
    }

    /// True when `(x, y)` lies in the closed domain (with a small slack).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        const SLACK: f64 = 1e-12;
        self.contains_x(x) && y >= self.f1(x) - SLACK && y <= self.f2(x) + SLACK
    }

    /// Points where `f1` or `f2` fail to be differentiable.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = match &self.boundary {
            Boundary::Rectangle | Boundary::Ellipse { .. } => Vec::new(),
            Boundary::Omega1 { n } => vec![n.sqrt()],
            Boundary::Omega2 { n } => {
                let q = n.powf(0.25);
                vec![-q, q]
            }
            Boundary::Piecewise { lower, upper } => {
                lower.iter().chain(upper.iter()).map(|p| p[0]).collect()
            }
            Boundary::Custom { breakpoints, .. } => breakpoints.clone(),
        };
        out.retain(|x| *x > self.a && *x < self.b);
        out.sort_by(|p, q| p.total_cmp(q));
        out.dedup();
        out
    }

    /// Sample abscissae used by invariant checks: uniform points plus breakpoints.
    pub fn invariant_samples(&self, count: usize) -> Vec<f64> {
        let mut xs: Vec<f64> = (0..=count)
            .map(|k| self.a + (self.b - self.a) * k as f64 / count as f64)
            .collect();
        xs.extend(self.breakpoints());
        xs.sort_by(|p, q| p.total_cmp(q));
        xs.dedup();
        xs
    }

    /// Analytic boundary derivatives `[f, f', f'']`, when the family has them
    /// and `x` is not a breakpoint.
    pub fn boundary_derivatives(&self, x: f64) -> Option<BoundaryDerivatives> {
        if self.breakpoints().iter().any(|bp| (bp - x).abs() < 1e-12) {
            return None;
        }
        match &self.boundary {
            Boundary::Rectangle => Some(BoundaryDerivatives { f1: [0.0; 3], f2: [1.0, 0.0, 0.0] }),
            Boundary::Ellipse { n } => {
                let s = ellipse_half_height(*n, x);
                if s <= 0.0 {
                    return None;
                }
                let ds = -x / (n * n * s);
                let dds = -1.0 / (4.0 * n * n * s * s * s);
                Some(BoundaryDerivatives { f1: [0.5 - s, -ds, -dds], f2: [0.5 + s, ds, dds] })
            }
            Boundary::Omega1 { n } => {
                let root = n.sqrt();
                let slope = if x < root { 1.0 / root } else { -1.0 / (n * n * n) };
                Some(BoundaryDerivatives { f1: [0.0; 3], f2: [omega1_height(*n, x), slope, 0.0] })
            }
            Boundary::Omega2 { n } => {
                let q = n.powf(0.25);
                let (d1, d2) = if x.abs() < q {
                    (-2.0 * x / (n * n), -2.0 / (n * n))
                } else {
                    let scale = 1.0 - n.powf(-1.5);
                    (-x.signum() * scale / (0.5 * n - q), 0.0)
                };
                Some(BoundaryDerivatives { f1: [0.0; 3], f2: [omega2_height(*n, x), d1, d2] })
            }
            Boundary::Piecewise { lower, upper } => Some(BoundaryDerivatives {
                f1: [interpolate_chain(lower, x), chain_slope(lower, x), 0.0],
                f2: [interpolate_chain(upper, x), chain_slope(upper, x), 0.0],
            }),
            Boundary::Custom { .. } => None,
        }
    }

    /// A point `x̄` where `h` attains its maximum; the midpoint of the maximal
    /// plateau when `h` is constant near its maximum.
    pub fn x_bar(&self) -> f64 {
        match &self.boundary {
            Boundary::Rectangle | Boundary::Ellipse { .. } | Boundary::Omega2 { .. } => {
                0.5 * (self.a + self.b)
            }
            Boundary::Omega1 { n } => n.sqrt(),
            _ => self.plateau_midpoint(),
        }
    }

    fn plateau_midpoint(&self) -> f64 {
        let xs = self.invariant_samples(INVARIANT_SAMPLES);
        let hmax = xs.iter().map(|&x| self.h(x)).fold(f64::NEG_INFINITY, f64::max);
        // refine the maximum itself with a golden-section search around the best sample
        let k = xs
            .iter()
            .position(|&x| self.h(x) >= hmax)
            .unwrap_or(0);
        let lo = xs[k.saturating_sub(1)];
        let hi = xs[(k + 1).min(xs.len() - 1)];
        let peak = golden_max(|x| self.h(x), lo, hi, 1e-13);
        let hpeak = self.h(peak).max(hmax);
        let level = hpeak - 1e-12;
        let left = if self.h(self.a) >= level {
            self.a
        } else {
            bisect_crossing(|x| self.h(x) - level, self.a, peak, CROSSING_TOL * 1e-2)
        };
        let right = if self.h(self.b) >= level {
            self.b
        } else {
            bisect_crossing(|x| self.h(x) - level, self.b, peak, CROSSING_TOL * 1e-2)
        };
        0.5 * (left + right)
    }

    /// Maximum of `h`.
    pub fn h_max(&self) -> f64 {
        let xs = self.invariant_samples(INVARIANT_SAMPLES);
        let sampled = xs.iter().map(|&x| self.h(x)).fold(f64::NEG_INFINITY, f64::max);
        sampled.max(self.h(self.x_bar()))
    }

    /// Endpoints of `{x : h(x) >= level}` (an interval by concavity). Returns
    /// `None` when the set is empty.
    pub fn superlevel_interval(&self, level: f64) -> Option<[f64; 2]> {
        let xbar = self.x_bar();
        if self.h(xbar) < level {
            return None;
        }
        let left = if self.h(self.a) >= level {
            self.a
        } else {
            bisect_crossing(|x| self.h(x) - level, self.a, xbar, CROSSING_TOL)
        };
        let right = if self.h(self.b) >= level {
            self.b
        } else {
            bisect_crossing(|x| self.h(x) - level, self.b, xbar, CROSSING_TOL)
        };
        Some([left, right])
    }
}

fn ellipse_half_height(n: f64, x: f64) -> f64 {
    (0.25 - x * x / (n * n)).max(0.0).sqrt()
}

fn omega1_height(n: f64, x: f64) -> f64 {
    let root = n.sqrt();
    if x <= root {
        x / root
    } else {
        1.0 - (x - root) / (n * n * n)
    }
}

fn omega2_height(n: f64, x: f64) -> f64 {
    let q = n.powf(0.25);
    let ax = x.abs();
    if ax <= q {
        1.0 - ax * ax / (n * n)
    } else {
        (1.0 - n.powf(-1.5)) * (1.0 - (ax - q) / (0.5 * n - q))
    }
}

fn interpolate_chain(chain: &[[f64; 2]], x: f64) -> f64 {
    let k = chain.partition_point(|p| p[0] <= x);
    if k == 0 {
        return chain[0][1];
    }
    if k >= chain.len() {
        return chain[chain.len() - 1][1];
    }
    let [x0, y0] = chain[k - 1];
    let [x1, y1] = chain[k];
    if x1 == x0 {
        return y1.max(y0);
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn chain_slope(chain: &[[f64; 2]], x: f64) -> f64 {
    let k = chain.partition_point(|p| p[0] <= x).clamp(1, chain.len() - 1);
    let [x0, y0] = chain[k - 1];
    let [x1, y1] = chain[k];
    if x1 == x0 {
        0.0
    } else {
        (y1 - y0) / (x1 - x0)
    }
}

fn signed_area(vs: &[[f64; 2]]) -> f64 {
    let n = vs.len();
    (0..n)
        .map(|i| {
            let p = vs[i];
            let q = vs[(i + 1) % n];
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Splits a polygon into lower and upper chains running left to right.
type Chain = Vec<[f64; 2]>;

fn split_chains(vertices: &[[f64; 2]]) -> Result<(Chain, Chain)> {
    let mut vs = vertices.to_vec();
    if signed_area(&vs) < 0.0 {
        vs.reverse();
    }
    let n = vs.len();
    let xmin = vs.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let xmax = vs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let pick = |target: f64, lowest: bool| -> usize {
        let mut best = usize::MAX;
        for (i, p) in vs.iter().enumerate() {
            if p[0] == target {
                let better = best == usize::MAX
                    || (lowest && p[1] < vs[best][1])
                    || (!lowest && p[1] > vs[best][1]);
                if better {
                    best = i;
                }
            }
        }
        best
    };
    let left_bottom = pick(xmin, true);
    let left_top = pick(xmin, false);
    let right_bottom = pick(xmax, true);
    let right_top = pick(xmax, false);

    // counter-clockwise: bottom-left -> bottom-right is the lower chain
    let mut lower = Vec::new();
    let mut i = left_bottom;
    loop {
        lower.push(vs[i]);
        if i == right_bottom {
            break;
        }
        i = (i + 1) % n;
        if lower.len() > n {
            return Err(Error::InvalidDomain("could not trace lower chain".into()));
        }
    }
    let mut upper = Vec::new();
    let mut i = right_top;
    loop {
        upper.push(vs[i]);
        if i == left_top {
            break;
        }
        i = (i + 1) % n;
        if upper.len() > n {
            return Err(Error::InvalidDomain("could not trace upper chain".into()));
        }
    }
    upper.reverse();
    for chain in [&lower, &upper] {
        if chain.windows(2).any(|w| w[1][0] < w[0][0]) {
            return Err(Error::InvalidDomain(
                "boundary chain is not monotone in x (polygon not convex)".into(),
            ));
        }
    }
    Ok((lower, upper))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Rotating calipers over hull edges: the minimal-width orientation has one
/// hull edge flush with a supporting line.
pub fn normalize_polygon(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::InvalidDomain("polygon is degenerate".into()));
    }
    let n = hull.len();
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n {
        let p = hull[i];
        let q = hull[(i + 1) % n];
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        if len == 0.0 {
            continue;
        }
        let width = hull
            .iter()
            .map(|r| cross(p, q, *r).abs() / len)
            .fold(0.0, f64::max);
        if best.is_none_or(|(w, _)| width < w) {
            best = Some((width, i));
        }
    }
    let (width, i) = best.ok_or_else(|| Error::InvalidDomain("polygon is degenerate".into()))?;
    if width <= 0.0 {
        return Err(Error::InvalidDomain("polygon has zero width".into()));
    }
    let p = hull[i];
    let q = hull[(i + 1) % n];
    let angle = (q[1] - p[1]).atan2(q[0] - p[0]);
    // counter-clockwise hull: the interior lies to the left of p->q, so rotating
    // the edge onto +x puts the polygon above it
    let (s, c) = (-angle).sin_cos();
    let mut out: Vec<[f64; 2]> = hull
        .iter()
        .map(|r| {
            let dx = r[0] - p[0];
            let dy = r[1] - p[1];
            [(c * dx - s * dy) / width, (s * dx + c * dy) / width]
        })
        .collect();
    let xmin = out.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
    let ymin = out.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min);
    for r in &mut out {
        r[0] -= xmin;
        r[1] = (r[1] - ymin).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Bisection for a sign change of `g` between `outside` (g < 0) and `inside`
/// (g >= 0). Returns the crossing abscissa, on the side where `g >= 0`.
pub fn bisect_crossing<G: Fn(f64) -> f64>(g: G, outside: f64, inside: f64, tol: f64) -> f64 {
    let (mut out, mut inn) = (outside, inside);
    for _ in 0..200 {
        if (out - inn).abs() <= tol {
            break;
        }
        let mid = 0.5 * (out + inn);
        if g(mid) >= 0.0 {
            inn = mid;
        } else {
            out = mid;
        }
    }
    inn
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub fn golden_max<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut g1 = g(x1);
    let mut g2 = g(x2);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + INV_PHI * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - INV_PHI * (hi - lo);
            g1 = g(x1);
        }
    }
    if g1 >= g2 {
        x1
    } else {
        x2
    }
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `0 <= f1 <= f2 <= 1` fails.
    Ordering,
    /// `f1` is not convex.
    Convexity,
    /// `f2` is not concave.
    Concavity,
    /// `max h != 1`.
    Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub x: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Checks ordering, convexity/concavity and normalization on
/// [`INVARIANT_SAMPLES`] uniform samples plus breakpoints.
pub fn validate(domain: &ConvexDomain) -> ValidationReport {
    const TOL: f64 = 1e-10;
    let mut violations = Vec::new();
    let xs = domain.invariant_samples(INVARIANT_SAMPLES);
    for &x in &xs {
        let (f1, f2) = (domain.f1(x), domain.f2(x));
        if !(f1 >= -TOL && f1 <= f2 + TOL && f2 <= 1.0 + TOL) {
            violations.push(Violation {
                kind: ViolationKind::Ordering,
                x,
                detail: format!("f1 = {f1}, f2 = {f2}"),
            });
        }
    }
    let step = domain.length() / INVARIANT_SAMPLES as f64;
    for &x in &xs {
        if x - step < domain.a() || x + step > domain.b() {
            continue;
        }
        let d1 = domain.f1(x - step) - 2.0 * domain.f1(x) + domain.f1(x + step);
        let d2 = domain.f2(x - step) - 2.0 * domain.f2(x) + domain.f2(x + step);
        if d1 < -TOL {
            violations.push(Violation {
                kind: ViolationKind::Convexity,
                x,
                detail: format!("second difference of f1 = {d1:e}"),
            });
        }
        if d2 > TOL {
            violations.push(Violation {
                kind: ViolationKind::Concavity,
                x,
                detail: format!("second difference of f2 = {d2:e}"),
            });
        }
    }
    let hmax = domain.h_max();
    if (hmax - 1.0).abs() > NORMALIZATION_TOL {
        violations.push(Violation {
            kind: ViolationKind::Normalization,
            x: domain.x_bar(),
            detail: format!("max h = {hmax}"),
        });
    }
    ValidationReport { valid: violations.is_empty(), violations }
}

// ---------------------------------------------------------------------------
// length scale

/// The length scale `L`, the interval `I` realizing it and the concentric
/// interval `I'` of half length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleReport {
    #[serde(rename = "L")]
    pub l: f64,
    pub interval: [f64; 2],
    pub interval_half: [f64; 2],
}

/// Largest `L` such that `h >= 1 - L^-2` on some interval of length `L`.
///
/// By concavity the superlevel set of `h` at `1 - L^-2` is an interval whose
/// length decreases in `L`, so the window condition is monotone and bisection
/// on `L` finds the maximum.
pub fn length_scale(domain: &ConvexDomain) -> LengthScaleReport {
    let n = domain.length();
    let excess = |l: f64| -> f64 {
        match domain.superlevel_interval(1.0 - l.powi(-2)) {
            Some([lo, hi]) => hi - lo - l,
            None => -l,
        }
    };
    let l = if excess(n) >= 0.0 {
        n
    } else {
        let (mut lo, mut hi) = (f64::MIN_POSITIVE.max(1e-6), n);
        for _ in 0..200 {
            if hi - lo <= 1e-13 * n {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if excess(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let [s0, s1] = domain
        .superlevel_interval(1.0 - l.powi(-2))
        .unwrap_or([domain.a(), domain.b()]);
    let centre = (0.5 * (s0 + s1)).clamp(domain.a() + 0.5 * l, domain.b() - 0.5 * l);
    LengthScaleReport {
        l,
        interval: [centre - 0.5 * l, centre + 0.5 * l],
        interval_half: [centre - 0.25 * l, centre + 0.25 * l],
    }
}

// ---------------------------------------------------------------------------
// flatness certificate

/// A flatness certificate near the thickest cross-section: for every `x̃`
/// between `x_minus` and `x_plus` the error functional is at most `delta/100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyMaxCertificate {
    #[serde(rename = "M")]
    pub m: f64,
    pub delta: f64,
    pub x_minus: f64,
    pub x_plus: f64,
    /// Largest error functional found on `[x_minus, x_plus]`.
    pub error_at_worst: f64,
    pub x_worst: f64,
    /// `x_minus`/`x_plus` were clipped to `x̄ ∓ M` because `h` is constant on
    /// that side.
    pub clipped_minus: bool,
    pub clipped_plus: bool,
    pub c1: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertySearch {
    /// Number of logarithmically spaced `delta` candidates.
    pub delta_count: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Density of the `x̃` grid on `[x_minus, x_plus]` (points per unit length).
    pub points_per_unit: f64,
    /// Minimum number of `x̃` points regardless of interval length.
    pub min_points: usize,
}

impl Default for PropertySearch {
    fn default() -> Self {
        Self { delta_count: 64, delta_min: 1e-6, delta_max: 0.25, points_per_unit: 16.0, min_points: 33 }
    }
}

impl PropertySearch {
    pub fn delta_grid(&self) -> Vec<f64> {
        let n = self.delta_count.max(2);
        let (l0, l1) = (self.delta_min.ln(), self.delta_max.ln());
        (0..n).map(|k| (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp()).collect()
    }
}

/// Points `x_±` in `[x̄ - M, x̄]`, `[x̄, x̄ + M]` with `h(x_±) = 1 - 2 delta`.
/// A side on which `h` is constant is clipped to `x̄ ∓ M`; `None` when `h`
/// drops on a side but not as far as `1 - 2 delta` within `M`.
pub fn level_points(domain: &ConvexDomain, m: f64, delta: f64) -> Option<([f64; 2], [bool; 2])> {
    let xbar = domain.x_bar();
    let top = domain.h(xbar);
    let level = top - 2.0 * delta;
    let side = |end: f64| -> Option<(f64, bool)> {
        let he = domain.h(end);
        if he >= top {
            Some((end, true))
        } else if he > level {
            None
        } else {
            Some((bisect_crossing(|x| domain.h(x) - level, end, xbar, CROSSING_TOL), false))
        }
    };
    let (xm, cm) = side(xbar - m)?;
    let (xp, cp) = side(xbar + m)?;
    Some(([xm, xp], [cm, cp]))
}

/// Largest error functional value over an `x̃` grid on `[lo, hi]`. Stops early
/// (returning the first value above `cap`) when `cap` is given.
pub fn worst_error(
    domain: &ConvexDomain,
    lo: f64,
    hi: f64,
    points: usize,
    c1: f64,
    big_c1: f64,
    cap: Option<f64>,
) -> Result<(f64, f64)> {
    let points = points.max(2);
    let mut order: Vec<usize> = vec![0, points - 1];
    order.extend(1..points - 1);
    let mut worst = (f64::NEG_INFINITY, lo);
    for k in order {
        let xt = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let total = error_budget(domain, xt, c1, big_c1)?.total;
        if total > worst.0 {
            worst = (total, xt);
        }
        if let Some(cap) = cap {
            if total > cap {
                return Ok(worst);
            }
        }
    }
    Ok(worst)
}

/// Searches a logarithmic `delta` grid (largest first) for a flatness
/// certificate with calibrated constants `(c1, C1)`.
pub fn find_property_max(
    domain: &ConvexDomain,
    m: f64,
    c1: f64,
    big_c1: f64,
) -> Result<Option<PropertyMaxCertificate>> {
    find_property_max_with(domain, m, c1, big_c1, &PropertySearch::default())
}

pub fn find_property_max_with(
    domain: &ConvexDomain,
    m: f64,
    c1: f64,
    big_c1: f64,
    search: &PropertySearch,
) -> Result<Option<PropertyMaxCertificate>> {
    if !(m > 2.0) {
        return Err(Error::OutOfRange { what: "M", value: m, lo: 2.0, hi: f64::INFINITY });
    }
    if !(c1 > 0.0 && big_c1 > 0.0) {
        return Err(Error::Config(format!("kernel constants must be positive, got c1={c1}, C1={big_c1}")));
    }
    let xbar = domain.x_bar();
    if xbar - m < domain.a() || xbar + m > domain.b() {
        return Err(Error::Geometry(format!(
            "x̄ ± M = [{}, {}] leaves [{}, {}]",
            xbar - m,
            xbar + m,
            domain.a(),
            domain.b()
        )));
    }
    let mut grid = search.delta_grid();
    grid.reverse();
    for delta in grid {
        let Some(([xm, xp], [cm, cp])) = level_points(domain, m, delta) else {
            continue;
        };
        let points = (((xp - xm) * search.points_per_unit).ceil() as usize + 1).max(search.min_points);
        let cap = delta / 100.0;
        let (worst, x_worst) = worst_error(domain, xm, xp, points, c1, big_c1, Some(cap))?;
        if worst <= cap {
            return Ok(Some(PropertyMaxCertificate {
                m,
                delta,
                x_minus: xm,
                x_plus: xp,
                error_at_worst: worst,
                x_worst,
                clipped_minus: cm,
                clipped_plus: cp,
                c1,
                big_c1,
            }));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// configuration

/// Domain description as stored in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: String,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    /// For polygons: rotate to the minimal-width orientation and rescale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
}

impl DomainSpec {
    pub fn new(kind: &str, n: f64) -> Self {
        Self { kind: kind.to_string(), n: Some(n), vertices: None, normalize: None }
    }

    pub fn build(&self) -> Result<ConvexDomain> {
        let need_n = || self.n.ok_or_else(|| Error::Config(format!("domain '{}' needs N", self.kind)));
        match self.kind.as_str() {
            "rectangle" => ConvexDomain::rectangle(need_n()?),
            "ellipse" => ConvexDomain::ellipse(need_n()?),
            "omega1" => ConvexDomain::omega1(need_n()?),
            "omega2" => ConvexDomain::omega2(need_n()?),
            "piecewise_linear" => {
                let vs = self
                    .vertices
                    .as_ref()
                    .ok_or_else(|| Error::Config("piecewise_linear needs vertices".into()))?;
                if self.normalize.unwrap_or(true) {
                    ConvexDomain::polygon_normalized(vs)
                } else {
                    ConvexDomain::piecewise_linear(vs)
                }
            }
            "custom_height" => Err(Error::Config("custom_height domains are code-only".into())),
            other => Err(Error::Config(format!("unknown domain kind '{other}'"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heights_of_families() {
        assert_eq!(ConvexDomain::rectangle(4.0).unwrap().height(1.0).unwrap(), 1.0);
        let o1 = ConvexDomain::omega1(16.0).unwrap();
        assert!((o1.height(4.0).unwrap() - 1.0).abs() < 1e-15);
        let o2 = ConvexDomain::omega2(16.0).unwrap();
        assert!((o2.height(2.0).unwrap() - (1.0 - 1.0 / 64.0)).abs() < 1e-15);
        assert!((o2.height(-2.0).unwrap() - (1.0 - 1.0 / 64.0)).abs() < 1e-15);
        assert!(o2.height(8.0).unwrap().abs() < 1e-15);
        let e = ConvexDomain::ellipse(8.0).unwrap();
        assert!((e.height(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(e.height(4.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn out_of_range_queries_fail() {
        let r = ConvexDomain::rectangle(4.0).unwrap();
        assert!(matches!(r.height(2.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(r.dist_to_ends(-3.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn distance_to_ends() {
        let r = ConvexDomain::rectangle(10.0).unwrap();
        assert_eq!(r.dist_to_ends(0.0).unwrap(), 5.0);
        assert_eq!(r.dist_to_ends(r.a()).unwrap(), 0.0);
        let o1 = ConvexDomain::omega1(16.0).unwrap();
        assert_eq!(o1.dist_to_ends(4.0).unwrap(), 4.0);
    }

    #[test]
    fn built_in_families_validate() {
        for d in [
            ConvexDomain::rectangle(4.0).unwrap(),
            ConvexDomain::ellipse(8.0).unwrap(),
            ConvexDomain::omega1(16.0).unwrap(),
            ConvexDomain::omega2(64.0).unwrap(),
        ] {
            let report = validate(&d);
            assert!(report.valid, "{}: {:?}", d.label(), report.violations.first());
        }
    }

    #[test]
    fn wavy_top_is_rejected() {
        let d = ConvexDomain::custom("wavy", 0.0, 10.0, |_| 0.0, |x: f64| 1.0 + 0.1 * x.sin()).unwrap();
        let report = validate(&d);
        assert!(!report.valid);
        assert!(report.has(ViolationKind::Ordering));
    }

    #[test]
    fn non_concave_upper_chain_is_rejected() {
        // the upper chain dips at x = 2
        let vs = [[0.0, 0.0], [4.0, 0.0], [4.0, 1.0], [2.0, 0.5], [0.0, 1.0]];
        let d = ConvexDomain::piecewise_linear(&vs).unwrap();
        let report = validate(&d);
        assert!(report.has(ViolationKind::Concavity), "{report:?}");
    }

    #[test]
    fn polygon_normalization_rotates_to_min_width() {
        // a 6 x 1 rectangle rotated by 30 degrees and scaled by 3
        let (s, c) = (30f64.to_radians()).sin_cos();
        let corners = [[0.0, 0.0], [6.0, 0.0], [6.0, 1.0], [0.0, 1.0]];
        let pts: Vec<[f64; 2]> = corners
            .iter()
            .map(|p| [3.0 * (c * p[0] - s * p[1]) + 1.0, 3.0 * (s * p[0] + c * p[1]) - 2.0])
            .collect();
        let d = ConvexDomain::polygon_normalized(&pts).unwrap();
        assert!((d.length() - 6.0).abs() < 1e-9);
        assert!((d.h(3.0) - 1.0).abs() < 1e-9);
        assert!(validate(&d).valid);
    }

    #[test]
    fn rectangle_length_scale_is_n() {
        let r = length_scale(&ConvexDomain::rectangle(8.0).unwrap());
        assert!((r.l - 8.0).abs() < 1e-9);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = DomainSpec::from_json(r#"{"kind": "omega2", "N": 32}"#).unwrap();
        assert_eq!(spec.n, Some(32.0));
        assert!(matches!(spec.build().unwrap().kind(), DomainKind::Omega2 { .. }));
        assert!(DomainSpec::from_json(r#"{"kind": "custom_height"}"#).unwrap().build().is_err());
        assert!(DomainSpec::from_json(r#"{"kind": "rectangle"}"#).unwrap().build().is_err());
    }

    #[test]
    fn certificates_use_genuine_level_points() {
        let pi = std::f64::consts::PI;
        let o2 = ConvexDomain::omega2(64.0).unwrap();
        let c = find_property_max(&o2, 8.0, pi, 0.0107).unwrap().unwrap();
        assert!(!c.clipped_minus && !c.clipped_plus);
        let cap = 0.5 * (1.0 - o2.h(8.0));
        assert!(c.delta > 0.0 && c.delta <= cap, "{} vs {cap}", c.delta);
        assert!((o2.h(c.x_plus) - (1.0 - 2.0 * c.delta)).abs() < 1e-9);
        assert!(level_points(&o2, 8.0, 0.25).is_none());

        let rect = ConvexDomain::rectangle(64.0).unwrap();
        let c = find_property_max(&rect, 8.0, pi, 1.0).unwrap().unwrap();
        assert!(c.clipped_minus && c.clipped_plus);
        assert!((c.delta - PropertySearch::default().delta_max).abs() < 1e-12);
    }
}
