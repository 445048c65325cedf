//! Jacobi-preconditioned conjugate gradients and a banded LDL^T factorization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Operator;
use crate::sum::dot;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CgStats {
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`.
    pub relative_residual: f64,
}

/// Solves `A x = b` in place, starting from the given `x`.
pub fn pcg(op: &Operator, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<CgStats> {
    let n = op.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = b.par_iter().zip(ax.par_iter()).map(|(bi, ai)| bi - ai).collect();
    let inv_diag: Vec<f64> = op.diag.par_iter().map(|d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.par_iter().zip(inv_diag.par_iter()).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rnorm = dot(&r, &r).sqrt();
    let mut it = 0;
    while rnorm > rel_tol * bnorm {
        if it >= max_iter {
            return Err(Error::Numerical {
                message: "conjugate gradients did not converge".into(),
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical {
                message: "operator is not positive definite".into(),
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, api)| *ri -= alpha * api);
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, di))| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        rnorm = dot(&r, &r).sqrt();
        it += 1;
    }
    // report the true residual, not the recursively updated one
    op.apply(x, &mut ax);
    let true_res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
    Ok(CgStats { iterations: it, relative_residual: true_res / bnorm })
}

/// `A - shift I = L D L^T` with unit lower-triangular banded `L`.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i - bw ..= i - 1]` at offsets `0..bw`.
    lower: Vec<f64>,
    d: Vec<f64>,
}

impl BandedLdl {
    /// Factors `op - shift I` without pivoting.
    pub fn factor(op: &Operator, shift: f64) -> Result<Self> {
        let n = op.len();
        let bw = op.bandwidth().max(1);
        let mut lower = vec![0.0; n * bw];
        let mut d = vec![0.0; n];
        let mut work = vec![0.0; bw];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            // entries of A in row i below the diagonal
            work.iter_mut().for_each(|w| *w = 0.0);
            for (dir, &m) in op.nbr[i].iter().enumerate() {
                if m != u32::MAX && (m as usize) < i {
                    let c = if dir < 2 { op.cx } else { op.cy };
                    work[m as usize + bw - i] = -c;
                }
            }
            // work[j - lo'] becomes L[i][j] D[j]
            for j in lo..i {
                let wj = j + bw - i;
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = work[wj];
                let row_j = &lower[j * bw..(j + 1) * bw];
                for k in klo..j {
                    s -= work[k + bw - i] * row_j[k + bw - j];
                }
                work[wj] = s;
            }
            let mut di = op.diag[i] - shift;
            let row_i = &mut lower[i * bw..(i + 1) * bw];
            for j in lo..i {
                let wj = j + bw - i;
                let l = work[wj] / d[j];
                row_i[wj] = l;
                di -= l * work[wj];
            }
            if di == 0.0 || !di.is_finite() {
                return Err(Error::Numerical {
                    message: format!("zero pivot in banded factorization at row {i}"),
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
            d[i] = di;
        }
        Ok(Self { n, bw, lower, d })
    }

    /// Number of negative pivots, i.e. eigenvalues of `A` below the shift.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.lower[i * bw..(i + 1) * bw];
            let mut s = x[i];
            for j in lo..i {
                s -= row[j + bw - i] * x[j];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            let row = &self.lower[i * bw..(i + 1) * bw];
            let xi = x[i];
            for j in lo..i {
                x[j] -= row[j + bw - i] * xi;
            }
        }
        x
    }
}
