//! Finite-difference Jacobians and a box-constrained Levenberg–Marquardt
//! solver for small nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;

/// Forward-difference Jacobian; columns are evaluated in parallel and placed
/// by index, so the result does not depend on the worker count.
pub fn fd_jacobian<F>(f: &F, x: &DVector<f64>, f0: &DVector<f64>, eps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let cols: Vec<Result<DVector<f64>>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            xp[j] += eps[j];
            let fp = f(&xp)?;
            Ok((fp - f0) / eps[j])
        })
        .collect();
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for (j, c) in cols.into_iter().enumerate() {
        jac.set_column(j, &c?);
    }
    Ok(jac)
}

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop once `|r|` falls below this value.
    pub tol: f64,
    /// Stop when an accepted step reduces `|r|^2` by less than this fraction.
    pub rel_decrease: f64,
    pub lambda0: f64,
    pub fd_eps: Vec<f64>,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut DVector<f64>, lo: &Option<DVector<f64>>, hi: &Option<DVector<f64>>) {
    if let Some(lo) = lo {
        x.zip_apply(lo, |v, l| *v = v.max(l));
    }
    if let Some(hi) = hi {
        x.zip_apply(hi, |v, h| *v = v.min(h));
    }
}

/// Minimizes `|f(x)|^2` with damped Gauss–Newton steps, projecting each trial
/// point onto the box. A failed residual evaluation counts as a rejected step.
pub fn levenberg_marquardt<F>(f: &F, x0: &DVector<f64>, opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let mut x = x0.clone();
    project(&mut x, &opts.lower, &opts.upper);
    let mut r = f(&x)?;
    let mut cost = r.norm_squared();
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let n = x.len();
    while iterations < opts.max_iter && cost.sqrt() > opts.tol {
        iterations += 1;
        let jac = fd_jacobian(f, &x, &r, &opts.fd_eps)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(1e-300);
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (jtj[(i, i)] + 1e-12 * scale);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &x + step;
            project(&mut trial, &opts.lower, &opts.upper);
            if let Ok(rt) = f(&trial) {
                let ct = rt.norm_squared();
                if ct.is_finite() && ct < cost {
                    let decrease = (cost - ct) / cost;
                    x = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 5.0).max(1e-12);
                    accepted = true;
                    if decrease < opts.rel_decrease {
                        return Ok(LmReport { converged: cost.sqrt() <= opts.tol, norm: cost.sqrt(), x, residual: r, iterations });
                    }
                    break;
                }
            }
            lambda *= 8.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(LmReport { converged: cost.sqrt() <= opts.tol, norm: cost.sqrt(), x, residual: r, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_rosenbrock_residuals() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]));
        let opts = LmOptions {
            max_iter: 200,
            tol: 1e-12,
            rel_decrease: 0.0,
            lambda0: 1e-3,
            fd_eps: vec![1e-8; 2],
            lower: None,
            upper: None,
        };
        let rep = levenberg_marquardt(&f, &DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] - 3.0]));
        let opts = LmOptions {
            max_iter: 50,
            tol: 1e-12,
            rel_decrease: 0.0,
            lambda0: 1e-3,
            fd_eps: vec![1e-7],
            lower: Some(DVector::from_vec(vec![-1.0])),
            upper: Some(DVector::from_vec(vec![1.0])),
        };
        let rep = levenberg_marquardt(&f, &DVector::from_vec(vec![0.0]), &opts).unwrap();
        assert_eq!(rep.x[0], 1.0);
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let f = |x: &DVector<f64>| Ok(&a * x);
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let j = fd_jacobian(&f, &x, &f(&x).unwrap(), &[1e-6; 3]).unwrap();
        assert!((j - &a).norm() < 1e-8);
    }
}
