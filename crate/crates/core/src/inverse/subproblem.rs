//! Exact minimizer of the quadratic model `g^T p + p^T B p / 2` on the ball
//! `|p| <= delta`, by eigendecomposition of `B` and a secular-equation solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub step: DVector<f64>,
    /// `g^T p + p^T B p / 2`.
    pub model: f64,
    pub on_boundary: bool,
}

pub fn model_value(g: &DVector<f64>, b: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    g.dot(p) + 0.5 * p.dot(&(b * p))
}

pub fn solve_tr_subproblem(g: &DVector<f64>, b: &DMatrix<f64>, delta: f64) -> Subproblem {
    assert!(delta > 0.0, "trust radius must be positive");
    let k = g.len();
    let sym = (b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let gt = q.transpose() * g;

    let scale = lam
        .iter()
        .fold(0.0f64, |a, l| a.max(l.abs()))
        .max(f64::MIN_POSITIVE);
    let gnorm = g.norm();
    let finish = |coef: DVector<f64>, on_boundary: bool| {
        let mut step = &q * coef;
        let n = step.norm();
        if n > delta {
            step *= delta / n;
        }
        let model = model_value(g, &sym, &step);
        Subproblem {
            step,
            model,
            on_boundary,
        }
    };
    let coef_at = |sigma: f64, skip: &[bool]| {
        DVector::from_fn(k, |i, _| {
            if skip[i] {
                0.0
            } else {
                -gt[i] / (lam[i] + sigma)
            }
        })
    };
    let none = vec![false; k];

    if gnorm == 0.0 && lam[0] >= 0.0 {
        return finish(DVector::zeros(k), false);
    }

    // interior Newton step
    if lam[0] > 1e-14 * scale {
        let p = coef_at(0.0, &none);
        if p.norm() <= delta {
            return finish(p, false);
        }
    }

    let sigma_lo = (-lam[0]).max(0.0);
    let degenerate: Vec<bool> = lam.iter().map(|l| *l <= lam[0] + 1e-12 * scale).collect();
    let tiny = 1e-13 * gnorm.max(f64::MIN_POSITIVE);
    let hard = degenerate
        .iter()
        .zip(gt.iter())
        .filter(|(d, _)| **d)
        .all(|(_, gi)| gi.abs() <= tiny);
    if hard {
        let p = coef_at(sigma_lo, &degenerate);
        let pn = p.norm();
        if pn < delta {
            // hard case: complete the step along the lowest eigenvector
            let tau = (delta * delta - pn * pn).sqrt();
            let mut coef = p;
            coef[0] += tau;
            return finish(coef, true);
        }
    }

    // |p(sigma)| = delta on sigma > sigma_lo, monotone decreasing in sigma
    let norm_at = |s: f64| coef_at(s, &none).norm();
    let mut lo = sigma_lo;
    let mut hi = sigma_lo.max(0.0) + gnorm / delta + scale;
    while norm_at(hi) > delta {
        hi *= 2.0;
    }
    let mut sigma = hi;
    for _ in 0..200 {
        // Newton on 1/|p| - 1/delta, falling back to bisection
        let p = coef_at(sigma, &none);
        let pn = p.norm();
        let phi = 1.0 / pn - 1.0 / delta;
        if phi.abs() <= 1e-15 / delta {
            break;
        }
        if phi > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let dp: f64 = (0..k).map(|i| p[i] * p[i] / (lam[i] + sigma)).sum();
        let dphi = dp / (pn * pn * pn);
        let mut next = sigma - phi / dphi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - sigma).abs() <= 1e-16 * sigma.abs().max(f64::MIN_POSITIVE) {
            sigma = next;
            break;
        }
        sigma = next;
    }
    finish(coef_at(sigma, &none), true)
}
