//! Trust-region minimization with an exact-Hessian or BFGS quadratic model.

use nalgebra::{DMatrix, DVector};

use super::subproblem::{solve_tr_subproblem, Subproblem};
use super::{FitResult, Termination, TraceRow};
use crate::error::{Error, Result};
use crate::sensitivity::Objective;

/// Predicted reductions below this fraction of the loss are rounding noise.
const NEGLIGIBLE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelUpdate {
    Newton,
    /// Starts from the exact Hessian at the initial point.
    Bfgs,
}

#[derive(Debug, Clone)]
pub struct TrustRegionOptions {
    pub delta_max: f64,
    pub delta0: f64,
    pub eta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub update: ModelUpdate,
    /// Measure steps relative to `|theta_0|` per coordinate instead of in the
    /// plain Euclidean norm.
    pub relative_scaling: bool,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        TrustRegionOptions {
            delta_max: 100.0,
            delta0: 1.0,
            eta: 0.1,
            max_iter: 500,
            grad_tol: 1e-20,
            step_tol: 1e-14,
            update: ModelUpdate::Newton,
            relative_scaling: false,
        }
    }
}

impl TrustRegionOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_max > 0.0
            && self.delta0 > 0.0
            && self.delta0 < self.delta_max
            && (0.0..0.25).contains(&self.eta)
            && self.max_iter > 0
            && self.grad_tol >= 0.0
            && self.step_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions(format!(
                "trust region needs delta_max > 0, 0 < delta0 < delta_max, 0 <= eta < 1/4: {self:?}"
            )))
        }
    }
}

/// What the trust-region iteration needs from an objective.
pub trait TrObjective {
    fn feasible(&self, x: &[f64]) -> bool;
    /// Value, gradient and (when `hessian`) the Hessian.
    fn derivatives(
        &self,
        x: &[f64],
        hessian: bool,
    ) -> Result<(f64, DVector<f64>, Option<DMatrix<f64>>)>;
}

impl TrObjective for Objective<'_> {
    fn feasible(&self, x: &[f64]) -> bool {
        self.contains(x)
    }

    fn derivatives(
        &self,
        x: &[f64],
        hessian: bool,
    ) -> Result<(f64, DVector<f64>, Option<DMatrix<f64>>)> {
        let e = self.evaluate(x, if hessian { 2 } else { 1 })?;
        Ok((e.loss, e.grad.unwrap(), e.hess))
    }
}

pub fn trust_region_minimize(
    obj: &impl TrObjective,
    x0: &[f64],
    opts: &TrustRegionOptions,
) -> Result<FitResult> {
    opts.validate()?;
    if !obj.feasible(x0) {
        return Err(Error::Infeasible(format!("initial point {x0:?}")));
    }
    let mut x = DVector::from_column_slice(x0);
    let scale = if opts.relative_scaling {
        x.map(|v| if v != 0.0 { v.abs() } else { 1.0 })
    } else {
        DVector::from_element(x.len(), 1.0)
    };
    let (mut f, mut g, h) = obj.derivatives(x.as_slice(), true)?;
    let mut b = h.expect("Hessian requested");
    let (mut n_fev, mut n_grad, mut n_hess) = (1, 1, 1);
    let mut delta = opts.delta0;
    let mut trace = vec![TraceRow {
        iter: 0,
        loss: f,
        theta: x.iter().copied().collect(),
        delta_or_spread: delta,
    }];

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for k in 1..=opts.max_iter {
        if g.norm() <= opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        if delta <= opts.step_tol * (1.0 + x.norm()) {
            termination = Termination::RadiusCollapsed;
            break;
        }
        iterations = k;
        let gs = g.component_mul(&scale);
        let bs = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| scale[i] * b[(i, j)] * scale[j]);
        let Subproblem {
            step: ps, model, ..
        } = solve_tr_subproblem(&gs, &bs, delta);
        let pnorm = ps.norm();
        let p = ps.component_mul(&scale);
        let predicted = -model;
        if predicted <= NEGLIGIBLE * f.abs() {
            termination = Termination::NoProgress;
            break;
        }
        let trial = &x + &p;

        // derivatives come with the trial value, so an accepted step needs
        // no second pass over the frequencies
        let newton = opts.update == ModelUpdate::Newton;
        let evaluated = if predicted <= 0.0 || !obj.feasible(trial.as_slice()) {
            None
        } else {
            n_fev += 1;
            n_grad += 1;
            n_hess += usize::from(newton);
            match obj.derivatives(trial.as_slice(), newton) {
                Ok(d) => Some(d),
                Err(Error::Infeasible(_)) => None,
                Err(e) => return Err(e),
            }
        };
        let rho = evaluated
            .as_ref()
            .map_or(f64::NEG_INFINITY, |d| (f - d.0) / predicted);

        if rho < 0.25 {
            delta *= 0.25;
        } else if rho > 0.75 && (pnorm - delta).abs() <= 1e-10 * delta {
            delta = (2.0 * delta).min(opts.delta_max);
        }

        if rho > opts.eta {
            let (fn_, gn, hn) = evaluated.expect("accepted trial was evaluated");
            if newton {
                b = hn.expect("Hessian requested");
            } else {
                bfgs_update(&mut b, &p, &(&gn - &g));
            }
            x = trial;
            f = fn_;
            g = gn;
            trace.push(TraceRow {
                iter: k,
                loss: f,
                theta: x.iter().copied().collect(),
                delta_or_spread: delta,
            });
            if pnorm <= opts.step_tol * (1.0 + x.norm()) {
                termination = Termination::StepTolerance;
                break;
            }
        } else {
            trace.push(TraceRow {
                iter: k,
                loss: f,
                theta: x.iter().copied().collect(),
                delta_or_spread: delta,
            });
        }
    }

    Ok(FitResult {
        theta: x.iter().copied().collect(),
        loss: f,
        trace,
        relative_errors: None,
        iterations,
        n_fev,
        n_grad,
        n_hess,
        termination,
    })
}

/// `B + y y^T / (s^T y) - B s s^T B / (s^T B s)`, skipped under weak curvature.
pub fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    let sy = s.dot(y);
    if sy <= 1e-12 * s.norm() * y.norm() {
        return false;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 0.0 {
        return false;
    }
    *b += y * y.transpose() / sy - &bs * bs.transpose() / sbs;
    let bt = b.transpose();
    *b = (&*b + bt) * 0.5;
    true
}
