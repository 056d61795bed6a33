//! Local fitting from a given start and the global pipeline: differential
//! evolution over `(D, 100 nu)` with restarts, then trust-region polishing of
//! `(D, nu, beta)`.

use log::{info, warn};

use super::de::{differential_evolution, DEOptions, DEResult};
use super::trust_region::{trust_region_minimize, TrustRegionOptions};
use super::{relative_errors, FitResult, TraceRow};
use crate::error::{Error, Result};
use crate::fem::ConstantOperators;
use crate::sensitivity::{GlobalIsotropic, Isotropic, Objective, Parametrization, ReferenceData};

/// Trust-region fit of `param` starting at `theta0`.
pub fn fit_local(
    ops: &ConstantOperators,
    param: &dyn Parametrization,
    data: &ReferenceData,
    theta0: &[f64],
    opts: &TrustRegionOptions,
    reference: Option<&[f64]>,
) -> Result<FitResult> {
    let obj = Objective::new(ops, param, data)?;
    let r = trust_region_minimize(&obj, theta0, opts)?;
    info!(
        "local fit: loss {:.3e} after {} iterations ({})",
        r.loss, r.iterations, r.termination
    );
    Ok(r.with_reference(reference))
}

#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub restarts: Vec<DEResult>,
    /// Index of the restart with the smallest loss.
    pub chosen: usize,
    /// Isotropic `(D, nu, beta)` handed to the polishing stage.
    pub global_theta: [f64; 3],
    pub global_relative_errors: Option<Vec<f64>>,
    /// Polished result; the trace lists DE generations of the chosen restart first.
    pub result: FitResult,
}

/// Seed of restart `r`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn fit_global(
    ops: &ConstantOperators,
    data: &ReferenceData,
    global: &GlobalIsotropic,
    de: &DEOptions,
    tr: &TrustRegionOptions,
    reference: Option<&[f64]>,
) -> Result<GlobalFit> {
    de.validate()?;
    tr.validate()?;
    let peaks = data.response().peaks().len();
    if peaks < 2 {
        warn!("reference data shows {peaks} AFC peak(s); global identification typically needs at least 2");
    }
    let obj = Objective::new(ops, global, data)?;
    let evaluate = |x: &[f64], bound: f64| match obj.loss_bounded(x, bound) {
        Ok(v) => v,
        Err(e) => {
            warn!("loss evaluation failed at {x:?}: {e}");
            None
        }
    };

    let mut restarts = Vec::with_capacity(de.restarts);
    for r in 0..de.restarts {
        let opts = DEOptions {
            seed: restart_seed(de.seed, r),
            ..de.clone()
        };
        let res = differential_evolution(evaluate, &global.lower(), &global.upper(), &opts)?;
        info!(
            "restart {r}: loss {:.4e} at {:?} after {} generations, {} evaluations",
            res.f_best, res.x_best, res.generations, res.n_fev
        );
        restarts.push(res);
    }
    let chosen = (0..restarts.len())
        .filter(|&r| restarts[r].f_best.is_finite())
        .min_by(|&a, &b| restarts[a].f_best.total_cmp(&restarts[b].f_best))
        .ok_or_else(|| Error::InvalidData("every restart failed to evaluate the loss".into()))?;
    let global_theta = global.to_isotropic(&restarts[chosen].x_best);

    let polished = fit_local(ops, &Isotropic, data, &global_theta, tr, reference)?;
    let mut trace: Vec<TraceRow> = restarts[chosen]
        .trace
        .iter()
        .map(|row| TraceRow {
            theta: global.to_isotropic(&row.theta).to_vec(),
            ..row.clone()
        })
        .collect();
    let offset = trace.len();
    trace.extend(polished.trace.iter().map(|row| TraceRow {
        iter: row.iter + offset,
        ..row.clone()
    }));
    let n_fev = restarts.iter().map(|r| r.n_fev).sum::<usize>() + polished.n_fev;
    Ok(GlobalFit {
        chosen,
        global_theta,
        global_relative_errors: reference.map(|r| relative_errors(&global_theta, r)),
        result: FitResult {
            trace,
            n_fev,
            ..polished
        },
        restarts,
    })
}
