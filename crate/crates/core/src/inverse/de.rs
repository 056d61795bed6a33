//! Synchronous differential evolution (best/1 mutation, binomial crossover).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Termination, TraceRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DEOptions {
    pub cr: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub pop_size: usize,
    pub max_fev: usize,
    /// Stop once every coordinate has `std <= tol * |mean|`.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DEOptions {
    fn default() -> Self {
        DEOptions {
            cr: 0.7,
            f_min: 0.7,
            f_max: 1.0,
            pop_size: 30,
            max_fev: 10_000,
            tol: 1e-2,
            restarts: 5,
            seed: 0,
        }
    }
}

impl DEOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cr > 0.0
            && self.cr < 1.0
            && self.f_min >= 0.0
            && self.f_min < self.f_max
            && self.f_max <= 2.0
            && self.pop_size >= 4
            && self.max_fev > 0
            && self.tol >= 0.0
            && self.restarts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions(format!(
                "differential evolution needs 0 < CR < 1, 0 <= F_min < F_max <= 2, NP >= 4: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DEResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub generations: usize,
    pub n_fev: usize,
    /// Best member and spread after each generation (row 0 is the initial population).
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
}

/// Minimize over the box `[lower, upper]`.
///
/// `f(x, bound)` returns the objective value, or `None` when the value is
/// known to exceed `bound` (or cannot be evaluated). Trials are compared only
/// against their parent, so such early exits leave the iteration unchanged.
pub fn differential_evolution<F>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    opts: &DEOptions,
) -> Result<DEResult>
where
    F: Fn(&[f64], f64) -> Option<f64> + Sync,
{
    opts.validate()?;
    let dim = lower.len();
    if dim == 0
        || upper.len() != dim
        || !lower
            .iter()
            .zip(upper)
            .all(|(l, u)| l.is_finite() && u.is_finite() && l < u)
    {
        return Err(Error::InvalidOptions(
            "DE bounds must be a finite nonempty box".into(),
        ));
    }
    let np = opts.pop_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut pop = latin_hypercube(&mut rng, lower, upper, np);
    let mut fit: Vec<f64> = pop
        .par_iter()
        .map(|x| f(x, f64::INFINITY).unwrap_or(f64::INFINITY))
        .collect();
    let mut n_fev = np;
    let mut best = argmin(&fit);
    let mut trace = vec![row(0, &pop, &fit, best)];

    let mut generations = 0;
    let termination = loop {
        if spread(&pop) <= opts.tol {
            break Termination::Spread;
        }
        if n_fev >= opts.max_fev {
            break Termination::Budget;
        }
        generations += 1;
        let scale = rng.random_range(opts.f_min..opts.f_max);
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (i1, i2) = distinct_pair(&mut rng, np, i);
                let jrand = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let take = j == jrand || rng.random::<f64>() < opts.cr;
                        if take {
                            let m = pop[best][j] + scale * (pop[i1][j] - pop[i2][j]);
                            m.clamp(lower[j], upper[j])
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let results: Vec<Option<f64>> = trials
            .par_iter()
            .zip(fit.par_iter())
            .map(|(t, &parent)| f(t, parent))
            .collect();
        n_fev += np;
        for (i, (t, r)) in trials.into_iter().zip(results).enumerate() {
            if let Some(v) = r {
                if v <= fit[i] {
                    pop[i] = t;
                    fit[i] = v;
                }
            }
        }
        best = argmin(&fit);
        trace.push(row(generations, &pop, &fit, best));
    };

    Ok(DEResult {
        x_best: pop[best].clone(),
        f_best: fit[best],
        generations,
        n_fev,
        trace,
        termination,
    })
}

fn latin_hypercube(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64], np: usize) -> Vec<Vec<f64>> {
    let mut pop = vec![vec![0.0; lower.len()]; np];
    for j in 0..lower.len() {
        let mut strata: Vec<usize> = (0..np).collect();
        strata.shuffle(rng);
        for (x, s) in pop.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / np as f64;
            x[j] = lower[j] + u * (upper[j] - lower[j]);
        }
    }
    pop
}

fn distinct_pair(rng: &mut ChaCha8Rng, np: usize, i: usize) -> (usize, usize) {
    let mut a = rng.random_range(0..np);
    while a == i {
        a = rng.random_range(0..np);
    }
    let mut b = rng.random_range(0..np);
    while b == i || b == a {
        b = rng.random_range(0..np);
    }
    (a, b)
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

/// Largest per-coordinate `std / |mean|` over the population.
pub fn spread(pop: &[Vec<f64>]) -> f64 {
    let n = pop.len() as f64;
    (0..pop[0].len())
        .map(|j| {
            let mean = pop.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = pop.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 {
                0.0
            } else {
                sd / mean.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn row(iter: usize, pop: &[Vec<f64>], fit: &[f64], best: usize) -> TraceRow {
    TraceRow {
        iter,
        loss: fit[best],
        theta: pop[best].clone(),
        delta_or_spread: spread(pop),
    }
}
