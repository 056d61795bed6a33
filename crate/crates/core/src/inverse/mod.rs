//! Trust-region and differential-evolution optimizers and the composed
//! global-then-local identification pipeline.

pub mod de;
pub mod pipeline;
pub mod subproblem;
pub mod trust_region;

use std::fmt;

pub use de::{differential_evolution, DEOptions, DEResult};
pub use pipeline::{fit_global, fit_local, GlobalFit};
pub use subproblem::{solve_tr_subproblem, Subproblem};
pub use trust_region::{
    bfgs_update, trust_region_minimize, ModelUpdate, TrObjective, TrustRegionOptions,
};

/// One row of an optimizer trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub theta: Vec<f64>,
    /// Trust radius for trust-region rows, population spread for DE rows.
    pub delta_or_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    RadiusCollapsed,
    NoProgress,
    MaxIterations,
    Spread,
    Budget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GradientTolerance => "gradient norm below tolerance",
            Termination::StepTolerance => "step below tolerance",
            Termination::RadiusCollapsed => "trust radius collapsed",
            Termination::NoProgress => "predicted reduction at rounding level",
            Termination::MaxIterations => "iteration limit reached",
            Termination::Spread => "population spread below tolerance",
            Termination::Budget => "evaluation budget exhausted",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub trace: Vec<TraceRow>,
    /// `(theta_i - ref_i) / |ref_i|` when a reference is known.
    pub relative_errors: Option<Vec<f64>>,
    pub iterations: usize,
    pub n_fev: usize,
    pub n_grad: usize,
    pub n_hess: usize,
    pub termination: Termination,
}

impl FitResult {
    pub fn with_reference(mut self, reference: Option<&[f64]>) -> Self {
        self.relative_errors = reference.map(|r| relative_errors(&self.theta, r));
        self
    }
}

pub fn relative_errors(theta: &[f64], reference: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(reference)
        .map(|(t, r)| (t - r) / r.abs())
        .collect()
}
