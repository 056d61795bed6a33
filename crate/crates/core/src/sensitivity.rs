//! Least-squares misfit between modelled and reference AFC, with exact first
//! and second derivatives.
//!
//! The system matrix is an explicit combination of constant matrices, so the
//! derivatives follow from adjoint and forward sensitivities that reuse the
//! state factorization. Derivatives are first formed with respect to the twelve
//! raw moduli `q = (D_11..D_66, beta_11..beta_66)` and then pulled back through
//! a [`Parametrization`].

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::ConstantOperators;
use crate::forward::{sweep, FrequencyResponse, HarmonicSystem};
use crate::material::MaterialParams;

/// Number of raw moduli: six storage moduli followed by six loss factors.
pub const NQ: usize = 12;

type QVec = SVector<f64, NQ>;
type QMat = SMatrix<f64, NQ, NQ>;

/// Maps a low-dimensional parameter vector `theta` to the raw moduli.
pub trait Parametrization: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn labels(&self) -> Vec<String>;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;

    /// Whether `theta` lies in the feasible region.
    fn contains(&self, theta: &[f64]) -> bool;

    /// Raw moduli `q(theta)`.
    fn moduli(&self, theta: &[f64]) -> [f64; NQ];

    /// `dq/dtheta`, a `12 x dim` matrix.
    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64>;

    /// Hessian of `q_m` with respect to `theta`.
    fn second(&self, _theta: &[f64], _m: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn material(&self, theta: &[f64]) -> Result<MaterialParams> {
        if theta.len() != self.dim() {
            return Err(Error::Infeasible(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.dim(),
                theta.len()
            )));
        }
        if !theta.iter().all(|t| t.is_finite()) || !self.contains(theta) {
            return Err(Error::Infeasible(format!(
                "{theta:?} outside the {} domain",
                self.name()
            )));
        }
        let q = self.moduli(theta);
        let mat = MaterialParams {
            storage: q[..6].try_into().unwrap(),
            loss: q[6..].try_into().unwrap(),
        };
        mat.validate()
            .map_err(|e| Error::Infeasible(e.to_string()))?;
        Ok(mat)
    }
}

/// `theta = (D, nu, beta)` with `D_11 = D_22 = D`, `D_12 = nu D`,
/// `D_66 = (1 - nu) D` and one loss factor for every modulus.
#[derive(Debug, Clone, Copy, Default)]
pub struct Isotropic;

impl Parametrization for Isotropic {
    fn name(&self) -> &'static str {
        "isotropic"
    }

    fn dim(&self) -> usize {
        3
    }

    fn labels(&self) -> Vec<String> {
        vec!["D".into(), "nu".into(), "beta".into()]
    }

    fn lower(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0]
    }

    fn upper(&self) -> Vec<f64> {
        vec![f64::INFINITY, 1.0, f64::INFINITY]
    }

    fn contains(&self, t: &[f64]) -> bool {
        t[0] > 0.0 && t[1] > 0.0 && t[1] < 1.0 && t[2] > 0.0
    }

    fn moduli(&self, t: &[f64]) -> [f64; NQ] {
        let (d, nu, b) = (t[0], t[1], t[2]);
        [d, nu * d, 0.0, d, 0.0, (1.0 - nu) * d, b, b, b, b, b, b]
    }

    fn jacobian(&self, t: &[f64]) -> DMatrix<f64> {
        let (d, nu) = (t[0], t[1]);
        let mut j = DMatrix::zeros(NQ, 3);
        j[(0, 0)] = 1.0;
        j[(1, 0)] = nu;
        j[(1, 1)] = d;
        j[(3, 0)] = 1.0;
        j[(5, 0)] = 1.0 - nu;
        j[(5, 1)] = -d;
        for m in 6..NQ {
            j[(m, 2)] = 1.0;
        }
        j
    }

    fn second(&self, _t: &[f64], m: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        let s = match m {
            1 => 1.0,
            5 => -1.0,
            _ => return h,
        };
        h[(0, 1)] = s;
        h[(1, 0)] = s;
        h
    }
}

/// `theta = (D, 100 nu)` inside a box, with every loss factor held fixed.
#[derive(Debug, Clone, Copy)]
pub struct GlobalIsotropic {
    pub beta: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Default for GlobalIsotropic {
    fn default() -> Self {
        GlobalIsotropic {
            beta: 0.01,
            lower: [1.0, 0.0],
            upper: [100.0, 50.0],
        }
    }
}

impl GlobalIsotropic {
    /// Corresponding isotropic `(D, nu, beta)`.
    pub fn to_isotropic(&self, t: &[f64]) -> [f64; 3] {
        [t[0], t[1] / 100.0, self.beta]
    }
}

impl Parametrization for GlobalIsotropic {
    fn name(&self) -> &'static str {
        "global"
    }

    fn dim(&self) -> usize {
        2
    }

    fn labels(&self) -> Vec<String> {
        vec!["D".into(), "100nu".into()]
    }

    fn lower(&self) -> Vec<f64> {
        self.lower.to_vec()
    }

    fn upper(&self) -> Vec<f64> {
        self.upper.to_vec()
    }

    fn contains(&self, t: &[f64]) -> bool {
        (0..2).all(|i| t[i] >= self.lower[i] && t[i] <= self.upper[i])
    }

    fn moduli(&self, t: &[f64]) -> [f64; NQ] {
        Isotropic.moduli(&self.to_isotropic(t))
    }

    fn jacobian(&self, t: &[f64]) -> DMatrix<f64> {
        let iso = Isotropic.jacobian(&self.to_isotropic(t));
        let mut j = DMatrix::zeros(NQ, 2);
        j.column_mut(0).copy_from(&iso.column(0));
        j.column_mut(1).copy_from(&(iso.column(1) / 100.0));
        j
    }

    fn second(&self, t: &[f64], m: usize) -> DMatrix<f64> {
        let iso = Isotropic.second(&self.to_isotropic(t), m);
        let mut h = DMatrix::zeros(2, 2);
        h[(0, 1)] = iso[(0, 1)] / 100.0;
        h[(1, 0)] = iso[(1, 0)] / 100.0;
        h
    }
}

/// All twelve raw moduli as parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Monoclinic;

impl Parametrization for Monoclinic {
    fn name(&self) -> &'static str {
        "monoclinic"
    }

    fn dim(&self) -> usize {
        NQ
    }

    fn labels(&self) -> Vec<String> {
        [
            "D11", "D12", "D16", "D22", "D26", "D66", "b11", "b12", "b16", "b22", "b26", "b66",
        ]
        .map(String::from)
        .to_vec()
    }

    fn lower(&self) -> Vec<f64> {
        let mut v = vec![f64::NEG_INFINITY; 6];
        v.extend([0.0; 6]);
        v
    }

    fn upper(&self) -> Vec<f64> {
        vec![f64::INFINITY; NQ]
    }

    fn contains(&self, t: &[f64]) -> bool {
        let m = MaterialParams {
            storage: t[..6].try_into().unwrap(),
            loss: t[6..].try_into().unwrap(),
        };
        m.validate().is_ok()
    }

    fn moduli(&self, t: &[f64]) -> [f64; NQ] {
        t.try_into().unwrap()
    }

    fn jacobian(&self, _t: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(NQ, NQ)
    }
}

/// Parametrization by name, as used in configuration files.
pub fn parametrization_by_name(name: &str) -> Result<Box<dyn Parametrization>> {
    match name {
        "isotropic" => Ok(Box::new(Isotropic)),
        "global" => Ok(Box::new(GlobalIsotropic::default())),
        "monoclinic" => Ok(Box::new(Monoclinic)),
        _ => Err(Error::InvalidOptions(format!(
            "unknown parametrization '{name}' (isotropic, global, monoclinic)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInfo {
    /// Percent of the largest reference amplitude.
    pub level: f64,
    pub seed: u64,
}

/// Measured or synthetic AFC to be matched.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    pub noise: Option<NoiseInfo>,
    /// Generating parameters, when synthetic.
    pub theta_ref: Option<Vec<f64>>,
}

impl ReferenceData {
    pub fn new(freqs_hz: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        let r = ReferenceData {
            freqs_hz,
            values,
            noise: None,
            theta_ref: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs_hz.len() != self.values.len() {
            return Err(Error::InvalidData(format!(
                "{} frequencies but {} values",
                self.freqs_hz.len(),
                self.values.len()
            )));
        }
        if self.freqs_hz.is_empty() {
            return Err(Error::InvalidData("no reference points".into()));
        }
        if self.freqs_hz.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::InvalidData(
                "frequencies must be finite and nonnegative".into(),
            ));
        }
        if self
            .values
            .iter()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::InvalidData("non-finite reference value".into()));
        }
        if let Some(n) = self.noise {
            if !(n.level >= 0.0) {
                return Err(Error::InvalidData("noise level must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn response(&self) -> FrequencyResponse {
        FrequencyResponse {
            freqs_hz: self.freqs_hz.clone(),
            values: self.values.clone(),
        }
    }
}

/// Forward AFC at `theta_ref` plus independent Gaussian noise on the real and
/// imaginary parts with standard deviation `level/100 * max |P|`.
pub fn synthesize_data(
    theta_ref: &[f64],
    param: &dyn Parametrization,
    ops: &ConstantOperators,
    freqs_hz: &[f64],
    noise_level: f64,
    seed: u64,
) -> Result<ReferenceData> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidOptions(format!(
            "noise level {noise_level} must be nonnegative"
        )));
    }
    let mat = param.material(theta_ref)?;
    let clean = sweep(ops, &mat, freqs_hz)?;
    let peak = clean.values.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let sigma = noise_level / 100.0 * peak;
    let mut values = clean.values;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
        for z in &mut values {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *z += Complex64::new(re, im);
        }
    }
    Ok(ReferenceData {
        freqs_hz: freqs_hz.to_vec(),
        values,
        noise: Some(NoiseInfo {
            level: noise_level,
            seed,
        }),
        theta_ref: Some(theta_ref.to_vec()),
    })
}

/// Loss with optional derivatives.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
}

/// Loss functional `L(theta) = (1/N) sum_k |P(u(theta, w_k)) - u_k|^2`.
pub struct Objective<'a> {
    pub ops: &'a ConstantOperators,
    pub param: &'a dyn Parametrization,
    pub data: &'a ReferenceData,
    order: Vec<usize>,
}

struct Terms {
    loss: f64,
    grad: QVec,
    hess: QMat,
}

impl<'a> Objective<'a> {
    pub fn new(
        ops: &'a ConstantOperators,
        param: &'a dyn Parametrization,
        data: &'a ReferenceData,
    ) -> Result<Self> {
        data.validate()?;
        Ok(Objective {
            ops,
            param,
            data,
            order: interleaved(data.len()),
        })
    }

    pub fn dim(&self) -> usize {
        self.param.dim()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().all(|t| t.is_finite())
            && self.param.contains(theta)
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(theta, 0)?.loss)
    }

    pub fn loss_grad(&self, theta: &[f64]) -> Result<(f64, DVector<f64>)> {
        let e = self.evaluate(theta, 1)?;
        Ok((e.loss, e.grad.unwrap()))
    }

    pub fn loss_hess(&self, theta: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let e = self.evaluate(theta, 2)?;
        Ok((e.loss, e.grad.unwrap(), e.hess.unwrap()))
    }

    /// Loss (`order = 0`), plus gradient (`1`), plus Hessian (`2`).
    pub fn evaluate(&self, theta: &[f64], order: u8) -> Result<Evaluation> {
        let mat = self.param.material(theta)?;
        let sys = HarmonicSystem::new(self.ops, &mat)?;
        let q = self.param.moduli(theta);
        let jac = self.param.jacobian(theta);
        let k = self.dim();
        let seconds: Vec<DMatrix<f64>> = if order >= 2 {
            (0..NQ).map(|m| self.param.second(theta, m)).collect()
        } else {
            Vec::new()
        };
        let mut needed = [false; NQ];
        for (m, slot) in needed.iter_mut().enumerate() {
            *slot = jac.row(m).iter().any(|v| *v != 0.0)
                || seconds.get(m).is_some_and(|h| h.iter().any(|v| *v != 0.0));
        }

        let terms = (0..self.data.len())
            .into_par_iter()
            .map(|i| {
                self.frequency_terms(&sys, &q, &needed, i, order)
                    .map_err(|e| e.at_frequency(self.data.freqs_hz[i]))
            })
            .collect::<Result<Vec<_>>>()?;

        // fixed-order reduction keeps results independent of scheduling
        let n = self.data.len() as f64;
        let mut loss = 0.0;
        let mut gq = QVec::zeros();
        let mut hq = QMat::zeros();
        for t in &terms {
            loss += t.loss;
            if order >= 1 {
                gq += t.grad;
            }
            if order >= 2 {
                hq += t.hess;
            }
        }
        loss /= n;
        if order == 0 {
            return Ok(Evaluation {
                loss,
                grad: None,
                hess: None,
            });
        }
        gq *= 2.0 / n;
        let gq_dyn = DVector::from_column_slice(gq.as_slice());
        let grad = jac.transpose() * &gq_dyn;
        let hess = (order >= 2).then(|| {
            hq *= 2.0 / n;
            let hq_dyn = DMatrix::from_column_slice(NQ, NQ, hq.as_slice());
            let mut h = jac.transpose() * hq_dyn * &jac;
            for (m, s) in seconds.iter().enumerate() {
                if gq[m] != 0.0 {
                    h += s * gq[m];
                }
            }
            // symmetrize away rounding in the chain rule
            let ht = h.transpose();
            (h + ht) * 0.5
        });
        debug_assert_eq!(grad.len(), k);
        Ok(Evaluation {
            loss,
            grad: Some(grad),
            hess,
        })
    }

    fn frequency_terms(
        &self,
        sys: &HarmonicSystem,
        q: &[f64; NQ],
        needed: &[bool; NQ],
        i: usize,
        order: u8,
    ) -> Result<Terms> {
        let ops = self.ops;
        let omega = 2.0 * PI * self.data.freqs_hz[i];
        let (fact, w) = sys.solve_relative(omega)?;
        let r = ops.probe(&sys.with_translation(w.clone())) - self.data.values[i];
        let mut terms = Terms {
            loss: r.norm_sqr(),
            grad: QVec::zeros(),
            hess: QMat::zeros(),
        };
        if order == 0 {
            return Ok(terms);
        }

        let scale = ops.stiffness_scale();
        let c: Vec<Complex64> = ops.probe.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let lambda = fact.solve_checked(&c)?;

        // coefficient of K^a in dK/dq_m
        let coef = |m: usize| -> Complex64 {
            if m < 6 {
                Complex64::new(1.0, q[m + 6]) * scale
            } else {
                Complex64::new(0.0, q[m - 6] * scale)
            }
        };
        let active: Vec<usize> = (0..6)
            .filter(|&a| needed[a] || (needed[a + 6] && q[a] != 0.0))
            .collect();

        let mut s = vec![Vec::new(); 6];
        let mut t = [Complex64::new(0.0, 0.0); 6];
        for &a in &active {
            // K^a annihilates the translation part of u
            let sa = ops.pattern.matvec(&ops.k[a], &w);
            t[a] = dot(&lambda, &sa);
            s[a] = sa;
        }

        let mut dp = [Complex64::new(0.0, 0.0); NQ];
        for m in (0..NQ).filter(|&m| needed[m]) {
            dp[m] = -coef(m) * t[m % 6];
            terms.grad[m] = (r.conj() * dp[m]).re;
        }
        if order == 1 {
            return Ok(terms);
        }

        // G_ab = (K^a lambda)^T K^-1 s_b
        let mut z = vec![Vec::new(); 6];
        let mut kl = vec![Vec::new(); 6];
        for &a in &active {
            z[a] = fact.solve_checked(&s[a])?;
            kl[a] = ops.pattern.matvec(&ops.k[a], &lambda);
        }
        let mut gm = [[Complex64::new(0.0, 0.0); 6]; 6];
        for &a in &active {
            for &b in &active {
                gm[a][b] = dot(&kl[a], &z[b]);
            }
        }
        let idx: Vec<usize> = (0..NQ).filter(|&m| needed[m]).collect();
        for (x, &m) in idx.iter().enumerate() {
            for &n in &idx[x..] {
                let (a, b) = (m % 6, n % 6);
                let mut pmn = coef(m) * coef(n) * (gm[a][b] + gm[b][a]);
                if a == b && m != n {
                    pmn -= Complex64::new(0.0, scale) * t[a];
                }
                let v = (dp[m].conj() * dp[n] + r.conj() * pmn).re;
                terms.hess[(m, n)] = v;
                terms.hess[(n, m)] = v;
            }
        }
        Ok(terms)
    }

    /// Loss if it does not exceed `bound`, otherwise `None`.
    ///
    /// Frequencies are visited in an interleaved order so large residuals are
    /// met early, and evaluation stops once the partial sum alone exceeds
    /// `N * bound`. A returned value is summed in natural order and equals
    /// [`Objective::loss`] exactly.
    pub fn loss_bounded(&self, theta: &[f64], bound: f64) -> Result<Option<f64>> {
        let mat = self.param.material(theta)?;
        let sys = HarmonicSystem::new(self.ops, &mat)?;
        let n = self.data.len();
        let limit = bound * n as f64 * (1.0 + 1e-12);
        let mut terms = vec![0.0; n];
        let mut partial = 0.0;
        for &i in &self.order {
            let omega = 2.0 * PI * self.data.freqs_hz[i];
            let (_, u) = sys
                .solve(omega)
                .map_err(|e| e.at_frequency(self.data.freqs_hz[i]))?;
            terms[i] = (self.ops.probe(&u) - self.data.values[i]).norm_sqr();
            partial += terms[i];
            if partial > limit {
                return Ok(None);
            }
        }
        Ok(Some(terms.iter().sum::<f64>() / n as f64))
    }
}

/// Visiting order `0, s, 2s, ...` modulo `n` with a stride near `n / phi`
/// that is coprime to `n`.
fn interleaved(n: usize) -> Vec<usize> {
    if n <= 2 {
        return (0..n).collect();
    }
    let mut s = ((n as f64) * 0.381_966_011_250_105).round().max(1.0) as usize;
    while gcd(s, n) != 1 {
        s += 1;
    }
    (0..n).map(|j| (j * s) % n).collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Unconjugated bilinear product `x^T y`.
fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Relative central-difference step used by derivative checks.
pub fn fd_step(t: f64) -> f64 {
    1e-6 * t.abs().max(1.0)
}

/// Central finite differences at `theta +- h e_j`: the gradient from the
/// loss values and the Hessian from the analytic gradients, both taken from
/// one first-order evaluation per displaced point.
pub fn fd_derivatives(obj: &Objective, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = theta.len();
    let mut g = DVector::zeros(k);
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = fd_step(theta[j]);
        let mut p = theta.to_vec();
        p[j] += step;
        let (fp, gp) = obj.loss_grad(&p)?;
        p[j] = theta[j] - step;
        let (fm, gm) = obj.loss_grad(&p)?;
        g[j] = (fp - fm) / (2.0 * step);
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    Ok((g, h))
}
