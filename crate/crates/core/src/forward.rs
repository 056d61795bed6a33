//! Harmonic response of the plate to a rigid motion of the clamped edge.
//!
//! For a driving frequency `w` the free DOFs solve `K(w) u = f(w)` with
//!
//! ```text
//! K(w) = -w^2 (M + e^2/3 L) + sum_a D_a (1 + i beta_a) / (2e) K_a
//! f(w) = f_l - w^2 (f_M + e^2/3 f_L) + sum_a D_a (1 + i beta_a) / (2e) f_a
//! ```
//!
//! where `M = rho_0 M_0 + rho_c M_c` and `L` likewise. `K(w)` is complex
//! symmetric, which lets adjoint solves reuse the state factorization.
//!
//! Solves split `u = t + w` with `t` the rigid translation of the stand
//! (one on node DOFs, zero on edge DOFs). Every stiffness form annihilates
//! `t`, so `K(w) w = f_l + w^2 (I t)_free` carries no stiffness lift and the
//! static response is exactly rigid.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::ConstantOperators;
use crate::material::{MaterialParams, Modulus};
use crate::sparse::{norm, residual_extended, two_prod, ComplexSymMatrix, Dd, SkylineLdlt};

const BACKWARD_TARGET: f64 = 1e-14;
const BACKWARD_LIMIT: f64 = 1e-13;
/// State refinement stops once the correction is below this fraction of `|x|`.
const FORWARD_TARGET: f64 = 1e-15;
const MAX_STATE_REFINE: usize = 5;

impl ConstantOperators {
    /// Factor `1/(2e)` between the moment-curvature moduli and the
    /// midplane equation divided by the plate thickness.
    pub fn stiffness_scale(&self) -> f64 {
        0.5 / self.half_thickness
    }

    /// Real inertia matrix `M + e^2/3 L` over the pattern.
    pub fn inertia(&self) -> Vec<f64> {
        let r = self.half_thickness * self.half_thickness / 3.0;
        (0..self.pattern.nnz())
            .map(|p| {
                self.rho0 * self.m0[p]
                    + self.rho_c * self.mc[p]
                    + r * (self.rho0 * self.l0[p] + self.rho_c * self.lc[p])
            })
            .collect()
    }

    fn inertia_lift(&self) -> Vec<f64> {
        let r = self.half_thickness * self.half_thickness / 3.0;
        (0..self.pattern.dim())
            .map(|i| {
                self.boundary_amplitude
                    * (self.rho0 * self.lift_m0[i]
                        + self.rho_c * self.lift_mc[i]
                        + r * (self.rho0 * self.lift_l0[i] + self.rho_c * self.lift_lc[i]))
            })
            .collect()
    }

    /// `P(u) = c^T u + c0`.
    pub fn probe(&self, u: &[Complex64]) -> Complex64 {
        let s: Complex64 = self.probe.iter().zip(u).map(|(&c, &x)| x * c).sum();
        s + self.probe_offset * self.boundary_amplitude
    }
}

/// Complex stiffness and inertia of one material, ready to be shifted by `-w^2`.
pub struct HarmonicSystem<'a> {
    ops: &'a ConstantOperators,
    stiff_re: Vec<f64>,
    stiff_im: Vec<f64>,
    /// Low-order parts of the stiffness values in double-double.
    stiff_re_lo: Vec<f64>,
    stiff_im_lo: Vec<f64>,
    inertia: Vec<f64>,
    rhs_stiff: Vec<Complex64>,
    rhs_inertia: Vec<f64>,
    translation: Vec<f64>,
    /// `-(I t)_free` including the boundary coupling.
    relative_inertia: Vec<f64>,
}

impl<'a> HarmonicSystem<'a> {
    pub fn new(ops: &'a ConstantOperators, mat: &MaterialParams) -> Result<Self> {
        mat.validate()?;
        let nnz = ops.pattern.nnz();
        let n = ops.pattern.dim();
        let scale = ops.stiffness_scale();
        let mut acc_re = vec![Dd::default(); nnz];
        let mut acc_im = vec![Dd::default(); nnz];
        let mut rhs_stiff = vec![Complex64::new(0.0, 0.0); n];
        for m in Modulus::ALL {
            let c = mat.complex(m) * scale;
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for ((re, im), &v) in acc_re
                .iter_mut()
                .zip(acc_im.iter_mut())
                .zip(&ops.k[m.index()])
            {
                *re = re.add_prod(c.re, v);
                *im = im.add_prod(c.im, v);
            }
            for (r, &v) in rhs_stiff.iter_mut().zip(&ops.lift_k[m.index()]) {
                *r += c * (v * ops.boundary_amplitude);
            }
        }
        let stiff_re = acc_re.iter().map(|d| d.hi).collect();
        let stiff_im = acc_im.iter().map(|d| d.hi).collect();
        let stiff_re_lo = acc_re.iter().map(|d| d.lo).collect();
        let stiff_im_lo = acc_im.iter().map(|d| d.lo).collect();
        let inertia = ops.inertia();
        let rhs_inertia = ops.inertia_lift();
        let translation: Vec<f64> = ops
            .dofs
            .free_dofs()
            .iter()
            .map(|&d| {
                if ops.dofs.is_node_dof(d) {
                    ops.boundary_amplitude
                } else {
                    0.0
                }
            })
            .collect();
        let it = ops.pattern.matvec(&inertia, &translation);
        let relative_inertia = rhs_inertia.iter().zip(&it).map(|(l, v)| l - v).collect();
        Ok(HarmonicSystem {
            ops,
            stiff_re,
            stiff_im,
            stiff_re_lo,
            stiff_im_lo,
            inertia,
            rhs_stiff,
            rhs_inertia,
            translation,
            relative_inertia,
        })
    }

    pub fn operators(&self) -> &'a ConstantOperators {
        self.ops
    }

    pub fn matrix(&self, omega: f64) -> ComplexSymMatrix<'a> {
        self.split_matrix(omega).0
    }

    /// `K(w)` rounded to double together with the low-order parts of its
    /// real and imaginary values.
    fn split_matrix(&self, omega: f64) -> (ComplexSymMatrix<'a>, Vec<f64>, Vec<f64>) {
        let w2 = omega * omega;
        let (re, re_lo): (Vec<f64>, Vec<f64>) = self
            .stiff_re
            .iter()
            .zip(&self.stiff_re_lo)
            .zip(&self.inertia)
            .map(|((&k, &lo), &m)| {
                let (p, e) = two_prod(w2, m);
                let d = Dd { hi: k, lo }.add_pair(-p, -e);
                (d.hi, d.lo)
            })
            .unzip();
        let matrix = ComplexSymMatrix {
            pattern: &self.ops.pattern,
            re,
            im: self.stiff_im.clone(),
        };
        (matrix, re_lo, self.stiff_im_lo.clone())
    }

    /// Stiffness part `sum_a D_a (1 + i beta_a)/(2e) K_a` alone.
    pub fn stiffness(&self) -> ComplexSymMatrix<'a> {
        self.matrix(0.0)
    }

    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn rhs(&self, omega: f64) -> Vec<Complex64> {
        let w2 = omega * omega;
        self.rhs_stiff
            .iter()
            .zip(&self.rhs_inertia)
            .zip(&self.ops.load)
            .map(|((&k, &m), &l)| k - w2 * m + l)
            .collect()
    }

    /// Rigid translation `t` over the free DOFs.
    pub fn translation(&self) -> &[f64] {
        &self.translation
    }

    /// Right-hand side for `w = u - t`.
    pub fn relative_rhs(&self, omega: f64) -> Vec<Complex64> {
        let w2 = omega * omega;
        self.relative_inertia
            .iter()
            .zip(&self.ops.load)
            .map(|(&m, &l)| Complex64::new(l - w2 * m, 0.0))
            .collect()
    }

    pub fn factor(&self, omega: f64) -> Result<Factorized<'a>> {
        let (matrix, re_lo, im_lo) = self.split_matrix(omega);
        let ldlt = SkylineLdlt::factor(&self.ops.layout, &matrix.re, &matrix.im)?;
        Ok(Factorized {
            matrix,
            re_lo,
            im_lo,
            ldlt,
            abs_values: OnceLock::new(),
        })
    }

    /// Relative displacement `w = u - t` at `omega` with the factorization.
    pub fn solve_relative(&self, omega: f64) -> Result<(Factorized<'a>, Vec<Complex64>)> {
        let fact = self.factor(omega)?;
        let w = fact.solve_accurate(&self.relative_rhs(omega))?;
        Ok((fact, w))
    }

    /// State solution at `omega` together with its factorization.
    pub fn solve(&self, omega: f64) -> Result<(Factorized<'a>, Vec<Complex64>)> {
        let (fact, w) = self.solve_relative(omega)?;
        Ok((fact, self.with_translation(w)))
    }

    pub fn with_translation(&self, mut w: Vec<Complex64>) -> Vec<Complex64> {
        for (x, &t) in w.iter_mut().zip(&self.translation) {
            *x += t;
        }
        w
    }
}

/// A factorized `K(w)` kept alongside the matrix for residual checks.
pub struct Factorized<'a> {
    pub matrix: ComplexSymMatrix<'a>,
    re_lo: Vec<f64>,
    im_lo: Vec<f64>,
    pub ldlt: SkylineLdlt<'a>,
    abs_values: OnceLock<Vec<f64>>,
}

impl Factorized<'_> {
    /// Plain triangular solves.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.ldlt.solve(b)
    }

    /// Solve with iterative refinement, checked by the normwise backward error
    /// `|b - K x| / (| |K| |x| | + |b|)`. A residual relative to `|b|` alone
    /// is meaningless near resonance, where `|x|` far exceeds `|b| / |K|`.
    pub fn solve_checked(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let x0 = self.ldlt.solve(b);
        let scale = self.backward_scale(&x0) + norm(b);
        let (x, r) = self.refine_from(b, x0, BACKWARD_TARGET * scale);
        let err = if scale == 0.0 { 0.0 } else { r / scale };
        if err > BACKWARD_LIMIT {
            return Err(Error::Inaccurate { residual: err });
        }
        Ok(x)
    }

    /// Solve refined with double-double residuals until the correction
    /// reaches rounding level, so the result is accurate to nearly full
    /// precision however ill-conditioned `K(w)` is near resonance. Rounding
    /// in forming and factoring `K(w)` then no longer shows up as noise in the
    /// response as a function of the parameters.
    pub fn solve_accurate(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut x = self.ldlt.solve(b);
        let mut backward = f64::INFINITY;
        let mut last = f64::INFINITY;
        for _ in 0..MAX_STATE_REFINE {
            let r = residual_extended(&self.matrix, &self.re_lo, &self.im_lo, b, &x);
            let scale = self.backward_scale(&x) + norm(b);
            backward = if scale == 0.0 { 0.0 } else { norm(&r) / scale };
            let dx = self.ldlt.solve(&r);
            let (dn, xn) = (norm(&dx), norm(&x));
            for (a, d) in x.iter_mut().zip(&dx) {
                *a += d;
            }
            if dn > 0.5 * last {
                break;
            }
            // the first correction measures the initial error, so its
            // relative size estimates the contraction per step
            let rate = if last.is_finite() { dn / last } else { dn / xn };
            if dn * rate <= FORWARD_TARGET * xn {
                break;
            }
            last = dn;
        }
        if backward > BACKWARD_LIMIT {
            return Err(Error::Inaccurate { residual: backward });
        }
        Ok(x)
    }

    /// `| |K| |x| |`.
    fn backward_scale(&self, x: &[Complex64]) -> f64 {
        let abs_k = self.abs_values.get_or_init(|| {
            self.matrix
                .re
                .iter()
                .zip(&self.matrix.im)
                .map(|(a, c)| a.hypot(*c))
                .collect()
        });
        let abs_x: Vec<f64> = x.iter().map(|z| z.norm()).collect();
        let kx = self.matrix.pattern.matvec(abs_k, &abs_x);
        kx.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Up to three refinement steps until the residual norm reaches `target`;
    /// returns the solution and its residual norm.
    fn refine_from(
        &self,
        b: &[Complex64],
        mut x: Vec<Complex64>,
        target: f64,
    ) -> (Vec<Complex64>, f64) {
        let residual = |x: &[Complex64]| -> Vec<Complex64> {
            let ax = self.matrix.matvec(x);
            b.iter().zip(&ax).map(|(u, v)| u - v).collect()
        };
        let mut r = residual(&x);
        let mut rn = norm(&r);
        for _ in 0..3 {
            if rn <= target {
                break;
            }
            let dx = self.ldlt.solve(&r);
            let cand: Vec<Complex64> = x.iter().zip(dx).map(|(a, d)| a + d).collect();
            let rc = residual(&cand);
            let rcn = norm(&rc);
            if rcn >= rn {
                break;
            }
            (x, r, rn) = (cand, rc, rcn);
        }
        (x, rn)
    }
}

/// Complex system matrix and right-hand side (with boundary lifts) at
/// angular frequency `omega`.
pub fn system<'a>(
    ops: &'a ConstantOperators,
    mat: &MaterialParams,
    omega: f64,
) -> Result<(ComplexSymMatrix<'a>, Vec<Complex64>)> {
    let sys = HarmonicSystem::new(ops, mat)?;
    Ok((sys.matrix(omega), sys.rhs(omega)))
}

/// Free-DOF solution at angular frequency `omega`.
pub fn solve_frequency(
    ops: &ConstantOperators,
    mat: &MaterialParams,
    omega: f64,
) -> Result<Vec<Complex64>> {
    let sys = HarmonicSystem::new(ops, mat)?;
    sys.solve(omega).map(|(_, u)| u)
}

/// Complex displacement ratio at the test point for each frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn new(freqs_hz: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if freqs_hz.len() != values.len() {
            return Err(Error::InvalidData(format!(
                "{} frequencies but {} values",
                freqs_hz.len(),
                values.len()
            )));
        }
        if !values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidData("non-finite response value".into()));
        }
        Ok(FrequencyResponse { freqs_hz, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.freqs_hz.iter().map(|f| 2.0 * PI * f).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.arg()).collect()
    }

    /// Indices of strict interior local maxima of `|u|`.
    pub fn peaks(&self) -> Vec<usize> {
        let a = self.amplitudes();
        (1..a.len().saturating_sub(1))
            .filter(|&k| a[k] > a[k - 1] && a[k] > a[k + 1])
            .collect()
    }

    pub fn peak_frequencies(&self) -> Vec<f64> {
        self.peaks().into_iter().map(|k| self.freqs_hz[k]).collect()
    }
}

/// Frequency sweep; frequencies are independent and solved in parallel.
pub fn sweep(
    ops: &ConstantOperators,
    mat: &MaterialParams,
    freqs_hz: &[f64],
) -> Result<FrequencyResponse> {
    if let Some(f) = freqs_hz.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::InvalidData(format!(
            "frequency {f} must be nonnegative"
        )));
    }
    let sys = HarmonicSystem::new(ops, mat)?;
    let values = freqs_hz
        .par_iter()
        .map(|&f| {
            sys.solve(2.0 * PI * f)
                .map(|(_, u)| ops.probe(&u))
                .map_err(|e| e.at_frequency(f))
        })
        .collect::<Result<Vec<_>>>()?;
    FrequencyResponse::new(freqs_hz.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::generate_strip_mesh;
    use crate::presets::{self, Placement};

    fn setup(placement: Placement, nx: usize, ny: usize) -> ConstantOperators {
        let g = presets::strip_geometry(placement, nx, ny);
        let mesh = generate_strip_mesh(&g).unwrap();
        assemble(&mesh, &g, presets::DENSITY).unwrap()
    }

    #[test]
    fn static_limit_is_rigid_translation() {
        let ops = setup(Placement::Shifted, 24, 6);
        let u = solve_frequency(&ops, &presets::reference_material(), 0.0).unwrap();
        for (&d, z) in ops.dofs.free_dofs().iter().zip(&u) {
            let expect = if ops.dofs.is_node_dof(d) { 1.0 } else { 0.0 };
            assert!((z - expect).norm() < 1e-9, "dof {d}: {z}");
        }
        let p = ops.probe(&u);
        assert!((p - 1.0).norm() < 1e-10);
    }

    #[test]
    fn stiffness_forms_annihilate_translation() {
        let ops = setup(Placement::Shifted, 24, 6);
        let sys = HarmonicSystem::new(&ops, &presets::reference_material()).unwrap();
        let t = sys.translation();
        for a in 0..6 {
            let kt = ops.pattern.matvec(&ops.k[a], t);
            let abs_k: Vec<f64> = ops.k[a].iter().map(|v| v.abs()).collect();
            let scale = norm_real(&ops.pattern.matvec(&abs_k, t)) + norm_real(&ops.lift_k[a]);
            let defect: Vec<f64> = kt
                .iter()
                .zip(&ops.lift_k[a])
                .map(|(k, l)| k - l * ops.boundary_amplitude)
                .collect();
            assert!(
                norm_real(&defect) <= 1e-13 * scale,
                "form {a}: {:e}",
                norm_real(&defect) / scale
            );
        }
    }

    fn norm_real(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_frequency_undamped_matrix_is_real_stiffness() {
        let ops = setup(Placement::Shifted, 12, 3);
        let mat = MaterialParams::isotropic(17.97, 0.286, 0.0);
        let (k, _) = system(&ops, &mat, 0.0).unwrap();
        assert!(k.im.iter().all(|&v| v == 0.0));
        let s = ops.stiffness_scale();
        for p in 0..ops.pattern.nnz() {
            let terms: Vec<f64> = Modulus::ALL
                .iter()
                .map(|m| mat.storage(*m) * s * ops.k[m.index()][p])
                .collect();
            let expect: f64 = terms.iter().sum();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            assert!((k.re[p] - expect).abs() <= 1e-14 * scale.max(1.0));
        }
        let (k, _) = system(&ops, &mat, 2.0 * PI * 300.0).unwrap();
        assert!(k.im.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isotropic_matrix_at_100_hz() {
        let ops = setup(Placement::Shifted, 12, 3);
        let (d, nu, beta) = (17.97, 0.286, 0.003);
        let mat = MaterialParams::isotropic(d, nu, beta);
        let w = 2.0 * PI * 100.0;
        let (k, _) = system(&ops, &mat, w).unwrap();
        let inertia = ops.inertia();
        let s = ops.stiffness_scale();
        for p in 0..ops.pattern.nnz() {
            let kiso = ops.k[0][p] + ops.k[3][p] + nu * ops.k[1][p] + (1.0 - nu) * ops.k[5][p];
            let expect =
                Complex64::new(-w * w * inertia[p], 0.0) + Complex64::new(1.0, beta) * d * s * kiso;
            let size = w * w * inertia[p].abs()
                + d * s
                    * (ops.k[0][p].abs()
                        + ops.k[3][p].abs()
                        + ops.k[1][p].abs()
                        + ops.k[5][p].abs());
            let got = Complex64::new(k.re[p], k.im[p]);
            assert!((got - expect).norm() <= 1e-13 * size);
        }
        assert_eq!(k.asymmetry(), 0.0);
    }

    #[test]
    fn undamped_response_is_real() {
        let ops = setup(Placement::Shifted, 24, 6);
        let mat = MaterialParams::isotropic(17.97, 0.286, 0.0);
        for f in [37.0, 150.0, 333.0] {
            let u = solve_frequency(&ops, &mat, 2.0 * PI * f).unwrap();
            let worst = u.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
            assert!(worst < 1e-10, "{f} Hz: {worst:e}");
        }
    }

    #[test]
    fn sparse_solution_matches_dense_lu() {
        let ops = setup(Placement::Shifted, 24, 5);
        let mat = presets::reference_material();
        let w = 2.0 * PI * 600.0;
        let (k, f) = system(&ops, &mat, w).unwrap();
        let u = solve_frequency(&ops, &mat, w).unwrap();
        let dense = k
            .to_dense()
            .lu()
            .solve(&nalgebra::DVector::from_vec(f.clone()))
            .unwrap();
        let ud: Vec<Complex64> = dense.iter().copied().collect();
        let (p, pd) = (ops.probe(&u), ops.probe(&ud));
        assert!(p.norm().is_finite());
        assert!((p - pd).norm() <= 1e-8 * pd.norm());
        let r: Vec<Complex64> = k.matvec(&u).iter().zip(&f).map(|(a, b)| a - b).collect();
        assert!(norm(&r) <= 1e-10 * norm(&f));
    }

    #[test]
    fn response_ratio_is_independent_of_amplitude() {
        let mut ops = setup(Placement::Shifted, 12, 3);
        let mat = presets::reference_material();
        let w = 2.0 * PI * 250.0;
        let u1 = solve_frequency(&ops, &mat, w).unwrap();
        let p1 = ops.probe(&u1);
        ops.boundary_amplitude = 2.0;
        let u2 = solve_frequency(&ops, &mat, w).unwrap();
        for (a, b) in u1.iter().zip(&u2) {
            assert!((b - 2.0 * a).norm() <= 1e-10 * a.norm().max(1e-12));
        }
        let p2 = ops.probe(&u2);
        assert!((p2 / 2.0 - p1).norm() <= 1e-12 * p1.norm());
    }

    #[test]
    fn sweep_at_zero_and_errors() {
        let ops = setup(Placement::Shifted, 12, 3);
        let mat = presets::reference_material();
        let r = sweep(&ops, &mat, &[0.0]).unwrap();
        assert!((r.values[0] - 1.0).norm() < 1e-10);
        assert!(sweep(&ops, &mat, &[-1.0]).is_err());
        let bad = MaterialParams::isotropic(-1.0, 0.3, 0.0);
        assert!(sweep(&ops, &bad, &[10.0]).is_err());
    }

    #[test]
    fn peak_detection_excludes_endpoints() {
        let r = FrequencyResponse::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            [5.0, 1.0, 3.0, 2.0, 2.0, 9.0]
                .map(|v| Complex64::new(v, 0.0))
                .to_vec(),
        )
        .unwrap();
        assert_eq!(r.peaks(), vec![2]);
    }
}
