//! Damped natural modes: `K u = Lambda (M + e^2/3 L) u` with the complex
//! stiffness `K`, solved by shift-invert subspace iteration about zero.
//!
//! Natural frequency and decay factor follow from `sqrt(Lambda) = omega + i gamma`
//! on the principal branch.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fem::ConstantOperators;
use crate::forward::HarmonicSystem;
use crate::material::MaterialParams;
use crate::sparse::SkylineLdlt;

const MAX_ITER: usize = 500;
const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Mode {
    /// Eigenvalue `Lambda`.
    pub lambda: Complex64,
    /// Natural angular frequency (rad/s).
    pub omega: f64,
    /// Decay factor (1/s).
    pub gamma: f64,
    /// Componentwise backward error `|K u - Lambda B u| / (| |K| |u| | + |Lambda| | |B| |u| |)`.
    pub residual: f64,
    /// Mode shape over the free DOFs.
    pub vector: Vec<Complex64>,
}

impl Mode {
    pub fn freq_hz(&self) -> f64 {
        self.omega / (2.0 * std::f64::consts::PI)
    }
}

#[derive(Debug, Clone)]
pub struct ModalResult {
    /// Sorted by ascending `omega`.
    pub modes: Vec<Mode>,
    pub iterations: usize,
}

impl ModalResult {
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.modes.iter().map(Mode::freq_hz).collect()
    }
}

/// The `count` eigenpairs of smallest `|Lambda|`.
pub fn natural_modes(
    ops: &ConstantOperators,
    mat: &MaterialParams,
    count: usize,
) -> Result<ModalResult> {
    let n = ops.dofs.n_free();
    if count == 0 || count > n {
        return Err(Error::InvalidOptions(format!(
            "mode count {count} must lie in 1..={n}"
        )));
    }
    let sys = HarmonicSystem::new(ops, mat)?;
    let stiff = sys.stiffness();
    let ldlt = SkylineLdlt::factor(&ops.layout, &stiff.re, &stiff.im)?;
    let inertia = sys.inertia();
    let bmul = |x: &[Complex64]| ops.pattern.matvec(inertia, x);
    let stiff_abs: Vec<f64> = stiff
        .re
        .iter()
        .zip(&stiff.im)
        .map(|(a, b)| a.hypot(*b))
        .collect();

    let p = n.min((2 * count).max(count + 8));
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f646573);
    let mut q = DMatrix::<Complex64>::from_fn(n, p, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(v, 0.0)
    });
    b_orthonormalize(&mut q, &bmul)?;

    for iter in 1..=MAX_ITER {
        // y = K^-1 B q, column by column
        let mut y = DMatrix::<Complex64>::zeros(n, p);
        for j in 0..p {
            let bq = bmul(q.column(j).as_slice());
            let col = ldlt.solve(&bq);
            y.column_mut(j).copy_from_slice(&col);
        }
        b_orthonormalize(&mut y, &bmul)?;
        q = y;

        // Rayleigh-Ritz on the B-orthonormal basis: Qᴴ K Q z = Lambda z
        let mut kq = DMatrix::<Complex64>::zeros(n, p);
        for j in 0..p {
            kq.column_mut(j)
                .copy_from_slice(&stiff.matvec(q.column(j).as_slice()));
        }
        let small = q.adjoint() * &kq;
        let (values, vectors) = eigen_general(small)?;
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| values[a].norm().total_cmp(&values[b].norm()));

        let ritz = &q * &vectors;
        let mut modes = Vec::with_capacity(count);
        let mut converged = true;
        for &k in order.iter().take(count) {
            let x: Vec<Complex64> = ritz.column(k).iter().copied().collect();
            let kx = stiff.matvec(&x);
            let bx = bmul(&x);
            let res: f64 = kx
                .iter()
                .zip(&bx)
                .map(|(a, b)| (a - values[k] * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let ax: Vec<f64> = x.iter().map(|z| z.norm()).collect();
            let scale = l2(&ops.pattern.matvec(&stiff_abs, &ax))
                + values[k].norm() * l2(&ops.pattern.matvec(inertia, &ax));
            let residual = res / scale;
            converged &= residual <= TOLERANCE;
            let root = values[k].sqrt();
            modes.push(Mode {
                lambda: values[k],
                omega: root.re,
                gamma: root.im,
                residual,
                vector: normalize_phase(x),
            });
        }
        if converged {
            modes.sort_by(|a, b| a.omega.total_cmp(&b.omega));
            return Ok(ModalResult {
                modes,
                iterations: iter,
            });
        }
        // continue from the Ritz basis, which accelerates convergence
        q = ritz;
        b_orthonormalize(&mut q, &bmul)?;
    }
    Err(Error::EigenNoConvergence(format!(
        "{count} modes not converged after {MAX_ITER} subspace iterations"
    )))
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cholesky-QR in the `B` inner product, applied twice for stability.
fn b_orthonormalize(
    y: &mut DMatrix<Complex64>,
    bmul: &impl Fn(&[Complex64]) -> Vec<Complex64>,
) -> Result<()> {
    let (n, p) = y.shape();
    for _ in 0..2 {
        let mut by = DMatrix::<Complex64>::zeros(n, p);
        for j in 0..p {
            by.column_mut(j)
                .copy_from_slice(&bmul(y.column(j).as_slice()));
        }
        let mut g = y.adjoint() * &by;
        // enforce exact Hermitian symmetry before factoring
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (g[(i, j)] + g[(j, i)].conj());
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
            g[(i, i)] = Complex64::new(g[(i, i)].re, 0.0);
        }
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::EigenNoConvergence("subspace basis lost rank".into()))?;
        let r = chol.l().adjoint();
        // y <- y r^-1 as the transposed lower-triangular solve
        let yt = y.transpose();
        let sol = r
            .transpose()
            .solve_lower_triangular(&yt)
            .ok_or_else(|| Error::EigenNoConvergence("subspace basis lost rank".into()))?;
        *y = sol.transpose();
    }
    Ok(())
}

/// Eigenvalues and eigenvectors of a general complex matrix via Schur form.
fn eigen_general(a: DMatrix<Complex64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let p = a.nrows();
    let schur = Schur::try_new(a, 1e-15, 10_000)
        .ok_or_else(|| Error::EigenNoConvergence("Schur decomposition failed".into()))?;
    let (z, t) = schur.unpack();
    let values: Vec<Complex64> = (0..p).map(|i| t[(i, i)]).collect();
    let tnorm = t.norm().max(f64::MIN_POSITIVE);
    let mut vecs = DMatrix::<Complex64>::zeros(p, p);
    for k in 0..p {
        let mut v = DVector::<Complex64>::zeros(p);
        v[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let s: Complex64 = (j + 1..=k).map(|l| t[(j, l)] * v[l]).sum();
            let mut d = t[(j, j)] - t[(k, k)];
            if d.norm() < 1e-14 * tnorm {
                d = Complex64::new(1e-14 * tnorm, 0.0);
            }
            v[j] = -s / d;
        }
        let x = &z * v;
        let nx = x.norm();
        vecs.column_mut(k).copy_from(&(x / Complex64::new(nx, 0.0)));
    }
    Ok((values, vecs))
}

/// Scale to unit Euclidean norm with the largest component real and positive.
fn normalize_phase(mut x: Vec<Complex64>) -> Vec<Complex64> {
    let big = x
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or_default();
    let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if big.norm() > 0.0 {
        let s = big.conj() / (big.norm() * nrm);
        for z in &mut x {
            *z *= s;
        }
    }
    x
}
