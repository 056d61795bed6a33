//! Symmetric sparse storage and a profile (skyline) `L D L^T` factorization
//! for complex symmetric matrices.
//!
//! All constant operators of a mesh share one [`CsrPattern`]; a matrix is the
//! pattern plus a value vector, so linear combinations are plain axpys over
//! value arrays. The factorization works on the lower profile of the pattern
//! and keeps real and imaginary parts in separate arrays so the inner dot
//! products vectorize.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Compressed sparse row structure with sorted columns, diagonal included.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl CsrPattern {
    /// Builds the pattern from per-row column lists (need not be sorted or unique).
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (i, r) in rows.iter_mut().enumerate() {
            r.push(i);
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        CsrPattern { n, row_ptr, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (std::ops::Range<usize>, &[usize]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (r.clone(), &self.cols[r])
    }

    /// Storage position of entry `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (range, cols) = self.row(i);
        cols.binary_search(&j).ok().map(|k| range.start + k)
    }

    /// `y = A x` for real values over this pattern.
    pub fn matvec<T>(&self, values: &[f64], x: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        debug_assert_eq!(values.len(), self.nnz());
        (0..self.n)
            .map(|i| {
                let (r, cols) = self.row(i);
                cols.iter()
                    .zip(&values[r])
                    .fold(T::default(), |acc, (&j, &v)| acc + x[j] * v)
            })
            .collect()
    }

    /// `y = A x` for complex values stored as separate real/imaginary arrays.
    pub fn matvec_complex(&self, re: &[f64], im: &[f64], x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                let (r, cols) = self.row(i);
                let mut acc = Complex64::new(0.0, 0.0);
                for ((&j, &a), &b) in cols.iter().zip(&re[r.clone()]).zip(&im[r]) {
                    acc += Complex64::new(a, b) * x[j];
                }
                acc
            })
            .collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .map(|i| {
                let (_, cols) = self.row(i);
                cols.iter().map(|&j| i.abs_diff(j)).max().unwrap_or(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Dense copy of a real matrix over this pattern (tests and small problems).
    pub fn to_dense(&self, values: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (r, cols) = self.row(i);
            for (&j, &v) in cols.iter().zip(&values[r]) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Writes `row col value` triplets, one per line, for debugging.
    pub fn write_triplets(&self, values: &[f64], mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "# row col value ({} x {}, {} entries)",
            self.n,
            self.n,
            self.nnz()
        )?;
        for i in 0..self.n {
            let (r, cols) = self.row(i);
            for (&j, &v) in cols.iter().zip(&values[r]) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Lower-profile layout derived from a symmetric pattern.
#[derive(Debug, Clone)]
pub struct SkylineLayout {
    n: usize,
    /// First stored column of each row.
    first: Vec<usize>,
    /// Start of row `i` in the packed storage; row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    /// For each pattern entry with `j <= i`, its packed position (`usize::MAX` otherwise).
    scatter: Vec<usize>,
}

impl SkylineLayout {
    pub fn new(pattern: &CsrPattern) -> Self {
        let n = pattern.dim();
        let first: Vec<usize> = (0..n)
            .map(|i| pattern.row(i).1.first().map_or(i, |&j| j.min(i)))
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut scatter = vec![usize::MAX; pattern.nnz()];
        for i in 0..n {
            let (r, cols) = pattern.row(i);
            for (p, &j) in r.zip(cols) {
                if j <= i {
                    scatter[p] = start[i] + (j - first[i]);
                }
            }
        }
        SkylineLayout {
            n,
            first,
            start,
            scatter,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored lower-profile entries.
    pub fn profile_size(&self) -> usize {
        self.start[self.n]
    }
}

/// `A = L D L^T` of a complex symmetric matrix (transpose, not conjugate).
#[derive(Debug, Clone)]
pub struct SkylineLdlt<'a> {
    layout: &'a SkylineLayout,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[inline]
fn cdot(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> (f64, f64) {
    let n = ar.len();
    let (ar, ai, br, bi) = (&ar[..n], &ai[..n], &br[..n], &bi[..n]);
    let mut rr = [0.0f64; 4];
    let mut ii = [0.0f64; 4];
    let mut ri = [0.0f64; 4];
    let mut ir = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for l in 0..4 {
            let k = 4 * c + l;
            rr[l] += ar[k] * br[k];
            ii[l] += ai[k] * bi[k];
            ri[l] += ar[k] * bi[k];
            ir[l] += ai[k] * br[k];
        }
    }
    let mut re = (rr[0] + rr[1]) + (rr[2] + rr[3]) - ((ii[0] + ii[1]) + (ii[2] + ii[3]));
    let mut im = (ri[0] + ri[1]) + (ri[2] + ri[3]) + ((ir[0] + ir[1]) + (ir[2] + ir[3]));
    for k in 4 * chunks..n {
        re += ar[k] * br[k] - ai[k] * bi[k];
        im += ar[k] * bi[k] + ai[k] * br[k];
    }
    (re, im)
}

impl<'a> SkylineLdlt<'a> {
    /// Factorizes the matrix whose pattern values are `re + i im`.
    ///
    /// No pivoting is performed; a pivot smaller than `1e-14` times the
    /// largest diagonal magnitude is reported as singular.
    pub fn factor(layout: &'a SkylineLayout, re_vals: &[f64], im_vals: &[f64]) -> Result<Self> {
        let n = layout.n;
        let mut re = vec![0.0; layout.profile_size()];
        let mut im = vec![0.0; layout.profile_size()];
        for (p, &s) in layout.scatter.iter().enumerate() {
            if s != usize::MAX {
                re[s] = re_vals[p];
                im[s] = im_vals[p];
            }
        }
        let diag_scale = (0..n)
            .map(|i| {
                let d = layout.start[i + 1] - 1;
                re[d].hypot(im[d])
            })
            .fold(0.0f64, f64::max);
        let tiny = 1e-14 * diag_scale.max(f64::MIN_POSITIVE);

        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for i in 0..n {
            let fi = layout.first[i];
            let si = layout.start[i];
            let diag = layout.start[i + 1] - 1;
            // pass 1: G_ij = a_ij - sum_k G_ik L_jk, stored in row i
            for j in fi..i {
                let fj = layout.first[j];
                let sj = layout.start[j];
                let k0 = fi.max(fj);
                if k0 < j {
                    let (a0, a1) = (si + (k0 - fi), si + (j - fi));
                    let (b0, b1) = (sj + (k0 - fj), sj + (j - fj));
                    let (dr, di) = cdot(&re[a0..a1], &im[a0..a1], &re[b0..b1], &im[b0..b1]);
                    re[a1] -= dr;
                    im[a1] -= di;
                }
            }
            // pass 2: L_ik = G_ik / d_k, d_i = a_ii - sum G_ik L_ik
            let mut dr = re[diag];
            let mut di = im[diag];
            for k in fi..i {
                let p = si + (k - fi);
                let dk = layout.start[k + 1] - 1;
                let g = Complex64::new(re[p], im[p]);
                let l = g / Complex64::new(re[dk], im[dk]);
                let gl = g * l;
                dr -= gl.re;
                di -= gl.im;
                re[p] = l.re;
                im[p] = l.im;
            }
            let mag = dr.hypot(di);
            if !(mag > tiny) {
                return Err(Error::Singular {
                    pivot: i,
                    magnitude: mag,
                    condition: if mag > 0.0 {
                        dmax.max(mag) / mag
                    } else {
                        f64::INFINITY
                    },
                });
            }
            dmin = dmin.min(mag);
            dmax = dmax.max(mag);
            re[diag] = dr;
            im[diag] = di;
        }
        Ok(SkylineLdlt { layout, re, im })
    }

    pub fn dim(&self) -> usize {
        self.layout.n
    }

    /// Ratio of largest to smallest pivot magnitude (a cheap conditioning indicator).
    pub fn pivot_ratio(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.layout.n {
            let d = self.layout.start[i + 1] - 1;
            let m = self.re[d].hypot(self.im[d]);
            lo = lo.min(m);
            hi = hi.max(m);
        }
        hi / lo
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut xr: Vec<f64> = b.iter().map(|z| z.re).collect();
        let mut xi: Vec<f64> = b.iter().map(|z| z.im).collect();
        self.solve_in_place(&mut xr, &mut xi);
        xr.into_iter()
            .zip(xi)
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    }

    pub fn solve_in_place(&self, xr: &mut [f64], xi: &mut [f64]) {
        let lay = self.layout;
        let n = lay.n;
        // L y = b
        for i in 0..n {
            let fi = lay.first[i];
            if fi < i {
                let (s0, s1) = (lay.start[i], lay.start[i] + (i - fi));
                let (dr, di) = cdot(&self.re[s0..s1], &self.im[s0..s1], &xr[fi..i], &xi[fi..i]);
                xr[i] -= dr;
                xi[i] -= di;
            }
        }
        // D z = y
        for i in 0..n {
            let d = lay.start[i + 1] - 1;
            let z = Complex64::new(xr[i], xi[i]) / Complex64::new(self.re[d], self.im[d]);
            xr[i] = z.re;
            xi[i] = z.im;
        }
        // L^T x = z
        for i in (0..n).rev() {
            let fi = lay.first[i];
            let (vr, vi) = (xr[i], xi[i]);
            let s0 = lay.start[i];
            for k in fi..i {
                let (lr, li) = (self.re[s0 + k - fi], self.im[s0 + k - fi]);
                xr[k] -= lr * vr - li * vi;
                xi[k] -= lr * vi + li * vr;
            }
        }
    }
}

/// Complex symmetric matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct ComplexSymMatrix<'a> {
    pub pattern: &'a CsrPattern,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSymMatrix<'_> {
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.pattern.matvec_complex(&self.re, &self.im, x)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let n = self.pattern.dim();
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            let (r, cols) = self.pattern.row(i);
            for (p, &j) in r.zip(cols) {
                a[(i, j)] = Complex64::new(self.re[p], self.im[p]);
            }
        }
        a
    }

    /// `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.pattern.dim() {
            let (r, cols) = self.pattern.row(i);
            for (p, &j) in r.zip(cols) {
                let q = self
                    .pattern
                    .position(j, i)
                    .expect("pattern is structurally symmetric");
                worst = worst
                    .max((self.re[p] - self.re[q]).abs())
                    .max((self.im[p] - self.im[q]).abs());
            }
        }
        worst
    }
}

pub fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// Dekker split of `a` into two 26-bit halves.
#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// `a * b` as an unevaluated sum `p + e`, exact barring overflow.
#[inline]
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub fn from_f64(a: f64) -> Self {
        Dd { hi: a, lo: 0.0 }
    }

    /// Adds the unevaluated sum `p + e`.
    #[inline]
    pub fn add_pair(self, p: f64, e: f64) -> Self {
        let s = self.hi + p;
        let v = s - self.hi;
        let err = (self.hi - (s - v)) + (p - v);
        let t = err + self.lo + e;
        let hi = s + t;
        Dd {
            hi,
            lo: t - (hi - s),
        }
    }

    #[inline]
    pub fn add_prod(self, a: f64, b: f64) -> Self {
        let (p, e) = two_prod(a, b);
        self.add_pair(p, e)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// `b - A x` accumulated in double-double, where the entries of `A` are
/// `(re + re_lo) + i (im + im_lo)`.
pub fn residual_extended(
    a: &ComplexSymMatrix,
    re_lo: &[f64],
    im_lo: &[f64],
    b: &[Complex64],
    x: &[Complex64],
) -> Vec<Complex64> {
    (0..a.pattern.dim())
        .map(|i| {
            let (r, cols) = a.pattern.row(i);
            let mut acc_re = Dd::from_f64(b[i].re);
            let mut acc_im = Dd::from_f64(b[i].im);
            let (mut tail_re, mut tail_im) = (0.0, 0.0);
            for (p, &j) in r.zip(cols) {
                let (ar, ai, xj) = (a.re[p], a.im[p], x[j]);
                acc_re = acc_re.add_prod(-ar, xj.re).add_prod(ai, xj.im);
                acc_im = acc_im.add_prod(-ar, xj.im).add_prod(-ai, xj.re);
                tail_re += re_lo[p] * xj.re - im_lo[p] * xj.im;
                tail_im += re_lo[p] * xj.im + im_lo[p] * xj.re;
            }
            Complex64::new(
                acc_re.add_pair(-tail_re, 0.0).to_f64(),
                acc_im.add_pair(-tail_im, 0.0).to_f64(),
            )
        })
        .collect()
}
