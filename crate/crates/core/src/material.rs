//! Complex bending moduli `D_a (1 + i beta_a)` of a monoclinic plate.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest accepted eigenvalue ratio of the storage matrix.
pub const MAX_STORAGE_CONDITION: f64 = 1e3;

/// Index pair of a bending modulus in the moment-curvature law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulus {
    D11,
    D12,
    D16,
    D22,
    D26,
    D66,
}

impl Modulus {
    pub const ALL: [Modulus; 6] = [
        Modulus::D11,
        Modulus::D12,
        Modulus::D16,
        Modulus::D22,
        Modulus::D26,
        Modulus::D66,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Modulus::D11 => "11",
            Modulus::D12 => "12",
            Modulus::D16 => "16",
            Modulus::D22 => "22",
            Modulus::D26 => "26",
            Modulus::D66 => "66",
        }
    }

    /// Symmetric bilinear form on constant curvature vectors `(w_xx, w_yy, w_xy)`.
    ///
    /// The 16 and 26 couplings are the symmetric parts of
    /// `u_xy v_xx + 2 u_xx v_xy` and `u_xy v_yy + 2 u_yy v_xy`; they give the
    /// same strain energy `V(u, u)` as the unsymmetric forms.
    pub fn form(self, u: [f64; 3], v: [f64; 3]) -> f64 {
        let [uxx, uyy, uxy] = u;
        let [vxx, vyy, vxy] = v;
        match self {
            Modulus::D11 => uxx * vxx,
            Modulus::D12 => uyy * vxx + uxx * vyy,
            Modulus::D16 => 1.5 * (uxy * vxx + uxx * vxy),
            Modulus::D22 => uyy * vyy,
            Modulus::D26 => 1.5 * (uxy * vyy + uyy * vxy),
            Modulus::D66 => 2.0 * uxy * vxy,
        }
    }
}

/// Flexural rigidity `2 E e^3 / (3 (1 - nu^2))` from Young's modulus, full
/// thickness and Poisson's ratio.
pub fn flexural_rigidity(youngs: f64, thickness: f64, poisson: f64) -> f64 {
    let e = 0.5 * thickness;
    2.0 * youngs * e.powi(3) / (3.0 * (1.0 - poisson * poisson))
}

/// Storage moduli (Pa m^3) and loss factors, indexed by [`Modulus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub storage: [f64; 6],
    pub loss: [f64; 6],
}

impl MaterialParams {
    pub fn isotropic(rigidity: f64, poisson: f64, loss: f64) -> Self {
        let d = rigidity;
        MaterialParams {
            storage: [d, poisson * d, 0.0, d, 0.0, (1.0 - poisson) * d],
            loss: [loss; 6],
        }
    }

    pub fn storage(&self, m: Modulus) -> f64 {
        self.storage[m.index()]
    }

    pub fn loss(&self, m: Modulus) -> f64 {
        self.loss[m.index()]
    }

    pub fn complex(&self, m: Modulus) -> Complex64 {
        Complex64::new(self.storage(m), self.storage(m) * self.loss(m))
    }

    pub fn validate(&self) -> Result<()> {
        let [d11, d12, d16, d22, d26, d66] = self.storage;
        if !self.storage.iter().chain(&self.loss).all(|v| v.is_finite()) {
            return Err(Error::InvalidMaterial("non-finite modulus".into()));
        }
        if let Some(b) = self.loss.iter().find(|&&b| b < 0.0) {
            return Err(Error::InvalidMaterial(format!("negative loss factor {b}")));
        }
        // leading principal minors of the 3x3 storage matrix
        let m1 = d11;
        let m2 = d11 * d22 - d12 * d12;
        let m3 = d11 * (d22 * d66 - d26 * d26) - d12 * (d12 * d66 - d26 * d16)
            + d16 * (d12 * d26 - d22 * d16);
        if !(d22 > 0.0 && d66 > 0.0 && m1 > 0.0 && m2 > 0.0 && m3 > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "storage matrix not positive definite: {:?}",
                self.storage
            )));
        }
        let m = Matrix3::new(d11, d12, d16, d12, d22, d26, d16, d26, d66);
        let eig = m.symmetric_eigenvalues();
        if eig.max() > MAX_STORAGE_CONDITION * eig.min() {
            return Err(Error::InvalidMaterial(format!(
                "storage matrix numerically singular (condition {:.3e})",
                eig.max() / eig.min()
            )));
        }
        Ok(())
    }
}
