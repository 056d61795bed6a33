//! The steel strip used throughout the experiments: 100 x 20 x 1 mm, clamped
//! on the short side at `x = L`, with a 1 g accelerometer near the free end.

use crate::material::MaterialParams;
use crate::mesh::{Accelerometer, ClampedSide, GeometryConfig, Point};

pub const LENGTH: f64 = 0.1;
pub const WIDTH: f64 = 0.02;
pub const THICKNESS: f64 = 1e-3;
pub const DENSITY: f64 = 7920.0;
pub const YOUNGS_MODULUS: f64 = 198e9;
pub const SHEAR_MODULUS: f64 = 77e9;
pub const POISSON: f64 = 0.286;
/// Tabulated flexural rigidity (Pa m^3).
pub const RIGIDITY: f64 = 17.97;
pub const LOSS_FACTOR: f64 = 0.003;
pub const ACCEL_MASS: f64 = 1e-3;
pub const ACCEL_RADIUS: f64 = 1e-3;

/// Accelerometer on the centre line, 5 mm from the free end.
pub const SYMMETRIC_CENTER: Point = [0.005, 0.010];
/// Accelerometer moved 5 mm off the centre line.
pub const SHIFTED_CENTER: Point = [0.005, 0.015];

pub const DEFAULT_NX: usize = 50;
pub const DEFAULT_NY: usize = 10;
pub const GRID_POINTS: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Symmetric,
    Shifted,
    /// No accelerometer; the response is still read at the shifted location.
    None,
}

pub fn strip_geometry(placement: Placement, nx: usize, ny: usize) -> GeometryConfig {
    let center = match placement {
        Placement::Symmetric => SYMMETRIC_CENTER,
        Placement::Shifted | Placement::None => SHIFTED_CENTER,
    };
    GeometryConfig {
        length: LENGTH,
        width: WIDTH,
        thickness: THICKNESS,
        nx,
        ny,
        accelerometer: (placement != Placement::None).then_some(Accelerometer {
            center,
            radius: ACCEL_RADIUS,
            mass: ACCEL_MASS,
        }),
        test_point: center,
        clamped_side: ClampedSide::Right,
    }
}

/// `(D, nu, beta)` of the reference specimen.
pub fn reference_theta() -> [f64; 3] {
    [RIGIDITY, POISSON, LOSS_FACTOR]
}

pub fn reference_material() -> MaterialParams {
    MaterialParams::isotropic(RIGIDITY, POISSON, LOSS_FACTOR)
}

/// `count` equidistant frequencies from zero to `f_max` inclusive.
pub fn frequency_grid(f_min: f64, f_max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![f_min],
        _ => (0..count)
            .map(|k| f_min + (f_max - f_min) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}
