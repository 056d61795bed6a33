//! Run configuration: a TOML file with one section per concern. Every field
//! has a default matching the steel strip with a shifted accelerometer, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use plateid::fem::AccelMode;
use plateid::inverse::{DEOptions, ModelUpdate, TrustRegionOptions};
use plateid::material::flexural_rigidity;
use plateid::mesh::{Accelerometer, ClampedSide, GeometryConfig};
use plateid::presets;
use plateid::sensitivity::{GlobalIsotropic, NQ};
use plateid::MaterialParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub material: Material,
    pub frequencies: Frequencies,
    pub noise: Noise,
    pub modes: Modes,
    pub fit: Fit,
    pub global: Global,
    pub trust_region: TrustRegion,
    pub de: De,
    pub check: Check,
    pub paths: Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Shifted,
    Symmetric,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AccelModeArg {
    Correct,
    Ignore,
    Smear,
}

impl From<AccelModeArg> for AccelMode {
    fn from(m: AccelModeArg) -> Self {
        match m {
            AccelModeArg::Correct => AccelMode::Correct,
            AccelModeArg::Ignore => AccelMode::Ignore,
            AccelModeArg::Smear => AccelMode::Smear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    pub nx: usize,
    pub ny: usize,
    pub clamped_side: Side,
    /// Preset accelerometer location; ignored when `accel_center` is given.
    pub placement: Placement,
    pub accel_center: Option<[f64; 2]>,
    pub accel_radius: f64,
    pub accel_mass: f64,
    pub accel_mode: AccelModeArg,
    /// Defaults to the accelerometer centre.
    pub test_point: Option<[f64; 2]>,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            length: presets::LENGTH,
            width: presets::WIDTH,
            thickness: presets::THICKNESS,
            nx: presets::DEFAULT_NX,
            ny: presets::DEFAULT_NY,
            clamped_side: Side::Right,
            placement: Placement::Shifted,
            accel_center: None,
            accel_radius: presets::ACCEL_RADIUS,
            accel_mass: presets::ACCEL_MASS,
            accel_mode: AccelModeArg::Correct,
            test_point: None,
        }
    }
}

impl Geometry {
    pub fn to_config(&self) -> GeometryConfig {
        let center = self.accel_center.unwrap_or(match self.placement {
            Placement::Symmetric => presets::SYMMETRIC_CENTER,
            Placement::Shifted | Placement::None => presets::SHIFTED_CENTER,
        });
        let has_accel = self.accel_center.is_some() || self.placement != Placement::None;
        GeometryConfig {
            length: self.length,
            width: self.width,
            thickness: self.thickness,
            nx: self.nx,
            ny: self.ny,
            accelerometer: has_accel.then_some(Accelerometer {
                center,
                radius: self.accel_radius,
                mass: self.accel_mass,
            }),
            test_point: self.test_point.unwrap_or(center),
            clamped_side: match self.clamped_side {
                Side::Left => ClampedSide::Left,
                Side::Right => ClampedSide::Right,
                Side::Bottom => ClampedSide::Bottom,
                Side::Top => ClampedSide::Top,
            },
        }
    }
}

/// Reference material: either the six moduli directly, or an isotropic plate
/// given by `rigidity` or by `youngs_modulus` (with the plate thickness).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Material {
    pub density: f64,
    pub youngs_modulus: Option<f64>,
    pub rigidity: Option<f64>,
    pub poisson: f64,
    pub loss_factor: f64,
    pub storage: Option<[f64; 6]>,
    pub loss: Option<[f64; 6]>,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            density: presets::DENSITY,
            youngs_modulus: None,
            rigidity: None,
            poisson: presets::POISSON,
            loss_factor: presets::LOSS_FACTOR,
            storage: None,
            loss: None,
        }
    }
}

impl Material {
    fn is_monoclinic(&self) -> bool {
        self.storage.is_some() || self.loss.is_some()
    }

    pub fn rigidity(&self, thickness: f64) -> f64 {
        match (self.rigidity, self.youngs_modulus) {
            (Some(d), _) => d,
            (None, Some(e)) => flexural_rigidity(e, thickness, self.poisson),
            (None, None) => presets::RIGIDITY,
        }
    }

    pub fn params(&self, thickness: f64) -> Result<MaterialParams, CliError> {
        if self.is_monoclinic() {
            let (Some(storage), Some(loss)) = (self.storage, self.loss) else {
                return Err(CliError::config(
                    "material: 'storage' and 'loss' must be given together",
                ));
            };
            return Ok(MaterialParams { storage, loss });
        }
        if self.rigidity.is_some() && self.youngs_modulus.is_some() {
            return Err(CliError::config(
                "material: give either 'rigidity' or 'youngs_modulus', not both",
            ));
        }
        Ok(MaterialParams::isotropic(
            self.rigidity(thickness),
            self.poisson,
            self.loss_factor,
        ))
    }

    /// Parameter vector of the reference material in the given parametrization.
    pub fn theta(&self, parametrization: &str, thickness: f64) -> Result<Vec<f64>, CliError> {
        match parametrization {
            "isotropic" if !self.is_monoclinic() => Ok(vec![
                self.rigidity(thickness),
                self.poisson,
                self.loss_factor,
            ]),
            "isotropic" => Err(CliError::config(
                "an isotropic fit needs an isotropic reference material (drop 'storage'/'loss')",
            )),
            "monoclinic" => {
                let m = self.params(thickness)?;
                let mut t = m.storage.to_vec();
                t.extend(m.loss);
                debug_assert_eq!(t.len(), NQ);
                Ok(t)
            }
            other => Err(CliError::config(format!(
                "fit.parametrization must be 'isotropic' or 'monoclinic', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Frequencies {
    pub f_min: f64,
    pub f_max: f64,
    pub count: usize,
}

impl Default for Frequencies {
    fn default() -> Self {
        Frequencies {
            f_min: 0.0,
            f_max: 1000.0,
            count: presets::GRID_POINTS,
        }
    }
}

impl Frequencies {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        if !(self.f_min >= 0.0 && self.f_max >= self.f_min && self.f_max.is_finite())
            || self.count == 0
        {
            return Err(CliError::config(format!(
                "frequencies: need 0 <= f_min <= f_max and count >= 1, got {self:?}"
            )));
        }
        Ok(presets::frequency_grid(self.f_min, self.f_max, self.count))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Noise {
    /// Percent of the largest AFC amplitude.
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Modes {
    pub count: usize,
}

impl Default for Modes {
    fn default() -> Self {
        Modes { count: 6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fit {
    pub parametrization: String,
    /// Starting point of a local fit.
    pub initial: Option<Vec<f64>>,
    /// Starting point as `theta_ref * (1 + r)` per component.
    pub initial_relative_error: Option<Vec<f64>>,
    /// Pass when every `|relative error|` is at most the matching entry.
    pub thresholds: Option<Vec<f64>>,
}

impl Default for Fit {
    fn default() -> Self {
        Fit {
            parametrization: "isotropic".into(),
            initial: None,
            initial_relative_error: None,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Global {
    /// Loss factor held fixed during the search.
    pub beta: f64,
    /// Bounds on `(D, 100 nu)`.
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Default for Global {
    fn default() -> Self {
        let g = GlobalIsotropic::default();
        Global {
            beta: g.beta,
            lower: g.lower,
            upper: g.upper,
        }
    }
}

impl Global {
    pub fn to_param(&self) -> GlobalIsotropic {
        GlobalIsotropic {
            beta: self.beta,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Update {
    Newton,
    Bfgs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustRegion {
    pub delta_max: f64,
    pub delta0: f64,
    pub eta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub update: Update,
    pub relative_scaling: bool,
}

impl Default for TrustRegion {
    fn default() -> Self {
        let d = TrustRegionOptions::default();
        TrustRegion {
            delta_max: d.delta_max,
            delta0: d.delta0,
            eta: d.eta,
            max_iter: d.max_iter,
            grad_tol: d.grad_tol,
            step_tol: d.step_tol,
            update: Update::Newton,
            relative_scaling: d.relative_scaling,
        }
    }
}

impl TrustRegion {
    pub fn options(&self) -> TrustRegionOptions {
        TrustRegionOptions {
            delta_max: self.delta_max,
            delta0: self.delta0,
            eta: self.eta,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            update: match self.update {
                Update::Newton => ModelUpdate::Newton,
                Update::Bfgs => ModelUpdate::Bfgs,
            },
            relative_scaling: self.relative_scaling,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct De {
    pub cr: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub pop_size: usize,
    pub max_fev: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for De {
    fn default() -> Self {
        let d = DEOptions::default();
        De {
            cr: d.cr,
            f_min: d.f_min,
            f_max: d.f_max,
            pop_size: d.pop_size,
            max_fev: d.max_fev,
            tol: d.tol,
            restarts: d.restarts,
            seed: d.seed,
        }
    }
}

impl De {
    pub fn options(&self) -> DEOptions {
        DEOptions {
            cr: self.cr,
            f_min: self.f_min,
            f_max: self.f_max,
            pop_size: self.pop_size,
            max_fev: self.max_fev,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Check {
    /// Point at which derivatives are checked; defaults to the reference.
    pub theta: Option<Vec<f64>>,
    pub grad_tol: f64,
    pub hess_tol: f64,
}

impl Default for Check {
    fn default() -> Self {
        Check {
            theta: None,
            grad_tol: 1e-5,
            hess_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Mesh file to use instead of the generated strip mesh.
    pub mesh: Option<PathBuf>,
    /// Reference AFC for fits; synthesized from the material when absent.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.mesh, &mut cfg.paths.data, &mut cfg.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.material.density.is_finite() && self.material.density > 0.0) {
            return Err(CliError::config("material.density must be positive"));
        }
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return Err(CliError::config("noise.level must be nonnegative"));
        }
        self.material.params(self.geometry.thickness)?;
        self.frequencies.grid()?;
        Ok(())
    }
}
