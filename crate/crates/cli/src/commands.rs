use std::fs;
use std::path::{Path, PathBuf};

use plateid::fem::{assemble_with, AssemblyOptions, ConstantOperators};
use plateid::forward::sweep;
use plateid::inverse::{self, FitResult};
use plateid::io;
use plateid::mesh::{generate_strip_mesh, Mesh};
use plateid::modal::natural_modes;
use plateid::sensitivity::{
    fd_derivatives, parametrization_by_name, synthesize_data, Objective, Parametrization,
    ReferenceData,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .paths
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn build_mesh(cfg: &RunConfig) -> Result<Mesh, CliError> {
    let geometry = cfg.geometry.to_config();
    geometry.validate()?;
    Ok(match &cfg.paths.mesh {
        Some(p) => Mesh::load(p)?,
        None => generate_strip_mesh(&geometry)?,
    })
}

fn operators(cfg: &RunConfig) -> Result<ConstantOperators, CliError> {
    let mesh = build_mesh(cfg)?;
    let opts = AssemblyOptions {
        accel_mode: cfg.geometry.accel_mode.into(),
        ..AssemblyOptions::new(cfg.material.density)
    };
    Ok(assemble_with(&mesh, &cfg.geometry.to_config(), &opts)?)
}

fn param(cfg: &RunConfig) -> Result<Box<dyn Parametrization>, CliError> {
    Ok(parametrization_by_name(&cfg.fit.parametrization)?)
}

fn reference_theta(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    cfg.material
        .theta(&cfg.fit.parametrization, cfg.geometry.thickness)
}

/// Data from `paths.data`, or synthesized at the reference material.
fn reference_data(cfg: &RunConfig, ops: &ConstantOperators) -> Result<ReferenceData, CliError> {
    match &cfg.paths.data {
        Some(p) => Ok(io::read_reference(p)?),
        None => {
            let p = param(cfg)?;
            Ok(synthesize_data(
                &reference_theta(cfg)?,
                p.as_ref(),
                ops,
                &cfg.frequencies.grid()?,
                cfg.noise.level,
                cfg.noise.seed,
            )?)
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn write_toml(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn mesh(cfg: &RunConfig) -> Result<(), CliError> {
    let mesh = build_mesh(cfg)?;
    let path = out_dir(cfg)?.join("mesh.txt");
    mesh.save(&path)?;
    println!(
        "{} nodes, {} triangles, {} edges, {} under the accelerometer -> {}",
        mesh.nodes.len(),
        mesh.triangles.len(),
        mesh.edges.len(),
        mesh.accel_triangles.len(),
        path.display()
    );
    Ok(())
}

pub fn forward(cfg: &RunConfig) -> Result<(), CliError> {
    let ops = operators(cfg)?;
    let mat = cfg.material.params(cfg.geometry.thickness)?;
    let response = sweep(&ops, &mat, &cfg.frequencies.grid()?)?;
    let path = out_dir(cfg)?.join("afc.csv");
    io::write_afc(&path, &response)?;
    println!(
        "{} frequencies, peaks at {:?} Hz -> {}",
        response.len(),
        response.peak_frequencies(),
        path.display()
    );
    Ok(())
}

pub fn modes(cfg: &RunConfig) -> Result<(), CliError> {
    let ops = operators(cfg)?;
    let mat = cfg.material.params(cfg.geometry.thickness)?;
    let result = natural_modes(&ops, &mat, cfg.modes.count)?;
    let path = out_dir(cfg)?.join("modes.csv");
    io::write_modes(&path, &result)?;
    println!("{:>3} {:>14} {:>14}", "k", "f (Hz)", "gamma (1/s)");
    for (k, m) in result.modes.iter().enumerate() {
        println!("{:>3} {:>14.6} {:>14.6e}", k + 1, m.freq_hz(), m.gamma);
    }
    println!("-> {}", path.display());
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let ops = operators(cfg)?;
    let data = reference_data(
        &RunConfig {
            paths: Default::default(),
            ..cfg.clone()
        },
        &ops,
    )?;
    let path = out_dir(cfg)?.join("data.csv");
    io::write_reference(&path, &data)?;
    println!(
        "{} points, noise {}% (seed {}) -> {}",
        data.len(),
        cfg.noise.level,
        cfg.noise.seed,
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    command: &'static str,
    parametrization: String,
    labels: Vec<String>,
    initial: Vec<f64>,
    theta: Vec<f64>,
    loss: f64,
    iterations: usize,
    n_fev: usize,
    n_grad: usize,
    n_hess: usize,
    termination: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global: Option<GlobalReport>,
}

#[derive(Serialize)]
struct GlobalReport {
    chosen_restart: usize,
    theta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_errors: Option<Vec<f64>>,
    restart_losses: Vec<f64>,
    restart_generations: Vec<usize>,
    restart_evaluations: Vec<usize>,
}

fn judge(cfg: &RunConfig, relative_errors: Option<&[f64]>) -> Result<Option<bool>, CliError> {
    let Some(thr) = &cfg.fit.thresholds else {
        return Ok(None);
    };
    let Some(re) = relative_errors else {
        return Err(CliError::config(
            "fit.thresholds need a reference (synthetic data or a metadata sidecar)",
        ));
    };
    if thr.len() != re.len() {
        return Err(CliError::config(format!(
            "fit.thresholds has {} entries for {} parameters",
            thr.len(),
            re.len()
        )));
    }
    Ok(Some(re.iter().zip(thr).all(|(r, t)| r.abs() <= *t)))
}

fn finish(cfg: &RunConfig, mut report: FitReport, result: &FitResult) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    io::write_trace(dir.join("trace.csv"), &result.trace)?;
    report.pass = judge(cfg, result.relative_errors.as_deref())?;
    report.thresholds = cfg.fit.thresholds.clone();
    write_toml(&dir.join("report.toml"), &report)?;

    println!("labels           {:?}", report.labels);
    println!("theta            {}", fmt_vec(&result.theta));
    if let Some(re) = &result.relative_errors {
        println!("relative errors  {}", fmt_vec(re));
    }
    println!(
        "loss {:.6e}, {} iterations, {} loss / {} gradient / {} Hessian evaluations ({})",
        result.loss,
        result.iterations,
        result.n_fev,
        result.n_grad,
        result.n_hess,
        result.termination
    );
    println!("-> {}", dir.display());
    match report.pass {
        Some(false) => Err(CliError::threshold(format!(
            "relative errors {} exceed thresholds {}",
            fmt_vec(result.relative_errors.as_deref().unwrap_or_default()),
            fmt_vec(cfg.fit.thresholds.as_deref().unwrap_or_default())
        ))),
        Some(true) => {
            println!("PASS: relative errors within thresholds");
            Ok(())
        }
        None => Ok(()),
    }
}

fn initial_theta(cfg: &RunConfig, reference: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    match (&cfg.fit.initial, &cfg.fit.initial_relative_error) {
        (Some(t), None) => Ok(t.clone()),
        (None, Some(r)) => {
            let reference = reference.ok_or_else(|| {
                CliError::config(
                    "fit.initial_relative_error needs a reference; give fit.initial instead",
                )
            })?;
            if r.len() != reference.len() {
                return Err(CliError::config(
                    "fit.initial_relative_error has the wrong length",
                ));
            }
            Ok(reference
                .iter()
                .zip(r)
                .map(|(t, e)| t * (1.0 + e))
                .collect())
        }
        _ => Err(CliError::config(
            "fit-local needs exactly one of fit.initial and fit.initial_relative_error",
        )),
    }
}

pub fn fit_local(cfg: &RunConfig) -> Result<(), CliError> {
    let ops = operators(cfg)?;
    let data = reference_data(cfg, &ops)?;
    let p = param(cfg)?;
    let reference = data.theta_ref.clone();
    let theta0 = initial_theta(cfg, reference.as_deref())?;
    if theta0.len() != p.dim() {
        return Err(CliError::config(format!(
            "initial point has {} entries, parametrization '{}' needs {}",
            theta0.len(),
            p.name(),
            p.dim()
        )));
    }
    let result = inverse::fit_local(
        &ops,
        p.as_ref(),
        &data,
        &theta0,
        &cfg.trust_region.options(),
        reference.as_deref(),
    )?;
    let report = FitReport {
        command: "fit-local",
        parametrization: p.name().into(),
        labels: p.labels(),
        initial: theta0,
        theta: result.theta.clone(),
        loss: result.loss,
        iterations: result.iterations,
        n_fev: result.n_fev,
        n_grad: result.n_grad,
        n_hess: result.n_hess,
        termination: result.termination.to_string(),
        reference,
        relative_errors: result.relative_errors.clone(),
        thresholds: None,
        pass: None,
        global: None,
    };
    finish(cfg, report, &result)
}

pub fn fit_global(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.fit.parametrization != "isotropic" {
        return Err(CliError::config(
            "fit-global searches isotropic moduli only",
        ));
    }
    let ops = operators(cfg)?;
    let data = reference_data(cfg, &ops)?;
    let reference = data.theta_ref.clone();
    let global = cfg.global.to_param();
    let fit = inverse::fit_global(
        &ops,
        &data,
        &global,
        &cfg.de.options(),
        &cfg.trust_region.options(),
        reference.as_deref(),
    )?;
    let result = &fit.result;
    println!(
        "global stage: restart {} of {}, theta {}",
        fit.chosen + 1,
        fit.restarts.len(),
        fmt_vec(&fit.global_theta)
    );
    if let Some(re) = &fit.global_relative_errors {
        println!("global relative errors {}", fmt_vec(re));
    }
    let report = FitReport {
        command: "fit-global",
        parametrization: "isotropic".into(),
        labels: plateid::sensitivity::Isotropic.labels(),
        initial: fit.global_theta.to_vec(),
        theta: result.theta.clone(),
        loss: result.loss,
        iterations: result.iterations,
        n_fev: result.n_fev,
        n_grad: result.n_grad,
        n_hess: result.n_hess,
        termination: result.termination.to_string(),
        reference,
        relative_errors: result.relative_errors.clone(),
        thresholds: None,
        pass: None,
        global: Some(GlobalReport {
            chosen_restart: fit.chosen,
            theta: fit.global_theta.to_vec(),
            relative_errors: fit.global_relative_errors.clone(),
            restart_losses: fit.restarts.iter().map(|r| r.f_best).collect(),
            restart_generations: fit.restarts.iter().map(|r| r.generations).collect(),
            restart_evaluations: fit.restarts.iter().map(|r| r.n_fev).collect(),
        }),
    };
    finish(cfg, report, result)
}

#[derive(Serialize)]
struct GradReport {
    theta: Vec<f64>,
    loss: f64,
    gradient: Vec<f64>,
    gradient_fd: Vec<f64>,
    gradient_discrepancy: f64,
    hessian_discrepancy: f64,
    hessian_asymmetry: f64,
    pass: bool,
}

pub fn check_grad(cfg: &RunConfig, theta: Option<Vec<f64>>) -> Result<(), CliError> {
    let ops = operators(cfg)?;
    let data = reference_data(cfg, &ops)?;
    let p = param(cfg)?;
    let theta = match theta.or_else(|| cfg.check.theta.clone()) {
        Some(t) => t,
        None => reference_theta(cfg)?,
    };
    if theta.len() != p.dim() {
        return Err(CliError::config(format!(
            "theta has {} entries, parametrization '{}' needs {}",
            theta.len(),
            p.name(),
            p.dim()
        )));
    }
    let obj = Objective::new(&ops, p.as_ref(), &data)?;
    let (loss, g, h) = obj.loss_hess(&theta)?;
    let (gf, hf) = fd_derivatives(&obj, &theta)?;
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    let gd = rel((&g - &gf).norm(), gf.norm());
    let hd = rel((&h - &hf).norm(), hf.norm());
    let asym = rel((&h - h.transpose()).norm(), h.norm());
    let pass = gd < cfg.check.grad_tol && hd < cfg.check.hess_tol && asym < 1e-10;

    println!("theta                  {}", fmt_vec(&theta));
    println!("loss                   {loss:.12e}");
    println!("gradient               {}", fmt_vec(g.as_slice()));
    println!("finite differences     {}", fmt_vec(gf.as_slice()));
    println!(
        "gradient discrepancy   {gd:.3e} (tolerance {:.1e})",
        cfg.check.grad_tol
    );
    println!(
        "Hessian discrepancy    {hd:.3e} (tolerance {:.1e})",
        cfg.check.hess_tol
    );
    println!("Hessian asymmetry      {asym:.3e}");
    let dir = out_dir(cfg)?;
    write_toml(
        &dir.join("check_grad.toml"),
        &GradReport {
            theta,
            loss,
            gradient: g.as_slice().to_vec(),
            gradient_fd: gf.as_slice().to_vec(),
            gradient_discrepancy: gd,
            hessian_discrepancy: hd,
            hessian_asymmetry: asym,
            pass,
        },
    )?;
    if pass {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::threshold("derivative check failed"))
    }
}
