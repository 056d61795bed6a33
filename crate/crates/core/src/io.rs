//! CSV files: AFC curves (`freq_hz,re,im,amp,phase_rad`), optimizer traces
//! and modal tables, plus the TOML sidecar describing synthetic data.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so files round-trip exactly and repeated runs are byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::FrequencyResponse;
use crate::inverse::TraceRow;
use crate::modal::ModalResult;
use crate::sensitivity::{NoiseInfo, ReferenceData};

pub const AFC_HEADER: [&str; 5] = ["freq_hz", "re", "im", "amp", "phase_rad"];

pub fn write_afc_to<W: Write>(out: W, freqs_hz: &[f64], values: &[Complex64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AFC_HEADER)?;
    for (f, z) in freqs_hz.iter().zip(values) {
        w.write_record([f, &z.re, &z.im, &z.norm(), &z.arg()].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_afc(path: impl AsRef<Path>, response: &FrequencyResponse) -> Result<()> {
    write_afc_to(
        fs::File::create(path)?,
        &response.freqs_hz,
        &response.values,
    )
}

/// Reads `freq_hz`, `re` and `im`; the derived columns are ignored.
pub fn read_afc_from<R: Read>(input: R) -> Result<FrequencyResponse> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = r.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidData(format!("AFC file lacks a '{name}' column")))
    };
    let (cf, cre, cim) = (column("freq_hz")?, column("re")?, column("im")?);
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse()
                .map_err(|_| Error::InvalidData(format!("AFC row {}: cannot parse '{s}'", i + 2)))
        };
        freqs.push(num(cf)?);
        values.push(Complex64::new(num(cre)?, num(cim)?));
    }
    FrequencyResponse::new(freqs, values)
}

pub fn read_afc(path: impl AsRef<Path>) -> Result<FrequencyResponse> {
    read_afc_from(fs::File::open(path)?)
}

/// `data.csv` -> `data.meta.toml`.
pub fn metadata_path(csv_path: impl AsRef<Path>) -> PathBuf {
    csv_path.as_ref().with_extension("meta.toml")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_ref: Option<Vec<f64>>,
}

/// Writes the AFC CSV and, when anything is known about its origin, the sidecar.
pub fn write_reference(path: impl AsRef<Path>, data: &ReferenceData) -> Result<()> {
    let path = path.as_ref();
    write_afc_to(fs::File::create(path)?, &data.freqs_hz, &data.values)?;
    let meta = Metadata {
        noise_level: data.noise.map(|n| n.level),
        seed: data.noise.map(|n| n.seed),
        theta_ref: data.theta_ref.clone(),
    };
    if meta.noise_level.is_some() || meta.theta_ref.is_some() {
        let text = toml::to_string(&meta).map_err(|e| Error::InvalidData(e.to_string()))?;
        fs::write(metadata_path(path), text)?;
    }
    Ok(())
}

/// Reads the AFC CSV and its sidecar if one exists.
pub fn read_reference(path: impl AsRef<Path>) -> Result<ReferenceData> {
    let path = path.as_ref();
    let afc = read_afc(path)?;
    let mut data = ReferenceData::new(afc.freqs_hz, afc.values)?;
    let meta_path = metadata_path(path);
    if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)?;
        let meta: Metadata = toml::from_str(&text)
            .map_err(|e| Error::InvalidData(format!("{}: {e}", meta_path.display())))?;
        data.noise = meta.noise_level.map(|level| NoiseInfo {
            level,
            seed: meta.seed.unwrap_or(0),
        });
        data.theta_ref = meta.theta_ref;
        data.validate()?;
    }
    Ok(data)
}

/// Header `iter,loss,theta_1..theta_k,delta_or_spread`.
pub fn write_trace_to<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let k = trace.first().map_or(0, |r| r.theta.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string(), "loss".to_string()];
    header.extend((1..=k).map(|i| format!("theta_{i}")));
    header.push("delta_or_spread".into());
    w.write_record(&header)?;
    for row in trace {
        if row.theta.len() != k {
            return Err(Error::InvalidData("trace rows differ in dimension".into()));
        }
        let mut rec = vec![row.iter.to_string(), row.loss.to_string()];
        rec.extend(row.theta.iter().map(f64::to_string));
        rec.push(row.delta_or_spread.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    write_trace_to(fs::File::create(path)?, trace)
}

pub const MODES_HEADER: [&str; 7] = [
    "k",
    "freq_hz",
    "omega",
    "gamma",
    "lambda_re",
    "lambda_im",
    "residual",
];

pub fn write_modes_to<W: Write>(out: W, modes: &ModalResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MODES_HEADER)?;
    for (k, m) in modes.modes.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(
            [
                m.freq_hz(),
                m.omega,
                m.gamma,
                m.lambda.re,
                m.lambda.im,
                m.residual,
            ]
            .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_modes(path: impl AsRef<Path>, modes: &ModalResult) -> Result<()> {
    write_modes_to(fs::File::create(path)?, modes)
}
