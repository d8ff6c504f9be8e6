//! On-disk formats: observable CSVs, JSON sidecars and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{GridConfig, ObservableSeries};
use crate::error::{Error, Result};
use crate::model::{ControlPoint, ParameterSet};
use crate::scaling::TimeWindow;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SERIES_HEADER: [&str; 5] = ["t", "p2", "p2_err", "pi0", "pi0_err"];

/// Shortest text that parses back to the same float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Write a table of floats with a header row.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_series_csv(path: &Path, obs: &ObservableSeries) -> Result<()> {
    let rows = (0..obs.times.len()).map(|i| {
        vec![
            obs.times[i].to_string(),
            fmt_f64(obs.p2[i]),
            fmt_f64(obs.p2_err[i]),
            fmt_f64(obs.pi0[i]),
            fmt_f64(obs.pi0_err[i]),
        ]
    });
    write_table(path, &SERIES_HEADER, rows)
}

/// Columns of an observable CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesColumns {
    pub times: Vec<usize>,
    pub p2: Vec<f64>,
    pub p2_err: Vec<f64>,
    pub pi0: Vec<f64>,
    pub pi0_err: Vec<f64>,
}

pub fn read_series_csv(path: &Path) -> Result<SeriesColumns> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != SERIES_HEADER {
        return Err(Error::Parse(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    let mut cols = SeriesColumns::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |field: &str| {
            Error::Parse(format!(
                "{}: row {}: bad value {field:?}",
                path.display(),
                line + 2
            ))
        };
        let f = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| bad(&rec[i]));
        cols.times
            .push(rec[0].trim().parse::<usize>().map_err(|_| bad(&rec[0]))?);
        cols.p2.push(f(1)?);
        cols.p2_err.push(f(2)?);
        cols.pi0.push(f(3)?);
        cols.pi0_err.push(f(4)?);
    }
    Ok(cols)
}

/// What produced a run directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Quantum,
    Synthetic,
    Classical,
}

/// Metadata written next to every observable CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSidecar {
    pub kind: RunKind,
    pub params: ParameterSet,
    pub control: ControlPoint,
    pub control_value: f64,
    pub seed: u64,
    pub n_realizations: usize,
    pub grid: GridConfig,
    pub transform_len: usize,
    pub random_phases: bool,
    pub code_version: String,
}

/// One sweep point of a run and its files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    /// Arc fraction along the path.
    pub s: f64,
    pub control: ControlPoint,
    pub control_value: f64,
    pub seed: u64,
    pub csv: String,
    pub csv_sha256: String,
    pub sidecar: String,
    pub sidecar_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub code_version: String,
    pub preset: Option<String>,
    pub params: ParameterSet,
    /// Control values of every planned point, in sweep order.
    pub sweep: Vec<f64>,
    pub n_realizations: usize,
    pub grid: GridConfig,
    pub seed: u64,
    pub random_phases: bool,
    pub times: Vec<usize>,
    pub window: TimeWindow,
    pub output_dir: PathBuf,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub points: Vec<PointRecord>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(Error::Manifest(format!(
                "no {MANIFEST_FILE} in {}",
                dir.display()
            )));
        }
        read_json(&path)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&Self::path(dir), self)
    }

    pub fn is_complete(&self) -> bool {
        self.points.len() == self.sweep.len()
    }

    /// Check that a recorded point's files exist and match their digests.
    pub fn check_point(&self, dir: &Path, p: &PointRecord) -> Result<()> {
        for (file, digest) in [(&p.csv, &p.csv_sha256), (&p.sidecar, &p.sidecar_sha256)] {
            let path = dir.join(file);
            if !path.exists() {
                return Err(Error::Manifest(format!("{} is missing", path.display())));
            }
            let got = sha256_file(&path)?;
            if &got != digest {
                return Err(Error::Manifest(format!(
                    "{} does not match its recorded digest (expected {digest}, found {got})",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Every planned point is present and untouched.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::Manifest(format!(
                "run is incomplete: {} of {} points recorded",
                self.points.len(),
                self.sweep.len()
            )));
        }
        for p in &self.points {
            self.check_point(dir, p)?;
        }
        Ok(())
    }

    /// Load every point's observables in sweep order.
    pub fn load_series(&self, dir: &Path) -> Result<Vec<ObservableSeries>> {
        let mut points = self.points.clone();
        points.sort_by_key(|p| p.index);
        points
            .iter()
            .map(|p| {
                let c = read_series_csv(&dir.join(&p.csv))?;
                let obs = ObservableSeries {
                    control: p.control,
                    control_value: p.control_value,
                    times: c.times,
                    p2: c.p2,
                    p2_err: c.p2_err,
                    pi0: c.pi0,
                    pi0_err: c.pi0_err,
                    n_realizations: self.n_realizations,
                    m1: vec![],
                    m1_err: vec![],
                };
                obs.validate()?;
                Ok(obs)
            })
            .collect()
    }
}

/// Write a point's CSV and sidecar and return its manifest record.
pub fn write_point(
    dir: &Path,
    index: usize,
    s: f64,
    obs: &ObservableSeries,
    sidecar: &SeriesSidecar,
) -> Result<PointRecord> {
    let stem = format!("point_{index:03}");
    let csv = format!("{stem}.csv");
    let json = format!("{stem}.json");
    write_series_csv(&dir.join(&csv), obs)?;
    write_json(&dir.join(&json), sidecar)?;
    Ok(PointRecord {
        index,
        s,
        control: obs.control,
        control_value: obs.control_value,
        seed: sidecar.seed,
        csv_sha256: sha256_file(&dir.join(&csv))?,
        sidecar_sha256: sha256_file(&dir.join(&json))?,
        csv,
        sidecar: json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> ObservableSeries {
        ObservableSeries {
            control: ControlPoint::new(4.0, 0.1),
            control_value: 4.0,
            times: vec![1, 2, 10],
            p2: vec![0.1, 1.0 / 3.0, 1e-300],
            p2_err: vec![0.0, 1e-17, 2.5],
            pi0: vec![1.0, 0.123_456_789_012_345_68, 0.0],
            pi0_err: vec![0.0, 0.1, 0.2],
            n_realizations: 2,
            m1: vec![],
            m1_err: vec![],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_series_csv(&p, &obs()).unwrap();
        let c = read_series_csv(&p).unwrap();
        let o = obs();
        assert_eq!(
            (c.times, c.p2, c.p2_err, c.pi0, c.pi0_err),
            (o.times, o.p2, o.p2_err, o.pi0, o.pi0_err)
        );
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,p2,p2_err,pi0,pi0_err\n"));
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "t,x\n1,2\n").unwrap();
        assert!(matches!(read_series_csv(&p), Err(Error::Parse(_))));
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
