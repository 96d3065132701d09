//! Plain-text point files: one whitespace-separated `x y z` triple per
//! line, `#` comments and blank lines ignored. An optional sidecar
//! `<file>.json` records the shape id and normalization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointflow::Normalization;
use crate::tensor::Tensor;

pub const POINT_EXT: &str = "xyz";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub normalization: Normalization,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn read_points(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut data = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 3 {
            return Err(parse_err(path, format!("line {}: expected 3 values, got {}", lineno + 1, vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, format!("line {}: non-finite coordinate", lineno + 1)));
        }
        data.extend(vals);
    }
    let n = data.len() / 3;
    Tensor::new(vec![n, 3], data)
}

pub fn write_points(path: &Path, points: &Tensor, sidecar: Option<&Sidecar>) -> Result<()> {
    if points.cols() != 3 && !points.is_empty() {
        return Err(Error::shape("write_points", format!("expected [n, 3], got {:?}", points.shape())));
    }
    let mut out = String::with_capacity(points.len() * 24);
    for i in 0..points.rows() {
        let r = points.row(i);
        out.push_str(&format!("{} {} {}\n", r[0], r[1], r[2]));
    }
    fs::write(path, out)?;
    if let Some(sc) = sidecar {
        let json = serde_json::to_string_pretty(sc).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(sidecar_path(path), json + "\n")?;
    }
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let sc = sidecar_path(path);
    if !sc.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sc)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| parse_err(&sc, e.to_string()))
}

/// Every `*.xyz` file in `dir`, sorted by file name, as `(id, points)`. The
/// id comes from the sidecar when present, else from the file stem.
pub fn read_point_dir(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| parse_err(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == POINT_EXT))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let pts = read_points(&p)?;
            let id = match read_sidecar(&p)? {
                Some(sc) => sc.id,
                None => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            };
            Ok((id, pts))
        })
        .collect()
}
