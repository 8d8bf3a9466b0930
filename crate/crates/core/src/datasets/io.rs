//! CSV import/export for point clouds and trajectories.
//!
//! Header: `x0,...,x{d-1}` optionally followed by `w` (non-uniform weights),
//! or by `t,path_id` for trajectory files. Floats are written with Rust's
//! shortest round-trip formatting, so load(save(c)) reproduces `c` exactly.

use super::PointCloud;
use crate::error::{Error, Result};
use crate::sim::TrajectoryEnsemble;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// JSON sidecar written next to an exported cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub dim: usize,
    pub n: usize,
    pub label: Option<String>,
    pub seed: Option<u64>,
}

pub fn save_cloud_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = cloud.dim();
    let weighted = !cloud.is_uniform();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if weighted {
        header.push("w".into());
    }
    w.write_record(&header)?;
    for (i, row) in cloud.points().rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if weighted {
            rec.push(cloud.weights()[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<path>.json` with the cloud's metadata.
pub fn write_sidecar(cloud: &PointCloud, path: impl AsRef<Path>, seed: Option<u64>) -> Result<PathBuf> {
    let mut p = path.as_ref().as_os_str().to_owned();
    p.push(".json");
    let p = PathBuf::from(p);
    let meta = CloudMeta {
        dim: cloud.dim(),
        n: cloud.len(),
        label: cloud.label.clone(),
        seed,
    };
    std::fs::write(&p, serde_json::to_string_pretty(&meta)?)?;
    Ok(p)
}

/// Trajectory rows: `x0..x{d-1}, t, path_id`, paths in order, times ascending.
pub fn save_trajectories_csv(ens: &TrajectoryEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = ens.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("t".into());
    header.push("path_id".into());
    w.write_record(&header)?;
    for p in 0..ens.n_paths() {
        for (k, t) in ens.physical_times().iter().enumerate() {
            let mut rec: Vec<String> = ens.state(k, p).iter().map(|v| v.to_string()).collect();
            rec.push(t.to_string());
            rec.push(p.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a cloud. `t` / `path_id` columns are ignored; a `w` column supplies weights.
pub fn load_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = r.headers()?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Parse {
            row: 0,
            msg: "missing header".into(),
        });
    }
    let mut coord_cols = Vec::new();
    let mut weight_col = None;
    for (c, name) in header.iter().enumerate() {
        let name = name.trim();
        if name == "w" {
            weight_col = Some(c);
        } else if name.starts_with('x') {
            coord_cols.push(c);
        } else if name == "t" || name == "path_id" {
            continue;
        } else {
            return Err(Error::Parse {
                row: 0,
                msg: format!("unexpected column `{name}`"),
            });
        }
    }
    if coord_cols.is_empty() {
        return Err(Error::Parse {
            row: 0,
            msg: "no coordinate columns".into(),
        });
    }
    let d = coord_cols.len();
    let mut data = Vec::new();
    let mut weights = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let parse = |c: usize| -> Result<f64> {
            let s = rec[c].trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    msg: format!("non-numeric or non-finite cell `{s}` in column {c}"),
                }),
            }
        };
        for &c in &coord_cols {
            data.push(parse(c)?);
        }
        if let Some(c) = weight_col {
            weights.push(parse(c)?);
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(Error::Parse {
            row: 1,
            msg: "file has no data rows".into(),
        });
    }
    let pts = Array2::from_shape_vec((n, d), data).expect("row-major shape");
    match weight_col {
        Some(_) => PointCloud::new(pts, Array1::from(weights), None),
        None => PointCloud::uniform(pts),
    }
}
