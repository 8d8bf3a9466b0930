//! Two-dimensional benchmark distributions and isotropic Gaussians.
//!
//! Geometry (all pinned here, `scale` multiplies every length):
//!
//! * `8gaussians`: eight modes on a circle of radius `2·scale` at angles
//!   `kπ/4`, each isotropic with std `0.1·scale`.
//! * `moons`: two interleaving half circles of radius 1 (upper centred at
//!   the origin, lower at `(1, 0.5)` and flipped), Gaussian noise std
//!   `noise` (default 0.1), then shifted by `(-0.5, -0.25)` and multiplied
//!   by `2·scale` so the cloud is centred near the origin.
//! * `scurve`: the `(x, z)` projection of the 3-D S-curve
//!   `x = sin u, z = sign(u)(cos u − 1)`, `u ~ U(−3π/2, 3π/2)`, noise std
//!   `noise` (default 0.1), times `scale`.
//! * `gaussian`: `N(mean, var·I)` in `dim` dimensions.

use super::PointCloud;
use crate::error::{config, Result};
use crate::rng::{self, streams};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyKind {
    #[serde(rename = "8gaussians")]
    EightGaussians,
    #[serde(rename = "moons")]
    Moons,
    #[serde(rename = "scurve")]
    SCurve,
    #[serde(rename = "gaussian")]
    Gaussian,
}

impl FromStr for ToyKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8gaussians" => Ok(Self::EightGaussians),
            "moons" => Ok(Self::Moons),
            "scurve" => Ok(Self::SCurve),
            "gaussian" | "normal" => Ok(Self::Gaussian),
            other => config(format!("unknown toy dataset `{other}`")),
        }
    }
}

impl ToyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::EightGaussians => "8gaussians",
            Self::Moons => "moons",
            Self::SCurve => "scurve",
            Self::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyParams {
    pub scale: f64,
    pub noise: f64,
    /// Dimension of the `gaussian` kind.
    pub dim: usize,
    /// Mean of the `gaussian` kind; a single entry is broadcast to `dim`.
    pub mean: Vec<f64>,
    pub var: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            scale: 1.0,
            noise: 0.1,
            dim: 2,
            mean: vec![0.0],
            var: 1.0,
        }
    }
}

impl ToyParams {
    pub fn gaussian(dim: usize, mean: f64, var: f64) -> Self {
        Self {
            dim,
            mean: vec![mean],
            var,
            ..Self::default()
        }
    }
}

pub fn make_toy(kind: ToyKind, n: usize, seed: u64, params: &ToyParams) -> Result<PointCloud> {
    if n == 0 {
        return config("toy dataset size must be at least 1");
    }
    let mut rng = rng::stream(seed, streams::SOURCE);
    let pts = match kind {
        ToyKind::EightGaussians => eight_gaussians(n, params.scale, &mut rng),
        ToyKind::Moons => moons(n, params.scale, params.noise, &mut rng),
        ToyKind::SCurve => scurve(n, params.scale, params.noise, &mut rng),
        ToyKind::Gaussian => {
            if params.dim == 0 {
                return config("gaussian dimension must be positive");
            }
            if !(params.var >= 0.0) {
                return config("gaussian variance must be nonnegative");
            }
            let mean = broadcast_mean(&params.mean, params.dim)?;
            gaussian(n, &mean, params.var, &mut rng)
        }
    };
    Ok(PointCloud::uniform(pts)?.with_label(kind.name()))
}

/// Source `N(−0.1·1, I)` and target `N(+0.1·1, I)`, drawn from separate streams.
pub fn make_gaussian_pair(dim: usize, n: usize, seed: u64) -> Result<(PointCloud, PointCloud)> {
    if dim == 0 || n == 0 {
        return config("gaussian pair needs dim >= 1 and n >= 1");
    }
    let mut rs = rng::stream(seed, streams::SOURCE);
    let mut rt = rng::stream(seed, streams::TARGET);
    let src = gaussian(n, &vec![-0.1; dim], 1.0, &mut rs);
    let tgt = gaussian(n, &vec![0.1; dim], 1.0, &mut rt);
    Ok((
        PointCloud::uniform(src)?.with_label("gaussian_source"),
        PointCloud::uniform(tgt)?.with_label("gaussian_target"),
    ))
}

fn broadcast_mean(mean: &[f64], dim: usize) -> Result<Vec<f64>> {
    match mean.len() {
        0 => Ok(vec![0.0; dim]),
        1 => Ok(vec![mean[0]; dim]),
        l if l == dim => Ok(mean.to_vec()),
        l => config(format!("gaussian mean has {l} entries, expected 1 or {dim}")),
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian<R: Rng + ?Sized>(n: usize, mean: &[f64], var: f64, rng: &mut R) -> Array2<f64> {
    let sd = var.sqrt();
    let d = mean.len();
    Array2::from_shape_fn((n, d), |(_, j)| mean[j] + sd * normal(rng))
}

fn eight_gaussians<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    let radius = 2.0 * scale;
    let sd = 0.1 * scale;
    let mut pts = Array2::zeros((n, 2));
    for mut row in pts.rows_mut() {
        let k = rng.random_range(0..8) as f64;
        let angle = k * PI / 4.0;
        row[0] = radius * angle.cos() + sd * normal(rng);
        row[1] = radius * angle.sin() + sd * normal(rng);
    }
    pts
}

fn moons<R: Rng + ?Sized>(n: usize, scale: f64, noise: f64, rng: &mut R) -> Array2<f64> {
    let n_upper = n.div_ceil(2);
    let mut rows: Vec<[f64; 2]> = Vec::with_capacity(n);
    for i in 0..n {
        let theta = rng.random::<f64>() * PI;
        let (x, y) = if i < n_upper {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        rows.push([x + noise * normal(rng), y + noise * normal(rng)]);
    }
    rows.shuffle(rng);
    let s = 2.0 * scale;
    Array2::from_shape_fn((n, 2), |(i, j)| {
        let shift = if j == 0 { 0.5 } else { 0.25 };
        s * (rows[i][j] - shift)
    })
}

fn scurve<R: Rng + ?Sized>(n: usize, scale: f64, noise: f64, rng: &mut R) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 2));
    for mut row in pts.rows_mut() {
        let u = 3.0 * PI * (rng.random::<f64>() - 0.5);
        row[0] = scale * (u.sin() + noise * normal(rng));
        row[1] = scale * (u.signum() * (u.cos() - 1.0) + noise * normal(rng));
    }
    pts
}
