//! Empirical distributions and the generators that produce them.

mod io;
mod sparse_sde;
mod toy;

pub use io::{load_csv, save_cloud_csv, save_trajectories_csv, write_sidecar, CloudMeta};
pub use sparse_sde::{
    make_sparse_sde_series, random_signed_adjacency, simulate_sparse_sde, SparseSdeConfig,
};
pub use toy::{make_gaussian_pair, make_toy, ToyKind, ToyParams};

use crate::error::{invalid, Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A weighted finite set of points in `R^dim`; one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    weights: Array1<f64>,
    pub label: Option<String>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>, label: Option<String>) -> Result<Self> {
        if points.nrows() == 0 {
            return invalid("point cloud must contain at least one point");
        }
        if points.ncols() == 0 {
            return invalid("point cloud dimension must be positive");
        }
        if weights.len() != points.nrows() {
            return Err(Error::DimMismatch {
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return invalid("weights must be finite and nonnegative");
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self {
            points,
            weights,
            label,
        })
    }

    /// Uniformly weighted cloud.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows().max(1);
        let weights = Array1::from_elem(points.nrows(), 1.0 / n as f64);
        Self::new(points, weights, None)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= 1e-15)
    }

    pub fn mean(&self) -> Array1<f64> {
        self.weights.dot(&self.points)
    }

    /// Uniformly weighted cloud over the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::uniform(self.points.select(Axis(0), rows))
    }

    /// Sample `m` distinct rows uniformly at random; returns their indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.len(), m.min(self.len())).into_vec()
    }

    pub fn ensure_same_dim(&self, other: &PointCloud) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Ordered snapshots of a population, one cloud per observation time.
#[derive(Debug, Clone)]
pub struct TimepointSeries {
    snapshots: Vec<PointCloud>,
    times: Vec<f64>,
}

impl TimepointSeries {
    /// Snapshots labelled `0, 1, ..., K-1`.
    pub fn new(snapshots: Vec<PointCloud>) -> Result<Self> {
        let times = (0..snapshots.len()).map(|k| k as f64).collect();
        Self::with_times(snapshots, times)
    }

    pub fn with_times(snapshots: Vec<PointCloud>, times: Vec<f64>) -> Result<Self> {
        if snapshots.len() < 2 {
            return invalid("a timepoint series needs at least two snapshots");
        }
        if times.len() != snapshots.len() {
            return Err(Error::DimMismatch {
                expected: snapshots.len(),
                got: times.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("snapshot times must be strictly increasing");
        }
        let dim = snapshots[0].dim();
        if let Some(bad) = snapshots.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self { snapshots, times })
    }

    pub fn snapshots(&self) -> &[PointCloud] {
        &self.snapshots
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    /// The series with snapshot `k` removed, relabelled `0..K-2`.
    pub fn without(&self, k: usize) -> Result<Self> {
        let snaps = self
            .snapshots
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, s)| s.clone())
            .collect();
        Self::new(snaps)
    }
}

/// Per-dimension affine standardization (mean 0, variance 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Whitening {
    /// Weighted moments of `cloud`; zero-variance dimensions keep scale 1.
    pub fn fit(cloud: &PointCloud) -> Self {
        let mean = cloud.mean();
        let centered = cloud.points() - &mean;
        let var = cloud.weights().dot(&centered.mapv(|v| v * v));
        let std = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let pts = (cloud.points() - &self.mean) / &self.std;
        PointCloud::new(pts, cloud.weights().clone(), cloud.label.clone())
    }

    pub fn invert(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let pts = cloud.points() * &self.std + &self.mean;
        PointCloud::new(pts, cloud.weights().clone(), cloud.label.clone())
    }
}
