//! Synthetic snapshot data from a sparse nonlinear SDE.
//!
//! Each cell follows `dx_j = tanh(Σ_i A[i][j] x_i) dt + noise · dW_j`, so a
//! nonzero `A[i][j]` is a directed regulatory edge `i → j`. Cells start from
//! `N(init_mean, init_std²·I)` and are integrated with Euler–Maruyama. The
//! recorded snapshots are shuffled independently, which destroys the cell
//! identity across time the way destructive measurements do.

use super::{PointCloud, TimepointSeries};
use crate::error::{config, Result};
use crate::rng::{self, streams};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SparseSdeConfig {
    /// `genes × genes`; entry `[i][j]` is the signed weight of edge `i → j`.
    pub adjacency: Array2<f64>,
    pub timepoints: usize,
    pub cells: usize,
    pub noise: f64,
    pub sim_time: f64,
    /// Euler–Maruyama substeps between consecutive snapshots.
    pub substeps: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl SparseSdeConfig {
    pub fn new(adjacency: Array2<f64>, timepoints: usize, cells: usize, noise: f64, seed: u64) -> Self {
        Self {
            adjacency,
            timepoints,
            cells,
            noise,
            sim_time: 5.0,
            substeps: 20,
            init_mean: 0.0,
            init_std: 1.0,
            seed,
        }
    }

    pub fn genes(&self) -> usize {
        self.adjacency.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.adjacency.nrows() != self.adjacency.ncols() {
            return config(format!(
                "adjacency must be square, got {}x{}",
                self.adjacency.nrows(),
                self.adjacency.ncols()
            ));
        }
        if self.adjacency.nrows() == 0 {
            return config("adjacency must have at least one gene");
        }
        if self.timepoints < 2 || self.cells == 0 || self.substeps == 0 {
            return config("need >= 2 timepoints, >= 1 cell and >= 1 substep");
        }
        if !(self.noise >= 0.0) || !(self.sim_time > 0.0) || !(self.init_std >= 0.0) {
            return config("noise and init_std must be >= 0, sim_time > 0");
        }
        Ok(())
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let k = (self.timepoints - 1) as f64;
        (0..self.timepoints)
            .map(|i| self.sim_time * i as f64 / k)
            .collect()
    }
}

/// Unshuffled states: entry `k` holds every cell's state at snapshot `k`,
/// with row `c` always the same cell.
pub fn simulate_sparse_sde(cfg: &SparseSdeConfig) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let genes = cfg.genes();
    let mut rng = rng::stream(cfg.seed, streams::SOURCE);
    let mut x = Array2::from_shape_fn((cfg.cells, genes), |_| {
        cfg.init_mean + cfg.init_std * rng.sample::<f64, _>(StandardNormal)
    });
    let dt = cfg.sim_time / ((cfg.timepoints - 1) * cfg.substeps) as f64;
    let sq = cfg.noise * dt.sqrt();
    let mut out = Vec::with_capacity(cfg.timepoints);
    out.push(x.clone());
    for _ in 1..cfg.timepoints {
        for _ in 0..cfg.substeps {
            let drift = x.dot(&cfg.adjacency).mapv(f64::tanh);
            x.scaled_add(dt, &drift);
            if sq > 0.0 {
                x.mapv_inplace(|v| v + sq * rng.sample::<f64, _>(StandardNormal));
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Shuffled snapshot series together with the generating adjacency.
pub fn make_sparse_sde_series(cfg: &SparseSdeConfig) -> Result<(TimepointSeries, Array2<f64>)> {
    let states = simulate_sparse_sde(cfg)?;
    let mut rng = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut snaps = Vec::with_capacity(states.len());
    for s in states {
        let mut order: Vec<usize> = (0..s.nrows()).collect();
        order.shuffle(&mut rng);
        snaps.push(PointCloud::uniform(s.select(Axis(0), &order))?);
    }
    let series = TimepointSeries::with_times(snaps, cfg.snapshot_times())?;
    Ok((series, cfg.adjacency.clone()))
}

/// Random sparse signed adjacency: `-1` self-regulation on the diagonal and
/// each off-diagonal edge present with probability `density`, magnitude in
/// `[1, 2]`, random sign. At least one off-diagonal edge is always present.
pub fn random_signed_adjacency(genes: usize, density: f64, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, streams::TARGET);
    let mut a = Array2::zeros((genes, genes));
    let mut any = false;
    for i in 0..genes {
        for j in 0..genes {
            if i == j {
                a[[i, j]] = -1.0;
            } else if rng.random::<f64>() < density {
                let mag = 1.0 + rng.random::<f64>();
                a[[i, j]] = if rng.random::<bool>() { mag } else { -mag };
                any = true;
            }
        }
    }
    if !any && genes > 1 {
        a[[0, 1]] = 1.5;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_is_pure_diffusion() {
        let cfg = SparseSdeConfig {
            init_std: 0.0,
            ..SparseSdeConfig::new(Array2::zeros((3, 3)), 3, 20_000, 0.5, 4)
        };
        let states = simulate_sparse_sde(&cfg).unwrap();
        for (k, t) in cfg.snapshot_times().iter().enumerate() {
            let var = states[k].var_axis(Axis(0), 0.0);
            let expect = 0.25 * t;
            for v in var.iter() {
                // Sample variance of n normals: relative sd sqrt(2/n) ≈ 0.01.
                assert!((v - expect).abs() <= 0.05 * expect + 1e-12, "{v} vs {expect}");
            }
        }
    }

    #[test]
    fn shuffle_is_permutation_of_paths() {
        let adj = random_signed_adjacency(7, 0.3, 1);
        let cfg = SparseSdeConfig::new(adj, 55, 50, 0.1, 2);
        let states = simulate_sparse_sde(&cfg).unwrap();
        let (series, _) = make_sparse_sde_series(&cfg).unwrap();
        assert_eq!(series.len(), 55);
        for (snap, raw) in series.snapshots().iter().zip(&states) {
            let key = |r: ndarray::ArrayView1<f64>| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            let mut a: Vec<_> = snap.points().rows().into_iter().map(key).collect();
            let mut b: Vec<_> = raw.rows().into_iter().map(key).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn self_loop_grows_monotonically() {
        let mut adj = Array2::zeros((2, 2));
        adj[[0, 0]] = 1.0;
        let cfg = SparseSdeConfig {
            init_mean: 0.5,
            init_std: 0.0,
            substeps: 200,
            ..SparseSdeConfig::new(adj, 6, 1, 0.0, 0)
        };
        let states = simulate_sparse_sde(&cfg).unwrap();
        let traj: Vec<f64> = states.iter().map(|s| s[[0, 0]]).collect();
        assert!(traj.windows(2).all(|w| w[1] > w[0]));

        // Independent oracle: RK4 on dx/dt = tanh(x) with a fine grid.
        let f = |x: f64| x.tanh();
        let (mut x, h) = (0.5f64, 1e-3);
        let mut oracle = vec![x];
        for _ in 0..5 {
            for _ in 0..1000 {
                let k1 = f(x);
                let k2 = f(x + 0.5 * h * k1);
                let k3 = f(x + 0.5 * h * k2);
                let k4 = f(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            oracle.push(x);
        }
        for (a, b) in traj.iter().zip(&oracle) {
            assert!((a - b).abs() < 0.02 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn nonsquare_adjacency_rejected() {
        let cfg = SparseSdeConfig::new(Array2::zeros((2, 3)), 3, 4, 0.1, 0);
        assert!(simulate_sparse_sde(&cfg).is_err());
    }
}
