//! Metrics and closed-form references.

pub mod gaussian;
pub mod grn;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use gaussian::{gaussian_kl, sb_benchmark, GaussianSbOracle, KlFit, SbReport};
pub use grn::grn_metrics;

use crate::datasets::{PointCloud, TimepointSeries};
use crate::error::{invalid, Error, Result};
use crate::ot::{self, cost, CostKind, CostMatrix};
use crate::rng::{stream, streams};
use crate::sim::{self, Dynamics, SimOptions};
use crate::train::{train_trajectory, TrainConfig};

/// Clouds above this size are deterministically subsampled before the exact solve.
pub const MAX_EXACT_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Per-timepoint breakdown `(t, value)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub auxiliary: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            value,
            n_samples,
            seed,
            auxiliary: Vec::new(),
            note: None,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Breakdown as CSV with columns `t, value`.
    pub fn save_breakdown_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "value"])?;
        for (t, v) in &self.auxiliary {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    W1,
    W2,
}

fn subsample(cloud: &PointCloud, cap: usize) -> Result<PointCloud> {
    if cloud.len() <= cap {
        return Ok(cloud.clone());
    }
    let mut rng = stream(0, streams::SHUFFLE);
    let mut idx = cloud.sample_indices(cap, &mut rng);
    idx.sort_unstable();
    let w: Vec<f64> = idx.iter().map(|&i| cloud.weights()[i]).collect();
    let total: f64 = w.iter().sum();
    PointCloud::new(
        cloud.points().select(Axis(0), &idx),
        w.iter().map(|x| x / total).collect(),
        None,
    )
}

/// Empirical Wasserstein distance with an explicit subsampling cap; returns
/// the distance and the number of points used per cloud.
pub fn wasserstein_capped(a: &PointCloud, b: &PointCloud, order: Order, cap: usize) -> Result<(f64, usize)> {
    a.ensure_same_dim(b)?;
    if a.is_empty() || b.is_empty() {
        return invalid("empty cloud");
    }
    let (a, b) = (subsample(a, cap)?, subsample(b, cap)?);
    let c = match order {
        Order::W1 => CostMatrix::new(cost::euclidean(a.points().view(), b.points().view()), CostKind::Euclidean)?,
        Order::W2 => CostMatrix::new(cost::sq_euclidean(a.points().view(), b.points().view()), CostKind::SqEuclidean)?,
    };
    let total = if a.is_uniform() && b.is_uniform() && a.len() == b.len() {
        let perm = ot::solve_assignment(&c)?;
        perm.iter().enumerate().map(|(i, &j)| c.values()[[i, j]]).sum::<f64>() / a.len() as f64
    } else {
        let wa = a.weights().to_vec();
        let sb: f64 = b.weights().sum();
        let sa: f64 = wa.iter().sum();
        let wb: Vec<f64> = b.weights().iter().map(|w| w * sa / sb).collect();
        let plan = ot::solve_exact(&c, &wa, &wb)?;
        (&plan.matrix * c.values()).sum()
    };
    let total = total.max(0.0);
    let v = match order {
        Order::W1 => total,
        Order::W2 => total.sqrt(),
    };
    Ok((v, a.len().max(b.len())))
}

pub fn wasserstein(a: &PointCloud, b: &PointCloud, order: Order) -> Result<f64> {
    Ok(wasserstein_capped(a, b, order, MAX_EXACT_POINTS)?.0)
}

/// Kinetic energy of the probability flow from `x0` over `[0, 1]`, averaging
/// `|v|^2` over the Euler grid (left endpoints) and paths.
pub fn path_energy<M: Dynamics + ?Sized>(model: &M, x0: ArrayView2<'_, f64>, steps: usize) -> Result<f64> {
    if steps == 0 {
        return invalid("path energy needs at least one step");
    }
    let dt = 1.0 / steps as f64;
    let mut x: Array2<f64> = x0.to_owned();
    let mut energy = 0.0;
    for k in 0..steps {
        let v = model.drift(k as f64 * dt, x.view())?;
        energy += v.mapv(|e| e * e).sum() / x.nrows() as f64 * dt;
        x.scaled_add(dt, &v);
    }
    Ok(energy)
}

/// Normalized path energy `|E - W2^2| / W2^2` with `E` from the flow started
/// at `q0` and `W2` between the two clouds.
pub fn npe<M: Dynamics + ?Sized>(model: &M, q0: &PointCloud, q1: &PointCloud, steps: usize) -> Result<f64> {
    let w2 = wasserstein(q0, q1, Order::W2)?;
    let w2sq = w2 * w2;
    if w2sq <= 0.0 {
        return Err(Error::Singular(w2sq));
    }
    let e = path_energy(model, q0.points().view(), steps)?;
    Ok((e - w2sq).abs() / w2sq)
}

/// Trains on the series without snapshot `k`, pushes snapshot `k - 1` across
/// the gap and reports W1 to the held-out snapshot.
pub fn leave_one_out(series: &TimepointSeries, cfg: &TrainConfig, k: usize, sim_steps: usize) -> Result<MetricReport> {
    if k == 0 || k + 1 >= series.len() {
        return invalid(format!("held-out index {k} must be interior to a series of {}", series.len()));
    }
    let (model, _) = train_trajectory(&series.without(k)?, cfg)?;
    let start = &series.snapshots()[k - 1];
    let opts = SimOptions {
        t0: (k - 1) as f64,
        ..SimOptions::forward(0.0, sim_steps)
    };
    let end = sim::integrate(&model, start.points().view(), opts, cfg.seed)?;
    let pred = PointCloud::uniform(end)?;
    let truth = &series.snapshots()[k];
    let (w1, n) = wasserstein_capped(&pred, truth, Order::W1, MAX_EXACT_POINTS)?;
    Ok(MetricReport::new(format!("loo_w1_{k}"), w1, n, cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FnField;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn cloud(p: Array2<f64>) -> PointCloud {
        PointCloud::uniform(p).unwrap()
    }

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        cloud(Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal)))
    }

    #[test]
    fn trivial_distances() {
        let a = random_cloud(30, 2, 1);
        assert_eq!(wasserstein(&a, &a, Order::W2).unwrap(), 0.0);
        let p = cloud(array![[0.0, 0.0]]);
        let q = cloud(array![[3.0, 0.0]]);
        assert!((wasserstein(&p, &q, Order::W1).unwrap() - 3.0).abs() < 1e-12);
        assert!((wasserstein(&p, &q, Order::W2).unwrap() - 3.0).abs() < 1e-12);
        let a = cloud(array![[0.0], [1.0]]);
        let b = cloud(array![[1.0], [2.0]]);
        assert!((wasserstein(&a, &b, Order::W2).unwrap() - 1.0).abs() < 1e-12);
        assert!(wasserstein(&a, &p, Order::W2).is_err());
    }

    #[test]
    fn metric_axioms() {
        for s in 0..10 {
            let (a, b, c) = (random_cloud(12, 2, s), random_cloud(12, 2, s + 100), random_cloud(12, 2, s + 200));
            for order in [Order::W1, Order::W2] {
                let ab = wasserstein(&a, &b, order).unwrap();
                let ba = wasserstein(&b, &a, order).unwrap();
                let bc = wasserstein(&b, &c, order).unwrap();
                let ac = wasserstein(&a, &c, order).unwrap();
                assert!((ab - ba).abs() < 1e-9);
                assert!(ac <= ab + bc + 1e-9);
                assert!(ab > 0.0);
            }
        }
    }

    #[test]
    fn weighted_and_unequal_sizes() {
        // Mass 1/2 at 0 against 1/4 at +-1: every unit of mass moves distance 1.
        let a = PointCloud::new(array![[0.0]], Array1::from(vec![1.0]), None).unwrap();
        let b = PointCloud::new(array![[-1.0], [1.0]], Array1::from(vec![0.5, 0.5]), None).unwrap();
        assert!((wasserstein(&a, &b, Order::W2).unwrap() - 1.0).abs() < 1e-12);
        let b = cloud(array![[1.0], [2.0], [3.0]]);
        let w1 = wasserstein(&a, &b, Order::W1).unwrap();
        assert!((w1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn subsampling_is_deterministic_and_recorded() {
        let a = random_cloud(300, 2, 3);
        let b = random_cloud(300, 2, 4);
        let (v1, n) = wasserstein_capped(&a, &b, Order::W2, 100).unwrap();
        let (v2, _) = wasserstein_capped(&a, &b, Order::W2, 100).unwrap();
        assert_eq!(n, 100);
        assert_eq!(v1, v2);
    }

    #[test]
    fn npe_straight_and_reparametrized() {
        let shift = array![1.0, -2.0];
        let q0 = random_cloud(50, 2, 5);
        let q1 = cloud(q0.points() + &shift);
        let straight = FnField::constant(shift.clone());
        assert!(npe(&straight, &q0, &q1, 100).unwrap() < 1e-9);
        let s = shift.clone();
        let warped = FnField::new(2, move |t, x| {
            let mut v = Array2::zeros(x.raw_dim());
            v.rows_mut().into_iter().for_each(|mut r| r.assign(&(&s * (2.0 * t))));
            v
        });
        let e = npe(&warped, &q0, &q1, 1000).unwrap();
        // Energy of 2t|c|^2 over [0,1] is 4/3 |c|^2.
        assert!((e - 1.0 / 3.0).abs() < 1e-2, "{e}");
        assert!(matches!(npe(&straight, &q0, &q0, 10), Err(Error::Singular(_))));
    }

    #[test]
    fn leave_one_out_bounds() {
        let snaps = (0..2).map(|k| random_cloud(10, 1, k)).collect();
        let series = TimepointSeries::new(snaps).unwrap();
        let cfg = TrainConfig::default();
        assert!(leave_one_out(&series, &cfg, 0, 10).is_err());
        assert!(leave_one_out(&series, &cfg, 1, 10).is_err());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricReport::new("kl", 0.5, 10, 3);
        r.auxiliary = vec![(0.0, 0.1), (1.0, 0.2)];
        r.save_json(dir.path().join("m.json")).unwrap();
        r.save_breakdown_csv(dir.path().join("m.csv")).unwrap();
        let back: MetricReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(std::fs::read_to_string(dir.path().join("m.csv")).unwrap(), "t,value\n0,0.1\n1,0.2\n");
    }
}
