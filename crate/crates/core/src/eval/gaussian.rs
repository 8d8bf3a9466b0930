//! Closed-form Schrödinger bridge between isotropic unit Gaussians and the
//! Gaussian-fit KL used to score learned marginals against it.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::MetricReport;
use crate::error::{invalid, Error, Result};
use crate::sim::{self, Dynamics, SimOptions};

pub const SB_TIMEPOINTS: usize = 21;
pub const SB_STEPS: usize = 20;
const COV_JITTER: f64 = 1e-8;

/// SB with reference `sigma * W` between `N(m0 1, I)` and `N(m1 1, I)`.
/// Marginals are `N(m(t) 1, v(t) I)` with `m` linear and
/// `v(t) = t(1-t) sqrt(4 + sigma^4) + (1-t)^2 + t^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSbOracle {
    pub dim: usize,
    pub sigma: f64,
    pub m0: f64,
    pub m1: f64,
}

impl GaussianSbOracle {
    pub fn new(dim: usize, sigma: f64) -> Self {
        Self { dim, sigma, m0: -0.1, m1: 0.1 }
    }

    pub fn with_means(mut self, m0: f64, m1: f64) -> Self {
        self.m0 = m0;
        self.m1 = m1;
        self
    }

    fn root(&self) -> f64 {
        (4.0 + self.sigma.powi(4)).sqrt()
    }

    pub fn mean_scalar(&self, t: f64) -> f64 {
        (1.0 - t) * self.m0 + t * self.m1
    }

    pub fn variance(&self, t: f64) -> f64 {
        t * (1.0 - t) * self.root() + (1.0 - t) * (1.0 - t) + t * t
    }

    fn variance_rate(&self, t: f64) -> f64 {
        (1.0 - 2.0 * t) * self.root() - 2.0 * (1.0 - t) + 2.0 * t
    }

    /// `(mean vector, isotropic variance)` at time `t`.
    pub fn marginal(&self, t: f64) -> (Array1<f64>, f64) {
        (Array1::from_elem(self.dim, self.mean_scalar(t)), self.variance(t))
    }

    pub fn covariance(&self, t: f64) -> Array2<f64> {
        Array2::eye(self.dim) * self.variance(t)
    }
}

/// Probability flow `m' + v'/(2v) (x - m)` and score `-(x - m)/v`.
impl Dynamics for GaussianSbOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (m, v) = (self.mean_scalar(t), self.variance(t));
        let k = self.variance_rate(t) / (2.0 * v);
        let dm = self.m1 - self.m0;
        Ok(x.mapv(|xi| dm + k * (xi - m)))
    }

    fn score(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Option<Array2<f64>>> {
        let (m, v) = (self.mean_scalar(t), self.variance(t));
        Ok(Some(x.mapv(|xi| -(xi - m) / v)))
    }

    fn has_score(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlFit {
    pub kl: f64,
    /// The fitted covariance was not positive definite and was jittered.
    pub regularized: bool,
}

fn to_dm(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// `KL(N(m0, s0) || N(m1, s1))`.
pub fn kl_gaussians(m0: ArrayView1<'_, f64>, s0: ArrayView2<'_, f64>, m1: ArrayView1<'_, f64>, s1: ArrayView2<'_, f64>) -> Result<f64> {
    let d = m0.len();
    if m1.len() != d || s0.dim() != (d, d) || s1.dim() != (d, d) {
        return invalid("gaussian parameter shapes differ");
    }
    let c0 = to_dm(s0).cholesky().ok_or(Error::Singular(0.0))?;
    let c1 = to_dm(s1).cholesky().ok_or(Error::Singular(0.0))?;
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let tr = c1.solve(&to_dm(s0)).trace();
    let dm = DVector::from_iterator(d, m1.iter().zip(m0).map(|(a, b)| a - b));
    let quad = dm.dot(&c1.solve(&dm));
    Ok(0.5 * (tr + quad - d as f64 + logdet(&c1) - logdet(&c0)))
}

/// KL from the moment-matched Gaussian of `samples` (unbiased covariance) to
/// the reference `N(mean, cov)`.
pub fn gaussian_kl(samples: ArrayView2<'_, f64>, mean: ArrayView1<'_, f64>, cov: ArrayView2<'_, f64>) -> Result<KlFit> {
    let (n, d) = samples.dim();
    if n < d + 1 {
        return invalid(format!("covariance fit needs at least {} samples, got {n}", d + 1));
    }
    let mu = samples.mean_axis(Axis(0)).expect("nonempty");
    let centered = &samples - &mu;
    let mut s = centered.t().dot(&centered) / (n - 1) as f64;
    let mut regularized = false;
    if to_dm(s.view()).cholesky().is_none() {
        s += &(Array2::<f64>::eye(d) * COV_JITTER);
        regularized = true;
    }
    let kl = kl_gaussians(mu.view(), s.view(), mean, cov)?;
    Ok(KlFit { kl: kl.max(0.0), regularized })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbReport {
    pub kl_endpoint: f64,
    pub kl_mean_path: f64,
    /// `(t, KL)` at each evaluation time, `t = 0` and `t = 1` included.
    pub per_time: Vec<(f64, f64)>,
    pub n_samples: usize,
    pub seed: u64,
    pub regularized: bool,
}

impl SbReport {
    pub fn reports(&self) -> Vec<MetricReport> {
        let note = Some("KL(fit || truth), full covariance".to_string());
        let mut end = MetricReport::new("kl_endpoint", self.kl_endpoint, self.n_samples, self.seed);
        end.note = note.clone();
        let mut path = MetricReport::new("kl_mean_path", self.kl_mean_path, self.n_samples, self.seed);
        path.auxiliary = self.per_time.clone();
        path.note = note;
        vec![end, path]
    }
}

/// Simulates the model from `x0` with `g = sigma` for 20 Euler-Maruyama steps
/// and compares Gaussian fits of the 21 grid frames against the oracle.
pub fn sb_benchmark<M: Dynamics + ?Sized>(model: &M, oracle: &GaussianSbOracle, x0: ArrayView2<'_, f64>, seed: u64) -> Result<SbReport> {
    if x0.ncols() != oracle.dim {
        return Err(Error::DimMismatch { expected: oracle.dim, got: x0.ncols() });
    }
    let ens = sim::simulate(model, x0, SimOptions::forward(oracle.sigma, SB_STEPS), seed)?;
    let mut per_time = Vec::with_capacity(SB_TIMEPOINTS);
    let mut regularized = false;
    for (k, &t) in ens.times().iter().enumerate() {
        let (m, _) = oracle.marginal(t);
        let fit = gaussian_kl(ens.frame(k).view(), m.view(), oracle.covariance(t).view())?;
        regularized |= fit.regularized;
        per_time.push((t, fit.kl));
    }
    let mean = per_time.iter().map(|p| p.1).sum::<f64>() / per_time.len() as f64;
    Ok(SbReport {
        kl_endpoint: per_time.last().expect("nonempty").1,
        kl_mean_path: mean,
        per_time,
        n_samples: x0.nrows(),
        seed,
        regularized,
    })
}
