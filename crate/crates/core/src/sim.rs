//! Fixed-step integration of learned dynamics.
//!
//! Forward in time the state follows `dx = [v + (g^2/2) score] dt + g dW`;
//! backward it follows the time reversal `dx = [-v + (g^2/2) score] dtau + g dW`
//! with `t = T - tau`. With `g = 0` the score is never evaluated and the
//! scheme is plain explicit Euler on the probability flow.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{config, invalid, Error, Result};
use crate::rng::{stream, streams};

/// A time-dependent vector field with an optional score, evaluated on a batch
/// of states sharing one time value.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    /// Probability-flow drift `v(t, x)`.
    fn drift(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;

    /// True score `grad log p_t(x)`; `None` if the model has no score.
    fn score(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Option<Array2<f64>>>;

    fn has_score(&self) -> bool;

    /// Terminal time of the dynamics (`K - 1` for a `K`-snapshot model).
    fn time_span(&self) -> f64 {
        1.0
    }
}

type BatchFn = Arc<dyn Fn(f64, ArrayView2<'_, f64>) -> Array2<f64> + Send + Sync>;

/// Dynamics from plain closures, for hand-built fields and oracles.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    drift: BatchFn,
    score: Option<BatchFn>,
    span: f64,
}

impl FnField {
    pub fn new(dim: usize, drift: impl Fn(f64, ArrayView2<'_, f64>) -> Array2<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            drift: Arc::new(drift),
            score: None,
            span: 1.0,
        }
    }

    pub fn with_score(mut self, score: impl Fn(f64, ArrayView2<'_, f64>) -> Array2<f64> + Send + Sync + 'static) -> Self {
        self.score = Some(Arc::new(score));
        self
    }

    pub fn with_span(mut self, span: f64) -> Self {
        self.span = span;
        self
    }

    /// Constant drift `v`, zero score.
    pub fn constant(v: Array1<f64>) -> Self {
        let d = v.len();
        Self::new(d, move |_, x| {
            let mut out = Array2::zeros(x.dim());
            out.rows_mut().into_iter().for_each(|mut r| r.assign(&v));
            out
        })
        .with_score(|_, x| Array2::zeros(x.dim()))
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(Array1::zeros(dim))
    }
}

impl Dynamics for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok((self.drift)(t, x))
    }

    fn score(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Option<Array2<f64>>> {
        Ok(self.score.as_ref().map(|s| s(t, x)))
    }

    fn has_score(&self) -> bool {
        self.score.is_some()
    }

    fn time_span(&self) -> f64 {
        self.span
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    /// Integration clock, increasing from 0.
    times: Vec<f64>,
    /// `paths[[p, k, :]]` is the state of path `p` at `times[k]`.
    paths: Array3<f64>,
    pub g_used: f64,
    pub direction: Direction,
    /// Physical time at clock 0.
    origin: f64,
}

impl TrajectoryEnsemble {
    pub fn dim(&self) -> usize {
        self.paths.dim().2
    }

    pub fn n_paths(&self) -> usize {
        self.paths.dim().0
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Model time of each frame (decreasing for backward runs).
    pub fn physical_times(&self) -> Vec<f64> {
        match self.direction {
            Direction::Forward => self.times.iter().map(|t| self.origin + t).collect(),
            Direction::Backward => self.times.iter().map(|t| self.origin - t).collect(),
        }
    }

    pub fn state(&self, k: usize, p: usize) -> ArrayView1<'_, f64> {
        self.paths.slice(ndarray::s![p, k, ..])
    }

    pub fn paths(&self) -> &Array3<f64> {
        &self.paths
    }

    /// All states at frame `k`.
    pub fn frame(&self, k: usize) -> Array2<f64> {
        self.paths.index_axis(Axis(1), k).to_owned()
    }

    pub fn terminal(&self) -> Array2<f64> {
        self.frame(self.n_steps())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub g: f64,
    pub steps: usize,
    /// Physical start time; the run covers `[t0, t0 + span]` forward or `[t0 - span, t0]` backward.
    pub t0: f64,
    pub span: f64,
    pub direction: Direction,
}

impl SimOptions {
    pub fn forward(g: f64, steps: usize) -> Self {
        Self {
            g,
            steps,
            t0: 0.0,
            span: 1.0,
            direction: Direction::Forward,
        }
    }

    pub fn backward(g: f64, steps: usize) -> Self {
        Self {
            g,
            steps,
            t0: 1.0,
            span: 1.0,
            direction: Direction::Backward,
        }
    }
}

fn validate<M: Dynamics + ?Sized>(model: &M, x0: &ArrayView2<'_, f64>, opts: &SimOptions) -> Result<()> {
    if opts.steps == 0 {
        return invalid("simulation needs at least one step");
    }
    if !(opts.g >= 0.0) || !opts.g.is_finite() {
        return invalid(format!("inference diffusion must be finite and >= 0, got {}", opts.g));
    }
    if !(opts.span > 0.0) {
        return invalid("simulation span must be positive");
    }
    if x0.ncols() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            got: x0.ncols(),
        });
    }
    if opts.g > 0.0 && !model.has_score() {
        return config("g > 0 needs a score model (trained with sigma > 0)");
    }
    Ok(())
}

/// One step of the scheme at physical time `t`, in place.
fn step<M: Dynamics + ?Sized, R: Rng>(
    model: &M,
    x: &mut Array2<f64>,
    t: f64,
    dt: f64,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<()> {
    let v = model.drift(t, x.view())?;
    let sign = match opts.direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    if opts.g == 0.0 {
        x.scaled_add(sign * dt, &v);
        return Ok(());
    }
    let s = model
        .score(t, x.view())?
        .ok_or_else(|| Error::Config("score unavailable".into()))?;
    let half = 0.5 * opts.g * opts.g;
    let noise_scale = opts.g * dt.sqrt();
    let noise = Array2::from_shape_simple_fn(x.dim(), || rng.sample::<f64, _>(StandardNormal));
    ndarray::Zip::from(&mut *x).and(&v).and(&s).and(&noise).for_each(|x, &v, &s, &e| {
        *x += (sign * v + half * s) * dt + noise_scale * e;
    });
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simulated state at t = {t}")));
    }
    Ok(())
}

fn grid_time(opts: &SimOptions, k: usize) -> (f64, f64) {
    let clock = opts.span * k as f64 / opts.steps as f64;
    let t = match opts.direction {
        Direction::Forward => opts.t0 + clock,
        Direction::Backward => opts.t0 - clock,
    };
    (clock, t)
}

/// Integrates all starting states, recording every frame.
pub fn simulate<M: Dynamics + ?Sized>(model: &M, x0: ArrayView2<'_, f64>, opts: SimOptions, seed: u64) -> Result<TrajectoryEnsemble> {
    validate(model, &x0, &opts)?;
    let (n, d) = x0.dim();
    let mut paths = Array3::zeros((n, opts.steps + 1, d));
    let mut times = Vec::with_capacity(opts.steps + 1);
    let mut rng = stream(seed, streams::SIMULATE);
    let mut x = x0.to_owned();
    let dt = opts.span / opts.steps as f64;
    paths.index_axis_mut(Axis(1), 0).assign(&x);
    times.push(0.0);
    for k in 0..opts.steps {
        let (_, t) = grid_time(&opts, k);
        step(model, &mut x, t, dt, &opts, &mut rng)?;
        paths.index_axis_mut(Axis(1), k + 1).assign(&x);
        times.push(grid_time(&opts, k + 1).0);
    }
    Ok(TrajectoryEnsemble {
        times,
        paths,
        g_used: opts.g,
        direction: opts.direction,
        origin: opts.t0,
    })
}

/// Terminal states only; same random stream as [`simulate`].
pub fn integrate<M: Dynamics + ?Sized>(model: &M, x0: ArrayView2<'_, f64>, opts: SimOptions, seed: u64) -> Result<Array2<f64>> {
    validate(model, &x0, &opts)?;
    let mut rng = stream(seed, streams::SIMULATE);
    let mut x = x0.to_owned();
    let dt = opts.span / opts.steps as f64;
    for k in 0..opts.steps {
        step(model, &mut x, grid_time(&opts, k).1, dt, &opts, &mut rng)?;
    }
    Ok(x)
}

/// Forward run over the model's full time span.
pub fn simulate_sde<M: Dynamics + ?Sized>(model: &M, x0: ArrayView2<'_, f64>, g: f64, steps: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    let opts = SimOptions {
        span: model.time_span(),
        ..SimOptions::forward(g, steps)
    };
    simulate(model, x0, opts, seed)
}

/// Backward run from the model's terminal time to 0.
pub fn simulate_backward<M: Dynamics + ?Sized>(model: &M, x1: ArrayView2<'_, f64>, g: f64, steps: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    let span = model.time_span();
    let opts = SimOptions {
        t0: span,
        span,
        ..SimOptions::backward(g, steps)
    };
    simulate(model, x1, opts, seed)
}

pub fn push_forward<M: Dynamics + ?Sized>(model: &M, cloud: &PointCloud, g: f64, steps: usize, seed: u64) -> Result<PointCloud> {
    let opts = SimOptions {
        span: model.time_span(),
        ..SimOptions::forward(g, steps)
    };
    PointCloud::uniform(integrate(model, cloud.points().view(), opts, seed)?)
}

pub fn push_backward<M: Dynamics + ?Sized>(model: &M, cloud: &PointCloud, g: f64, steps: usize, seed: u64) -> Result<PointCloud> {
    let span = model.time_span();
    let opts = SimOptions {
        t0: span,
        span,
        ..SimOptions::backward(g, steps)
    };
    PointCloud::uniform(integrate(model, cloud.points().view(), opts, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_drift_ode() {
        let f = FnField::constant(array![1.0]);
        let ens = simulate_sde(&f, Array2::zeros((3, 1)).view(), 0.0, 100, 0).unwrap();
        assert!(ens.terminal().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert_eq!(ens.times().len(), 101);
        assert!(ens.times().windows(2).all(|w| w[1] > w[0]));
        let other = simulate_sde(&f, Array2::zeros((3, 1)).view(), 0.0, 100, 99).unwrap();
        assert_eq!(ens.paths(), other.paths());
    }

    #[test]
    fn euler_is_bit_exact_at_zero_diffusion() {
        let f = FnField::new(2, |t, x| x.mapv(|v| (v * t).sin())).with_score(|_, x| x.mapv(|_| f64::NAN));
        let x0 = array![[0.3, -1.0], [2.0, 0.5]];
        let ens = simulate_sde(&f, x0.view(), 0.0, 50, 1).unwrap();
        let mut x = x0.clone();
        let dt = 1.0 / 50.0;
        for k in 0..50 {
            let t = k as f64 / 50.0;
            let v = x.mapv(|v| (v * t).sin());
            x = &x + &(v * dt);
        }
        assert_eq!(ens.terminal(), x);
    }

    #[test]
    fn pure_diffusion_variance() {
        let n = 20_000;
        let c = 1.5;
        let f = FnField::zero(2);
        let out = integrate(&f, Array2::zeros((n, 2)).view(), SimOptions::forward(c, 100), 0).unwrap();
        for k in 0..2 {
            let col = out.column(k);
            let m = col.mean().unwrap();
            let var = col.mapv(|v| (v - m).powi(2)).sum() / (n - 1) as f64;
            assert!((var / (c * c) - 1.0).abs() < 3.0 / (2.0 * n as f64).sqrt(), "{}", var / (c * c));
        }
    }

    #[test]
    fn backward_reverses_ode() {
        let f = FnField::new(1, |t, x| x.mapv(|v| 0.5 * v + t));
        let x0 = array![[0.7], [-0.2]];
        let fwd = integrate(&f, x0.view(), SimOptions::forward(0.0, 100), 0).unwrap();
        let back = integrate(&f, fwd.view(), SimOptions::backward(0.0, 100), 0).unwrap();
        assert!((&back - &x0).mapv(f64::abs).iter().all(|&e| e < 0.05));
        let ens = simulate_backward(&f, fwd.view(), 0.0, 10, 0).unwrap();
        let pt = ens.physical_times();
        assert_eq!(pt[0], 1.0);
        assert!(pt[10].abs() < 1e-15);
    }

    #[test]
    fn identity_and_consistency() {
        let f = FnField::zero(2);
        let cloud = PointCloud::uniform(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(push_forward(&f, &cloud, 0.0, 10, 0).unwrap().points(), cloud.points());
        let rot = FnField::new(2, |_, x| x.mapv(|v| -v * v));
        let one = push_forward(&rot, &cloud, 0.0, 1, 0).unwrap();
        let many = push_forward(&rot, &cloud, 0.0, 100, 0).unwrap();
        assert!(one.points().iter().chain(many.points().iter()).all(|v| v.is_finite()));
        assert_ne!(one.points(), many.points());
        let noisy = FnField::zero(2).with_score(|_, x| -x.to_owned());
        let ens = simulate_sde(&noisy, cloud.points().view(), 1.0, 20, 5).unwrap();
        let term = push_forward(&noisy, &cloud, 1.0, 20, 5).unwrap();
        assert_eq!(&ens.terminal(), term.points());
    }

    #[test]
    fn diffusion_without_score_is_error() {
        let f = FnField::new(1, |_, x| x.to_owned());
        assert!(simulate_sde(&f, array![[0.0]].view(), 1.0, 10, 0).is_err());
        assert!(simulate_sde(&f, array![[0.0]].view(), 0.0, 0, 0).is_err());
    }
}
