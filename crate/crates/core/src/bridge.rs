//! Closed-form Brownian-bridge quantities.
//!
//! Conditioned on endpoints `(x0, x1)`, the bridge with diffusion `sigma` has
//! Gaussian marginals `N(t x1 + (1 - t) x0, sigma^2 t (1 - t))`. Training
//! regresses onto the conditional flow and score of these marginals.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Error, Result};

/// Time values used in training stay inside `[T_CLIP, 1 - T_CLIP]`.
pub const T_CLIP: f64 = 1e-5;
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

/// Time profile of the diffusion, given by its cumulative `F(t) = int_0^t sigma(s)^2 ds`.
#[derive(Clone)]
pub enum Schedule {
    /// `F(t) = scale * t^(power + 1)`, i.e. `sigma(s)^2 = scale (power + 1) s^power`.
    Power { scale: f64, power: f64 },
    /// Arbitrary nondecreasing cumulative with `F(0) = 0`.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Schedule::Power { scale, power } => write!(f, "Power {{ scale: {scale}, power: {power} }}"),
            Schedule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Schedule {
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Schedule::Power { scale, power } => scale * t.powf(power + 1.0),
            Schedule::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// The score network regresses `grad log p` with `lambda = sigma sqrt(t(1-t))`.
    RawScore,
    /// The score network regresses `(sigma^2 / 2) grad log p` with `lambda = 2 sqrt(t(1-t)) / sigma`.
    #[default]
    ScaledScore,
}

impl Parametrization {
    /// Factor turning the network output into a true score.
    pub fn score_scale(self, sigma: f64) -> f64 {
        match self {
            Parametrization::RawScore => 1.0,
            Parametrization::ScaledScore => 2.0 / (sigma * sigma),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BridgeSpec {
    pub sigma: f64,
    pub var_floor: f64,
    pub schedule: Option<Schedule>,
}

impl BridgeSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return config(format!("sigma must be finite and >= 0, got {sigma}"));
        }
        Ok(Self {
            sigma,
            var_floor: DEFAULT_VAR_FLOOR,
            schedule: None,
        })
    }

    pub fn with_var_floor(mut self, var_floor: f64) -> Result<Self> {
        if !(var_floor >= 0.0) || !var_floor.is_finite() {
            return config(format!("var_floor must be finite and >= 0, got {var_floor}"));
        }
        self.var_floor = var_floor;
        Ok(self)
    }

    /// Attaches a time-varying schedule after checking `F(0) = 0` and
    /// monotonicity on a grid.
    pub fn with_schedule(mut self, schedule: Schedule) -> Result<Self> {
        let f0 = schedule.cumulative(0.0);
        if f0 != 0.0 {
            return config(format!("schedule cumulative must vanish at 0, got {f0}"));
        }
        let mut prev = 0.0;
        for k in 1..=256 {
            let f = schedule.cumulative(k as f64 / 256.0);
            if !f.is_finite() || f < prev {
                return config("schedule cumulative must be finite and nondecreasing");
            }
            prev = f;
        }
        self.schedule = Some(schedule);
        Ok(self)
    }

    /// `F(t)`; `sigma^2 t` without a schedule.
    pub fn cumulative(&self, t: f64) -> f64 {
        match &self.schedule {
            Some(s) => s.cumulative(t),
            None => self.sigma * self.sigma * t,
        }
    }

    /// Interpolation weight `F(t) / F(1)` and unsmoothed bridge variance.
    /// The constant case is evaluated in the closed form `t`, `sigma^2 t (1 - t)`.
    fn ratio_and_variance(&self, t: f64) -> Result<(f64, f64)> {
        match &self.schedule {
            None => Ok((t, self.sigma * self.sigma * t * (1.0 - t))),
            Some(s) => {
                let f1 = s.cumulative(1.0);
                if f1 <= 0.0 {
                    return invalid("time-varying bridge needs F(1) > 0");
                }
                let ft = s.cumulative(t);
                let r = ft / f1;
                Ok((r, ft * (1.0 - r)))
            }
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("time {t} outside [0, 1]"));
    }
    Ok(())
}

fn interpolate(r: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    Zip::from(a).and(b).map_collect(|&a, &b| r * b + (1.0 - r) * a)
}

pub fn bridge_mean_std(spec: &BridgeSpec, t: f64, x0: ArrayView1<'_, f64>, x1: ArrayView1<'_, f64>) -> Result<(Array1<f64>, f64)> {
    check_unit(t)?;
    let (r, var) = spec.ratio_and_variance(t)?;
    Ok((interpolate(r, x0, x1), (var + spec.var_floor).sqrt()))
}

/// Coefficient multiplying `x - mu_t` in the conditional flow. It is
/// `sigma_t' / sigma_t` for `sigma_t = sigma sqrt(t(1-t))`, and zero when
/// there is no diffusion.
pub fn flow_coefficient(sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t))
    }
}

fn check_open(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Singular(t));
    }
    Ok(())
}

pub fn conditional_flow(
    spec: &BridgeSpec,
    t: f64,
    x: ArrayView1<'_, f64>,
    x0: ArrayView1<'_, f64>,
    x1: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    check_open(t)?;
    let c = flow_coefficient(spec.sigma, t);
    Ok(Zip::from(x)
        .and(x0)
        .and(x1)
        .map_collect(|&x, &a, &b| c * (x - (t * b + (1.0 - t) * a)) + (b - a)))
}

pub fn conditional_score(
    spec: &BridgeSpec,
    t: f64,
    x: ArrayView1<'_, f64>,
    x0: ArrayView1<'_, f64>,
    x1: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if spec.sigma == 0.0 {
        return config("score is undefined for sigma = 0");
    }
    check_open(t)?;
    let var = spec.sigma * spec.sigma * t * (1.0 - t) + spec.var_floor;
    Ok(Zip::from(x)
        .and(x0)
        .and(x1)
        .map_collect(|&x, &a, &b| ((t * b + (1.0 - t) * a) - x) / var))
}

pub fn lambda_schedule(spec: &BridgeSpec, t: f64, param: Parametrization) -> Result<f64> {
    check_unit(t)?;
    if spec.sigma == 0.0 {
        return config("score weighting is undefined for sigma = 0");
    }
    let s = (t * (1.0 - t)).sqrt();
    Ok(match param {
        Parametrization::RawScore => spec.sigma * s,
        Parametrization::ScaledScore => 2.0 * s / spec.sigma,
    })
}

/// Regression target for `lambda(t) s(t, x)`: the negated sampling noise.
pub fn simplified_score_target(noise: ArrayView1<'_, f64>) -> Array1<f64> {
    noise.mapv(|e| -e)
}

pub fn varying_bridge_moments(spec: &BridgeSpec, t: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<(Array1<f64>, f64)> {
    check_unit(t)?;
    if spec.cumulative(1.0) <= 0.0 {
        return invalid("time-varying bridge needs F(1) > 0");
    }
    let (r, var) = spec.ratio_and_variance(t)?;
    Ok((interpolate(r, a, b), var))
}

/// Entropic regularization whose OT plan is the bridge's endpoint coupling.
pub fn sb_coupling_epsilon(spec: &BridgeSpec) -> f64 {
    2.0 * spec.cumulative(1.0)
}

/// Regression batch drawn from conditional bridges between paired endpoints.
#[derive(Debug, Clone)]
pub struct BridgeBatch {
    pub t: Array1<f64>,
    pub x: Array2<f64>,
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub flow_target: Array2<f64>,
    pub noise: Array2<f64>,
    /// Score weights; empty when `sigma = 0`.
    pub lambda: Array1<f64>,
}

impl BridgeBatch {
    /// Builds the batch for given times and standard-normal noise.
    pub fn from_parts(
        spec: &BridgeSpec,
        param: Parametrization,
        x0: Array2<f64>,
        x1: Array2<f64>,
        t: Array1<f64>,
        noise: Array2<f64>,
    ) -> Result<Self> {
        if spec.schedule.is_some() {
            return config("bridge batches support constant sigma only");
        }
        let (n, d) = x0.dim();
        if x1.dim() != (n, d) || noise.dim() != (n, d) || t.len() != n {
            return invalid("bridge batch parts have inconsistent shapes");
        }
        let s2 = spec.sigma * spec.sigma;
        let mut x = Array2::zeros((n, d));
        let mut flow = Array2::zeros((n, d));
        for i in 0..n {
            let ti = t[i];
            check_open(ti)?;
            let std = (s2 * ti * (1.0 - ti) + spec.var_floor).sqrt();
            let c = flow_coefficient(spec.sigma, ti);
            for k in 0..d {
                let (a, b) = (x0[[i, k]], x1[[i, k]]);
                let mu = ti * b + (1.0 - ti) * a;
                let xi = mu + std * noise[[i, k]];
                x[[i, k]] = xi;
                flow[[i, k]] = c * (xi - mu) + (b - a);
            }
        }
        let lambda = if spec.sigma > 0.0 {
            t.iter().map(|&ti| lambda_schedule(spec, ti, param)).collect::<Result<Array1<f64>>>()?
        } else {
            Array1::zeros(0)
        };
        Ok(Self {
            t,
            x,
            x0,
            x1,
            flow_target: flow,
            noise,
            lambda,
        })
    }

    /// Draws per-example times from `U(0, 1)` clipped to `[T_CLIP, 1 - T_CLIP]`
    /// and fresh noise.
    pub fn sample<R: Rng + ?Sized>(
        spec: &BridgeSpec,
        param: Parametrization,
        x0: Array2<f64>,
        x1: Array2<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, d) = x0.dim();
        let t = Array1::from_iter((0..n).map(|_| rng.random::<f64>().clamp(T_CLIP, 1.0 - T_CLIP)));
        let noise = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
        Self::from_parts(spec, param, x0, x1, t, noise)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Network input: states with time appended as the last column, shifted by `offset`.
    pub fn inputs(&self, offset: f64) -> Array2<f64> {
        with_time(self.x.view(), self.t.view(), offset)
    }
}

/// `[x | t + offset]`
pub fn with_time(x: ArrayView2<'_, f64>, t: ArrayView1<'_, f64>, offset: f64) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d + 1));
    out.slice_mut(ndarray::s![.., ..d]).assign(&x);
    out.index_axis_mut(Axis(1), d).assign(&t.mapv(|v| v + offset));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn spec(sigma: f64, floor: f64) -> BridgeSpec {
        BridgeSpec::new(sigma).unwrap().with_var_floor(floor).unwrap()
    }

    #[test]
    fn mean_std_examples() {
        let s = spec(1.0, 0.0);
        let (mu, sd) = bridge_mean_std(&s, 0.5, array![0.0].view(), array![1.0].view()).unwrap();
        assert_eq!((mu[0], sd), (0.5, 0.5));
        let s = spec(1.3, 1e-6);
        let (mu, sd) = bridge_mean_std(&s, 0.0, array![2.0, -1.0].view(), array![5.0, 4.0].view()).unwrap();
        assert_eq!(mu, array![2.0, -1.0]);
        assert_eq!(sd, 1e-3);
        for t in [0.0, 0.3, 1.0] {
            let (mu, _) = bridge_mean_std(&s, t, array![0.7].view(), array![0.7].view()).unwrap();
            assert!((mu[0] - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn flow_examples() {
        let s = spec(1.0, 1e-6);
        let (x0, x1) = (array![0.0], array![1.0]);
        // Marginal-preserving coefficient (1 - 2t) / (2 t (1 - t)) = 4/3 at t = 1/4.
        let u = conditional_flow(&s, 0.25, array![0.5].view(), x0.view(), x1.view()).unwrap();
        assert!((u[0] - (0.5 / 0.375 * 0.25 + 1.0)).abs() < 1e-14);
        assert!((u[0] - 4.0 / 3.0).abs() < 1e-14);
        let u = conditional_flow(&s, 0.3, array![0.3].view(), x0.view(), x1.view()).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        for x in [-4.0, 0.1, 7.0] {
            let u = conditional_flow(&s, 0.5, array![x].view(), x0.view(), x1.view()).unwrap();
            assert_eq!(u[0], 1.0);
        }
        assert!(matches!(conditional_flow(&s, 0.0, x0.view(), x0.view(), x1.view()), Err(Error::Singular(_))));
        assert!(conditional_flow(&s, 1.0, x0.view(), x0.view(), x1.view()).is_err());
        let ot = spec(0.0, 1e-6);
        let u = conditional_flow(&ot, 0.25, array![9.0].view(), x0.view(), x1.view()).unwrap();
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn score_examples() {
        let s = spec(1.0, 0.0);
        let (x0, x1) = (array![0.0], array![1.0]);
        let v = conditional_score(&s, 0.5, array![0.25].view(), x0.view(), x1.view()).unwrap();
        assert_eq!(v[0], 1.0);
        let v = conditional_score(&s, 0.2, array![0.2].view(), x0.view(), x1.view()).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(conditional_score(&spec(0.0, 0.0), 0.5, x0.view(), x0.view(), x1.view()).is_err());
    }

    fn log_density(x: &Array1<f64>, mu: &Array1<f64>, var: f64) -> f64 {
        let d = x.len() as f64;
        -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).mapv(|v| v * v).sum() / (2.0 * var)
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let sigma = 0.2 + 2.0 * rng.random::<f64>();
            let s = spec(sigma, 1e-6);
            let t = 0.05 + 0.9 * rng.random::<f64>();
            let x0 = Array1::from_shape_simple_fn(3, || rng.random::<f64>() * 2.0 - 1.0);
            let x1 = Array1::from_shape_simple_fn(3, || rng.random::<f64>() * 2.0 - 1.0);
            let (mu, sd) = bridge_mean_std(&s, t, x0.view(), x1.view()).unwrap();
            let x = &mu + &Array1::from_shape_simple_fn(3, || rng.random::<f64>() - 0.5).mapv(|v| v * sd * 2.0);
            let score = conditional_score(&s, t, x.view(), x0.view(), x1.view()).unwrap();
            let h = 1e-5 * sd;
            for k in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let fd = (log_density(&xp, &mu, sd * sd) - log_density(&xm, &mu, sd * sd)) / (2.0 * h);
                assert!((fd - score[k]).abs() <= 1e-6 * score[k].abs().max(1.0 / sd), "{fd} vs {}", score[k]);
            }
        }
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_schedule(&spec(1.0, 0.0), 0.5, Parametrization::ScaledScore).unwrap(), 1.0);
        assert_eq!(lambda_schedule(&spec(2.0, 0.0), 0.5, Parametrization::RawScore).unwrap(), 1.0);
        for p in [Parametrization::RawScore, Parametrization::ScaledScore] {
            assert_eq!(lambda_schedule(&spec(0.7, 0.0), 0.0, p).unwrap(), 0.0);
            assert_eq!(lambda_schedule(&spec(0.7, 0.0), 1.0, p).unwrap(), 0.0);
        }
        assert!(lambda_schedule(&spec(0.0, 0.0), 0.5, Parametrization::RawScore).is_err());
    }

    #[test]
    fn simplified_target_identity() {
        assert_eq!(simplified_score_target(array![0.0, 0.0].view()), array![0.0, 0.0]);
        assert_eq!(simplified_score_target(array![1.0, -2.0, 3.0].view()).len(), 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for sigma in [0.3, 1.0, 2.5] {
            let s = spec(sigma, 0.0);
            let x0 = array![0.4, -1.0];
            let x1 = array![1.5, 0.2];
            for _ in 0..20 {
                let t = 0.01 + 0.98 * rng.random::<f64>();
                let eps = Array1::from_shape_simple_fn(2, || rng.sample::<f64, _>(StandardNormal));
                let (mu, sd) = bridge_mean_std(&s, t, x0.view(), x1.view()).unwrap();
                let x = &mu + &(&eps * sd);
                let score = conditional_score(&s, t, x.view(), x0.view(), x1.view()).unwrap();
                let target = simplified_score_target(eps.view());
                let scaled = lambda_schedule(&s, t, Parametrization::ScaledScore).unwrap();
                let raw = lambda_schedule(&s, t, Parametrization::RawScore).unwrap();
                let half = sigma * sigma / 2.0;
                for k in 0..2 {
                    assert!((scaled * half * score[k] - target[k]).abs() < 1e-10);
                    assert!((raw * score[k] - target[k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn varying_moments() {
        let s = spec(1.0, 0.0).with_schedule(Schedule::Power { scale: 1.0, power: 1.0 }).unwrap();
        let (m, v) = varying_bridge_moments(&s, 0.5, array![0.0].view(), array![1.0].view()).unwrap();
        assert_eq!((m[0], v), (0.25, 0.1875));
        let (m, v) = varying_bridge_moments(&s, 1.0, array![0.3].view(), array![1.0].view()).unwrap();
        assert_eq!((m[0], v), (1.0, 0.0));
        let zero = spec(0.0, 0.0);
        assert!(varying_bridge_moments(&zero, 0.5, array![0.0].view(), array![1.0].view()).is_err());
        assert!(spec(1.0, 0.0).with_schedule(Schedule::Custom(Arc::new(|t| 1.0 - t))).is_err());
    }

    #[test]
    fn constant_schedule_reduces_bit_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let sigma = 3.0 * rng.random::<f64>() + 0.01;
            let s = spec(sigma, 0.0);
            let t = rng.random::<f64>();
            let a = array![rng.random::<f64>(), -rng.random::<f64>()];
            let b = array![rng.random::<f64>(), 5.0 * rng.random::<f64>()];
            let (m1, sd) = bridge_mean_std(&s, t, a.view(), b.view()).unwrap();
            let (m2, var) = varying_bridge_moments(&s, t, a.view(), b.view()).unwrap();
            assert_eq!(m1, m2);
            assert_eq!(sd, var.sqrt());
            // An explicit flat schedule agrees to rounding.
            let flat = spec(sigma, 0.0).with_schedule(Schedule::Power { scale: sigma * sigma, power: 0.0 }).unwrap();
            assert!((flat.cumulative(t) - sigma * sigma * t).abs() < 1e-12);
            let (m3, v3) = varying_bridge_moments(&flat, t, a.view(), b.view()).unwrap();
            assert!((&m3 - &m1).mapv(f64::abs).sum() < 1e-12);
            assert!((v3 - var).abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_epsilon() {
        assert_eq!(sb_coupling_epsilon(&spec(1.0, 0.0)), 2.0);
        assert_eq!(sb_coupling_epsilon(&spec(0.5, 0.0)), 0.5);
        let custom = spec(1.0, 0.0).with_schedule(Schedule::Custom(Arc::new(|t| 0.7 * t))).unwrap();
        assert!((sb_coupling_epsilon(&custom) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn flow_transports_bridge_marginals() {
        // Push samples of p_s(x | z) along the conditional flow with RK4 and
        // compare moments at s' against the closed form.
        let s = spec(0.8, 0.0);
        let (x0, x1) = (array![0.0], array![2.0]);
        let (t0, t1) = (0.2, 0.7);
        let n = 20_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let (mu0, sd0) = bridge_mean_std(&s, t0, x0.view(), x1.view()).unwrap();
        let f = |t: f64, x: f64| conditional_flow(&s, t, array![x].view(), x0.view(), x1.view()).unwrap()[0];
        let steps = 200;
        let h = (t1 - t0) / steps as f64;
        let mut xs: Vec<f64> = (0..n).map(|_| mu0[0] + sd0 * rng.sample::<f64, _>(StandardNormal)).collect();
        for x in xs.iter_mut() {
            let mut t = t0;
            for _ in 0..steps {
                let k1 = f(t, *x);
                let k2 = f(t + h / 2.0, *x + h / 2.0 * k1);
                let k3 = f(t + h / 2.0, *x + h / 2.0 * k2);
                let k4 = f(t + h, *x + h * k3);
                *x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += h;
            }
        }
        let (mu1, sd1) = bridge_mean_std(&s, t1, x0.view(), x1.view()).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - mu1[0]).abs() < 3.0 * sd1 / (n as f64).sqrt());
        let var_se = sd1 * sd1 * (2.0 / n as f64).sqrt();
        assert!((var - sd1 * sd1).abs() < 3.0 * var_se);
    }

    #[test]
    fn batch_reconstructs_samples() {
        let s = spec(1.0, 1e-6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x0 = Array2::from_shape_simple_fn((16, 3), || rng.random::<f64>());
        let x1 = Array2::from_shape_simple_fn((16, 3), || rng.random::<f64>());
        let b = BridgeBatch::sample(&s, Parametrization::ScaledScore, x0.clone(), x1.clone(), &mut rng).unwrap();
        for i in 0..16 {
            let (mu, sd) = bridge_mean_std(&s, b.t[i], x0.row(i), x1.row(i)).unwrap();
            let x = &mu + &(&b.noise.row(i) * sd);
            assert_eq!(x, b.x.row(i));
            let u = conditional_flow(&s, b.t[i], b.x.row(i), x0.row(i), x1.row(i)).unwrap();
            assert_eq!(u, b.flow_target.row(i));
            assert!(b.t[i] >= T_CLIP && b.t[i] <= 1.0 - T_CLIP);
        }
        let inp = b.inputs(1.0);
        assert_eq!(inp.ncols(), 4);
        assert_eq!(inp[[3, 3]], b.t[3] + 1.0);
    }
}
