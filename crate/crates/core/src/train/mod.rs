//! Simulation-free training loops.
//!
//! Every step draws endpoint pairs from a coupling between minibatches,
//! samples points on the conditional Brownian bridges between them, and
//! regresses the flow network onto the conditional flow and the score network
//! onto the weighted conditional score.

pub mod config;
pub mod model;

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{Coupling, GeodesicConfig, LoopConfig, ModelConfig, TrainConfig};
pub use model::{Gradients, LossReport, ModelPair, Nets};

use crate::bridge::{BridgeBatch, BridgeSpec};
use crate::datasets::{PointCloud, TimepointSeries};
use crate::error::{config as config_err, invalid, Result};
use crate::ot::{self, cost, CostMatrix, OtMethod};
use crate::rng::{stream, streams, Rng as StreamRng};
use crate::sim::{self, SimOptions};

/// Row indices for a minibatch: without replacement for uniform clouds,
/// weight-proportional with replacement otherwise.
fn draw_rows<R: Rng + ?Sized>(cloud: &PointCloud, m: usize, rng: &mut R) -> Vec<usize> {
    if cloud.is_uniform() {
        if m <= cloud.len() {
            index::sample(rng, cloud.len(), m).into_vec()
        } else {
            (0..m).map(|_| rng.random_range(0..cloud.len())).collect()
        }
    } else {
        let dist = WeightedIndex::new(cloud.weights().iter()).expect("valid cloud weights");
        (0..m).map(|_| dist.sample(rng)).collect()
    }
}

/// Pairs endpoints of one segment according to the configured coupling.
struct Segment<'a> {
    q0: &'a PointCloud,
    q1: &'a PointCloud,
    geo: Option<CostMatrix>,
}

impl<'a> Segment<'a> {
    fn new(q0: &'a PointCloud, q1: &'a PointCloud, cfg: &TrainConfig) -> Result<Self> {
        q0.ensure_same_dim(q1)?;
        let geo = if cfg.coupling == Coupling::Geodesic {
            let g = &cfg.geodesic;
            Some(ot::cost_geodesic(q0, q1, g.k, g.t_heat, g.laplacian)?.0)
        } else {
            None
        };
        Ok(Self { q0, q1, geo })
    }

    fn pairs<R: Rng + ?Sized>(&self, m: usize, cfg: &TrainConfig, rng: &mut R) -> Result<(Array2<f64>, Array2<f64>)> {
        let rows = |c: &PointCloud, idx: &[usize]| c.points().select(Axis(0), idx);
        if cfg.coupling == Coupling::Independent {
            let ia = draw_rows(self.q0, m, rng);
            let ib = draw_rows(self.q1, m, rng);
            return Ok((rows(self.q0, &ia), rows(self.q1, &ib)));
        }
        let ia = draw_rows(self.q0, m, rng);
        let ib = draw_rows(self.q1, m, rng);
        let (x0, x1) = (rows(self.q0, &ia), rows(self.q1, &ib));
        match cfg.coupling {
            Coupling::Exact | Coupling::Geodesic => {
                let c = match &self.geo {
                    Some(g) => g.select(&ia, &ib),
                    None => CostMatrix::new(cost::sq_euclidean(x0.view(), x1.view()), ot::CostKind::SqEuclidean)?,
                };
                // Vertex solutions of uniform square problems are permutations.
                let perm = ot::solve_assignment(&c)?;
                Ok((x0, x1.select(Axis(0), &perm)))
            }
            Coupling::Sinkhorn => {
                let c = CostMatrix::new(cost::sq_euclidean(x0.view(), x1.view()), ot::CostKind::SqEuclidean)?;
                let w = vec![1.0 / m as f64; m];
                let method = OtMethod::Sinkhorn {
                    epsilon: cfg.sinkhorn_epsilon(),
                    max_iter: cfg.sinkhorn_max_iter,
                    tol: cfg.sinkhorn_tol,
                };
                let plan = method.solve(&c, &w, &w)?;
                let pairs = ot::sample_pairs(&plan, m, rng)?;
                let i0: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let i1: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                Ok((x0.select(Axis(0), &i0), x1.select(Axis(0), &i1)))
            }
            Coupling::Independent => unreachable!(),
        }
    }
}

fn batch_size_for(cfg: &TrainConfig, q0: &PointCloud, q1: &PointCloud) -> usize {
    if cfg.coupling == Coupling::Independent {
        cfg.batch_size
    } else {
        cfg.batch_size.min(q0.len()).min(q1.len())
    }
}

/// One optimizer step on concatenated segment pairs; row `i` belongs to
/// segment `offsets[i]`.
fn step_on_pairs<R: Rng + ?Sized>(
    pair: &mut ModelPair,
    spec: &BridgeSpec,
    x0: Array2<f64>,
    x1: Array2<f64>,
    offsets: &Array1<f64>,
    rng: &mut R,
) -> Result<LossReport> {
    let batch = BridgeBatch::sample(spec, pair.parametrization, x0, x1, rng)?;
    let t_input = &batch.t + offsets;
    let (report, grads) = pair.loss_step(&batch, t_input.view())?;
    pair.apply(&grads)?;
    Ok(report)
}

struct Logger {
    start: Instant,
    every: usize,
    total: usize,
    reports: Vec<LossReport>,
}

impl Logger {
    fn new(every: usize, total: usize) -> Self {
        Self {
            start: Instant::now(),
            every: every.max(1),
            total,
            reports: Vec::new(),
        }
    }

    fn record(&mut self, step: usize, mut r: LossReport) {
        if (step + 1).is_multiple_of(self.every) || step + 1 == self.total {
            r.step = step + 1;
            r.wallclock = self.start.elapsed().as_secs_f64();
            self.reports.push(r);
        }
    }
}

fn train_segments(pair: &mut ModelPair, segments: &[Segment<'_>], cfg: &TrainConfig, rng: &mut StreamRng, log: &mut Logger, steps: std::ops::Range<usize>) -> Result<()> {
    let spec = cfg.bridge()?;
    let k = segments.len();
    let per = cfg.batch_size.div_ceil(k);
    for step in steps {
        let mut xs0 = Vec::with_capacity(k);
        let mut xs1 = Vec::with_capacity(k);
        let mut offs = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            let m = if k == 1 { batch_size_for(cfg, seg.q0, seg.q1) } else { per.min(batch_size_for(cfg, seg.q0, seg.q1)) };
            let (a, b) = seg.pairs(m, cfg, rng)?;
            offs.extend(std::iter::repeat_n(s as f64, a.nrows()));
            xs0.push(a);
            xs1.push(b);
        }
        let cat = |v: &[Array2<f64>]| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("same width")
        };
        let report = step_on_pairs(pair, &spec, cat(&xs0), cat(&xs1), &Array1::from(offs), rng)?;
        log.record(step, report);
    }
    Ok(())
}

/// Trains on a single source/target pair.
pub fn train_pair(q0: &PointCloud, q1: &PointCloud, cfg: &TrainConfig) -> Result<(ModelPair, Vec<LossReport>)> {
    cfg.validate()?;
    q0.ensure_same_dim(q1)?;
    let mut pair = ModelPair::new(q0.dim(), 1.0, cfg)?;
    let seg = [Segment::new(q0, q1, cfg)?];
    let mut rng = stream(cfg.seed, streams::TRAIN);
    let mut log = Logger::new(cfg.log_every, cfg.steps);
    train_segments(&mut pair, &seg, cfg, &mut rng, &mut log, 0..cfg.steps)?;
    Ok((pair, log.reports))
}

/// Trains one model across consecutive snapshots; segment `k` occupies
/// model time `[k, k + 1]`.
pub fn train_trajectory(series: &TimepointSeries, cfg: &TrainConfig) -> Result<(ModelPair, Vec<LossReport>)> {
    cfg.validate()?;
    let snaps = series.snapshots();
    if snaps.len() < 2 {
        return config_err("trajectory training needs at least two snapshots");
    }
    let mut pair = ModelPair::new(series.dim(), (snaps.len() - 1) as f64, cfg)?;
    let segs = snaps.windows(2).map(|w| Segment::new(&w[0], &w[1], cfg)).collect::<Result<Vec<_>>>()?;
    let mut rng = stream(cfg.seed, streams::TRAIN);
    let mut log = Logger::new(cfg.log_every, cfg.steps);
    train_segments(&mut pair, &segs, cfg, &mut rng, &mut log, 0..cfg.steps)?;
    Ok((pair, log.reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopDiagnostics {
    pub outer: usize,
    pub step: usize,
    /// Distance between the mean of forward-simulated endpoints and the target mean.
    pub forward_mean_gap: f64,
    /// Distance between the mean of backward-simulated endpoints and the source mean.
    pub backward_mean_gap: f64,
    /// Mean per-coordinate variance of forward endpoints over that of the target.
    pub forward_var_ratio: f64,
    pub backward_var_ratio: f64,
}

fn moment_gaps(sim: &Array2<f64>, reference: &PointCloud) -> (f64, f64) {
    let m = sim.mean_axis(Axis(0)).expect("nonempty");
    let gap = (&m - &reference.mean()).mapv(|v| v * v).sum().sqrt();
    let var = |x: &Array2<f64>| x.var_axis(Axis(0), 1.0).mean().unwrap_or(0.0);
    (gap, var(sim) / var(reference.points()))
}

/// Looped variant: after every block of inner steps, endpoint pairs are
/// re-simulated from the current model (half forward from `q0`, half
/// backward from `q1`) and the next block trains on that cache.
pub fn train_looped(q0: &PointCloud, q1: &PointCloud, cfg: &TrainConfig) -> Result<(ModelPair, Vec<LossReport>, Vec<LoopDiagnostics>)> {
    cfg.validate()?;
    let Some(lc) = cfg.looped.clone() else {
        return config_err("looped training needs a [loop] section");
    };
    q0.ensure_same_dim(q1)?;
    let inner = cfg.steps / lc.outer;
    let spec = cfg.bridge()?;
    let mut pair = ModelPair::new(q0.dim(), 1.0, cfg)?;
    let seg = [Segment::new(q0, q1, cfg)?];
    let mut rng = stream(cfg.seed, streams::TRAIN);
    let mut log = Logger::new(cfg.log_every, cfg.steps);
    let mut diags = Vec::new();
    let g = cfg.sigma;

    let mut cache: Option<(Array2<f64>, Array2<f64>)> = None;
    for outer in 0..lc.outer {
        let steps = outer * inner..(outer + 1) * inner;
        match &cache {
            None => train_segments(&mut pair, &seg, cfg, &mut rng, &mut log, steps)?,
            Some((c0, c1)) => {
                let m = cfg.batch_size;
                let zeros = Array1::zeros(m);
                for step in steps {
                    let idx = index::sample(&mut rng, c0.nrows(), m).into_vec();
                    let r = step_on_pairs(&mut pair, &spec, c0.select(Axis(0), &idx), c1.select(Axis(0), &idx), &zeros, &mut rng)?;
                    log.record(step, r);
                }
            }
        }
        if outer + 1 == lc.outer {
            break;
        }
        let half = lc.cache / 2;
        let i0 = draw_rows(q0, half, &mut rng);
        let i1 = draw_rows(q1, lc.cache - half, &mut rng);
        let start0 = q0.points().select(Axis(0), &i0);
        let start1 = q1.points().select(Axis(0), &i1);
        let sim_seed = rng.random::<u64>();
        let fwd = sim::integrate(&pair, start0.view(), SimOptions::forward(g, lc.sim_steps), sim_seed)?;
        let bwd = sim::integrate(&pair, start1.view(), SimOptions::backward(g, lc.sim_steps), sim_seed ^ 1)?;
        let (fg, fv) = moment_gaps(&fwd, q1);
        let (bg, bv) = moment_gaps(&bwd, q0);
        diags.push(LoopDiagnostics {
            outer,
            step: (outer + 1) * inner,
            forward_mean_gap: fg,
            backward_mean_gap: bg,
            forward_var_ratio: fv,
            backward_var_ratio: bv,
        });
        let c0 = ndarray::concatenate(Axis(0), &[start0.view(), bwd.view()]).expect("same width");
        let c1 = ndarray::concatenate(Axis(0), &[fwd.view(), start1.view()]).expect("same width");
        cache = Some((c0, c1));
    }
    Ok((pair, log.reports, diags))
}

/// Loss log with columns `step, flow_loss, score_loss, wallclock`.
pub fn write_loss_csv(reports: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "flow_loss", "score_loss", "wallclock"])?;
    for r in reports {
        w.write_record([r.step.to_string(), r.flow_loss.to_string(), r.score_loss.to_string(), r.wallclock.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sum of squared residuals per row, averaged over rows.
pub fn flow_loss(v: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if v.dim() != target.dim() {
        return invalid("flow prediction and target shapes differ");
    }
    Ok((v - target).mapv(|e| e * e).sum() / v.nrows() as f64)
}

/// Mean over rows of `|lambda_i s_i + eps_i|^2`.
pub fn score_loss(s: &Array2<f64>, lambda: &Array1<f64>, noise: &Array2<f64>) -> Result<f64> {
    if s.dim() != noise.dim() || lambda.len() != s.nrows() {
        return invalid("score prediction, weights and noise shapes differ");
    }
    let r = s * &lambda.view().insert_axis(Axis(1)) + noise;
    Ok(r.mapv(|e| e * e).sum() / s.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::Parametrization;
    use crate::sim::Dynamics;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn small(cfg: &str) -> TrainConfig {
        TrainConfig::from_toml(&format!("batch_size = 16\nsteps = 40\nlog_every = 10\n{cfg}\n[model]\nkind = \"mlp\"\nhidden = 8")).unwrap()
    }

    fn gaussian(n: usize, mean: f64, seed: u64) -> PointCloud {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PointCloud::uniform(Array2::from_shape_simple_fn((n, 2), || mean + r.sample::<f64, _>(StandardNormal))).unwrap()
    }

    #[test]
    fn loss_functions() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let target = Array2::from_shape_simple_fn((50, 3), || r.random::<f64>());
        assert_eq!(flow_loss(&target, &target).unwrap(), 0.0);
        let noise = Array2::from_shape_simple_fn((20_000, 3), || r.sample::<f64, _>(StandardNormal));
        let lam = Array1::from_shape_simple_fn(20_000, || 0.1 + r.random::<f64>());
        let perfect = -&noise / lam.view().insert_axis(Axis(1));
        assert!(score_loss(&perfect, &lam, &noise).unwrap() < 1e-20);
        let zero = score_loss(&Array2::zeros((20_000, 3)), &lam, &noise).unwrap();
        assert!((zero - 3.0).abs() < 0.1, "{zero}");
        let v = Array2::from_shape_simple_fn((50, 3), || r.random::<f64>());
        let l1 = flow_loss(&v, &target).unwrap();
        let l2 = flow_loss(&(&v * 2.0), &(&target * 2.0)).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn loss_step_total_and_bad_targets() {
        let cfg = small("");
        let pair = ModelPair::new(2, 1.0, &cfg).unwrap();
        let spec = cfg.bridge().unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x0 = Array2::from_shape_simple_fn((8, 2), || r.random::<f64>());
        let x1 = Array2::from_shape_simple_fn((8, 2), || r.random::<f64>());
        let mut batch = BridgeBatch::sample(&spec, Parametrization::ScaledScore, x0, x1, &mut r).unwrap();
        let (rep, grads) = pair.loss_step(&batch, batch.t.view()).unwrap();
        assert_eq!(rep.total, rep.flow_loss + rep.score_loss);
        assert_eq!(grads.0.len(), 2);
        batch.flow_target[[3, 1]] = f64::NAN;
        let err = pair.loss_step(&batch, batch.t.view()).unwrap_err().to_string();
        assert!(err.contains(&batch.t[3].to_string()), "{err}");
    }

    #[test]
    fn identical_points_learn_zero_flow() {
        let p = PointCloud::uniform(array![[0.5, -0.5]]).unwrap();
        let cfg = TrainConfig::from_toml("sigma = 0.0\nbatch_size = 1\nsteps = 1500\nlr = 1e-2\nlog_every = 100\n[model]\nkind = \"mlp\"\nhidden = 16").unwrap();
        let (pair, reports) = train_pair(&p, &p, &cfg).unwrap();
        assert!(!pair.has_score());
        assert!(reports.last().unwrap().flow_loss < 1e-4, "{:?}", reports.last());
        for t in [0.1, 0.5, 0.9] {
            let v = pair.drift(t, p.points().view()).unwrap();
            assert!(v.iter().all(|x| x.abs() < 0.02), "{v}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (a, b) = (gaussian(64, -1.0, 1), gaussian(64, 1.0, 2));
        for coupling in ["exact", "sinkhorn", "independent", "geodesic"] {
            let cfg = small(&format!("coupling = \"{coupling}\"\n[geodesic]\nk = 5"));
            let (p1, r1) = train_pair(&a, &b, &cfg).unwrap();
            let (p2, r2) = train_pair(&a, &b, &cfg).unwrap();
            assert_eq!(p1.params(), p2.params());
            assert_eq!(r1.len(), 4);
            assert_eq!(r1.iter().map(|r| r.total).collect::<Vec<_>>(), r2.iter().map(|r| r.total).collect::<Vec<_>>());
        }
    }

    #[test]
    fn two_snapshot_trajectory_matches_pair() {
        let (a, b) = (gaussian(40, -1.0, 1), gaussian(40, 1.0, 2));
        let cfg = small("");
        let (p1, _) = train_pair(&a, &b, &cfg).unwrap();
        let series = TimepointSeries::new(vec![a, b]).unwrap();
        let (p2, _) = train_trajectory(&series, &cfg).unwrap();
        assert_eq!(p1.params(), p2.params());
        assert_eq!(p2.time_span(), 1.0);
    }

    #[test]
    fn single_outer_loop_matches_pair() {
        let (a, b) = (gaussian(40, -1.0, 1), gaussian(40, 1.0, 2));
        let cfg = small("[loop]\nouter = 1\ncache = 32");
        let (p1, _) = train_pair(&a, &b, &cfg).unwrap();
        let (p2, _, diags) = train_looped(&a, &b, &cfg).unwrap();
        assert_eq!(p1.params(), p2.params());
        assert!(diags.is_empty());

        let cfg = small("[loop]\nouter = 4\ncache = 32\nsim_steps = 5");
        let (_, reports, diags) = train_looped(&a, &b, &cfg).unwrap();
        assert_eq!(diags.len(), 3);
        assert_eq!(reports.last().unwrap().step, 40);
        assert!(TrainConfig::from_toml("batch_size = 64\n[loop]\ncache = 10").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (a, b) = (gaussian(32, -1.0, 1), gaussian(32, 1.0, 2));
        let (pair, _) = train_pair(&a, &b, &small("")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        pair.save(&path).unwrap();
        let back = ModelPair::load(&path).unwrap();
        assert_eq!(back.params(), pair.params());
        let x = a.points().view();
        assert_eq!(back.drift(0.3, x).unwrap(), pair.drift(0.3, x).unwrap());
        assert_eq!(back.score(0.3, x).unwrap(), pair.score(0.3, x).unwrap());
        let ngm = TrainConfig::from_toml("sigma = 0.0\nsteps = 3\n[model]\nkind = \"ngm\"\nhidden = 4").unwrap();
        let (np, _) = train_pair(&a, &b, &ngm).unwrap();
        np.save(&path).unwrap();
        assert_eq!(ModelPair::load(&path).unwrap().params(), np.params());
    }

    #[test]
    fn loss_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let r = LossReport {
            step: 100,
            flow_loss: 0.5,
            score_loss: 0.25,
            total: 0.75,
            wallclock: 1.5,
        };
        write_loss_csv(&[r], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,flow_loss,score_loss,wallclock\n100,0.5,0.25,1.5\n");
    }
}
