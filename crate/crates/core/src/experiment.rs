//! Config-driven experiment protocols: data generation, training, simulation
//! and evaluation over a list of seeds, with a fixed output layout.
//!
//! ```text
//! out/
//!   config.toml   resolved configuration
//!   metrics.json  mean and std of every metric over seeds
//!   loss.csv      loss log of the first seed
//!   traj_*.csv    sampled trajectories of the first seed
//!   model.ckpt    checkpoint of the first seed
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::datasets::{
    load_csv, make_gaussian_pair, make_sparse_sde_series, make_toy, random_signed_adjacency, save_trajectories_csv, PointCloud, SparseSdeConfig,
    TimepointSeries, ToyKind, ToyParams,
};
use crate::error::{config, Result};
use crate::eval::{self, grn_metrics, npe, sb_benchmark, GaussianSbOracle, Order};
use crate::rng::{derive_seed, streams};
use crate::sim::{self, SimOptions, TrajectoryEnsemble};
use crate::train::{self, LoopDiagnostics, LossReport, ModelConfig, ModelPair, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Toy source to toy target in the plane: W2, NPE, backward W2.
    TwoDim,
    /// Gaussian to Gaussian against the closed-form bridge: KL.
    GaussianSb,
    /// Multi-snapshot series: leave-one-out W1.
    Trajectory,
    /// Sparse-SDE snapshots with a structured drift: edge AUC and AP.
    Grn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: ToyKind,
    pub target: ToyKind,
    pub source_params: ToyParams,
    pub target_params: ToyParams,
    pub n_train: usize,
    pub n_test: usize,
    /// Dimension of the Gaussian pair.
    pub dim: usize,
    /// Snapshot CSV files for `trajectory`; generated from the sparse SDE when empty.
    pub paths: Vec<PathBuf>,
    pub genes: usize,
    pub density: f64,
    pub timepoints: usize,
    pub cells: usize,
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: ToyKind::Gaussian,
            target: ToyKind::EightGaussians,
            source_params: ToyParams::default(),
            target_params: ToyParams::default(),
            n_train: 10_000,
            n_test: 10_000,
            dim: 5,
            paths: Vec::new(),
            genes: 7,
            density: 0.2,
            timepoints: 5,
            cells: 500,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Integration steps per unit time for pushforwards and NPE.
    pub sim_steps: usize,
    /// Inference diffusion for pushforwards and exported trajectories.
    pub g: f64,
    /// Number of exported trajectories.
    pub traj_paths: usize,
    /// Interior snapshots to hold out; all of them when empty.
    pub held_out: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sim_steps: 100,
            g: 0.0,
            traj_paths: 100,
            held_out: Vec::new(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let c: Self = serde_json::from_str(&text)?;
            c.validate()?;
            Ok(c)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config("seeds must be nonempty");
        }
        self.train.validate()?;
        let d = &self.dataset;
        if d.n_train == 0 || d.n_test == 0 || self.eval.sim_steps == 0 {
            return config("n_train, n_test and sim_steps must be positive");
        }
        if self.experiment == ExperimentKind::Grn && !matches!(self.train.model, ModelConfig::Ngm { .. }) {
            return config("grn experiments need model.kind = \"ngm\"");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub values: Vec<f64>,
}

impl Summary {
    fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, std, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, Summary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

/// Everything one seed produces.
pub struct SeedOutcome {
    pub metrics: BTreeMap<String, f64>,
    pub model: ModelPair,
    pub losses: Vec<LossReport>,
    pub trajectories: Vec<(String, TrajectoryEnsemble)>,
    pub loop_diagnostics: Vec<LoopDiagnostics>,
    pub breakdown: Option<eval::MetricReport>,
}

fn toy_pair(d: &DatasetConfig, n: usize, seed: u64, src_stream: u64, tgt_stream: u64) -> Result<(PointCloud, PointCloud)> {
    Ok((
        make_toy(d.source, n, derive_seed(seed, src_stream), &d.source_params)?,
        make_toy(d.target, n, derive_seed(seed, tgt_stream), &d.target_params)?,
    ))
}

fn head(x: &Array2<f64>, n: usize) -> Array2<f64> {
    x.slice(s![..n.min(x.nrows()), ..]).to_owned()
}

fn fit_pair(q0: &PointCloud, q1: &PointCloud, cfg: &TrainConfig) -> Result<(ModelPair, Vec<LossReport>, Vec<LoopDiagnostics>)> {
    if cfg.looped.is_some() {
        train::train_looped(q0, q1, cfg)
    } else {
        let (m, l) = train::train_pair(q0, q1, cfg)?;
        Ok((m, l, Vec::new()))
    }
}

fn run_two_dim(cfg: &ExperimentConfig, tc: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let (d, e) = (&cfg.dataset, &cfg.eval);
    let (q0, q1) = toy_pair(d, d.n_train, seed, streams::SOURCE, streams::TARGET)?;
    let (t0, t1) = toy_pair(d, d.n_test, seed, streams::TEST_SOURCE, streams::TEST_TARGET)?;
    let (model, losses, loop_diagnostics) = fit_pair(&q0, &q1, tc)?;
    let sim_seed = derive_seed(seed, streams::SIMULATE);
    let fwd = sim::integrate(&model, t0.points().view(), SimOptions::forward(e.g, e.sim_steps), sim_seed)?;
    let bwd = sim::integrate(&model, t1.points().view(), SimOptions::backward(e.g, e.sim_steps), sim_seed ^ 1)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("w2".into(), eval::wasserstein(&PointCloud::uniform(fwd)?, &t1, Order::W2)?);
    metrics.insert("w2_backward".into(), eval::wasserstein(&PointCloud::uniform(bwd)?, &t0, Order::W2)?);
    metrics.insert("npe".into(), npe(&model, &t0, &t1, e.sim_steps)?);
    let traj = sim::simulate(&model, head(t0.points(), e.traj_paths).view(), SimOptions::forward(e.g, e.sim_steps), sim_seed)?;
    Ok(SeedOutcome {
        metrics,
        model,
        losses,
        trajectories: vec![(format!("traj_g{}.csv", e.g), traj)],
        loop_diagnostics,
        breakdown: None,
    })
}

fn run_gaussian_sb(cfg: &ExperimentConfig, tc: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let (d, e) = (&cfg.dataset, &cfg.eval);
    let (q0, q1) = make_gaussian_pair(d.dim, d.n_train, seed)?;
    let (test, _) = make_gaussian_pair(d.dim, d.n_test, derive_seed(seed, streams::TEST_SOURCE))?;
    let (model, losses, loop_diagnostics) = fit_pair(&q0, &q1, tc)?;
    let oracle = GaussianSbOracle::new(d.dim, tc.sigma);
    let sim_seed = derive_seed(seed, streams::SIMULATE);
    let rep = sb_benchmark(&model, &oracle, test.points().view(), sim_seed)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("kl_endpoint".into(), rep.kl_endpoint);
    metrics.insert("kl_mean_path".into(), rep.kl_mean_path);
    let traj = sim::simulate(&model, head(test.points(), e.traj_paths).view(), SimOptions::forward(tc.sigma, eval::gaussian::SB_STEPS), sim_seed)?;
    Ok(SeedOutcome {
        metrics,
        model,
        losses,
        trajectories: vec![(format!("traj_g{}.csv", tc.sigma), traj)],
        loop_diagnostics,
        breakdown: rep.reports().pop(),
    })
}

fn sparse_series(d: &DatasetConfig, seed: u64) -> Result<(TimepointSeries, Array2<f64>)> {
    let adj = random_signed_adjacency(d.genes, d.density, derive_seed(seed, streams::TARGET));
    make_sparse_sde_series(&SparseSdeConfig::new(adj, d.timepoints, d.cells, d.noise, derive_seed(seed, streams::SOURCE)))
}

fn series_trajectory(model: &ModelPair, series: &TimepointSeries, e: &EvalConfig, seed: u64) -> Result<TrajectoryEnsemble> {
    let span = (series.len() - 1) as f64;
    let opts = SimOptions {
        span,
        ..SimOptions::forward(e.g, e.sim_steps * (series.len() - 1))
    };
    sim::simulate(model, head(series.snapshots()[0].points(), e.traj_paths).view(), opts, derive_seed(seed, streams::SIMULATE))
}

fn run_trajectory(cfg: &ExperimentConfig, tc: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let (d, e) = (&cfg.dataset, &cfg.eval);
    let series = if d.paths.is_empty() {
        sparse_series(d, seed)?.0
    } else {
        TimepointSeries::new(d.paths.iter().map(load_csv).collect::<Result<Vec<_>>>()?)?
    };
    let (model, losses) = train::train_trajectory(&series, tc)?;
    let held: Vec<usize> = if e.held_out.is_empty() { (1..series.len() - 1).collect() } else { e.held_out.clone() };
    let mut metrics = BTreeMap::new();
    let (mut loo, mut copy) = (Vec::new(), Vec::new());
    for &k in &held {
        let r = eval::leave_one_out(&series, tc, k, e.sim_steps)?;
        let c = eval::wasserstein(&series.snapshots()[k - 1], &series.snapshots()[k], Order::W1)?;
        metrics.insert(format!("loo_w1_t{k}"), r.value);
        loo.push(r.value);
        copy.push(c);
    }
    if !loo.is_empty() {
        metrics.insert("loo_w1".into(), loo.iter().sum::<f64>() / loo.len() as f64);
        metrics.insert("copy_w1".into(), copy.iter().sum::<f64>() / copy.len() as f64);
    }
    let traj = series_trajectory(&model, &series, e, seed)?;
    Ok(SeedOutcome {
        metrics,
        model,
        losses,
        trajectories: vec![(format!("traj_g{}.csv", e.g), traj)],
        loop_diagnostics: Vec::new(),
        breakdown: None,
    })
}

fn run_grn(cfg: &ExperimentConfig, tc: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let (d, e) = (&cfg.dataset, &cfg.eval);
    let (series, adj) = sparse_series(d, seed)?;
    let (model, losses) = train::train_trajectory(&series, tc)?;
    let net = model.ngm().expect("validated ngm model");
    let truth = adj.mapv(|a| if a != 0.0 { 1.0 } else { 0.0 });
    let (auc, ap) = grn_metrics(net.edge_scores(true).view(), truth.view(), true)?;
    let flat = Array2::<f64>::zeros(adj.raw_dim());
    let (auc0, ap0) = grn_metrics(flat.view(), truth.view(), true)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("auc_roc".into(), auc);
    metrics.insert("avg_precision".into(), ap);
    metrics.insert("auc_roc_constant".into(), auc0);
    metrics.insert("avg_precision_constant".into(), ap0);
    let traj = series_trajectory(&model, &series, e, seed)?;
    Ok(SeedOutcome {
        metrics,
        model,
        losses,
        trajectories: vec![(format!("traj_g{}.csv", e.g), traj)],
        loop_diagnostics: Vec::new(),
        breakdown: None,
    })
}

/// Runs one seed of the configured protocol without writing anything.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    match cfg.experiment {
        ExperimentKind::TwoDim => run_two_dim(cfg, &tc, seed),
        ExperimentKind::GaussianSb => run_gaussian_sb(cfg, &tc, seed),
        ExperimentKind::Trajectory => run_trajectory(cfg, &tc, seed),
        ExperimentKind::Grn => run_grn(cfg, &tc, seed),
    }
}

/// Generates the configured training data for `seed` and trains on it,
/// skipping evaluation.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(ModelPair, Vec<LossReport>)> {
    cfg.validate()?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let d = &cfg.dataset;
    let (m, l, _) = match cfg.experiment {
        ExperimentKind::TwoDim => {
            let (q0, q1) = toy_pair(d, d.n_train, seed, streams::SOURCE, streams::TARGET)?;
            fit_pair(&q0, &q1, &tc)?
        }
        ExperimentKind::GaussianSb => {
            let (q0, q1) = make_gaussian_pair(d.dim, d.n_train, seed)?;
            fit_pair(&q0, &q1, &tc)?
        }
        ExperimentKind::Trajectory | ExperimentKind::Grn => {
            let series = if d.paths.is_empty() {
                sparse_series(d, seed)?.0
            } else {
                TimepointSeries::new(d.paths.iter().map(load_csv).collect::<Result<Vec<_>>>()?)?
            };
            let (m, l) = train::train_trajectory(&series, &tc)?;
            (m, l, Vec::new())
        }
    };
    Ok((m, l))
}

/// Runs every seed, aggregates metrics and writes the output directory.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunMetrics> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let o = run_seed(cfg, seed)?;
        for (k, v) in &o.metrics {
            per_metric.entry(k.clone()).or_default().push(*v);
        }
        if i == 0 {
            train::write_loss_csv(&o.losses, out.join("loss.csv"))?;
            o.model.save(out.join("model.ckpt"))?;
            for (name, ens) in &o.trajectories {
                save_trajectories_csv(ens, out.join(name))?;
            }
            if !o.loop_diagnostics.is_empty() {
                std::fs::write(out.join("loop_diagnostics.json"), serde_json::to_string_pretty(&o.loop_diagnostics)?)?;
            }
            if let Some(b) = &o.breakdown {
                b.save_breakdown_csv(out.join("kl_per_time.csv"))?;
            }
        }
    }
    let mut notes = BTreeMap::new();
    if cfg.experiment == ExperimentKind::GaussianSb {
        notes.insert("kl_direction".into(), "KL(fit || truth), full covariance".into());
    }
    let metrics = RunMetrics {
        experiment: cfg.experiment,
        seeds: cfg.seeds.clone(),
        metrics: per_metric.into_iter().map(|(k, v)| (k, Summary::of(v))).collect(),
        notes,
    };
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    Ok(metrics)
}
