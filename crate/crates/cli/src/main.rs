use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sbflow::datasets::{load_csv, save_cloud_csv, save_trajectories_csv, PointCloud};
use sbflow::eval::{self, GaussianSbOracle, MetricReport, Order};
use sbflow::experiment::{self, ExperimentConfig};
use sbflow::ot::{self, OtMethod};
use sbflow::sim::{self, Dynamics, SimOptions};
use sbflow::train::{self, ModelPair};

#[derive(Parser)]
#[command(name = "sbflow", version, about = "Simulation-free Schrödinger bridge training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment protocol and write its output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train on the configured data (or on two CSV clouds) and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, requires = "target")]
        source: Option<PathBuf>,
        #[arg(long, requires = "source")]
        target: Option<PathBuf>,
    },
    /// Integrate a checkpoint from a CSV cloud and write the trajectories.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        g: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integrate the time reversal from the terminal time.
        #[arg(long)]
        backward: bool,
        /// Also write the terminal cloud here.
        #[arg(long)]
        terminal: Option<PathBuf>,
    },
    /// Compute a metric between CSV clouds and print it as JSON.
    Eval {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        a: PathBuf,
        /// Second cloud (w1, w2, npe).
        #[arg(long)]
        b: Option<PathBuf>,
        /// Checkpoint (npe).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Bridge diffusion of the Gaussian reference (kl).
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Time of the Gaussian reference marginal (kl).
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an OT problem between two CSV clouds and write the plan.
    OtSolve {
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = CostArg::Sqeuclidean)]
        cost: CostArg,
        /// Write the dense matrix instead of `i,j,mass` triples.
        #[arg(long)]
        dense: bool,
    },
    /// Export sampled trajectories over the checkpoint's full time span.
    ExportTraj {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        g: f64,
        /// Steps per unit of model time.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    W1,
    W2,
    Npe,
    Kl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Sinkhorn,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Sqeuclidean,
    Euclidean,
    Geodesic,
}

fn cloud(path: &Path) -> Result<PointCloud> {
    load_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn checkpoint(path: &Path) -> Result<ModelPair> {
    ModelPair::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_config(path: &Path, steps: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(s) = steps {
        cfg.train.steps = s;
        if let Some(l) = &cfg.train.looped {
            if s % l.outer != 0 {
                bail!("--steps {s} is not a multiple of loop.outer = {}", l.outer);
            }
        }
    }
    Ok(cfg)
}

fn emit(report: &MetricReport, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    if let Ok(t) = std::env::var("SF2M_THREADS") {
        let n: usize = t.parse().with_context(|| format!("SF2M_THREADS={t} is not a thread count"))?;
        sbflow::par::set_threads(n);
    }
    match Cli::parse().command {
        Command::Run { config, out, seed, steps } => {
            let mut cfg = load_config(&config, steps)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.or_else(|| cfg.out.clone()).context("no output directory: pass --out or set `out` in the config")?;
            let m = experiment::run(&cfg, &out)?;
            for (k, s) in &m.metrics {
                println!("{k}: {:.6} ± {:.6}", s.mean, s.std);
            }
        }
        Command::Train { config, out, seed, steps, source, target } => {
            let cfg = load_config(&config, steps)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (model, losses) = match (source, target) {
                (Some(s), Some(t)) => {
                    let tc = train::TrainConfig { seed, ..cfg.train.clone() };
                    train::train_pair(&cloud(&s)?, &cloud(&t)?, &tc)?
                }
                _ => experiment::train_seed(&cfg, seed)?,
            };
            std::fs::create_dir_all(&out)?;
            model.save(out.join("model.ckpt"))?;
            train::write_loss_csv(&losses, out.join("loss.csv"))?;
        }
        Command::Simulate { checkpoint: ck, input, out, g, steps, seed, backward, terminal } => {
            let model = checkpoint(&ck)?;
            let x0 = cloud(&input)?;
            let span = model.time_span();
            let opts = if backward {
                SimOptions { t0: span, span, ..SimOptions::backward(g, steps) }
            } else {
                SimOptions { span, ..SimOptions::forward(g, steps) }
            };
            let ens = sim::simulate(&model, x0.points().view(), opts, seed)?;
            save_trajectories_csv(&ens, &out)?;
            if let Some(t) = terminal {
                save_cloud_csv(&PointCloud::uniform(ens.terminal())?, t)?;
            }
        }
        Command::Eval { metric, a, b, checkpoint: ck, steps, sigma, t, out } => {
            let qa = cloud(&a)?;
            let report = match metric {
                Metric::W1 | Metric::W2 => {
                    let qb = cloud(&b.context("--b is required")?)?;
                    let (order, name) = if matches!(metric, Metric::W1) { (Order::W1, "w1") } else { (Order::W2, "w2") };
                    let (v, n) = eval::wasserstein_capped(&qa, &qb, order, eval::MAX_EXACT_POINTS)?;
                    MetricReport::new(name, v, n, 0)
                }
                Metric::Npe => {
                    let qb = cloud(&b.context("--b is required")?)?;
                    let model = checkpoint(&ck.context("--checkpoint is required")?)?;
                    MetricReport::new("npe", eval::npe(&model, &qa, &qb, steps)?, qa.len(), model.seed)
                }
                Metric::Kl => {
                    let oracle = GaussianSbOracle::new(qa.dim(), sigma);
                    let (m, _) = oracle.marginal(t);
                    let fit = eval::gaussian_kl(qa.points().view(), m.view(), oracle.covariance(t).view())?;
                    let mut r = MetricReport::new("kl", fit.kl, qa.len(), 0);
                    r.note = Some(format!("KL(fit || truth) at t = {t}{}", if fit.regularized { ", covariance regularized" } else { "" }));
                    r
                }
            };
            emit(&report, out.as_deref())?;
        }
        Command::OtSolve { method, source, target, out, epsilon, cost, dense } => {
            let (qa, qb) = (cloud(&source)?, cloud(&target)?);
            let c = match cost {
                CostArg::Sqeuclidean => ot::cost_sq_euclidean(&qa, &qb)?,
                CostArg::Euclidean => ot::cost_euclidean(&qa, &qb)?,
                CostArg::Geodesic => {
                    let (c, report) = ot::cost_geodesic(&qa, &qb, 10.min(qa.len() + qb.len() - 1), 5.0, ot::Laplacian::default())?;
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                    c
                }
            };
            let m = match method {
                Method::Exact => OtMethod::Exact,
                Method::Sinkhorn => OtMethod::sinkhorn(epsilon),
            };
            let plan = m.solve(&c, qa.weights().as_slice().expect("contiguous"), qb.weights().as_slice().expect("contiguous"))?;
            if dense {
                plan.save_dense_csv(&out)?;
            } else {
                plan.save_sparse_csv(&out)?;
            }
            plan.save_diagnostics_json(out.with_extension("json"))?;
            if !plan.diagnostics.converged {
                eprintln!("warning: solver stopped before convergence (marginal error {:.3e})", plan.diagnostics.marginal_error);
            }
        }
        Command::ExportTraj { checkpoint: ck, input, out, g, steps, paths, seed } => {
            let model = checkpoint(&ck)?;
            let x0 = cloud(&input)?;
            let n = paths.min(x0.len());
            let rows: Vec<usize> = (0..n).collect();
            let start = x0.select(&rows)?;
            let span = model.time_span();
            let total = (steps as f64 * span).round().max(1.0) as usize;
            let opts = SimOptions { span, ..SimOptions::forward(g, total) };
            let ens = sim::simulate(&model, start.points().view(), opts, seed)?;
            save_trajectories_csv(&ens, &out)?;
        }
    }
    Ok(())
}
