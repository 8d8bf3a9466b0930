//! Discrete optimal transport between point clouds.
//!
//! Uniform square problems go to a Jonker–Volgenant assignment solver, general
//! weights to a network simplex. Entropic plans use log-domain Sinkhorn, which
//! stays stable at the small regularization the bridge coupling needs.

pub mod assignment;
pub mod cost;
pub mod geodesic;
pub mod simplex;
pub mod sinkhorn;

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{invalid, Error, Result};
pub use geodesic::{GeodesicReport, Laplacian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    SqEuclidean,
    Euclidean,
    Geodesic,
}

#[derive(Debug, Clone)]
pub struct CostMatrix {
    values: Array2<f64>,
    kind: CostKind,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>, kind: CostKind) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return invalid(format!("cost entries must be finite and nonnegative, found {v}"));
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Sub-block for the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        let values = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| self.values[[rows[i], cols[j]]]);
        CostMatrix { values, kind: self.kind }
    }

    pub fn scaled(&self, c: f64) -> Result<CostMatrix> {
        CostMatrix::new(&self.values * c, self.kind)
    }
}

pub fn cost_sq_euclidean(a: &PointCloud, b: &PointCloud) -> Result<CostMatrix> {
    a.ensure_same_dim(b)?;
    Ok(CostMatrix {
        values: cost::sq_euclidean(a.points().view(), b.points().view()),
        kind: CostKind::SqEuclidean,
    })
}

pub fn cost_euclidean(a: &PointCloud, b: &PointCloud) -> Result<CostMatrix> {
    a.ensure_same_dim(b)?;
    Ok(CostMatrix {
        values: cost::euclidean(a.points().view(), b.points().view()),
        kind: CostKind::Euclidean,
    })
}

pub fn cost_geodesic(
    a: &PointCloud,
    b: &PointCloud,
    k: usize,
    t_heat: f64,
    laplacian: Laplacian,
) -> Result<(CostMatrix, GeodesicReport)> {
    let n = a.len() + b.len();
    if n > 5000 {
        return invalid(format!("geodesic cost needs a dense eigendecomposition; {n} points exceeds 5000"));
    }
    let (values, report) = geodesic::geodesic_cost(a.points().view(), b.points().view(), k, t_heat, laplacian)?;
    Ok((
        CostMatrix {
            values,
            kind: CostKind::Geodesic,
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CouplingPlan {
    pub matrix: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub epsilon: f64,
    pub cost: f64,
    pub diagnostics: SolverDiagnostics,
}

impl CouplingPlan {
    fn assemble(matrix: Array2<f64>, a: &[f64], b: &[f64], epsilon: f64, cost: &CostMatrix, iterations: usize, converged: bool) -> Self {
        let mut plan = CouplingPlan {
            cost: (&matrix * cost.values()).sum(),
            matrix,
            row_marginal: Array1::from(a.to_vec()),
            col_marginal: Array1::from(b.to_vec()),
            epsilon,
            diagnostics: SolverDiagnostics {
                iterations,
                marginal_error: 0.0,
                converged,
            },
        };
        plan.diagnostics.marginal_error = plan.marginal_error();
        plan
    }

    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.matrix.sum_axis(ndarray::Axis(1));
        let cols = self.matrix.sum_axis(ndarray::Axis(0));
        let r = (&rows - &self.row_marginal).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        let c = (&cols - &self.col_marginal).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        r.max(c)
    }

    /// Nonzero entries as `(row, column, mass)`, row-major.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        self.matrix
            .indexed_iter()
            .filter(|(_, &m)| m > 0.0)
            .map(|((i, j), &m)| (i, j, m))
            .collect()
    }

    /// Half the L1 distance between two plans of the same shape.
    pub fn total_variation(&self, other: &CouplingPlan) -> f64 {
        0.5 * (&self.matrix - &other.matrix).mapv(f64::abs).sum()
    }

    pub fn save_dense_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.matrix.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_sparse_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "mass"])?;
        for (i, j, m) in self.triples() {
            w.write_record([i.to_string(), j.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_diagnostics_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.diagnostics)?;
        writeln!(f)?;
        Ok(())
    }
}

fn check_marginals(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<()> {
    let (n, m) = cost.shape();
    if a.len() != n {
        return Err(Error::DimMismatch { expected: n, got: a.len() });
    }
    if b.len() != m {
        return Err(Error::DimMismatch { expected: m, got: b.len() });
    }
    if a.iter().chain(b).any(|w| !w.is_finite() || *w < 0.0) {
        return invalid("marginal weights must be finite and nonnegative");
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 {
        return invalid(format!("marginal sums differ: {sa} vs {sb}"));
    }
    Ok(())
}

/// True when both marginals are the same constant on a square problem.
fn uniform_square(a: &[f64], b: &[f64]) -> bool {
    !a.is_empty() && a.len() == b.len() && a.iter().chain(b).all(|&w| w == a[0])
}

/// Exact (unregularized) optimal plan; a vertex of the transport polytope.
pub fn solve_exact(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<CouplingPlan> {
    check_marginals(cost, a, b)?;
    let (n, m) = cost.shape();
    let mut matrix = Array2::zeros((n, m));
    let iterations;
    if uniform_square(a, b) {
        let sol = assignment::solve_assignment(&cost.view());
        for (i, &j) in sol.iter().enumerate() {
            matrix[[i, j]] = a[i];
        }
        iterations = n;
    } else {
        let sol = simplex::network_simplex(cost.view(), a, b)?;
        for &(i, j, f) in &sol.flows {
            matrix[[i, j]] = f;
        }
        iterations = sol.iterations;
    }
    Ok(CouplingPlan::assemble(matrix, a, b, 0.0, cost, iterations, true))
}

/// Permutation matching for uniform square problems: `row -> column`.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    if n != m {
        return invalid(format!("assignment needs a square cost, got {n}x{m}"));
    }
    Ok(assignment::solve_assignment(&cost.view()))
}

pub fn solve_sinkhorn(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<CouplingPlan> {
    check_marginals(cost, a, b)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("sinkhorn needs a finite epsilon > 0, got {epsilon}"));
    }
    let out = sinkhorn::sinkhorn_log(cost.view(), a, b, epsilon, max_iter, tol);
    let mut plan = CouplingPlan::assemble(out.plan, a, b, epsilon, cost, out.iterations, out.converged);
    plan.diagnostics.marginal_error = out.marginal_error.max(plan.diagnostics.marginal_error);
    Ok(plan)
}

/// Solver choice for couplings between (mini)batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OtMethod {
    Exact,
    Sinkhorn {
        epsilon: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-9
}

impl OtMethod {
    pub fn sinkhorn(epsilon: f64) -> Self {
        OtMethod::Sinkhorn {
            epsilon,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn solve(&self, cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<CouplingPlan> {
        match *self {
            OtMethod::Exact => solve_exact(cost, a, b),
            OtMethod::Sinkhorn { epsilon, max_iter, tol } => solve_sinkhorn(cost, a, b, epsilon, max_iter, tol),
        }
    }
}

/// I.i.d. draws of index pairs with probability proportional to plan mass.
pub fn sample_pairs<R: Rng + ?Sized>(plan: &CouplingPlan, batch: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let support = plan.triples();
    if support.is_empty() {
        return invalid("cannot sample from an all-zero plan");
    }
    if batch == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(support.iter().map(|t| t.2))
        .map_err(|e| Error::InvalidInput(format!("plan weights: {e}")))?;
    Ok((0..batch)
        .map(|_| {
            let (i, j, _) = support[dist.sample(rng)];
            (i, j)
        })
        .collect())
}

/// Average of `k` minibatch plans of size `m`, embedded in the full index
/// space. Marginals are generally off for small `k`; the deviation is
/// reported in the diagnostics instead of being enforced.
pub fn minibatch_plan(a: &PointCloud, b: &PointCloud, m: usize, k: usize, method: OtMethod, seed: u64) -> Result<CouplingPlan> {
    a.ensure_same_dim(b)?;
    if m == 0 || m > a.len() || m > b.len() {
        return invalid(format!("minibatch size {m} must be in 1..=min({}, {})", a.len(), b.len()));
    }
    if k == 0 {
        return invalid("need at least one minibatch replicate");
    }
    let mut rng = crate::rng::stream(seed, crate::rng::streams::TRAIN);
    let mut matrix = Array2::<f64>::zeros((a.len(), b.len()));
    let w = vec![1.0 / m as f64; m];
    let mut iterations = 0;
    let mut converged = true;
    for _ in 0..k {
        let ia = a.sample_indices(m, &mut rng);
        let ib = b.sample_indices(m, &mut rng);
        let c = cost_sq_euclidean(&a.select(&ia)?, &b.select(&ib)?)?;
        let sub = method.solve(&c, &w, &w)?;
        iterations += sub.diagnostics.iterations;
        converged &= sub.diagnostics.converged;
        for ((r, s), &v) in sub.matrix.indexed_iter() {
            matrix[[ia[r], ib[s]]] += v / k as f64;
        }
    }
    let full = CostMatrix {
        values: cost::sq_euclidean(a.points().view(), b.points().view()),
        kind: CostKind::SqEuclidean,
    };
    let eps = match method {
        OtMethod::Exact => 0.0,
        OtMethod::Sinkhorn { epsilon, .. } => epsilon,
    };
    Ok(CouplingPlan::assemble(
        matrix,
        a.weights().as_slice().expect("contiguous weights"),
        b.weights().as_slice().expect("contiguous weights"),
        eps,
        &full,
        iterations,
        converged,
    ))
}
