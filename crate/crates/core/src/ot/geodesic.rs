//! Heat-kernel geodesic cost on a kNN graph over the union of two clouds.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cost::sq_dist;
use crate::error::{invalid, Result};

/// Kernel entries are clamped to `[KERNEL_FLOOR, 1]` before the log.
pub const KERNEL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Laplacian {
    /// `I - D^{-1/2} W D^{-1/2}`
    #[default]
    Normalized,
    /// `D - W`
    Unnormalized,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GeodesicReport {
    pub components: usize,
    /// Entries of the returned block whose kernel value fell below the floor.
    pub clamped: usize,
    pub warnings: Vec<String>,
}

/// Symmetric binary kNN adjacency (an edge if either point is among the
/// other's `k` nearest neighbours).
pub fn knn_adjacency(points: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return invalid(format!("need 1 <= k < n for the kNN graph, got k = {k}, n = {n}"));
    }
    let mut w = Array2::<f64>::zeros((n, n));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(points.row(i), points.row(j)), j)));
        // Ties broken by index so the graph is deterministic.
        order.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, j) in &order[..k] {
            w[[i, j]] = 1.0;
            w[[j, i]] = 1.0;
        }
    }
    Ok(w)
}

pub fn laplacian(w: &Array2<f64>, kind: Laplacian) -> DMatrix<f64> {
    let n = w.nrows();
    let deg: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    match kind {
        Laplacian::Unnormalized => DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                deg[i] - w[[i, i]]
            } else {
                -w[[i, j]]
            }
        }),
        Laplacian::Normalized => {
            let s: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
            DMatrix::from_fn(n, n, |i, j| {
                let off = -w[[i, j]] * s[i] * s[j];
                if i == j {
                    1.0 + off
                } else {
                    off
                }
            })
        }
    }
}

/// `exp(-t L)` through the eigendecomposition of the symmetric Laplacian.
pub fn heat_kernel(lap: DMatrix<f64>, t_heat: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(lap);
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * (-t_heat * eig.eigenvalues[j]).exp());
    scaled * q.transpose()
}

fn components(w: &Array2<f64>) -> usize {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if w[[i, j]] != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// Cost `sqrt(-log H_t)` between the rows of `a` and the rows of `b`, with the
/// graph built over their union (rows of `a` first).
pub fn geodesic_cost(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    k: usize,
    t_heat: f64,
    kind: Laplacian,
) -> Result<(Array2<f64>, GeodesicReport)> {
    if a.ncols() != b.ncols() {
        return Err(crate::Error::DimMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if t_heat < 0.0 || !t_heat.is_finite() {
        return invalid("diffusion time must be finite and nonnegative");
    }
    let union = ndarray::concatenate(ndarray::Axis(0), &[a, b]).expect("same width");
    let w = knn_adjacency(union.view(), k)?;
    let h = heat_kernel(laplacian(&w, kind), t_heat);

    let na = a.nrows();
    let mut report = GeodesicReport {
        components: components(&w),
        ..Default::default()
    };
    let cost = Array2::from_shape_fn((na, b.nrows()), |(i, j)| {
        let v = h[(i, na + j)];
        if v < KERNEL_FLOOR {
            report.clamped += 1;
        }
        (-v.clamp(KERNEL_FLOOR, 1.0).ln()).sqrt()
    });
    if report.components > 1 {
        report
            .warnings
            .push(format!("kNN graph has {} connected components", report.components));
    }
    if report.clamped > 0 {
        report.warnings.push(format!(
            "{} kernel entries below {KERNEL_FLOOR:e} were clamped",
            report.clamped
        ));
    }
    Ok((cost, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_node_closed_form() {
        let a = array![[0.0]];
        let b = array![[1.0]];
        let (c, rep) = geodesic_cost(a.view(), b.view(), 1, 0.5, Laplacian::Unnormalized).unwrap();
        // exp(-t [[1,-1],[-1,1]]) has off-diagonal (1 - e^{-2t}) / 2.
        let h = (1.0 - (-1.0f64).exp()) / 2.0;
        assert!((c[[0, 0]] - (-h.ln()).sqrt()).abs() < 1e-12);
        assert!((c[[0, 0]] - 1.0732).abs() < 1e-4);
        assert_eq!(rep.components, 1);
        assert_eq!(rep.clamped, 0);
    }

    #[test]
    fn zero_time_is_identity_and_clamped() {
        let a = array![[0.0], [1.0]];
        let b = array![[2.0]];
        let (c, rep) = geodesic_cost(a.view(), b.view(), 1, 0.0, Laplacian::Normalized).unwrap();
        let top = (-KERNEL_FLOOR.ln()).sqrt();
        assert!(c.iter().all(|&v| (v - top).abs() < 1e-12));
        assert_eq!(rep.clamped, 2);
    }

    #[test]
    fn ring_diagonal_is_row_minimum() {
        // On a regular graph the heat kernel peaks on the diagonal.
        let n = 12;
        let pts = ndarray::Array2::from_shape_fn((n, 2), |(i, c)| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if c == 0 { th.cos() } else { th.sin() }
        });
        let w = knn_adjacency(pts.view(), 2).unwrap();
        for kind in [Laplacian::Normalized, Laplacian::Unnormalized] {
            let h = heat_kernel(laplacian(&w, kind), 0.7);
            for i in 0..n {
                let max = (0..n).map(|j| h[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                assert!((h[(i, i)] - max).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_is_cauchy_schwarz_bounded() {
        let pts = array![[0.0, 0.0], [0.3, 0.1], [1.0, 2.0], [1.1, 2.2], [3.0, 0.0], [0.2, 0.9]];
        let w = knn_adjacency(pts.view(), 2).unwrap();
        let h = heat_kernel(laplacian(&w, Laplacian::Normalized), 1.3);
        for i in 0..6 {
            for j in 0..6 {
                assert!(h[(i, j)] * h[(i, j)] <= h[(i, i)] * h[(j, j)] + 1e-12);
            }
        }
    }

    #[test]
    fn k_too_large_is_error() {
        let a = array![[0.0]];
        let b = array![[1.0]];
        assert!(geodesic_cost(a.view(), b.view(), 2, 1.0, Laplacian::Normalized).is_err());
    }

    #[test]
    fn disconnected_graph_is_flagged() {
        let a = array![[0.0], [0.1]];
        let b = array![[100.0], [100.1]];
        let (_, rep) = geodesic_cost(a.view(), b.view(), 1, 0.01, Laplacian::Normalized).unwrap();
        assert_eq!(rep.components, 2);
        assert!(!rep.warnings.is_empty());
    }
}
