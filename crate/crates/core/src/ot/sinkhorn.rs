//! Entropic OT by log-domain Sinkhorn iterations.

use ndarray::{Array1, Array2, ArrayView2};

use crate::par;

pub struct SinkhornOutput {
    pub plan: Array2<f64>,
    pub iterations: usize,
    /// Max absolute row-marginal violation; columns are exact after each sweep.
    pub marginal_error: f64,
    pub converged: bool,
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `out[i] = log(w[i]) - LSE_j(pot[j] + lk[i, j])`, by rows of `lk`.
fn half_step(lk: &Array2<f64>, pot: &Array1<f64>, logw: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let rows = par::map_chunks(lk.nrows(), 64, |s, e| {
        (s..e)
            .map(|i| {
                let row = lk.row(i);
                logsumexp(row.iter().zip(pot.iter()).map(|(&k, &p)| k + p))
            })
            .collect::<Vec<_>>()
    });
    let lse = Array1::from_iter(rows.into_iter().flatten());
    let out = logw - &lse;
    (out, lse)
}

/// Scaled potentials `alpha = f / eps`, `beta = g / eps`; the plan is
/// `exp(alpha_i + beta_j - C_ij / eps)`.
pub fn sinkhorn_log(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> SinkhornOutput {
    let lk = cost.mapv(|c| -c / epsilon);
    let lkt = lk.t().as_standard_layout().into_owned();
    let la = Array1::from_iter(a.iter().map(|w| w.ln()));
    let lb = Array1::from_iter(b.iter().map(|w| w.ln()));
    let mut alpha = Array1::<f64>::zeros(a.len());
    let mut beta = Array1::<f64>::zeros(b.len());

    let row_error = |alpha: &Array1<f64>, lse: &Array1<f64>| {
        alpha
            .iter()
            .zip(lse)
            .zip(a)
            .map(|((&f, &r), &w)| ((f + r).exp() - w).abs())
            .fold(0.0f64, f64::max)
    };

    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let mut converged = false;
    while iterations < max_iter {
        let (next_alpha, lse) = half_step(&lk, &beta, &la);
        if iterations > 0 {
            err = row_error(&alpha, &lse);
            if err < tol {
                converged = true;
                break;
            }
        }
        alpha = next_alpha;
        beta = half_step(&lkt, &alpha, &lb).0;
        iterations += 1;
    }
    if !converged {
        let (_, lse) = half_step(&lk, &beta, &la);
        err = row_error(&alpha, &lse);
        converged = err < tol;
    }

    let mut plan = lk;
    for ((i, j), p) in plan.indexed_iter_mut() {
        *p = (alpha[i] + beta[j] + *p).exp();
    }
    SinkhornOutput {
        plan,
        iterations,
        marginal_error: err,
        converged,
    }
}
