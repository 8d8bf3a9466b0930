//! Edge-recovery metrics for inferred interaction graphs.

use ndarray::ArrayView2;

use crate::error::{invalid, Error, Result};

/// AUC-ROC and average precision of `scores` against binary `truth`, by an
/// exact sweep over unique thresholds. With `mask_diag` the diagonal is
/// excluded.
pub fn grn_metrics(scores: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>, mask_diag: bool) -> Result<(f64, f64)> {
    if scores.dim() != truth.dim() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: scores.len(),
        });
    }
    let mut items = Vec::new();
    for ((i, j), &s) in scores.indexed_iter() {
        if mask_diag && i == j {
            continue;
        }
        let y = truth[[i, j]];
        if y != 0.0 && y != 1.0 {
            return invalid("truth matrix must be binary");
        }
        if !s.is_finite() {
            return Err(Error::NonFinite("edge score".into()));
        }
        items.push((s, y == 1.0));
    }
    let pos = items.iter().filter(|p| p.1).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return invalid("AUC is undefined when truth has a single class");
    }
    items.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut auc, mut ap) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut k = 0;
    while k < items.len() {
        let s = items[k].0;
        while k < items.len() && items[k].0 == s {
            if items[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        ap += (tpr - prev_tpr) * tp as f64 / (tp + fp) as f64;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok((auc, ap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    #[test]
    fn identities() {
        let truth = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert_eq!(grn_metrics(truth.view(), truth.view(), true).unwrap(), (1.0, 1.0));
        let flat = Array2::from_elem((3, 3), 0.7);
        let (auc, ap) = grn_metrics(flat.view(), truth.view(), true).unwrap();
        assert_eq!(auc, 0.5);
        assert!((ap - 0.5).abs() < 1e-15);
        let inv = truth.mapv(|v| 1.0 - v);
        assert_eq!(grn_metrics(inv.view(), truth.view(), true).unwrap().0, 0.0);
        assert!(grn_metrics(flat.view(), Array2::zeros((3, 3)).view(), true).is_err());
        assert!(grn_metrics(flat.view(), Array2::from_elem((3, 3), 0.5).view(), true).is_err());
    }

    #[test]
    fn matches_pairwise_and_threshold_oracles() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let truth = Array2::from_shape_simple_fn((6, 6), || if r.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
            let scores = Array2::from_shape_simple_fn((6, 6), || (r.random::<f64>() * 4.0).floor());
            let Ok((auc, ap)) = grn_metrics(scores.view(), truth.view(), false) else { continue };
            let pts: Vec<(f64, bool)> = scores.iter().zip(&truth).map(|(&s, &y)| (s, y == 1.0)).collect();
            let (mut wins, mut n) = (0.0, 0.0);
            for p in pts.iter().filter(|p| p.1) {
                for q in pts.iter().filter(|q| !q.1) {
                    n += 1.0;
                    wins += if p.0 > q.0 { 1.0 } else if p.0 == q.0 { 0.5 } else { 0.0 };
                }
            }
            assert!((auc - wins / n).abs() < 1e-12);
            let npos = pts.iter().filter(|p| p.1).count() as f64;
            let mut thresholds: Vec<f64> = pts.iter().map(|p| p.0).collect();
            thresholds.sort_by(|a, b| b.total_cmp(a));
            thresholds.dedup();
            let (mut prev_r, mut want) = (0.0, 0.0);
            for th in thresholds {
                let sel: Vec<_> = pts.iter().filter(|p| p.0 >= th).collect();
                let tp = sel.iter().filter(|p| p.1).count() as f64;
                let rec = tp / npos;
                want += (rec - prev_r) * tp / sel.len() as f64;
                prev_r = rec;
            }
            assert!((ap - want).abs() < 1e-12);
        }
    }
}
