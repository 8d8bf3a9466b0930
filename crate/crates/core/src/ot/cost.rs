//! Pairwise ground costs between point sets.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::par;

#[inline]
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `out[i, j] = f(a_i, b_j)`, rows filled in parallel chunks.
pub fn pairwise<F>(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, f: F) -> Array2<f64>
where
    F: Fn(ArrayView1<'_, f64>, ArrayView1<'_, f64>) -> f64 + Sync + Send,
{
    let m = b.nrows();
    let blocks = par::map_chunks(a.nrows(), 32, |s, e| {
        let mut out = Vec::with_capacity((e - s) * m);
        for i in s..e {
            let ai = a.row(i);
            out.extend(b.rows().into_iter().map(|bj| f(ai, bj)));
        }
        out
    });
    let flat: Vec<f64> = blocks.into_iter().flatten().collect();
    Array2::from_shape_vec((a.nrows(), m), flat).expect("pairwise shape")
}

pub fn sq_euclidean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    pairwise(a, b, sq_dist)
}

pub fn euclidean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    pairwise(a, b, |x, y| sq_dist(x, y).sqrt())
}
