//! Neural graphical model drift: one small network per output gene.
//!
//! Gene `j` reads the full state through its own first layer `theta1_j`
//! (`genes x hidden`), so row `i` of `theta1_j` carries every dependence of
//! output `j` on input `i`. Its norm serves as the edge score `i -> j`.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::mlp::{selu, selu_grad};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone)]
pub struct NgmDrift {
    genes: usize,
    hidden: usize,
    score_head: bool,
    pub l1_weight: f64,
    params: Vec<f64>,
    version: u64,
}

pub struct NgmCache {
    version: u64,
    chunks: Vec<NgmChunk>,
}

struct NgmChunk {
    x: Array2<f64>,
    /// Pre-activations per gene, each `rows x hidden`.
    z: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    theta1: usize,
    b1: usize,
    theta2: usize,
    b2: usize,
    s_theta2: usize,
    s_b2: usize,
    end: usize,
}

impl NgmDrift {
    pub fn zeros(genes: usize, hidden: usize, score_head: bool) -> Result<Self> {
        if genes == 0 || hidden == 0 {
            return Err(Error::Config("NGM needs genes >= 1 and hidden >= 1".into()));
        }
        let mut net = Self {
            genes,
            hidden,
            score_head,
            l1_weight: 0.0,
            params: Vec::new(),
            version: super::next_version(),
        };
        net.params = vec![0.0; net.offsets().end];
        Ok(net)
    }

    pub fn new<R: Rng + ?Sized>(genes: usize, hidden: usize, score_head: bool, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(genes, hidden, score_head)?;
        let o = net.offsets();
        let b_in = 1.0 / (genes as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        for (k, p) in net.params.iter_mut().enumerate() {
            let bound = if k < o.theta2 { b_in } else { b_hid };
            *p = rng.random_range(-bound..bound);
        }
        Ok(net)
    }

    fn offsets(&self) -> Offsets {
        let (d, h) = (self.genes, self.hidden);
        let theta1 = 0;
        let b1 = theta1 + d * d * h;
        let theta2 = b1 + d * h;
        let b2 = theta2 + d * h;
        let s_theta2 = b2 + d;
        let s_b2 = s_theta2 + if self.score_head { d * h } else { 0 };
        let end = s_b2 + if self.score_head { d } else { 0 };
        Offsets {
            theta1,
            b1,
            theta2,
            b2,
            s_theta2,
            s_b2,
            end,
        }
    }

    pub fn genes(&self) -> usize {
        self.genes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn has_score_head(&self) -> bool {
        self.score_head
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = super::next_version();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let o = self.offsets();
        let mut out = vec![
            ("theta1".to_string(), o.theta1..o.b1),
            ("bias1".to_string(), o.b1..o.theta2),
            ("theta2".to_string(), o.theta2..o.b2),
            ("bias2".to_string(), o.b2..o.s_theta2),
        ];
        if self.score_head {
            out.push(("score_theta2".to_string(), o.s_theta2..o.s_b2));
            out.push(("score_bias2".to_string(), o.s_b2..o.end));
        }
        out
    }

    /// First-layer weights of output gene `j`, `genes x hidden`.
    pub fn theta1(&self, j: usize) -> ArrayView2<'_, f64> {
        let (d, h) = (self.genes, self.hidden);
        let s = self.offsets().theta1 + j * d * h;
        ArrayView2::from_shape((d, h), &self.params[s..s + d * h]).expect("theta1 block")
    }

    /// Mutable first layer of gene `j`.
    pub fn theta1_mut(&mut self, j: usize) -> ndarray::ArrayViewMut2<'_, f64> {
        let (d, h) = (self.genes, self.hidden);
        let s = self.offsets().theta1 + j * d * h;
        ndarray::ArrayViewMut2::from_shape((d, h), &mut self.params_mut()[s..s + d * h]).expect("theta1 block")
    }

    fn slice(&self, start: usize, j: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[start + j * len..start + (j + 1) * len])
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.genes {
            return Err(Error::DimMismatch {
                expected: self.genes,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_chunk(&self, x: ArrayView2<'_, f64>, keep: bool) -> (Array2<f64>, Option<Array2<f64>>, Vec<Array2<f64>>) {
        let o = self.offsets();
        let (n, d, h) = (x.nrows(), self.genes, self.hidden);
        let mut drift = Array2::zeros((n, d));
        let mut score = self.score_head.then(|| Array2::zeros((n, d)));
        let mut zs = Vec::new();
        for j in 0..d {
            let mut z = x.dot(&self.theta1(j));
            z += &self.slice(o.b1, j, h);
            let hj = z.mapv(selu);
            let col = hj.dot(&self.slice(o.theta2, j, h)) + self.params[o.b2 + j];
            drift.column_mut(j).assign(&col);
            if let Some(s) = score.as_mut() {
                let col = hj.dot(&self.slice(o.s_theta2, j, h)) + self.params[o.s_b2 + j];
                s.column_mut(j).assign(&col);
            }
            if keep {
                zs.push(z);
            }
        }
        (drift, score, zs)
    }

    /// Drift and, with a score head, the score output for each row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        self.check_input(&x)?;
        let parts = par::map_chunks(x.nrows(), par::CHUNK_ROWS, |s, e| {
            let (d, sc, _) = self.forward_chunk(x.slice(ndarray::s![s..e, ..]), false);
            (d, sc)
        });
        Ok(self.assemble(x.nrows(), parts))
    }

    fn assemble(&self, n: usize, parts: Vec<(Array2<f64>, Option<Array2<f64>>)>) -> (Array2<f64>, Option<Array2<f64>>) {
        if parts.is_empty() {
            let z = Array2::zeros((n, self.genes));
            return (z.clone(), self.score_head.then_some(z));
        }
        let dv: Vec<_> = parts.iter().map(|p| p.0.view()).collect();
        let drift = ndarray::concatenate(Axis(0), &dv).expect("chunks");
        let score = self.score_head.then(|| {
            let sv: Vec<_> = parts.iter().map(|p| p.1.as_ref().expect("score head").view()).collect();
            ndarray::concatenate(Axis(0), &sv).expect("chunks")
        });
        (drift, score)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Option<Array2<f64>>, NgmCache)> {
        self.check_input(&x)?;
        let parts = par::map_chunks(x.nrows(), par::CHUNK_ROWS, |s, e| {
            let xc = x.slice(ndarray::s![s..e, ..]);
            let (d, sc, z) = self.forward_chunk(xc, true);
            ((d, sc), NgmChunk { x: xc.to_owned(), z })
        });
        let (outs, chunks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let (drift, score) = self.assemble(x.nrows(), outs);
        Ok((
            drift,
            score,
            NgmCache {
                version: self.version,
                chunks,
            },
        ))
    }

    /// Gradient of `sum(up_drift * drift) + sum(up_score * score)`.
    pub fn backward(&self, cache: &NgmCache, up_drift: ArrayView2<'_, f64>, up_score: Option<ArrayView2<'_, f64>>) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let n: usize = cache.chunks.iter().map(|c| c.x.nrows()).sum();
        let shape = (n, self.genes);
        if up_drift.dim() != shape || up_score.is_some_and(|s| s.dim() != shape) {
            return Err(Error::DimMismatch {
                expected: n * self.genes,
                got: up_drift.len(),
            });
        }
        if up_score.is_some() && !self.score_head {
            return Err(Error::Config("score gradient requested without a score head".into()));
        }
        let mut starts = Vec::with_capacity(cache.chunks.len());
        let mut s = 0;
        for c in &cache.chunks {
            starts.push(s);
            s += c.x.nrows();
        }
        let partial = par::map_indices(cache.chunks.len(), |c| {
            let chunk = &cache.chunks[c];
            let r = starts[c]..starts[c] + chunk.x.nrows();
            let gd = up_drift.slice(ndarray::s![r.clone(), ..]);
            let gs = up_score.map(|u| u.slice_move(ndarray::s![r, ..]));
            self.backward_chunk(chunk, gd, gs)
        });
        let mut grad = vec![0.0; self.params.len()];
        for p in partial {
            for (g, v) in grad.iter_mut().zip(p) {
                *g += v;
            }
        }
        Ok(grad)
    }

    fn backward_chunk(&self, c: &NgmChunk, gd: ArrayView2<'_, f64>, gs: Option<ArrayView2<'_, f64>>) -> Vec<f64> {
        let o = self.offsets();
        let (d, h) = (self.genes, self.hidden);
        let mut grad = vec![0.0; self.params.len()];
        for j in 0..d {
            let z = &c.z[j];
            let hj = z.mapv(selu);
            let up = gd.column(j);
            let g2 = hj.t().dot(&up);
            grad[o.theta2 + j * h..o.theta2 + (j + 1) * h].copy_from_slice(g2.as_slice().expect("contiguous"));
            grad[o.b2 + j] = up.sum();
            // dL/dH = up_j theta2_j^T (+ score head)
            let th2 = self.slice(o.theta2, j, h);
            let mut dh = Array2::from_shape_fn(z.dim(), |(r, k)| up[r] * th2[k]);
            if let Some(gs) = gs {
                let us = gs.column(j);
                let g2s = hj.t().dot(&us);
                grad[o.s_theta2 + j * h..o.s_theta2 + (j + 1) * h].copy_from_slice(g2s.as_slice().expect("contiguous"));
                grad[o.s_b2 + j] = us.sum();
                let th2s = self.slice(o.s_theta2, j, h);
                dh.indexed_iter_mut().for_each(|((r, k), v)| *v += us[r] * th2s[k]);
            }
            dh.zip_mut_with(z, |v, &zz| *v *= selu_grad(zz));
            let g1 = c.x.t().dot(&dh);
            let s = o.theta1 + j * d * h;
            grad[s..s + d * h].copy_from_slice(g1.as_standard_layout().as_slice().expect("contiguous"));
            let gb = dh.sum_axis(Axis(0));
            grad[o.b1 + j * h..o.b1 + (j + 1) * h].copy_from_slice(gb.as_slice().expect("contiguous"));
        }
        grad
    }

    /// `scores[i, j]` = L2 norm of row `i` of `theta1_j`, the strength of edge `i -> j`.
    pub fn edge_scores(&self, mask_diag: bool) -> Array2<f64> {
        let d = self.genes;
        Array2::from_shape_fn((d, d), |(i, j)| {
            if mask_diag && i == j {
                0.0
            } else {
                self.theta1(j).row(i).mapv(|v| v * v).sum().sqrt()
            }
        })
    }

    /// `l1_weight * sum |theta1|`
    pub fn l1_penalty(&self) -> f64 {
        let o = self.offsets();
        self.l1_weight * self.params[o.theta1..o.b1].iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Subgradient `l1_weight * sign(theta1)` (zero at zero), over the full parameter vector.
    pub fn l1_grad(&self) -> Vec<f64> {
        let o = self.offsets();
        let mut g = vec![0.0; self.params.len()];
        if self.l1_weight != 0.0 {
            for k in o.theta1..o.b1 {
                let p = self.params[k];
                g[k] = if p > 0.0 {
                    self.l1_weight
                } else if p < 0.0 {
                    -self.l1_weight
                } else {
                    0.0
                };
            }
        }
        g
    }
}
