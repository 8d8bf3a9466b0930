//! Fully connected SELU networks with hand-written reverse mode.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::next_version;
use crate::par;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

/// Hidden width used for a state dimension `d`.
pub fn default_width(d: usize) -> usize {
    if d >= 512 {
        256
    } else {
        64
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Weights are stored per layer as a row-major `fan_in x fan_out` block
/// followed by the bias, all in one flat vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<f64>,
    version: u64,
}

/// Activations of one forward pass, tied to the parameter version that made them.
pub struct MlpCache {
    version: u64,
    chunks: Vec<ChunkCache>,
}

struct ChunkCache {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub widths: Vec<usize>,
}

impl Mlp {
    /// All-zero network with the given layer widths (input first, output last).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            params: vec![0.0; off],
            version: next_version(),
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization of weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for l in net.layers.clone() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for p in &mut net.params[l.w..l.b + l.fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// `(t, x) -> out` network with three hidden layers.
    pub fn for_state<R: Rng + ?Sized>(d: usize, out: usize, rng: &mut R) -> Result<Self> {
        let h = default_width(d);
        Self::new(&[d + 1, h, h, h, out], rng)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            widths: self.widths.clone(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = next_version();
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

    /// Named parameter blocks, for diagnostics.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.w..l.b));
            out.push((format!("layer{i}.bias"), l.b..l.b + l.fan_out));
        }
        out
    }

    fn weight(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.fan_in, l.fan_out), &self.params[l.w..l.b]).expect("layer block")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.b..l.b + l.fan_out])
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::DimMismatch {
                expected: self.n_inputs(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_chunk(&self, x: ArrayView2<'_, f64>, keep: bool) -> (Array2<f64>, Option<ChunkCache>) {
        let last = self.layers.len() - 1;
        let mut acts = Vec::new();
        let mut pre = Vec::new();
        let mut a = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&self.weight(l));
            z += &self.bias(l);
            if keep {
                acts.push(a);
            }
            if i == last {
                a = z;
            } else {
                let h = z.mapv(selu);
                if keep {
                    pre.push(z);
                }
                a = h;
            }
        }
        let cache = keep.then(|| ChunkCache { acts, pre });
        (a, cache)
    }

    fn assemble(&self, n: usize, parts: Vec<Array2<f64>>) -> Array2<f64> {
        if parts.is_empty() {
            return Array2::zeros((n, self.n_outputs()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("chunk widths agree")
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let n = x.nrows();
        let parts = par::map_chunks(n, par::CHUNK_ROWS, |s, e| {
            self.forward_chunk(x.slice(ndarray::s![s..e, ..]), false).0
        });
        Ok(self.assemble(n, parts))
    }

    /// Forward pass that keeps the activations needed by [`Mlp::backward`].
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&x)?;
        let n = x.nrows();
        let parts = par::map_chunks(n, par::CHUNK_ROWS, |s, e| {
            let (y, c) = self.forward_chunk(x.slice(ndarray::s![s..e, ..]), true);
            (y, c.expect("cache requested"))
        });
        let (ys, chunks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        Ok((
            self.assemble(n, ys),
            MlpCache {
                version: self.version,
                chunks,
            },
        ))
    }

    /// Gradient of `sum(upstream * output)` with respect to the parameters.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let n: usize = cache.chunks.iter().map(|c| c.acts[0].nrows()).sum();
        if upstream.dim() != (n, self.n_outputs()) {
            return Err(Error::DimMismatch {
                expected: n * self.n_outputs(),
                got: upstream.len(),
            });
        }
        let starts: Vec<usize> = cache
            .chunks
            .iter()
            .scan(0, |s, c| {
                let out = *s;
                *s += c.acts[0].nrows();
                Some(out)
            })
            .collect();
        let partial = par::map_indices(cache.chunks.len(), |c| {
            let chunk = &cache.chunks[c];
            let rows = chunk.acts[0].nrows();
            let g = upstream.slice(ndarray::s![starts[c]..starts[c] + rows, ..]);
            self.backward_chunk(chunk, g)
        });
        let mut grad = vec![0.0; self.params.len()];
        for p in partial {
            for (g, v) in grad.iter_mut().zip(p) {
                *g += v;
            }
        }
        Ok(grad)
    }

    fn backward_chunk(&self, cache: &ChunkCache, upstream: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &cache.acts[i];
            let gw = a.t().dot(&delta);
            grad[l.w..l.b].copy_from_slice(gw.as_standard_layout().as_slice().expect("contiguous"));
            let gb = delta.sum_axis(Axis(0));
            grad[l.b..l.b + l.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            if i > 0 {
                let mut back = delta.dot(&self.weight(l).t());
                back.zip_mut_with(&cache.pre[i - 1], |d, &z| *d *= selu_grad(z));
                delta = back;
            }
        }
        grad
    }
}
