//! The trained object: flow and score networks plus their optimizer state.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use crate::bridge::{with_time, BridgeBatch, Parametrization};
use crate::error::{Error, Result};
use crate::net::{mlp, read_checkpoint, write_checkpoint, AdamW, Architecture, CheckpointHeader, Mlp, NgmDrift};
use crate::rng::{stream, streams};
use crate::sim::Dynamics;

#[derive(Debug, Clone)]
pub enum Nets {
    Mlp { flow: Mlp, score: Option<Mlp> },
    Ngm(NgmDrift),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub flow_loss: f64,
    pub score_loss: f64,
    pub total: f64,
    /// Seconds since training started.
    pub wallclock: f64,
}

/// Parameter gradients, one vector per network (flow, then score).
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct ModelPair {
    pub nets: Nets,
    pub sigma: f64,
    pub parametrization: Parametrization,
    dim: usize,
    time_span: f64,
    pub seed: u64,
    pub step: u64,
    opts: Vec<AdamW>,
}

impl ModelPair {
    pub fn new(dim: usize, time_span: f64, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let with_score = cfg.use_score();
        let nets = match &cfg.model {
            ModelConfig::Mlp { hidden, depth } => {
                let h = hidden.unwrap_or_else(|| mlp::default_width(dim));
                let mut widths = vec![dim + 1];
                widths.extend(std::iter::repeat_n(h, *depth));
                widths.push(dim);
                let flow = Mlp::new(&widths, &mut stream(cfg.seed, streams::INIT_FLOW))?;
                let score = if with_score {
                    Some(Mlp::new(&widths, &mut stream(cfg.seed, streams::INIT_SCORE))?)
                } else {
                    None
                };
                Nets::Mlp { flow, score }
            }
            ModelConfig::Ngm { hidden, l1_weight } => {
                let mut net = NgmDrift::new(dim, *hidden, with_score, &mut stream(cfg.seed, streams::INIT_FLOW))?;
                net.l1_weight = *l1_weight;
                Nets::Ngm(net)
            }
        };
        let mut pair = Self {
            nets,
            sigma: cfg.sigma,
            parametrization: cfg.parametrization,
            dim,
            time_span,
            seed: cfg.seed,
            step: 0,
            opts: Vec::new(),
        };
        pair.opts = pair
            .param_sizes()
            .into_iter()
            .map(|n| AdamW::new(n, cfg.lr, cfg.weight_decay))
            .collect();
        Ok(pair)
    }

    fn param_sizes(&self) -> Vec<usize> {
        match &self.nets {
            Nets::Mlp { flow, score } => {
                let mut v = vec![flow.n_params()];
                if let Some(s) = score {
                    v.push(s.n_params());
                }
                v
            }
            Nets::Ngm(n) => vec![n.n_params()],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// All parameters, flow network first.
    pub fn params(&self) -> Vec<f64> {
        match &self.nets {
            Nets::Mlp { flow, score } => {
                let mut p = flow.params().to_vec();
                if let Some(s) = score {
                    p.extend_from_slice(s.params());
                }
                p
            }
            Nets::Ngm(n) => n.params().to_vec(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        match &mut self.nets {
            Nets::Mlp { flow, score } => {
                let n = flow.n_params();
                flow.set_params(&params[..n])?;
                if let Some(s) = score {
                    s.set_params(&params[n..])?;
                }
            }
            Nets::Ngm(net) => net.set_params(params)?,
        }
        Ok(())
    }

    pub fn ngm(&self) -> Option<&NgmDrift> {
        match &self.nets {
            Nets::Ngm(n) => Some(n),
            _ => None,
        }
    }

    pub fn with_time_span(mut self, span: f64) -> Self {
        self.time_span = span;
        self
    }

    /// Raw network outputs `(v, s)` at per-row times `t`.
    pub fn outputs(&self, t: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        if x.ncols() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        match &self.nets {
            Nets::Mlp { flow, score } => {
                let inp = with_time(x, t, 0.0);
                let v = flow.forward(inp.view())?;
                let s = score.as_ref().map(|s| s.forward(inp.view())).transpose()?;
                Ok((v, s))
            }
            Nets::Ngm(n) => n.forward(x),
        }
    }

    /// Losses and gradients for one batch. `t_input` is the time fed to the
    /// networks (the batch's local time shifted by its segment index).
    pub fn loss_step(&self, batch: &BridgeBatch, t_input: ArrayView1<'_, f64>) -> Result<(LossReport, Gradients)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for (i, row) in batch.flow_target.rows().into_iter().enumerate() {
            if row.iter().chain(batch.noise.row(i).iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("regression target at t = {}", batch.t[i])));
            }
        }
        let with_score = self.has_score();
        if with_score && batch.lambda.len() != n {
            return Err(Error::InvalidInput("score training needs lambda weights (sigma > 0)".into()));
        }
        let inv_n = 1.0 / n as f64;

        let flow_terms = |v: &Array2<f64>| {
            let r = v - &batch.flow_target;
            let loss = r.iter().map(|e| e * e).sum::<f64>() * inv_n;
            (loss, r * (2.0 * inv_n))
        };
        let score_terms = |s: &Array2<f64>| {
            let lam = batch.lambda.view().insert_axis(ndarray::Axis(1));
            let r = s * &lam + &batch.noise;
            let loss = r.iter().map(|e| e * e).sum::<f64>() * inv_n;
            (loss, r * lam * (2.0 * inv_n))
        };

        let (flow_loss, score_loss, grads) = match &self.nets {
            Nets::Mlp { flow, score } => {
                let inp = with_time(batch.x.view(), t_input, 0.0);
                let (v, cache) = flow.forward_cached(inp.view())?;
                let (fl, up) = flow_terms(&v);
                let mut grads = vec![flow.backward(&cache, up.view())?];
                let mut sl = 0.0;
                if let Some(sn) = score {
                    let (s, cache) = sn.forward_cached(inp.view())?;
                    let (l, up) = score_terms(&s);
                    sl = l;
                    grads.push(sn.backward(&cache, up.view())?);
                }
                (fl, sl, grads)
            }
            Nets::Ngm(net) => {
                let (v, s, cache) = net.forward_cached(batch.x.view())?;
                let (fl, up) = flow_terms(&v);
                let (sl, ups) = match &s {
                    Some(s) => {
                        let (l, u) = score_terms(s);
                        (l, Some(u))
                    }
                    None => (0.0, None),
                };
                let mut g = net.backward(&cache, up.view(), ups.as_ref().map(|u| u.view()))?;
                for (g, l1) in g.iter_mut().zip(net.l1_grad()) {
                    *g += l1;
                }
                (fl, sl, vec![g])
            }
        };
        let report = LossReport {
            step: self.step as usize,
            flow_loss,
            score_loss,
            total: flow_loss + score_loss,
            wallclock: 0.0,
        };
        Ok((report, Gradients(grads)))
    }

    /// AdamW update of every network.
    pub fn apply(&mut self, grads: &Gradients) -> Result<()> {
        if grads.0.len() != self.opts.len() {
            return Err(Error::InvalidInput("gradient count does not match networks".into()));
        }
        match &mut self.nets {
            Nets::Mlp { flow, score } => {
                let blocks = flow.blocks();
                self.opts[0].update(flow.params_mut(), &grads.0[0], &blocks)?;
                if let Some(s) = score {
                    let blocks: Vec<_> = s.blocks().into_iter().map(|(n, r)| (format!("score.{n}"), r)).collect();
                    self.opts[1].update(s.params_mut(), &grads.0[1], &blocks)?;
                }
            }
            Nets::Ngm(net) => {
                let blocks = net.blocks();
                self.opts[0].update(net.params_mut(), &grads.0[0], &blocks)?;
            }
        }
        self.step += 1;
        Ok(())
    }

    fn time_column(&self, t: f64, n: usize) -> Array1<f64> {
        Array1::from_elem(n, t)
    }

    pub fn architecture(&self) -> Architecture {
        match &self.nets {
            Nets::Mlp { flow, score } => Architecture::Mlp {
                dim: self.dim,
                flow_widths: flow.widths().to_vec(),
                score_widths: score.as_ref().map(|s| s.widths().to_vec()),
            },
            Nets::Ngm(n) => Architecture::Ngm {
                genes: n.genes(),
                hidden: n.hidden(),
                score_head: n.has_score_head(),
                l1_weight: n.l1_weight,
            },
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let params = self.params();
        let header = CheckpointHeader {
            architecture: self.architecture(),
            seed: self.seed,
            step: self.step,
            sigma: self.sigma,
            parametrization: self.parametrization,
            time_span: self.time_span,
            n_params: params.len(),
        };
        write_checkpoint(path, &header, &params)
    }

    /// Restores networks for inference; optimizer state starts fresh.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, params) = read_checkpoint(path)?;
        let (nets, dim) = match &h.architecture {
            Architecture::Mlp {
                dim,
                flow_widths,
                score_widths,
            } => (
                Nets::Mlp {
                    flow: Mlp::zeros(flow_widths)?,
                    score: score_widths.as_ref().map(|w| Mlp::zeros(w)).transpose()?,
                },
                *dim,
            ),
            Architecture::Ngm {
                genes,
                hidden,
                score_head,
                l1_weight,
            } => {
                let mut n = NgmDrift::zeros(*genes, *hidden, *score_head)?;
                n.l1_weight = *l1_weight;
                (Nets::Ngm(n), *genes)
            }
        };
        let mut pair = Self {
            nets,
            sigma: h.sigma,
            parametrization: h.parametrization,
            dim,
            time_span: h.time_span,
            seed: h.seed,
            step: h.step,
            opts: Vec::new(),
        };
        pair.set_params(&params)?;
        pair.opts = pair.param_sizes().into_iter().map(AdamW::with_defaults).collect();
        Ok(pair)
    }
}

impl Dynamics for ModelPair {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match &self.nets {
            Nets::Mlp { flow, .. } => {
                let tc = self.time_column(t, x.nrows());
                flow.forward(with_time(x, tc.view(), 0.0).view())
            }
            Nets::Ngm(n) => {
                if x.ncols() != self.dim {
                    return Err(Error::DimMismatch {
                        expected: self.dim,
                        got: x.ncols(),
                    });
                }
                Ok(n.forward(x)?.0)
            }
        }
    }

    fn score(&self, t: f64, x: ArrayView2<'_, f64>) -> Result<Option<Array2<f64>>> {
        if !self.has_score() {
            return Ok(None);
        }
        let scale = self.parametrization.score_scale(self.sigma);
        let raw = match &self.nets {
            Nets::Mlp { score, .. } => {
                let tc = self.time_column(t, x.nrows());
                score.as_ref().expect("score net").forward(with_time(x, tc.view(), 0.0).view())?
            }
            Nets::Ngm(n) => n.forward(x)?.1.expect("score head"),
        };
        Ok(Some(raw * scale))
    }

    fn has_score(&self) -> bool {
        match &self.nets {
            Nets::Mlp { score, .. } => score.is_some(),
            Nets::Ngm(n) => n.has_score_head(),
        }
    }

    fn time_span(&self) -> f64 {
        self.time_span
    }
}
