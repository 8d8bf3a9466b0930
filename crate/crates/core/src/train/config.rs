//! Training configuration.

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeSpec, Parametrization, DEFAULT_VAR_FLOOR};
use crate::error::{config, Result};
use crate::ot::Laplacian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Exact,
    Sinkhorn,
    Independent,
    /// Exact OT on the heat-kernel geodesic cost.
    Geodesic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicConfig {
    #[serde(default = "default_knn")]
    pub k: usize,
    #[serde(default = "default_t_heat")]
    pub t_heat: f64,
    #[serde(default)]
    pub laplacian: Laplacian,
}

fn default_knn() -> usize {
    10
}

fn default_t_heat() -> f64 {
    5.0
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            k: default_knn(),
            t_heat: default_t_heat(),
            laplacian: Laplacian::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Separate `(x, t)` MLPs for flow and score; hidden width defaults by dimension.
    Mlp {
        #[serde(default)]
        hidden: Option<usize>,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    /// Per-gene structured drift with a shared first layer for both heads.
    Ngm {
        #[serde(default = "default_ngm_hidden")]
        hidden: usize,
        #[serde(default)]
        l1_weight: f64,
    },
}

fn default_depth() -> usize {
    3
}

fn default_ngm_hidden() -> usize {
    100
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp {
            hidden: None,
            depth: default_depth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Outer loops `L`; inner steps are `steps / L`.
    #[serde(default = "default_outer")]
    pub outer: usize,
    /// Cached endpoint pairs per outer loop, half simulated from each side.
    pub cache: usize,
    #[serde(default = "default_loop_sim_steps")]
    pub sim_steps: usize,
}

fn default_outer() -> usize {
    20
}

fn default_loop_sim_steps() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parametrization: Parametrization,
    #[serde(default = "default_var_floor")]
    pub var_floor: f64,
    /// Train a score network; defaults to `sigma > 0`.
    #[serde(default)]
    pub score: Option<bool>,
    /// Sinkhorn regularization; defaults to `2 sigma^2`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_sinkhorn_iter")]
    pub sinkhorn_max_iter: usize,
    #[serde(default = "default_sinkhorn_tol")]
    pub sinkhorn_tol: f64,
    #[serde(default)]
    pub geodesic: GeodesicConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default, rename = "loop")]
    pub looped: Option<LoopConfig>,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_batch() -> usize {
    512
}
fn default_steps() -> usize {
    10_000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-5
}
fn default_var_floor() -> f64 {
    DEFAULT_VAR_FLOOR
}
fn default_sinkhorn_iter() -> usize {
    1000
}
fn default_sinkhorn_tol() -> f64 {
    1e-9
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return config(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.sigma == 0.0 && self.score == Some(true) {
            return config("a score head needs sigma > 0");
        }
        if self.batch_size == 0 {
            return config("batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return config("lr must be positive");
        }
        if self.coupling == Coupling::Sinkhorn && self.sinkhorn_epsilon() <= 0.0 {
            return config("sinkhorn coupling needs epsilon > 0 (set epsilon or sigma > 0)");
        }
        if let ModelConfig::Mlp { depth, hidden } = self.model {
            if depth == 0 || hidden == Some(0) {
                return config("mlp depth and width must be positive");
            }
        }
        if let Some(l) = &self.looped {
            if l.outer == 0 || l.sim_steps == 0 {
                return config("loop needs outer >= 1 and sim_steps >= 1");
            }
            if l.cache < self.batch_size {
                return config(format!("loop cache {} is smaller than batch_size {}", l.cache, self.batch_size));
            }
            if !self.steps.is_multiple_of(l.outer) {
                return config("steps must be a multiple of the outer loop count");
            }
        }
        Ok(())
    }

    pub fn use_score(&self) -> bool {
        self.score.unwrap_or(self.sigma > 0.0) && self.sigma > 0.0
    }

    pub fn bridge(&self) -> Result<BridgeSpec> {
        BridgeSpec::new(self.sigma)?.with_var_floor(self.var_floor)
    }

    pub fn sinkhorn_epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(2.0 * self.sigma * self.sigma)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
