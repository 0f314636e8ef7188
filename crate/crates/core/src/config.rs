//! System constants shared by the cost model, the budget and the engine.

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All system constants of one simulated serving instance.
///
/// Memory is expressed in abstract memory-units; `m_per_token` converts
/// tokens of KV context into those units. Token rates are per forward
/// iteration and times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Memory footprint of one token of KV context.
    pub m_per_token: f64,
    /// Duration of one forward iteration.
    pub t_fwd: f64,
    /// Token capacity of one forward iteration.
    pub n_fwd_max: u64,
    /// Tokens moved GPU to host per iteration.
    pub s_fwd_out: u64,
    /// Tokens moved host to GPU per iteration.
    pub s_fwd_in: u64,
    pub g_total: f64,
    pub g_model: f64,
    pub g_runtime: f64,
    pub g_safety: f64,
    /// Fraction of paused KV memory that active requests may preempt.
    pub gamma: f64,
    /// Anti-starvation coefficient, value-units per second of waiting.
    pub alpha: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    /// Reference token-budget upper limit (picked by offline profiling).
    pub target_max: u64,
    /// TTFT threshold in seconds.
    pub slo_ttft: f64,
    /// Normalized latency must stay below `slo_norm_mult * t_fwd`.
    pub slo_norm_mult: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            m_per_token: 1.0,
            t_fwd: 0.03,
            n_fwd_max: 512,
            s_fwd_out: 1024,
            s_fwd_in: 1024,
            g_total: 24_000.0,
            g_model: 12_000.0,
            g_runtime: 1_500.0,
            g_safety: 500.0,
            gamma: 1.0,
            alpha: 0.1,
            beta_low: 0.5,
            beta_high: 1.5,
            target_max: 512,
            slo_ttft: 1.0,
            slo_norm_mult: 10.0,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig {
            field,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

fn nonzero(field: &'static str, v: u64) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig {
            field,
            reason: "must be >= 1".into(),
        })
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        positive("m_per_token", self.m_per_token)?;
        positive("t_fwd", self.t_fwd)?;
        nonzero("n_fwd_max", self.n_fwd_max)?;
        nonzero("s_fwd_out", self.s_fwd_out)?;
        nonzero("s_fwd_in", self.s_fwd_in)?;
        positive("g_total", self.g_total)?;
        positive("g_model", self.g_model)?;
        positive("g_runtime", self.g_runtime)?;
        positive("g_safety", self.g_safety)?;
        positive("beta_low", self.beta_low)?;
        positive("beta_high", self.beta_high)?;
        nonzero("target_max", self.target_max)?;
        positive("slo_ttft", self.slo_ttft)?;
        positive("slo_norm_mult", self.slo_norm_mult)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig {
                field: "gamma",
                reason: format!("must lie in [0, 1], got {}", self.gamma),
            });
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig {
                field: "alpha",
                reason: format!("must be finite and >= 0, got {}", self.alpha),
            });
        }
        if self.beta_low > 1.0 || self.beta_high < 1.0 {
            return Err(Error::InvalidConfig {
                field: "beta_low",
                reason: format!(
                    "need beta_low <= 1 <= beta_high, got {} and {}",
                    self.beta_low, self.beta_high
                ),
            });
        }
        if self.g_fixed() >= self.g_total {
            return Err(Error::InvalidConfig {
                field: "g_total",
                reason: format!(
                    "g_model + g_runtime + g_safety = {} leaves no KV memory in g_total = {}",
                    self.g_fixed(),
                    self.g_total
                ),
            });
        }
        if self.kv_capacity_tokens() == 0 {
            return Err(Error::InvalidConfig {
                field: "m_per_token",
                reason: "KV memory cannot hold a single token".into(),
            });
        }
        Ok(())
    }

    pub fn g_fixed(&self) -> f64 {
        self.g_model + self.g_runtime + self.g_safety
    }

    /// Whole tokens of KV context that fit beside the fixed partition.
    pub fn kv_capacity_tokens(&self) -> u64 {
        libm::floor((self.g_total - self.g_fixed()) / self.m_per_token) as u64
    }

    /// Normalized-latency SLO threshold in seconds per token.
    pub fn slo_norm_latency(&self) -> f64 {
        self.slo_norm_mult * self.t_fwd
    }

    /// `[floor(beta_low * target_max), floor(beta_high * target_max)]`.
    pub fn budget_bounds(&self) -> (u64, u64) {
        let t = self.target_max as f64;
        (
            libm::floor(self.beta_low * t) as u64,
            libm::floor(self.beta_high * t) as u64,
        )
    }
}
