//! GPU memory partition and the per-iteration token budget derived from it.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;

/// Snapshot of the accelerator memory partition, in memory-units.
///
/// `g_free` is derived, so `g_fixed + kv_active + kv_paused + g_free` equals
/// `g_total` by construction; the engine checks its own token counters
/// against this snapshot and rejects a negative `g_free`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub g_total: f64,
    pub g_fixed: f64,
    /// KV memory of requests that are not paused on a call.
    pub kv_active: f64,
    /// KV memory still resident for requests paused on a call.
    pub kv_paused: f64,
}

impl MemoryLedger {
    pub fn empty(cfg: &SimConfig) -> Self {
        Self::from_tokens(cfg, 0, 0)
    }

    pub fn from_tokens(cfg: &SimConfig, active_tokens: u64, paused_tokens: u64) -> Self {
        MemoryLedger {
            g_total: cfg.g_total,
            g_fixed: cfg.g_fixed(),
            kv_active: active_tokens as f64 * cfg.m_per_token,
            kv_paused: paused_tokens as f64 * cfg.m_per_token,
        }
    }

    /// Unfloored free memory; negative means over-commitment.
    pub fn g_free(&self) -> f64 {
        self.g_total - self.g_fixed - self.kv_active - self.kv_paused
    }

    /// Free memory plus the preemptible share of paused memory.
    pub fn g_avail(&self, gamma: f64) -> f64 {
        self.g_free().max(0.0) + gamma * self.kv_paused
    }

    /// `g_fixed + kv_active + kv_paused + g_free - g_total`.
    pub fn conservation_residual(&self) -> f64 {
        self.g_fixed + self.kv_active + self.kv_paused + self.g_free() - self.g_total
    }
}

/// `clamp(floor(g_avail / M), floor(beta_low * target_max), floor(beta_high * target_max))`.
pub fn compute_token_budget(ledger: &MemoryLedger, cfg: &SimConfig) -> u64 {
    let raw = libm::floor(ledger.g_avail(cfg.gamma) / cfg.m_per_token);
    let raw = if raw > 0.0 { raw as u64 } else { 0 };
    let (lo, hi) = cfg.budget_bounds();
    raw.clamp(lo, hi.max(lo))
}

/// How the engine sets the per-iteration token cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Recomputed every iteration from the memory ledger.
    Dynamic,
    /// A fixed cap.
    Static(u64),
}

impl BudgetMode {
    pub fn budget(&self, ledger: &MemoryLedger, cfg: &SimConfig) -> u64 {
        match *self {
            BudgetMode::Dynamic => compute_token_budget(ledger, cfg),
            BudgetMode::Static(b) => b,
        }
    }
}
