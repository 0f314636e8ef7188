//! Cost arithmetic behind context-handling and request ranking.
//!
//! Everything here is a pure function of its arguments. Token counts are
//! integers; memory and time are `f64`. Values are in memory·time units and
//! lower values are scheduled sooner.

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{invalid, Result};

/// What happens to a request's KV context while its external call runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Context stays resident on the accelerator.
    Preserve,
    /// Context is dropped and recomputed when the call returns.
    Discard,
    /// Context moves to host memory and back.
    Swap,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Preserve, Policy::Discard, Policy::Swap];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Preserve => "preserve",
            Policy::Discard => "discard",
            Policy::Swap => "swap",
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            Policy::Preserve => 0,
            Policy::Discard => 1,
            Policy::Swap => 2,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-phase system cost. Components not charged under the chosen policy
/// are left at zero, so [`CostBreakdown::total`] equals the value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub prefill: f64,
    pub decode: f64,
    pub api_residency: f64,
    pub swap_out: f64,
    pub swap_in: f64,
    pub recompute: f64,
    pub pro_api: f64,
    pub decode_post: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.prefill
            + self.decode
            + self.api_residency
            + self.swap_out
            + self.swap_in
            + self.recompute
            + self.pro_api
            + self.decode_post
    }
}

fn check_seconds(op: &'static str, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(
            op,
            alloc::format!("{name} must be finite and >= 0, got {v}"),
        ))
    }
}

/// Iteration-time service model: `i_t * (gen_len + api_ret_len / n_max)`.
///
/// Decoding costs one iteration per token while returned API tokens are
/// absorbed `n_max` at a time. The result is continuous (no ceiling).
pub fn service_time(gen_len: u64, api_ret_len: u64, n_max: u64, i_t: f64) -> Result<f64> {
    const OP: &str = "service_time";
    if n_max == 0 {
        return Err(invalid(OP, "n_max must be >= 1"));
    }
    if !(i_t.is_finite() && i_t > 0.0) {
        return Err(invalid(OP, alloc::format!("i_t must be > 0, got {i_t}")));
    }
    // One rounding for the whole fraction keeps equal services bit-identical.
    let numer = gen_len as u128 * n_max as u128 + api_ret_len as u128;
    Ok(i_t * (numer as f64 / n_max as f64))
}

/// True iff request 1 takes longer to serve than request 2, expressed on
/// total lengths `(T_l, A_l)` where `A_l` is the API-return share of `T_l`:
/// `T_l2 - T_l1 < (1 - 1/n_max) * (A_l2 - A_l1)`.
///
/// Evaluated exactly in integer arithmetic.
pub fn earlier_finish_condition(req1: (u64, u64), req2: (u64, u64), n_max: u64) -> Result<bool> {
    const OP: &str = "earlier_finish_condition";
    if n_max == 0 {
        return Err(invalid(OP, "n_max must be >= 1"));
    }
    for (t_l, a_l) in [req1, req2] {
        if a_l > t_l {
            return Err(invalid(
                OP,
                alloc::format!("API return length {a_l} exceeds total length {t_l}"),
            ));
        }
    }
    let n = n_max as i128;
    let dt = req2.0 as i128 - req1.0 as i128;
    let da = req2.1 as i128 - req1.1 as i128;
    Ok(dt * n < (n - 1) * da)
}

/// Wall time to recompute `ctx` tokens of context: whole iterations.
pub fn recompute_time(ctx: u64, cfg: &SimConfig) -> f64 {
    ctx.div_ceil(cfg.n_fwd_max) as f64 * cfg.t_fwd
}

/// Wall time to move `ctx` tokens off the accelerator.
pub fn swap_time(ctx: u64, cfg: &SimConfig) -> f64 {
    ctx as f64 / cfg.s_fwd_out as f64 * cfg.t_fwd
}

/// Memory wasted while a call of length `t_int` is in flight.
///
/// `ctx_other` is the context held by the other running requests; it stalls
/// while a discarded context is recomputed.
pub fn waste_for_policy(
    policy: Policy,
    ctx_len: u64,
    t_int: f64,
    ctx_other: u64,
    cfg: &SimConfig,
) -> Result<f64> {
    check_seconds("waste_for_policy", "t_int", t_int)?;
    let m = cfg.m_per_token;
    Ok(match policy {
        Policy::Preserve => t_int * ctx_len as f64 * m,
        Policy::Discard => {
            let t_rc = recompute_time(ctx_len, cfg);
            t_rc * ctx_len as f64 * m + t_rc * ctx_other as f64 * m
        }
        Policy::Swap => 2.0 * swap_time(ctx_len, cfg) * cfg.n_fwd_max as f64 * m,
    })
}

/// Picks the policy with least waste. Ties go Preserve, then Swap, then Discard.
pub fn select_policy(
    ctx_len: u64,
    t_int_pred: f64,
    ctx_other: u64,
    cfg: &SimConfig,
) -> Result<(Policy, f64)> {
    let mut best = (
        Policy::Preserve,
        waste_for_policy(Policy::Preserve, ctx_len, t_int_pred, ctx_other, cfg)?,
    );
    for policy in [Policy::Swap, Policy::Discard] {
        let w = waste_for_policy(policy, ctx_len, t_int_pred, ctx_other, cfg)?;
        if w < best.1 {
            best = (policy, w);
        }
    }
    Ok(best)
}

/// Prediction-based value of a request that has not yet made its first call.
pub fn stage1_value(
    l_pre: u64,
    l_out_pred: u64,
    t_api_pred: f64,
    policy: Policy,
    cfg: &SimConfig,
) -> Result<(f64, CostBreakdown)> {
    const OP: &str = "stage1_value";
    if l_pre == 0 {
        return Err(invalid(OP, "l_pre must be >= 1"));
    }
    check_seconds(OP, "t_api_pred", t_api_pred)?;
    let m = cfg.m_per_token;
    let t = cfg.t_fwd;
    let pre = l_pre as f64;
    let out = l_out_pred as f64;
    let ctx = pre + out;

    let mut cost = CostBreakdown {
        prefill: 0.5 * m * pre * pre / cfg.n_fwd_max as f64 * t,
        decode: m * t * (pre * out + 0.5 * out * out),
        ..CostBreakdown::default()
    };
    match policy {
        Policy::Preserve => cost.api_residency = m * ctx * t_api_pred,
        Policy::Discard => {}
        Policy::Swap => cost.swap_out = 0.5 * m * ctx * ctx / cfg.s_fwd_out as f64 * t,
    }
    Ok((cost.total(), cost))
}

/// Runtime-corrected value once a call has returned `l_ret_actual` tokens.
///
/// `policy_used` is the policy that was actually applied during the call.
pub fn stage2_value(
    l_total: u64,
    l_ret_actual: u64,
    l_out_next_pred: u64,
    policy_used: Policy,
    cfg: &SimConfig,
) -> Result<(f64, CostBreakdown)> {
    if l_total == 0 {
        return Err(invalid("stage2_value", "l_total must be >= 1"));
    }
    let m = cfg.m_per_token;
    let t = cfg.t_fwd;
    let total = l_total as f64;
    let ret = l_ret_actual as f64;
    let next = l_out_next_pred as f64;

    let mut cost = CostBreakdown {
        pro_api: m * (t / cfg.n_fwd_max as f64) * (total * ret + 0.5 * ret * ret),
        decode_post: m * t * ((total + ret) * next + 0.5 * next * next),
        ..CostBreakdown::default()
    };
    match policy_used {
        Policy::Preserve => {}
        Policy::Swap => cost.swap_in = 0.5 * m * total * total / cfg.s_fwd_in as f64 * t,
        Policy::Discard => cost.recompute = 0.5 * m * total * total / cfg.n_fwd_max as f64 * t,
    }
    Ok((cost.total(), cost))
}

/// Extends a stage-two value with the handling cost of the next call.
#[allow(clippy::too_many_arguments)]
pub fn final_value(
    v2: f64,
    l_total: u64,
    l_ret_actual: u64,
    l_out_next_pred: u64,
    next_policy: Policy,
    t_api_next_pred: f64,
    cfg: &SimConfig,
) -> Result<f64> {
    const OP: &str = "final_value";
    check_seconds(OP, "v2", v2)?;
    check_seconds(OP, "t_api_next_pred", t_api_next_pred)?;
    let m = cfg.m_per_token;
    let ctx = (l_total + l_ret_actual + l_out_next_pred) as f64;
    Ok(match next_policy {
        Policy::Swap => v2 + 0.5 * m * ctx * ctx / cfg.s_fwd_out as f64 * cfg.t_fwd,
        Policy::Preserve => v2 + m * ctx * t_api_next_pred,
        Policy::Discard => v2,
    })
}

/// Ranking score, ascending. Waiting lowers the score so long waiters move up.
pub fn priority_score(v_final: f64, wait: f64, alpha: f64) -> Result<f64> {
    const OP: &str = "priority_score";
    check_seconds(OP, "wait", wait)?;
    check_seconds(OP, "alpha", alpha)?;
    Ok(v_final - alpha * wait)
}
