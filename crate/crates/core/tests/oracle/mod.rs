//! Straight transcription of the cost formulas, kept apart from the crate so
//! the two can be compared. Plain arguments only; no shared helpers.

#![allow(dead_code)]

pub mod check;

#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub m: f64,
    pub t_fwd: f64,
    pub n_fwd: f64,
    pub s_out: f64,
    pub s_in: f64,
}

pub fn service_time(gen_len: f64, ret_len: f64, n_max: f64, i_t: f64) -> f64 {
    i_t * gen_len + i_t * ret_len / n_max
}

pub fn earlier_finish(t1: f64, a1: f64, t2: f64, a2: f64, n_max: f64) -> bool {
    (t2 - t1) * n_max < (n_max - 1.0) * (a2 - a1)
}

fn whole_iterations(tokens: f64, n_fwd: f64) -> f64 {
    (tokens / n_fwd).ceil()
}

pub fn waste_preserve(p: &Params, ctx: f64, t_int: f64) -> f64 {
    p.m * ctx * t_int
}

pub fn waste_discard(p: &Params, ctx: f64, other: f64) -> f64 {
    let t_rc = whole_iterations(ctx, p.n_fwd) * p.t_fwd;
    p.m * t_rc * (ctx + other)
}

pub fn waste_swap(p: &Params, ctx: f64) -> f64 {
    let t_sw = ctx * p.t_fwd / p.s_out;
    2.0 * p.m * t_sw * p.n_fwd
}

/// 0 = preserve, 1 = discard, 2 = swap.
pub fn stage1(p: &Params, l_pre: f64, l_out: f64, t_api: f64, policy: u8) -> f64 {
    let prefill = p.m * p.t_fwd * l_pre * l_pre / (2.0 * p.n_fwd);
    let decode = p.m * p.t_fwd * l_pre * l_out + p.m * p.t_fwd * l_out * l_out / 2.0;
    let ctx = l_pre + l_out;
    match policy {
        0 => prefill + decode + p.m * ctx * t_api,
        1 => prefill + decode,
        _ => prefill + decode + p.m * p.t_fwd * ctx * ctx / (2.0 * p.s_out),
    }
}

pub fn stage2(p: &Params, l_total: f64, l_ret: f64, l_next: f64, policy: u8) -> f64 {
    let pro_api = p.m * p.t_fwd * (l_total * l_ret + l_ret * l_ret / 2.0) / p.n_fwd;
    let decode_post = p.m * p.t_fwd * ((l_total + l_ret) * l_next + l_next * l_next / 2.0);
    let handling = match policy {
        0 => 0.0,
        1 => p.m * p.t_fwd * l_total * l_total / (2.0 * p.n_fwd),
        _ => p.m * p.t_fwd * l_total * l_total / (2.0 * p.s_in),
    };
    handling + pro_api + decode_post
}

pub fn final_value(
    p: &Params,
    v2: f64,
    l_total: f64,
    l_ret: f64,
    l_next: f64,
    policy: u8,
    t_next: f64,
) -> f64 {
    let ctx = l_total + l_ret + l_next;
    match policy {
        0 => v2 + p.m * ctx * t_next,
        1 => v2,
        _ => v2 + p.m * p.t_fwd * ctx * ctx / (2.0 * p.s_out),
    }
}

pub fn priority(v: f64, wait: f64, alpha: f64) -> f64 {
    v - alpha * wait
}

#[allow(clippy::too_many_arguments)]
pub fn token_budget(
    g_total: f64,
    g_fixed: f64,
    kv_active: f64,
    kv_paused: f64,
    gamma: f64,
    m: f64,
    target: f64,
    beta_low: f64,
    beta_high: f64,
) -> f64 {
    let free = (g_total - g_fixed - kv_active - kv_paused).max(0.0);
    let raw = ((free + gamma * kv_paused) / m).floor();
    let lo = (beta_low * target).floor();
    let hi = (beta_high * target).floor();
    if raw < lo {
        lo
    } else if raw > hi {
        hi
    } else {
        raw
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
