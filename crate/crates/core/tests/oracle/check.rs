//! Randomized comparison of the crate against the transcription in `mod.rs`.

use augsim_core::budget::{compute_token_budget, MemoryLedger};
use augsim_core::model::{self, Policy};
use augsim_core::SimConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Worst relative error seen for one operation.
#[derive(Debug, Clone)]
pub struct OpError {
    pub op: &'static str,
    pub draws: usize,
    pub max_rel_err: f64,
}

fn random_cfg(rng: &mut ChaCha8Rng) -> (SimConfig, Params) {
    let cfg = SimConfig {
        m_per_token: rng.random_range(0.01..4.0),
        t_fwd: rng.random_range(0.001..0.5),
        n_fwd_max: rng.random_range(1..4096),
        s_fwd_out: rng.random_range(1..8192),
        s_fwd_in: rng.random_range(1..8192),
        ..SimConfig::default()
    };
    let p = Params {
        m: cfg.m_per_token,
        t_fwd: cfg.t_fwd,
        n_fwd: cfg.n_fwd_max as f64,
        s_out: cfg.s_fwd_out as f64,
        s_in: cfg.s_fwd_in as f64,
    };
    (cfg, p)
}

fn code(p: Policy) -> u8 {
    match p {
        Policy::Preserve => 0,
        Policy::Discard => 1,
        Policy::Swap => 2,
    }
}

/// Runs `draws` random inputs through every operation.
pub fn compare_all(draws: usize, seed: u64) -> Vec<OpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 8];
    let mut mismatched_bool = 0usize;
    let mut mismatched_choice = 0usize;
    for _ in 0..draws {
        let (cfg, p) = random_cfg(&mut rng);
        let gen: u64 = rng.random_range(0..20_000);
        let ret: u64 = rng.random_range(0..20_000);
        let n_max: u64 = rng.random_range(1..4096);
        let i_t = rng.random_range(1e-4..1.0);
        let got = model::service_time(gen, ret, n_max, i_t).unwrap();
        worst[0] = worst[0].max(rel_err(
            got,
            service_time(gen as f64, ret as f64, n_max as f64, i_t),
        ));

        let a1: u64 = rng.random_range(0..5_000);
        let a2: u64 = rng.random_range(0..5_000);
        let t1 = a1 + rng.random_range(0..5_000u64);
        let t2 = a2 + rng.random_range(0..5_000u64);
        let got = model::earlier_finish_condition((t1, a1), (t2, a2), n_max).unwrap();
        if got != earlier_finish(t1 as f64, a1 as f64, t2 as f64, a2 as f64, n_max as f64) {
            mismatched_bool += 1;
        }

        let ctx: u64 = rng.random_range(0..30_000);
        let other: u64 = rng.random_range(0..200_000);
        let t_int = rng.random_range(0.0..60.0);
        let wastes = [
            waste_preserve(&p, ctx as f64, t_int),
            waste_discard(&p, ctx as f64, other as f64),
            waste_swap(&p, ctx as f64),
        ];
        for (k, policy) in [Policy::Preserve, Policy::Discard, Policy::Swap]
            .into_iter()
            .enumerate()
        {
            let got = model::waste_for_policy(policy, ctx, t_int, other, &cfg).unwrap();
            worst[1] = worst[1].max(rel_err(got, wastes[k]));
        }
        let (choice, w) = model::select_policy(ctx, t_int, other, &cfg).unwrap();
        let min = wastes.iter().cloned().fold(f64::INFINITY, f64::min);
        worst[2] = worst[2].max(rel_err(w, min));
        if rel_err(wastes[code(choice) as usize], min) > 1e-12 {
            mismatched_choice += 1;
        }

        let l_pre: u64 = rng.random_range(1..20_000);
        let l_out: u64 = rng.random_range(0..5_000);
        let t_api = rng.random_range(0.0..60.0);
        for policy in Policy::ALL {
            let (v, parts) = model::stage1_value(l_pre, l_out, t_api, policy, &cfg).unwrap();
            let want = stage1(&p, l_pre as f64, l_out as f64, t_api, code(policy));
            worst[3] = worst[3]
                .max(rel_err(v, want))
                .max(rel_err(parts.total(), want));
        }

        let l_total: u64 = rng.random_range(1..30_000);
        let l_ret: u64 = rng.random_range(0..5_000);
        let l_next: u64 = rng.random_range(0..5_000);
        let t_next = rng.random_range(0.0..60.0);
        for policy in Policy::ALL {
            let (v2, _) = model::stage2_value(l_total, l_ret, l_next, policy, &cfg).unwrap();
            let want2 = stage2(
                &p,
                l_total as f64,
                l_ret as f64,
                l_next as f64,
                code(policy),
            );
            worst[4] = worst[4].max(rel_err(v2, want2));
            for next in Policy::ALL {
                let v = model::final_value(v2, l_total, l_ret, l_next, next, t_next, &cfg).unwrap();
                let want = final_value(
                    &p,
                    v2,
                    l_total as f64,
                    l_ret as f64,
                    l_next as f64,
                    code(next),
                    t_next,
                );
                worst[5] = worst[5].max(rel_err(v, want));
            }
        }

        let v = rng.random_range(0.0..1e7);
        let wait = rng.random_range(0.0..1e3);
        let alpha = rng.random_range(0.0..100.0);
        worst[6] = worst[6].max(rel_err(
            model::priority_score(v, wait, alpha).unwrap(),
            priority(v, wait, alpha),
        ));

        let mut bcfg = cfg.clone();
        bcfg.g_total = rng.random_range(1.0..1e6);
        bcfg.g_model = bcfg.g_total * rng.random_range(0.0..0.5);
        bcfg.g_runtime = bcfg.g_total * rng.random_range(0.0..0.1);
        bcfg.g_safety = bcfg.g_total * rng.random_range(0.001..0.1);
        bcfg.gamma = rng.random_range(0.0..=1.0);
        bcfg.target_max = rng.random_range(1..10_000);
        bcfg.beta_low = rng.random_range(0.01..=1.0);
        bcfg.beta_high = rng.random_range(1.0..4.0);
        let room = bcfg.g_total - bcfg.g_fixed();
        let kv_active = room * rng.random_range(0.0..1.2);
        let kv_paused = room * rng.random_range(0.0..0.5);
        let ledger = MemoryLedger {
            g_total: bcfg.g_total,
            g_fixed: bcfg.g_fixed(),
            kv_active,
            kv_paused,
        };
        let got = compute_token_budget(&ledger, &bcfg) as f64;
        let want = token_budget(
            bcfg.g_total,
            bcfg.g_fixed(),
            kv_active,
            kv_paused,
            bcfg.gamma,
            bcfg.m_per_token,
            bcfg.target_max as f64,
            bcfg.beta_low,
            bcfg.beta_high,
        );
        worst[7] = worst[7].max(rel_err(got, want));
    }
    let names = [
        "service_time",
        "waste_for_policy",
        "select_policy",
        "stage1_value",
        "stage2_value",
        "final_value",
        "priority_score",
        "compute_token_budget",
    ];
    let mut out: Vec<OpError> = names
        .iter()
        .zip(worst)
        .map(|(&op, e)| OpError {
            op,
            draws,
            max_rel_err: e,
        })
        .collect();
    // Boolean and argmin outputs report their mismatch count as the error.
    out.push(OpError {
        op: "earlier_finish_condition",
        draws,
        max_rel_err: mismatched_bool as f64,
    });
    out.push(OpError {
        op: "select_policy choice",
        draws,
        max_rel_err: mismatched_choice as f64,
    });
    out
}

/// Counterexamples to: for pairs where request 2 is longer, the condition
/// holds exactly when request 1 takes longer to serve.
pub fn proposition_counterexamples(draws: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut n = 0;
    while n < draws {
        let n_max: u64 = rng.random_range(2..2048);
        let i_t = rng.random_range(1e-3..1.0);
        let a1: u64 = rng.random_range(0..4_000);
        let a2: u64 = rng.random_range(0..4_000);
        let t1 = a1 + rng.random_range(0..4_000u64);
        let t2 = a2 + rng.random_range(0..4_000u64);
        if t2 <= t1 {
            continue;
        }
        n += 1;
        let cond = model::earlier_finish_condition((t1, a1), (t2, a2), n_max).unwrap();
        let s1 = model::service_time(t1 - a1, a1, n_max, i_t).unwrap();
        let s2 = model::service_time(t2 - a2, a2, n_max, i_t).unwrap();
        if cond != (t2 > t1 && s1 > s2) {
            bad += 1;
        }
    }
    bad
}
