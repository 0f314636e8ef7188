//! Iteration-quantized execution of a request stream.
//!
//! An iteration takes `t_fwd`, or proportionally longer when its compute
//! tokens exceed `n_fwd_max`. The clock counts in units of
//! `t_fwd / n_fwd_max` so it stays exact. Idle time passes in whole
//! `t_fwd` steps. Call completions and arrivals are recognized at the first
//! boundary at or after their timestamp.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::budget::{BudgetMode, MemoryLedger};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRecord, Summary};
use crate::model::{self, Policy};
use crate::scheduler::{
    build_batch, Candidate, MemoryView, QueueKind, RankingStrategy, Scheduler, Work,
};
use crate::workload::{Predictor, Request};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Stop {
    /// Stop at this time; unfinished requests are reported as incomplete.
    Horizon(f64),
    /// Run until every request finishes.
    Drain,
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub cfg: SimConfig,
    pub strategy: RankingStrategy,
    pub budget: BudgetMode,
    pub predictor: Predictor,
    pub seed: u64,
    pub stop: Stop,
    pub max_iterations: u64,
    pub record_events: bool,
    /// Monotonic nanosecond clock used to time scheduling decisions.
    pub timer: Option<fn() -> u64>,
}

impl EngineOptions {
    pub fn new(cfg: SimConfig, strategy: RankingStrategy) -> Self {
        EngineOptions {
            cfg,
            strategy,
            budget: BudgetMode::Dynamic,
            predictor: Predictor::Oracle,
            seed: 0,
            stop: Stop::Drain,
            max_iterations: 20_000_000,
            record_events: false,
            timer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    CallReturn,
    Prefill,
    Recompute,
    Decode,
    SwapIn,
    SwapOut,
    CallIssued,
    Preempted,
    Evicted,
    Finished,
    IterationEnd,
}

impl EventKind {
    fn code(self) -> u8 {
        self as u8
    }
}

/// One line of the optional event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    pub tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    pub kv_active: u64,
    pub kv_paused: u64,
    pub kv_free: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCounts {
    pub preserve: u64,
    pub discard: u64,
    pub swap: u64,
}

impl PolicyCounts {
    fn bump(&mut self, p: Policy) {
        match p {
            Policy::Preserve => self.preserve += 1,
            Policy::Discard => self.discard += 1,
            Policy::Swap => self.swap += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Engine steps that executed work.
    pub iterations: u64,
    /// Simulated seconds spent executing batches.
    pub busy_time: f64,
    pub prefill_tokens: u64,
    pub recompute_tokens: u64,
    pub decode_tokens: u64,
    pub swap_in_tokens: u64,
    pub swap_out_tokens: u64,
    pub preemptions: u64,
    pub evictions: u64,
    pub calls: PolicyCounts,
    pub budget_min: u64,
    pub budget_max: u64,
    pub peak_kv_tokens: u64,
    pub ledger_checks: u64,
    /// Time spent valuing, ranking and batching, when a timer is supplied.
    pub sched_nanos: u64,
    /// Time spent in the whole run, when a timer is supplied.
    pub total_nanos: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Finished requests, ordered by id.
    pub records: Vec<MetricsRecord>,
    pub incomplete: usize,
    pub stats: RunStats,
    pub events: Vec<EventRecord>,
    pub event_hash: u64,
    /// Clock value when the run stopped.
    pub end_time: f64,
    /// Last finish time, or zero if nothing finished.
    pub makespan: f64,
    /// Seconds goodput is normalized by: the horizon, or the makespan when
    /// draining.
    pub horizon: f64,
}

impl RunOutput {
    pub fn summary(&self) -> Summary {
        let mut s = metrics::aggregate(&self.records, self.horizon);
        s.incomplete = self.incomplete;
        s
    }
}

#[derive(Debug, Clone)]
struct Runtime {
    req: Request,
    seg: usize,
    gen_in_seg: u64,
    generated: u64,
    /// Processed context: prompt, generated and assimilated tokens.
    ctx: u64,
    /// Unprocessed prompt or return tokens.
    pending: u64,
    gpu: u64,
    cpu: u64,
    on_call: bool,
    swapping_out: bool,
    first_token: Option<f64>,
    finish: Option<f64>,
}

impl Runtime {
    fn missing(&self) -> u64 {
        self.ctx - self.gpu - self.cpu
    }

    fn work(&self) -> Work {
        if self.cpu > 0 {
            Work::SwapIn {
                remaining: self.cpu,
            }
        } else if self.missing() + self.pending > 0 {
            Work::Prefill {
                remaining: self.missing() + self.pending,
            }
        } else {
            Work::Decode
        }
    }

    fn ready(&self) -> bool {
        self.cpu == 0 && self.missing() == 0 && self.pending == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending(f64, u64);

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub struct Engine {
    opts: EngineOptions,
    sched: Scheduler,
    rt: Vec<Runtime>,
    index: BTreeMap<u64, usize>,
    next_arrival: usize,
    calls: BinaryHeap<Reverse<Pending>>,
    live: BTreeSet<usize>,
    swapping: Vec<u64>,
    tick: u64,
    active_tokens: u64,
    paused_tokens: u64,
    capacity: u64,
    stats: RunStats,
    events: Vec<EventRecord>,
    hash: u64,
    records: Vec<MetricsRecord>,
    finished: usize,
    done: bool,
}

impl Engine {
    pub fn new(requests: &[Request], opts: EngineOptions) -> Result<Self> {
        opts.cfg.validate()?;
        opts.predictor.validate()?;
        if let BudgetMode::Static(0) = opts.budget {
            return Err(Error::InvalidConfig {
                field: "budget",
                reason: "static budget must be positive".into(),
            });
        }
        if let Stop::Horizon(h) = opts.stop {
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::InvalidConfig {
                    field: "horizon",
                    reason: format!("must be finite and non-negative, got {h}"),
                });
            }
        }
        let capacity = opts.cfg.kv_capacity_tokens();
        let mut rt: Vec<Runtime> = Vec::with_capacity(requests.len());
        let mut index = BTreeMap::new();
        let mut last = f64::NEG_INFINITY;
        for r in requests {
            r.profile
                .validate()
                .map_err(|reason| Error::InvalidRequest { id: r.id, reason })?;
            if !(r.arrival.is_finite() && r.arrival >= 0.0) || r.arrival < last {
                return Err(Error::InvalidRequest {
                    id: r.id,
                    reason: format!("arrival {} is negative or out of order", r.arrival),
                });
            }
            last = r.arrival;
            if r.profile.final_context() > capacity {
                return Err(Error::InvalidRequest {
                    id: r.id,
                    reason: format!(
                        "final context of {} tokens exceeds the KV capacity of {capacity}",
                        r.profile.final_context()
                    ),
                });
            }
            if index.insert(r.id, rt.len()).is_some() {
                return Err(Error::InvalidRequest {
                    id: r.id,
                    reason: "duplicate request id".into(),
                });
            }
            rt.push(Runtime {
                req: r.clone(),
                seg: 0,
                gen_in_seg: 0,
                generated: 0,
                ctx: 0,
                pending: r.profile.l_pre,
                gpu: 0,
                cpu: 0,
                on_call: false,
                swapping_out: false,
                first_token: None,
                finish: None,
            });
        }
        let sched = Scheduler::new(opts.strategy, opts.predictor.clone(), opts.seed);
        Ok(Engine {
            sched,
            rt,
            index,
            next_arrival: 0,
            calls: BinaryHeap::new(),
            live: BTreeSet::new(),
            swapping: Vec::new(),
            tick: 0,
            active_tokens: 0,
            paused_tokens: 0,
            capacity,
            stats: RunStats {
                budget_min: u64::MAX,
                ..RunStats::default()
            },
            events: Vec::new(),
            hash: FNV_OFFSET,
            records: Vec::new(),
            finished: 0,
            done: false,
            opts,
        })
    }

    pub fn now(&self) -> f64 {
        self.time_of(self.tick)
    }

    fn time_of(&self, tick: u64) -> f64 {
        let n = self.opts.cfg.n_fwd_max;
        let t = self.opts.cfg.t_fwd;
        (tick / n) as f64 * t + (tick % n) as f64 * t / n as f64
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn ledger(&self) -> MemoryLedger {
        MemoryLedger::from_tokens(&self.opts.cfg, self.active_tokens, self.paused_tokens)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn clock(&self) -> u64 {
        self.opts.timer.map_or(0, |f| f())
    }

    /// First idle boundary, a whole number of `t_fwd` steps from now and at
    /// least one step away, whose time is at or after `t`.
    fn idle_boundary(&self, t: f64) -> u64 {
        let n = self.opts.cfg.n_fwd_max;
        let gap = (t - self.now()) / self.opts.cfg.t_fwd;
        let mut k = libm::ceil(gap).max(1.0) as u64;
        while k > 1 && self.time_of(self.tick + (k - 1) * n) >= t {
            k -= 1;
        }
        while self.time_of(self.tick + k * n) < t {
            k += 1;
        }
        self.tick + k * n
    }

    fn log(&mut self, kind: EventKind, id: Option<u64>, tokens: u64, policy: Option<Policy>) {
        let time = self.now();
        let free = self.capacity - self.active_tokens - self.paused_tokens;
        let words = [
            time.to_bits(),
            kind.code() as u64,
            id.map_or(u64::MAX, |x| x),
            tokens,
            policy.map_or(u64::MAX, |p| p.index() as u64),
            self.active_tokens,
            self.paused_tokens,
        ];
        for w in words {
            for b in w.to_le_bytes() {
                self.hash ^= b as u64;
                self.hash = self.hash.wrapping_mul(FNV_PRIME);
            }
        }
        if self.opts.record_events {
            self.events.push(EventRecord {
                time,
                kind,
                request_id: id,
                tokens,
                policy,
                kv_active: self.active_tokens,
                kv_paused: self.paused_tokens,
                kv_free: free,
            });
        }
    }

    fn idx(&self, id: u64) -> usize {
        self.index[&id]
    }

    fn set_gpu(&mut self, i: usize, gpu: u64) {
        let r = &mut self.rt[i];
        let counter = if r.on_call {
            &mut self.paused_tokens
        } else {
            &mut self.active_tokens
        };
        *counter = *counter - r.gpu + gpu;
        r.gpu = gpu;
    }

    fn set_on_call(&mut self, i: usize, on_call: bool) {
        let r = &mut self.rt[i];
        if r.on_call == on_call {
            return;
        }
        if on_call {
            self.active_tokens -= r.gpu;
            self.paused_tokens += r.gpu;
        } else {
            self.paused_tokens -= r.gpu;
            self.active_tokens += r.gpu;
        }
        r.on_call = on_call;
    }

    fn ingest(&mut self) -> Result<()> {
        let now = self.now();
        let cfg = self.opts.cfg.clone();
        while let Some(&Reverse(Pending(until, id))) = self.calls.peek() {
            if until > now {
                break;
            }
            self.calls.pop();
            let i = self.idx(id);
            let t0 = self.clock();
            let (call, next) = {
                let r = &self.rt[i];
                let seg = &r.req.profile.segments[r.seg];
                (
                    seg.call.clone().expect("call in flight"),
                    r.req.profile.segments[r.seg + 1].clone(),
                )
            };
            self.sched.on_call_return(id, &call, &next, now, &cfg)?;
            self.stats.sched_nanos += self.clock().saturating_sub(t0);
            self.swapping.retain(|&x| x != id);
            self.set_on_call(i, false);
            let r = &mut self.rt[i];
            r.swapping_out = false;
            r.seg += 1;
            r.gen_in_seg = 0;
            r.pending = call.return_len_true;
            self.log(EventKind::CallReturn, Some(id), call.return_len_true, None);
        }
        while self.next_arrival < self.rt.len() && self.rt[self.next_arrival].req.arrival <= now {
            let i = self.next_arrival;
            self.next_arrival += 1;
            let t0 = self.clock();
            self.sched.on_arrival(&self.rt[i].req, now, &cfg)?;
            self.stats.sched_nanos += self.clock().saturating_sub(t0);
            self.live.insert(i);
            let id = self.rt[i].req.id;
            let l_pre = self.rt[i].req.profile.l_pre;
            self.log(EventKind::Arrival, Some(id), l_pre, None);
        }
        Ok(())
    }

    fn all_arrived_and_done(&self) -> bool {
        self.next_arrival == self.rt.len() && self.live.is_empty()
    }

    fn next_event_time(&self) -> Option<f64> {
        let a = self.rt.get(self.next_arrival).map(|r| r.req.arrival);
        let c = self.calls.peek().map(|Reverse(Pending(t, _))| *t);
        match (a, c) {
            (Some(a), Some(c)) => Some(a.min(c)),
            (x, y) => x.or(y),
        }
    }

    /// Moves paused Swap contexts to host memory, up to the per-iteration
    /// bandwidth and the budget. Returns the tokens moved.
    fn swap_out(&mut self, budget: u64) -> u64 {
        let mut cap = self.opts.cfg.s_fwd_out.min(budget);
        let mut moved = 0;
        let ids = self.swapping.clone();
        for id in ids {
            if cap == 0 {
                break;
            }
            let i = self.idx(id);
            let k = self.rt[i].gpu.min(cap);
            let gpu = self.rt[i].gpu - k;
            self.set_gpu(i, gpu);
            self.rt[i].cpu += k;
            cap -= k;
            moved += k;
            if k > 0 {
                self.log(EventKind::SwapOut, Some(id), k, None);
            }
            if self.rt[i].gpu == 0 {
                self.rt[i].swapping_out = false;
            }
        }
        self.swapping
            .retain(|&id| self.rt[self.index[&id]].swapping_out);
        self.stats.swap_out_tokens += moved;
        moved
    }

    /// Paused contexts that may be dropped, in eviction order, limited to
    /// `gamma` of paused memory.
    fn evictable(&self) -> Vec<(u64, u64)> {
        let limit = libm::floor(self.opts.cfg.gamma * self.paused_tokens as f64) as u64;
        let mut remainders: Vec<(u64, u64)> = Vec::new();
        let mut preserved: Vec<(u64, u64)> = Vec::new();
        for &id in self.sched.queue(QueueKind::Paused) {
            let r = &self.rt[self.index[&id]];
            if r.gpu == 0 {
                continue;
            }
            if r.swapping_out {
                remainders.push((id, r.gpu));
            } else {
                preserved.push((id, r.gpu));
            }
        }
        let largest_first = |a: &(u64, u64), b: &(u64, u64)| b.1.cmp(&a.1).then(a.0.cmp(&b.0));
        remainders.sort_by(largest_first);
        preserved.sort_by(largest_first);
        let mut out = Vec::new();
        let mut total = 0;
        for e in remainders.into_iter().chain(preserved) {
            if total + e.1 > limit {
                break;
            }
            total += e.1;
            out.push(e);
        }
        out
    }

    fn check_ledger(&mut self) -> Result<()> {
        let (mut active, mut paused, mut total) = (0u64, 0u64, 0u64);
        for &i in &self.live {
            let r = &self.rt[i];
            if r.on_call {
                paused += r.gpu;
            } else {
                active += r.gpu;
            }
            total += r.gpu;
            if r.gpu + r.cpu > r.ctx {
                return Err(Error::LedgerViolation {
                    iteration: self.stats.iterations,
                    detail: format!("request {} holds more KV than its context", r.req.id),
                });
            }
        }
        if active != self.active_tokens || paused != self.paused_tokens {
            return Err(Error::LedgerViolation {
                iteration: self.stats.iterations,
                detail: format!(
                    "counters active={} paused={} disagree with resident active={active} paused={paused}",
                    self.active_tokens, self.paused_tokens
                ),
            });
        }
        if total > self.capacity {
            return Err(Error::LedgerViolation {
                iteration: self.stats.iterations,
                detail: format!("{total} resident tokens exceed capacity {}", self.capacity),
            });
        }
        let ledger = self.ledger();
        let m = self.opts.cfg.m_per_token;
        if ledger.g_free() < -1e-9 * self.opts.cfg.g_total
            || libm::fabs(ledger.conservation_residual()) > 1e-9 * self.opts.cfg.g_total
            || ledger.kv_active > self.opts.cfg.g_total - self.opts.cfg.g_fixed() + 1e-9 * m
        {
            return Err(Error::LedgerViolation {
                iteration: self.stats.iterations,
                detail: format!("{ledger:?}"),
            });
        }
        self.stats.ledger_checks += 1;
        self.stats.peak_kv_tokens = self.stats.peak_kv_tokens.max(total);
        Ok(())
    }

    fn check_budget(&self, budget: u64) -> Result<()> {
        if let BudgetMode::Dynamic = self.opts.budget {
            let (lo, hi) = self.opts.cfg.budget_bounds();
            if budget < lo || budget > hi.max(lo) {
                return Err(Error::BudgetViolation {
                    iteration: self.stats.iterations,
                    detail: format!("budget {budget} outside [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }

    fn stop_time(&self) -> Option<f64> {
        match self.opts.stop {
            Stop::Horizon(h) => Some(h),
            Stop::Drain => None,
        }
    }

    /// Runs one iteration, or skips idle time up to the next event.
    /// Returns `false` once the run has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.done {
            return Ok(false);
        }
        if self.stats.iterations >= self.opts.max_iterations {
            return Err(Error::IterationCap {
                cap: self.opts.max_iterations,
            });
        }
        self.ingest()?;
        let now = self.now();
        let stop_at = self.stop_time();
        if stop_at.is_some_and(|h| now >= h) || self.all_arrived_and_done() {
            self.done = true;
            return Ok(false);
        }

        let ledger = self.ledger();
        let budget = self.opts.budget.budget(&ledger, &self.opts.cfg);
        self.check_budget(budget)?;
        let swapped_out = self.swap_out(budget);

        let t0 = self.clock();
        let ranked = self.sched.rank_queues(now, self.opts.cfg.alpha);
        let mem = MemoryView {
            free_tokens: self.capacity - self.active_tokens - self.paused_tokens,
            evictable: self.evictable(),
        };
        let rt = &self.rt;
        let index = &self.index;
        let batch = build_batch(
            &ranked,
            |id| {
                let r = &rt[index[&id]];
                Candidate {
                    work: r.work(),
                    resident: r.gpu,
                }
            },
            budget - swapped_out,
            self.opts.cfg.s_fwd_in,
            mem,
        );
        self.stats.sched_nanos += self.clock().saturating_sub(t0);

        if batch.tokens() + swapped_out > budget {
            return Err(Error::BudgetViolation {
                iteration: self.stats.iterations,
                detail: format!(
                    "batch of {} tokens over budget {budget}",
                    batch.tokens() + swapped_out
                ),
            });
        }

        if batch.is_empty()
            && batch.preempted.is_empty()
            && batch.evicted.is_empty()
            && swapped_out == 0
        {
            return self.idle();
        }
        self.stats.budget_min = self.stats.budget_min.min(budget);
        self.stats.budget_max = self.stats.budget_max.max(budget);

        for &id in &batch.evicted {
            let i = self.idx(id);
            self.set_gpu(i, 0);
            self.rt[i].swapping_out = false;
            self.sched.on_paused_evicted(id)?;
            self.stats.evictions += 1;
            self.log(EventKind::Evicted, Some(id), 0, Some(Policy::Discard));
        }
        self.swapping
            .retain(|&id| self.rt[self.index[&id]].swapping_out);
        for &id in &batch.preempted {
            let i = self.idx(id);
            let held = self.rt[i].gpu;
            self.set_gpu(i, 0);
            self.sched.on_preempted(id, self.rt[i].cpu > 0)?;
            self.stats.preemptions += 1;
            self.log(EventKind::Preempted, Some(id), held, None);
        }

        let end_tick = self.tick + batch.compute_tokens().max(self.opts.cfg.n_fwd_max);
        let end = self.time_of(end_tick);
        // Effects of the batch are stamped at the end of the iteration.
        self.stats.busy_time += end - now;
        self.tick = end_tick;
        for e in &batch.entries {
            self.sched.on_scheduled(e.id, now)?;
            self.apply(e.id, e.work, e.tokens, end)?;
        }
        self.stats.iterations += 1;
        let total = batch.tokens() + swapped_out;
        self.log(EventKind::IterationEnd, None, total, None);
        self.check_ledger()?;
        Ok(true)
    }

    fn idle(&mut self) -> Result<bool> {
        let next = match self.next_event_time() {
            Some(t) => t,
            None => {
                self.done = true;
                if let Some(&i) = self.live.iter().next() {
                    if self.stop_time().is_none() {
                        return Err(Error::StateViolation {
                            id: self.rt[i].req.id,
                            reason: "no runnable work and no pending events".into(),
                        });
                    }
                }
                return Ok(false);
            }
        };
        let mut target = self.idle_boundary(next);
        if let Some(h) = self.stop_time() {
            target = target.min(self.idle_boundary(h));
        }
        self.tick = target;
        Ok(true)
    }

    fn apply(&mut self, id: u64, work: Work, tokens: u64, end: f64) -> Result<()> {
        let i = self.idx(id);
        match work {
            Work::SwapIn { .. } => {
                self.rt[i].cpu -= tokens;
                let gpu = self.rt[i].gpu + tokens;
                self.set_gpu(i, gpu);
                self.stats.swap_in_tokens += tokens;
                self.log(EventKind::SwapIn, Some(id), tokens, None);
            }
            Work::Prefill { .. } => {
                let recompute = tokens.min(self.rt[i].missing());
                let fresh = tokens - recompute;
                let gpu = self.rt[i].gpu + tokens;
                self.set_gpu(i, gpu);
                let r = &mut self.rt[i];
                r.pending -= fresh;
                r.ctx += fresh;
                self.stats.recompute_tokens += recompute;
                self.stats.prefill_tokens += fresh;
                if recompute > 0 {
                    self.log(EventKind::Recompute, Some(id), recompute, None);
                }
                if fresh > 0 {
                    self.log(EventKind::Prefill, Some(id), fresh, None);
                }
            }
            Work::Decode => {
                let gpu = self.rt[i].gpu + 1;
                self.set_gpu(i, gpu);
                let r = &mut self.rt[i];
                r.ctx += 1;
                r.generated += 1;
                r.gen_in_seg += 1;
                if r.first_token.is_none() {
                    r.first_token = Some(end);
                }
                self.stats.decode_tokens += 1;
                self.log(EventKind::Decode, Some(id), 1, None);
            }
        }
        let ctx = self.rt[i].ctx;
        self.sched.set_l_total(id, ctx)?;
        let r = &self.rt[i];
        let seg = &r.req.profile.segments[r.seg];
        if r.ready() && r.gen_in_seg >= seg.gen_len_true {
            match seg.call.clone() {
                Some(call) => self.issue_call(i, call.duration_true, end)?,
                None => self.finish(i, end)?,
            }
        }
        Ok(())
    }

    fn issue_call(&mut self, i: usize, duration: f64, end: f64) -> Result<()> {
        let id = self.rt[i].req.id;
        let ctx = self.rt[i].ctx;
        let pred_api = self.sched.state(id).map_or(duration, |s| s.pred_api);
        let others = self.sched.running_context().saturating_sub(ctx);
        let (policy, _) = model::select_policy(ctx, pred_api, others, &self.opts.cfg)?;
        self.sched.on_call_issued(id, policy)?;
        self.set_on_call(i, true);
        match policy {
            Policy::Preserve => {}
            Policy::Discard => self.set_gpu(i, 0),
            Policy::Swap => {
                self.rt[i].swapping_out = true;
                self.swapping.push(id);
            }
        }
        self.calls.push(Reverse(Pending(end + duration, id)));
        self.stats.calls.bump(policy);
        self.log(EventKind::CallIssued, Some(id), ctx, Some(policy));
        Ok(())
    }

    fn finish(&mut self, i: usize, end: f64) -> Result<()> {
        let id = self.rt[i].req.id;
        let expected = self.rt[i].req.profile.final_context();
        if self.rt[i].ctx != expected {
            return Err(Error::StateViolation {
                id,
                reason: format!(
                    "finished with context {} but expected {expected}",
                    self.rt[i].ctx
                ),
            });
        }
        self.set_gpu(i, 0);
        self.sched.on_finished(id)?;
        let r = &mut self.rt[i];
        r.finish = Some(end);
        let first = r.first_token.ok_or_else(|| Error::StateViolation {
            id,
            reason: "finished without a first token".into(),
        })?;
        let rec = metrics::finalize(id, r.req.arrival, first, end, r.generated, &self.opts.cfg)?;
        self.records.push(rec);
        self.live.remove(&i);
        self.finished += 1;
        self.log(EventKind::Finished, Some(id), 0, None);
        Ok(())
    }

    pub fn finish_run(mut self) -> RunOutput {
        self.records.sort_by_key(|r| r.request_id);
        let end_time = self.now();
        let makespan = self
            .records
            .iter()
            .map(|r| r.finish_time)
            .fold(0.0, f64::max);
        let horizon = match self.opts.stop {
            Stop::Horizon(h) => h,
            Stop::Drain => makespan,
        };
        if self.stats.budget_min == u64::MAX {
            self.stats.budget_min = 0;
        }
        RunOutput {
            incomplete: self.rt.len() - self.finished,
            records: self.records,
            stats: self.stats,
            events: self.events,
            event_hash: self.hash,
            end_time,
            makespan,
            horizon,
        }
    }
}

/// Simulates `requests` (ordered by arrival) to completion or the horizon.
pub fn run(requests: &[Request], opts: &EngineOptions) -> Result<RunOutput> {
    let start = opts.timer.map_or(0, |f| f());
    let mut engine = Engine::new(requests, opts.clone())?;
    while engine.step()? {}
    let mut out = engine.finish_run();
    out.stats.total_nanos = opts.timer.map_or(0, |f| f()).saturating_sub(start);
    Ok(out)
}
