//! Request queues, ranking strategies and per-iteration batch construction.
//!
//! Requests live in exactly one of five queues. Each iteration the queues
//! are ranked and a batch is filled tier by tier: running, then swapped,
//! then the merged waiting tier (resumed and new requests).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::model::{self, Policy};
use crate::rng;
use crate::workload::{CallSpec, Predictor, Request, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    New,
    PreCall,
    PausedOnCall,
    Returned,
    Finished,
}

impl Stage {
    /// Whether `self -> next` is an allowed lifecycle step.
    pub fn can_become(self, next: Stage) -> bool {
        use Stage::*;
        matches!(
            (self, next),
            (New, PreCall)
                | (PreCall, PausedOnCall)
                | (PreCall, Finished)
                | (PausedOnCall, Returned)
                | (Returned, PreCall)
                | (Returned, Finished)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueKind {
    Running,
    Swapped,
    WaitingResume,
    WaitingNew,
    Paused,
    Finished,
}

impl QueueKind {
    fn slot(self) -> Option<usize> {
        match self {
            QueueKind::Running => Some(0),
            QueueKind::Swapped => Some(1),
            QueueKind::WaitingResume => Some(2),
            QueueKind::WaitingNew => Some(3),
            QueueKind::Paused => Some(4),
            QueueKind::Finished => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingStrategy {
    /// Arrival order.
    Fcfs,
    /// Seeded shuffle of the waiting tier each round.
    Random { seed: u64 },
    /// Ascending two-stage value with the anti-starvation term.
    AugServe,
}

impl RankingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RankingStrategy::Fcfs => "fcfs",
            RankingStrategy::Random { .. } => "random",
            RankingStrategy::AugServe => "augserve",
        }
    }
}

/// Scheduler bookkeeping for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedState {
    pub request_id: u64,
    pub arrival: f64,
    pub stage: Stage,
    /// Stage-one value before the first return, final value afterwards.
    pub sched_value: f64,
    pub last_schedule_time: f64,
    pub queue: QueueKind,
    /// Prompt, generated and assimilated return tokens processed so far.
    pub l_total: u64,
    /// Predicted policy for the upcoming call; once the call is issued, the
    /// policy actually in force.
    pub policy_current: Policy,
    /// Index of the segment being worked on.
    pub round: usize,
    pub pred_out: u64,
    pub pred_api: f64,
    /// Whether the current segment ends in a call.
    pub call_ahead: bool,
}

/// Queue contents in service order for one iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankedQueues {
    pub running: Vec<u64>,
    pub swapped: Vec<u64>,
    /// `waiting_resume` and `waiting_new` merged.
    pub waiting: Vec<u64>,
}

const PRED_STREAM: u64 = 0x9_12ED;
const SHUFFLE_STREAM: u64 = 0x5_4FF1E;

pub struct Scheduler {
    strategy: RankingStrategy,
    predictor: Predictor,
    seed: u64,
    states: BTreeMap<u64, SchedState>,
    queues: [Vec<u64>; 5],
    shuffle: ChaCha8Rng,
}

fn predictions(
    predictor: &Predictor,
    seed: u64,
    id: u64,
    round: usize,
    seg: &Segment,
) -> (u64, f64) {
    let truth_dur = seg.call.as_ref().map_or(0.0, |c| c.duration_true);
    let mut rng = rng::stream(seed, &[PRED_STREAM, id, round as u64]);
    let (mut out, mut dur) = predictor.predict((seg.gen_len_true, truth_dur), &mut rng);
    if let Some(p) = seg.gen_len_pred {
        out = p;
    }
    match &seg.call {
        Some(c) => {
            if let Some(p) = c.duration_pred {
                dur = p;
            }
        }
        None => dur = 0.0,
    }
    (out, dur)
}

impl Scheduler {
    pub fn new(strategy: RankingStrategy, predictor: Predictor, seed: u64) -> Self {
        let shuffle_seed = match strategy {
            RankingStrategy::Random { seed } => seed,
            _ => seed,
        };
        Scheduler {
            strategy,
            predictor,
            seed,
            states: BTreeMap::new(),
            queues: Default::default(),
            shuffle: rng::stream(shuffle_seed, &[SHUFFLE_STREAM]),
        }
    }

    pub fn strategy(&self) -> RankingStrategy {
        self.strategy
    }

    pub fn state(&self, id: u64) -> Option<&SchedState> {
        self.states.get(&id)
    }

    pub fn states(&self) -> impl Iterator<Item = &SchedState> {
        self.states.values()
    }

    pub fn queue(&self, kind: QueueKind) -> &[u64] {
        match kind.slot() {
            Some(s) => &self.queues[s],
            None => &[],
        }
    }

    fn state_mut(&mut self, id: u64) -> Result<&mut SchedState> {
        self.states
            .get_mut(&id)
            .ok_or_else(|| Error::StateViolation {
                id,
                reason: "unknown request".into(),
            })
    }

    fn move_to(&mut self, id: u64, to: QueueKind) -> Result<()> {
        let from = self.state_mut(id)?.queue;
        if from == to {
            return Ok(());
        }
        if let Some(s) = from.slot() {
            let q = &mut self.queues[s];
            let pos = q
                .iter()
                .position(|&x| x == id)
                .ok_or_else(|| Error::StateViolation {
                    id,
                    reason: format!("missing from its {from:?} queue"),
                })?;
            q.remove(pos);
        }
        if let Some(s) = to.slot() {
            self.queues[s].push(id);
        }
        self.state_mut(id)?.queue = to;
        Ok(())
    }

    fn set_stage(&mut self, id: u64, next: Stage) -> Result<()> {
        let st = self.state_mut(id)?;
        if st.stage == next {
            return Ok(());
        }
        if !st.stage.can_become(next) {
            return Err(Error::StateViolation {
                id,
                reason: format!("illegal stage transition {:?} -> {:?}", st.stage, next),
            });
        }
        st.stage = next;
        Ok(())
    }

    /// Total context of the running queue.
    pub fn running_context(&self) -> u64 {
        self.queues[0]
            .iter()
            .map(|id| self.states[id].l_total)
            .sum()
    }

    /// Registers an arrival: predicts the first round, picks a policy and
    /// assigns the stage-one value. The request joins `waiting_new`.
    pub fn on_arrival(&mut self, req: &Request, now: f64, cfg: &SimConfig) -> Result<&SchedState> {
        req.profile
            .validate()
            .map_err(|reason| Error::InvalidRequest { id: req.id, reason })?;
        if now < req.arrival {
            return Err(Error::InvalidRequest {
                id: req.id,
                reason: format!("registered at {now} before its arrival at {}", req.arrival),
            });
        }
        if self.states.contains_key(&req.id) {
            return Err(Error::InvalidRequest {
                id: req.id,
                reason: "duplicate request id".into(),
            });
        }
        let seg = &req.profile.segments[0];
        let (pred_out, pred_api) = predictions(&self.predictor, self.seed, req.id, 0, seg);
        let call_ahead = seg.call.is_some();
        let policy = if call_ahead {
            model::select_policy(
                req.profile.l_pre + pred_out,
                pred_api,
                self.running_context(),
                cfg,
            )?
            .0
        } else {
            // No call: the value degenerates to prefill + decode.
            Policy::Discard
        };
        let (value, _) = model::stage1_value(req.profile.l_pre, pred_out, pred_api, policy, cfg)?;
        self.states.insert(
            req.id,
            SchedState {
                request_id: req.id,
                arrival: req.arrival,
                stage: Stage::New,
                sched_value: value,
                last_schedule_time: now,
                queue: QueueKind::WaitingNew,
                l_total: 0,
                policy_current: policy,
                round: 0,
                pred_out,
                pred_api,
                call_ahead,
            },
        );
        self.queues[3].push(req.id);
        Ok(&self.states[&req.id])
    }

    /// The call issued by a running request: it enters the paused set.
    pub fn on_call_issued(&mut self, id: u64, applied: Policy) -> Result<()> {
        let st = self.state_mut(id)?;
        if st.queue != QueueKind::Running || !st.call_ahead {
            return Err(Error::StateViolation {
                id,
                reason: format!("call issued from {:?} without a pending call", st.queue),
            });
        }
        st.policy_current = applied;
        self.set_stage(id, Stage::PausedOnCall)?;
        self.move_to(id, QueueKind::Paused)
    }

    /// Records that a paused context was forcibly dropped.
    pub fn on_paused_evicted(&mut self, id: u64) -> Result<()> {
        let st = self.state_mut(id)?;
        if st.queue != QueueKind::Paused {
            return Err(Error::StateViolation {
                id,
                reason: "evicted a context that is not paused".into(),
            });
        }
        st.policy_current = Policy::Discard;
        Ok(())
    }

    /// Recomputes the value from what the call actually returned and moves
    /// the request to the queue matching the policy that was applied.
    pub fn on_call_return(
        &mut self,
        id: u64,
        call: &CallSpec,
        next: &Segment,
        now: f64,
        cfg: &SimConfig,
    ) -> Result<&SchedState> {
        let (predictor, seed) = (&self.predictor, self.seed);
        let st = self.states.get(&id).ok_or_else(|| Error::StateViolation {
            id,
            reason: "unknown request".into(),
        })?;
        if st.stage != Stage::PausedOnCall {
            return Err(Error::StateViolation {
                id,
                reason: format!("call returned while {:?}", st.stage),
            });
        }
        let round = st.round + 1;
        let used = st.policy_current;
        let l_total = st.l_total;
        let ret = call.return_len_true;
        let (next_out, next_api) = predictions(predictor, seed, id, round, next);
        let (v2, _) = model::stage2_value(l_total.max(1), ret, next_out, used, cfg)?;
        let (next_policy, v_final) = if next.call.is_some() {
            let ctx = l_total + ret + next_out;
            let (p, _) = model::select_policy(ctx, next_api, self.running_context(), cfg)?;
            (
                p,
                model::final_value(v2, l_total, ret, next_out, p, next_api, cfg)?,
            )
        } else {
            (Policy::Discard, v2)
        };
        let to = match used {
            Policy::Preserve => QueueKind::Running,
            Policy::Swap => QueueKind::Swapped,
            Policy::Discard => QueueKind::WaitingResume,
        };
        self.set_stage(id, Stage::Returned)?;
        self.move_to(id, to)?;
        let st = self.state_mut(id)?;
        st.round = round;
        st.pred_out = next_out;
        st.pred_api = next_api;
        st.call_ahead = next.call.is_some();
        st.sched_value = v_final;
        st.last_schedule_time = now;
        st.policy_current = next_policy;
        Ok(&self.states[&id])
    }

    /// A request granted tokens this iteration.
    pub fn on_scheduled(&mut self, id: u64, now: f64) -> Result<()> {
        let st = self.state_mut(id)?;
        st.last_schedule_time = now;
        let (stage, call_ahead, queue) = (st.stage, st.call_ahead, st.queue);
        match stage {
            Stage::New => self.set_stage(id, Stage::PreCall)?,
            Stage::Returned if call_ahead => self.set_stage(id, Stage::PreCall)?,
            _ => {}
        }
        match queue {
            QueueKind::Running => Ok(()),
            QueueKind::Swapped | QueueKind::WaitingResume | QueueKind::WaitingNew => {
                self.move_to(id, QueueKind::Running)
            }
            q => Err(Error::StateViolation {
                id,
                reason: format!("scheduled from the {q:?} queue"),
            }),
        }
    }

    /// A running request lost its accelerator context to make room.
    pub fn on_preempted(&mut self, id: u64, has_host_copy: bool) -> Result<()> {
        let to = if has_host_copy {
            QueueKind::Swapped
        } else {
            QueueKind::WaitingResume
        };
        self.move_to(id, to)
    }

    pub fn on_finished(&mut self, id: u64) -> Result<()> {
        self.set_stage(id, Stage::Finished)?;
        self.move_to(id, QueueKind::Finished)
    }

    pub fn set_l_total(&mut self, id: u64, l_total: u64) -> Result<()> {
        self.state_mut(id)?.l_total = l_total;
        Ok(())
    }

    fn score(&self, id: u64, now: f64, alpha: f64) -> f64 {
        let st = &self.states[&id];
        let wait = (now - st.last_schedule_time).max(0.0);
        st.sched_value - alpha * wait
    }

    fn arrival_key(&self, id: u64) -> (f64, u64) {
        (self.states[&id].arrival, id)
    }

    fn by_arrival(&self, ids: &mut [u64]) {
        ids.sort_by(|&a, &b| {
            let (ta, _) = self.arrival_key(a);
            let (tb, _) = self.arrival_key(b);
            ta.total_cmp(&tb).then(a.cmp(&b))
        });
    }

    fn by_score(&self, ids: &mut [u64], now: f64, alpha: f64) {
        let mut keyed: Vec<(f64, f64, u64)> = ids
            .iter()
            .map(|&id| (self.score(id, now, alpha), self.states[&id].arrival, id))
            .collect();
        keyed.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        for (slot, k) in ids.iter_mut().zip(keyed) {
            *slot = k.2;
        }
    }

    /// Orders every queue for this iteration without moving requests
    /// between queues.
    pub fn rank_queues(&mut self, now: f64, alpha: f64) -> RankedQueues {
        let mut running = self.queues[0].clone();
        let mut swapped = self.queues[1].clone();
        let mut waiting: Vec<u64> = self.queues[2]
            .iter()
            .chain(&self.queues[3])
            .copied()
            .collect();
        match self.strategy {
            RankingStrategy::AugServe => {
                self.by_score(&mut running, now, alpha);
                self.by_score(&mut swapped, now, alpha);
                self.by_score(&mut waiting, now, alpha);
            }
            RankingStrategy::Fcfs => {
                self.by_arrival(&mut running);
                self.by_arrival(&mut swapped);
                self.by_arrival(&mut waiting);
            }
            RankingStrategy::Random { .. } => {
                self.by_arrival(&mut running);
                self.by_arrival(&mut swapped);
                self.by_arrival(&mut waiting);
                waiting.shuffle(&mut self.shuffle);
            }
        }
        RankedQueues {
            running,
            swapped,
            waiting,
        }
    }
}

// ---------------------------------------------------------------------------
// Batch construction

/// What a request needs next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Work {
    /// One token of decoding.
    Decode,
    /// Chunkable prompt, recompute or return-assimilation tokens.
    Prefill { remaining: u64 },
    /// Host-resident context waiting to move back.
    SwapIn { remaining: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub work: Work,
    /// Tokens of context currently resident on the accelerator.
    pub resident: u64,
}

/// Memory visible to the batch builder, in tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryView {
    pub free_tokens: u64,
    /// Paused contexts that may be dropped, as `(id, resident tokens)` in
    /// eviction order.
    pub evictable: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub id: u64,
    pub tokens: u64,
    pub work: Work,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub entries: Vec<BatchEntry>,
    /// Paused contexts dropped to make room.
    pub evicted: Vec<u64>,
    /// Running requests whose context was dropped to make room.
    pub preempted: Vec<u64>,
}

impl Batch {
    pub fn tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.tokens).sum()
    }

    /// Tokens that occupy compute (everything except swap-in traffic).
    pub fn compute_tokens(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| !matches!(e.work, Work::SwapIn { .. }))
            .map(|e| e.tokens)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

struct Filler<'a> {
    left: u64,
    swap_left: u64,
    free: u64,
    evictable: &'a [(u64, u64)],
    next_evict: usize,
    batch: Batch,
}

impl Filler<'_> {
    /// Drops paused contexts until `need` tokens are free or none remain.
    fn make_room(&mut self, need: u64) {
        while self.free < need && self.next_evict < self.evictable.len() {
            let (id, size) = self.evictable[self.next_evict];
            self.next_evict += 1;
            self.free += size;
            self.batch.evicted.push(id);
        }
    }

    fn desired(&self, work: Work) -> u64 {
        match work {
            Work::Decode => 1,
            Work::Prefill { remaining } => remaining.min(self.left),
            Work::SwapIn { remaining } => remaining.min(self.left).min(self.swap_left),
        }
    }

    fn grant(&mut self, id: u64, work: Work, tokens: u64) {
        self.free -= tokens;
        self.left -= tokens;
        if matches!(work, Work::SwapIn { .. }) {
            self.swap_left -= tokens;
        }
        self.batch.entries.push(BatchEntry { id, tokens, work });
    }
}

/// Fills one iteration's batch.
///
/// Tiers are served strictly in order. A running request that cannot get
/// memory first drops paused contexts, then preempts the lowest-ranked
/// running requests not yet served, and as a last resort gives up its own
/// context. Swapped and waiting requests that do not fit are skipped so
/// they never block cheaper requests behind them. A waiting request is only
/// admitted if its whole chunk fits.
pub fn build_batch(
    ranked: &RankedQueues,
    candidate: impl Fn(u64) -> Candidate,
    budget: u64,
    swap_in_cap: u64,
    mem: MemoryView,
) -> Batch {
    let mut f = Filler {
        left: budget,
        swap_left: swap_in_cap,
        free: mem.free_tokens,
        evictable: &mem.evictable,
        next_evict: 0,
        batch: Batch::default(),
    };
    let mut victims_from = ranked.running.len();

    for (i, &id) in ranked.running.iter().enumerate() {
        if f.left == 0 {
            break;
        }
        if i >= victims_from {
            break;
        }
        let c = candidate(id);
        let want = f.desired(c.work);
        if want == 0 {
            continue;
        }
        f.make_room(want);
        while f.free < want && victims_from > i + 1 {
            victims_from -= 1;
            let victim = ranked.running[victims_from];
            let held = candidate(victim).resident;
            f.batch.preempted.push(victim);
            f.free += held;
        }
        let grant = match c.work {
            Work::Decode => u64::from(f.free >= 1),
            _ => want.min(f.free),
        };
        if grant == 0 {
            if c.resident > 0 {
                f.batch.preempted.push(id);
                f.free += c.resident;
            }
            continue;
        }
        f.grant(id, c.work, grant);
    }

    if !f.batch.preempted.is_empty() {
        return f.batch;
    }

    for &id in &ranked.swapped {
        if f.left == 0 {
            break;
        }
        let c = candidate(id);
        let want = f.desired(c.work);
        if want == 0 {
            continue;
        }
        f.make_room(want);
        let grant = want.min(f.free);
        if grant > 0 {
            f.grant(id, c.work, grant);
        }
    }

    for &id in &ranked.waiting {
        if f.left == 0 {
            break;
        }
        let c = candidate(id);
        let want = f.desired(c.work);
        if want == 0 {
            continue;
        }
        f.make_room(want);
        if f.free >= want {
            f.grant(id, c.work, want);
        }
    }

    f.batch
}
