//! Synchronous round executor for the random phone call model.
//!
//! A step is bracketed by [`Engine::begin_step`] and [`Engine::end_step`].
//! Inside a step each healthy node may open at most one outgoing channel and
//! push or pull payloads over open channels. Payloads are always computed
//! from the sets nodes held at the start of the step; all unions are applied
//! together at `end_step`, so the order in which nodes act within a step
//! never matters.

pub mod message;
pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;
pub use message::{MessageSet, MessageStore, Tracking};
pub use trace::{reaching_target, ChannelRecord, DeliveryRecord, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("node {0} opened a second outgoing channel in one step")]
    DoubleOpen(NodeId),
    #[error("channel used outside the step it was opened in")]
    ClosedChannel,
    #[error("no step is open")]
    NotInStep,
    #[error("previous step was not closed")]
    StepStillOpen,
    #[error("node {0} out of range")]
    UnknownNode(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Callee sampled uniformly from the neighborhood.
    Uniform,
    /// Callee sampled uniformly while avoiding stored addresses.
    Avoid,
    /// Reuse of a stored link address.
    Addressed,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Uniform => "uniform",
            ChannelKind::Avoid => "avoid",
            ChannelKind::Addressed => "addressed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Opener to callee.
    Push,
    /// Callee to opener.
    Pull,
}

/// Handle to a channel opened in a particular step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelRef {
    step: u64,
    index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channel {
    pub opener: NodeId,
    pub callee: NodeId,
    pub kind: ChannelKind,
    packets: u32,
}

/// What a packet carries.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// The sender's whole message set as of the start of the step.
    Snapshot,
    /// A single original message.
    Origin(NodeId),
    /// An explicit set.
    Set(MessageSet),
    /// A node identifier (leader election); does not touch message sets.
    Id(u32),
    /// A random-walk token. `body: None` sends the sender's snapshot.
    Walk { body: Option<MessageSet>, moves: u32 },
}

/// What a delivered packet carried, as reported by [`Engine::end_step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    Set,
    Origin(NodeId),
    Id(u32),
    Walk { moves: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub from: NodeId,
    pub to: NodeId,
    pub direction: Direction,
    pub kind: ChannelKind,
    pub content: Content,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    /// Queued for delivery at the end of the step.
    Queued,
    /// Transmitted and counted, but the receiver is failed.
    Dropped,
    /// The sender is failed; nothing was transmitted.
    SenderFailed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAccount {
    pub steps: u64,
    pub channels_opened: u64,
    pub packets_sent: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAccount {
    pub phase: String,
    pub steps: u64,
    pub channels_opened: u64,
    pub packets_sent: u64,
}

struct Pending {
    from: u32,
    to: u32,
    direction: Direction,
    kind: ChannelKind,
    payload: Payload,
}

const NONE: u32 = u32::MAX;

/// Per-run world state shared by all protocols.
pub struct Engine {
    n: usize,
    tracking: Tracking,
    store: MessageStore,
    failed: Vec<bool>,
    failed_count: usize,
    scheduled_failures: Vec<(u64, NodeId)>,
    next_failure: usize,
    step: u64,
    in_step: bool,
    channels: Vec<Channel>,
    opened_at: Vec<u64>,
    pending: Vec<Pending>,
    account: StepAccount,
    sent_by_node: Vec<u32>,
    phases: Vec<PhaseAccount>,
    current_phase: Option<usize>,
    trace: Option<Trace>,
    coverage: Vec<(u64, f64)>,
    watched: Vec<(NodeId, Option<usize>, Vec<u32>)>,
    recv_mark: Vec<u64>,
    snap_slot: Vec<u32>,
    scratch: Vec<u64>,
}

impl Engine {
    pub fn new(tracking: Tracking) -> Self {
        let n = tracking.n();
        let store = MessageStore::initial(&tracking);
        Engine {
            n,
            store,
            tracking,
            failed: vec![false; n],
            failed_count: 0,
            scheduled_failures: Vec::new(),
            next_failure: 0,
            step: 0,
            in_step: false,
            channels: Vec::new(),
            opened_at: vec![u64::MAX; n],
            pending: Vec::new(),
            account: StepAccount::default(),
            sent_by_node: vec![0; n],
            phases: Vec::new(),
            current_phase: None,
            trace: None,
            coverage: Vec::new(),
            watched: Vec::new(),
            recv_mark: vec![u64::MAX; n],
            snap_slot: vec![NONE; n],
            scratch: Vec::new(),
        }
    }

    pub fn with_full_tracking(n: usize) -> Self {
        Self::new(Tracking::full(n))
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Trace::default);
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.trace.take()
    }

    /// Records the per-step informed count of `origins` (tracked ones only).
    pub fn watch(&mut self, origins: &[NodeId]) {
        for &o in origins {
            let slot = self.tracking.slot(o);
            let initial = slot.map_or(0, |s| self.count_holding(s) as u32);
            self.watched.push((o, slot, vec![initial]));
        }
    }

    /// Informed counts per watched origin: entry 0 is the initial count,
    /// entry `t + 1` the count after step `t`.
    pub fn watched(&self) -> impl Iterator<Item = (NodeId, &[u32])> {
        self.watched.iter().map(|(o, _, c)| (*o, c.as_slice()))
    }

    fn count_holding(&self, slot: usize) -> usize {
        (0..self.n).filter(|&v| self.store.contains_slot(v, slot)).count()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tracking(&self) -> &Tracking {
        &self.tracking
    }

    pub fn store(&self) -> &MessageStore {
        &self.store
    }

    /// Index of the step currently open, or of the next step to be opened.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn in_step(&self) -> bool {
        self.in_step
    }

    pub fn account(&self) -> StepAccount {
        self.account
    }

    pub fn phases(&self) -> &[PhaseAccount] {
        &self.phases
    }

    pub fn max_packets_per_node(&self) -> u64 {
        self.sent_by_node.iter().copied().max().unwrap_or(0) as u64
    }

    pub fn packets_sent_by(&self, v: NodeId) -> u64 {
        self.sent_by_node[v.index()] as u64
    }

    pub fn packets_by_node(&self) -> &[u32] {
        &self.sent_by_node
    }

    /// Unions every row of `other` into this engine's store.
    pub fn absorb_store(&mut self, other: &MessageStore) {
        self.store.union_store(other);
    }

    pub fn coverage_timeline(&self) -> &[(u64, f64)] {
        &self.coverage
    }

    pub fn open_channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Accounting from here on is attributed to `phase`.
    pub fn set_phase(&mut self, phase: &str) {
        let idx = match self.phases.iter().position(|p| p.phase == phase) {
            Some(i) => i,
            None => {
                self.phases.push(PhaseAccount {
                    phase: phase.to_string(),
                    steps: 0,
                    channels_opened: 0,
                    packets_sent: 0,
                });
                self.phases.len() - 1
            }
        };
        self.current_phase = Some(idx);
    }

    fn phase_mut(&mut self) -> Option<&mut PhaseAccount> {
        self.current_phase.map(|i| &mut self.phases[i])
    }

    pub fn is_failed(&self, v: NodeId) -> bool {
        self.failed[v.index()]
    }

    pub fn failed_count(&self) -> usize {
        self.failed_count
    }

    pub fn healthy_count(&self) -> usize {
        self.n - self.failed_count
    }

    /// Marks `v` failed immediately. Its state is frozen from now on.
    pub fn fail(&mut self, v: NodeId) {
        if !self.failed[v.index()] {
            self.failed[v.index()] = true;
            self.failed_count += 1;
        }
    }

    /// Fails `v` at the beginning of step `step`.
    pub fn schedule_failure(&mut self, step: u64, v: NodeId) {
        self.scheduled_failures.push((step, v));
        self.scheduled_failures[self.next_failure..].sort_unstable();
    }

    pub fn knows(&self, v: NodeId, origin: NodeId) -> bool {
        self.tracking.slot(origin).is_some_and(|s| self.store.contains_slot(v.index(), s))
    }

    pub fn message_set(&self, v: NodeId) -> MessageSet {
        self.store.set_of(v.index())
    }

    pub fn known_count(&self, v: NodeId) -> usize {
        self.store.known(v.index())
    }

    pub fn begin_step(&mut self) -> Result<(), EngineError> {
        if self.in_step {
            return Err(EngineError::StepStillOpen);
        }
        while let Some(&(at, v)) = self.scheduled_failures.get(self.next_failure) {
            if at > self.step {
                break;
            }
            self.fail(v);
            self.next_failure += 1;
        }
        self.in_step = true;
        self.channels.clear();
        Ok(())
    }

    /// Opens `v`'s outgoing channel for this step. Returns `Ok(None)` when
    /// `v` is failed (a failed node opens nothing). A failed callee is
    /// allowed: the opener cannot know, and the open is still counted.
    pub fn open_channel(
        &mut self,
        v: NodeId,
        target: NodeId,
        kind: ChannelKind,
    ) -> Result<Option<ChannelRef>, EngineError> {
        if !self.in_step {
            return Err(EngineError::NotInStep);
        }
        for w in [v, target] {
            if w.index() >= self.n {
                return Err(EngineError::UnknownNode(w));
            }
        }
        if self.failed[v.index()] {
            return Ok(None);
        }
        if self.opened_at[v.index()] == self.step {
            return Err(EngineError::DoubleOpen(v));
        }
        self.opened_at[v.index()] = self.step;
        let index = self.channels.len() as u32;
        self.channels.push(Channel { opener: v, callee: target, kind, packets: 0 });
        self.account.channels_opened += 1;
        if let Some(p) = self.phase_mut() {
            p.channels_opened += 1;
        }
        Ok(Some(ChannelRef { step: self.step, index }))
    }

    pub fn channel(&self, ch: ChannelRef) -> Result<Channel, EngineError> {
        if !self.in_step || ch.step != self.step {
            return Err(EngineError::ClosedChannel);
        }
        Ok(self.channels[ch.index as usize])
    }

    /// Sends one packet over `ch`. One packet is counted no matter how many
    /// origins the payload holds.
    pub fn send(&mut self, ch: ChannelRef, direction: Direction, payload: Payload) -> Result<SendOutcome, EngineError> {
        let c = self.channel(ch)?;
        let (from, to) = match direction {
            Direction::Push => (c.opener, c.callee),
            Direction::Pull => (c.callee, c.opener),
        };
        if self.failed[from.index()] {
            return Ok(SendOutcome::SenderFailed);
        }
        self.account.packets_sent += 1;
        self.sent_by_node[from.index()] += 1;
        self.channels[ch.index as usize].packets += 1;
        if let Some(p) = self.phase_mut() {
            p.packets_sent += 1;
        }
        if self.failed[to.index()] {
            return Ok(SendOutcome::Dropped);
        }
        self.pending.push(Pending { from: from.0, to: to.0, direction, kind: c.kind, payload });
        Ok(SendOutcome::Queued)
    }

    /// Applies all queued unions, closes every channel and returns the
    /// deliveries of this step in send order.
    pub fn end_step(&mut self) -> Result<Vec<Delivery>, EngineError> {
        if !self.in_step {
            return Err(EngineError::NotInStep);
        }
        let pending = std::mem::take(&mut self.pending);
        let step = self.step;
        let w = self.store.words_per_row();

        // Rows that will change this step; senders among them are copied first
        // so every payload reflects the start-of-step state.
        for p in &pending {
            if self.failed[p.to as usize] {
                continue;
            }
            self.recv_mark[p.to as usize] = step;
        }
        let mut snapped: Vec<u32> = Vec::new();
        self.scratch.clear();
        for p in &pending {
            let snapshot_payload = matches!(p.payload, Payload::Snapshot | Payload::Walk { body: None, .. });
            let s = p.from as usize;
            if snapshot_payload && self.recv_mark[s] == step && self.snap_slot[s] == NONE {
                self.snap_slot[s] = snapped.len() as u32;
                snapped.push(p.from);
                self.scratch.extend_from_slice(self.store.row(s));
            }
        }

        let mut deliveries = Vec::with_capacity(pending.len());
        for p in pending {
            let (from, to) = (p.from as usize, p.to as usize);
            let content = match p.payload {
                Payload::Snapshot | Payload::Walk { body: None, .. } => {
                    if from != to {
                        match self.snap_slot[from] {
                            NONE => {
                                self.store.or_row_into(to, from);
                            }
                            i => {
                                let i = i as usize;
                                let src = &self.scratch[i * w..(i + 1) * w];
                                self.store.or_into(to, src);
                            }
                        }
                    }
                    match p.payload {
                        Payload::Walk { moves, .. } => Content::Walk { moves },
                        _ => Content::Set,
                    }
                }
                Payload::Origin(o) => {
                    if let Some(s) = self.tracking.slot(o) {
                        self.store.insert_slot(to, s);
                    }
                    Content::Origin(o)
                }
                Payload::Set(set) => {
                    self.store.or_into(to, set.words());
                    Content::Set
                }
                Payload::Walk { body: Some(set), moves } => {
                    self.store.or_into(to, set.words());
                    Content::Walk { moves }
                }
                Payload::Id(id) => Content::Id(id),
            };
            deliveries.push(Delivery {
                from: NodeId(p.from),
                to: NodeId(p.to),
                direction: p.direction,
                kind: p.kind,
                content,
            });
        }
        for s in snapped {
            self.snap_slot[s as usize] = NONE;
        }

        if let Some(trace) = self.trace.as_mut() {
            for c in &self.channels {
                trace.channels.push(ChannelRecord {
                    step,
                    opener: c.opener,
                    callee: c.callee,
                    kind: c.kind,
                    packets: c.packets,
                });
            }
            for d in &deliveries {
                trace.deliveries.push(DeliveryRecord { step, from: d.from, to: d.to, content: d.content });
            }
        }

        self.channels.clear();
        self.in_step = false;
        self.account.steps += 1;
        if let Some(p) = self.phase_mut() {
            p.steps += 1;
        }
        let k = self.tracking.len() as f64;
        let frac = if k == 0.0 { 1.0 } else { self.store.total_known() as f64 / (self.n as f64 * k) };
        self.coverage.push((step, frac));
        for i in 0..self.watched.len() {
            let c = self.watched[i].1.map_or(0, |s| self.count_holding(s) as u32);
            self.watched[i].2.push(c);
        }
        self.step += 1;
        Ok(deliveries)
    }

    /// Tracked origins of healthy nodes.
    pub fn healthy_tracked(&self) -> MessageSet {
        MessageSet::from_origins(
            &self.tracking,
            self.tracking.origins().iter().copied().filter(|o| !self.failed[o.index()]),
        )
    }

    /// Whether every healthy node holds every tracked origin of a healthy
    /// node. A world with no healthy node is never complete.
    pub fn is_complete(&self) -> bool {
        if self.failed_count == self.n {
            return false;
        }
        let k = self.tracking.len();
        if self.failed_count == 0 {
            return self.store.total_known() == (self.n * k) as u64;
        }
        let target = self.healthy_tracked();
        let need = target.len();
        let healthy = || (0..self.n).filter(|&v| !self.failed[v]);
        if healthy().any(|v| self.store.known(v) < need) {
            return false;
        }
        healthy().all(|v| self.store.row(v).iter().zip(target.words()).all(|(a, b)| b & !a == 0))
    }
}
