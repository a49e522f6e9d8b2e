//! Message sets as bit vectors over a universe of tracked origins.
//!
//! In full mode every node's original message is tracked and slot `i` is
//! origin `i`. In tracked-subset mode only `K` chosen origins get slots; the
//! others still travel through the protocol but are not represented in any
//! set. Every node's set lives in one contiguous row of a [`MessageStore`].

use serde::{Deserialize, Serialize};

use crate::graph::NodeId;

const NO_SLOT: u32 = u32::MAX;

/// Mapping between origins and bit slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tracking {
    n: usize,
    origins: Vec<NodeId>,
    slot_of: Vec<u32>,
}

impl Tracking {
    /// Tracks every origin; slot `i` is node `i`.
    pub fn full(n: usize) -> Self {
        Tracking { n, origins: (0..n as u32).map(NodeId).collect(), slot_of: (0..n as u32).collect() }
    }

    /// Tracks exactly `origins` (deduplicated, sorted).
    pub fn subset(n: usize, mut origins: Vec<NodeId>) -> Self {
        origins.sort_unstable();
        origins.dedup();
        let mut slot_of = vec![NO_SLOT; n];
        for (i, o) in origins.iter().enumerate() {
            assert!(o.index() < n, "tracked origin {o} out of range");
            slot_of[o.index()] = i as u32;
        }
        Tracking { n, origins, slot_of }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of tracked origins `K`.
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.origins.len() == self.n
    }

    pub fn words(&self) -> usize {
        self.origins.len().div_ceil(64)
    }

    pub fn slot(&self, origin: NodeId) -> Option<usize> {
        match self.slot_of[origin.index()] {
            NO_SLOT => None,
            s => Some(s as usize),
        }
    }

    pub fn origin(&self, slot: usize) -> NodeId {
        self.origins[slot]
    }

    pub fn origins(&self) -> &[NodeId] {
        &self.origins
    }
}

/// A set of tracked origins.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageSet {
    words: Vec<u64>,
}

impl MessageSet {
    pub fn empty(tracking: &Tracking) -> Self {
        MessageSet { words: vec![0; tracking.words()] }
    }

    pub fn from_words(words: Vec<u64>) -> Self {
        MessageSet { words }
    }

    pub fn from_origins(tracking: &Tracking, origins: impl IntoIterator<Item = NodeId>) -> Self {
        let mut s = Self::empty(tracking);
        for o in origins {
            s.insert_origin(tracking, o);
        }
        s
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn insert_slot(&mut self, slot: usize) -> bool {
        let (w, b) = (slot / 64, 1u64 << (slot % 64));
        let fresh = self.words[w] & b == 0;
        self.words[w] |= b;
        fresh
    }

    pub fn insert_origin(&mut self, tracking: &Tracking, origin: NodeId) -> bool {
        tracking.slot(origin).is_some_and(|s| self.insert_slot(s))
    }

    pub fn contains_slot(&self, slot: usize) -> bool {
        self.words[slot / 64] & (1u64 << (slot % 64)) != 0
    }

    pub fn contains_origin(&self, tracking: &Tracking, origin: NodeId) -> bool {
        tracking.slot(origin).is_some_and(|s| self.contains_slot(s))
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `self ← self ∪ other`; returns the number of newly added origins.
    pub fn union_with(&mut self, other: &MessageSet) -> usize {
        or_words(&mut self.words, &other.words)
    }

    pub fn is_superset(&self, other: &MessageSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| b & !a == 0)
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + b)
            })
        })
    }

    pub fn origins<'a>(&'a self, tracking: &'a Tracking) -> impl Iterator<Item = NodeId> + 'a {
        self.slots().map(|s| tracking.origin(s))
    }
}

/// `dst |= src`, returning how many bits were newly set.
#[inline]
pub(crate) fn or_words(dst: &mut [u64], src: &[u64]) -> usize {
    let mut added = 0u32;
    for (d, s) in dst.iter_mut().zip(src) {
        let new = s & !*d;
        added += new.count_ones();
        *d |= s;
    }
    added as usize
}

/// One row of bits per node, plus per-node popcounts.
#[derive(Clone, Debug)]
pub struct MessageStore {
    words: usize,
    data: Vec<u64>,
    known: Vec<u32>,
}

impl MessageStore {
    /// Every node starts holding exactly its own origin (when tracked).
    pub fn initial(tracking: &Tracking) -> Self {
        let n = tracking.n();
        let words = tracking.words();
        let mut data = vec![0u64; n * words];
        let mut known = vec![0u32; n];
        for v in 0..n {
            if let Some(s) = tracking.slot(NodeId(v as u32)) {
                data[v * words + s / 64] |= 1u64 << (s % 64);
                known[v] = 1;
            }
        }
        MessageStore { words, data, known }
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }

    #[inline]
    pub fn row(&self, v: usize) -> &[u64] {
        &self.data[v * self.words..(v + 1) * self.words]
    }

    #[inline]
    pub fn row_mut(&mut self, v: usize) -> &mut [u64] {
        &mut self.data[v * self.words..(v + 1) * self.words]
    }

    pub fn set_of(&self, v: usize) -> MessageSet {
        MessageSet::from_words(self.row(v).to_vec())
    }

    pub fn known(&self, v: usize) -> usize {
        self.known[v] as usize
    }

    pub fn total_known(&self) -> u64 {
        self.known.iter().map(|&k| k as u64).sum()
    }

    pub fn contains_slot(&self, v: usize, slot: usize) -> bool {
        self.row(v)[slot / 64] & (1u64 << (slot % 64)) != 0
    }

    /// `row(dst) |= src`.
    pub fn or_into(&mut self, dst: usize, src: &[u64]) -> usize {
        let added = or_words(self.row_mut(dst), src);
        self.known[dst] += added as u32;
        added
    }

    /// `row(dst) |= row(src)` for two distinct rows of this store.
    pub fn or_row_into(&mut self, dst: usize, src: usize) -> usize {
        debug_assert_ne!(dst, src);
        let w = self.words;
        let added = if dst < src {
            let (lo, hi) = self.data.split_at_mut(src * w);
            or_words(&mut lo[dst * w..(dst + 1) * w], &hi[..w])
        } else {
            let (lo, hi) = self.data.split_at_mut(dst * w);
            or_words(&mut hi[..w], &lo[src * w..(src + 1) * w])
        };
        self.known[dst] += added as u32;
        added
    }

    pub fn insert_slot(&mut self, v: usize, slot: usize) -> bool {
        let w = self.words;
        let word = &mut self.data[v * w + slot / 64];
        let b = 1u64 << (slot % 64);
        let fresh = *word & b == 0;
        *word |= b;
        if fresh {
            self.known[v] += 1;
        }
        fresh
    }

    /// Per-row union with another store over the same tracking.
    pub fn union_store(&mut self, other: &MessageStore) {
        assert_eq!(self.words, other.words);
        assert_eq!(self.known.len(), other.known.len());
        for v in 0..self.known.len() {
            let w = self.words;
            let added = or_words(&mut self.data[v * w..(v + 1) * w], &other.data[v * w..(v + 1) * w]);
            self.known[v] += added as u32;
        }
    }
}
