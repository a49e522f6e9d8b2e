//! Per-step channel and delivery logs.
//!
//! The text form has one record per channel: `step opener callee kind packets`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ChannelKind, Content};
use crate::graph::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub step: u64,
    pub opener: NodeId,
    pub callee: NodeId,
    pub kind: ChannelKind,
    pub packets: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub step: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub content: Content,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub channels: Vec<ChannelRecord>,
    pub deliveries: Vec<DeliveryRecord>,
}

impl Trace {
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.channels {
            writeln!(w, "{} {} {} {} {}", c.step, c.opener, c.callee, c.kind.as_str(), c.packets)?;
        }
        Ok(())
    }

    /// Origins that can have reached each node by a temporal chain of
    /// deliveries, replaying the delivery log from initial singleton sets.
    /// Whole-set deliveries propagate everything the sender could know;
    /// single-origin deliveries propagate just that origin; identifier
    /// packets propagate nothing.
    pub fn replay_reachability(&self, n: usize) -> Vec<Vec<bool>> {
        let mut reach: Vec<Vec<bool>> = (0..n)
            .map(|v| {
                let mut r = vec![false; n];
                r[v] = true;
                r
            })
            .collect();
        let mut i = 0;
        while i < self.deliveries.len() {
            let step = self.deliveries[i].step;
            let j = self.deliveries[i..].iter().position(|d| d.step != step).map_or(self.deliveries.len(), |k| i + k);
            let before = reach.clone();
            for d in &self.deliveries[i..j] {
                match d.content {
                    Content::Set | Content::Walk { .. } => {
                        for o in 0..n {
                            if before[d.from.index()][o] {
                                reach[d.to.index()][o] = true;
                            }
                        }
                    }
                    Content::Origin(o) => {
                        if before[d.from.index()][o.index()] {
                            reach[d.to.index()][o.index()] = true;
                        }
                    }
                    Content::Id(_) => {}
                }
            }
            i = j;
        }
        reach
    }
}

/// Nodes whose information can reach `target` through whole-set deliveries
/// in `log` (each entry `(step, from, to)`), respecting step order and
/// start-of-step snapshots. Processes the log backwards in time.
pub fn reaching_target(n: usize, log: &[(u64, NodeId, NodeId)], target: NodeId) -> Vec<bool> {
    let mut reach = vec![false; n];
    reach[target.index()] = true;
    let mut sorted: Vec<&(u64, NodeId, NodeId)> = log.iter().collect();
    sorted.sort_by_key(|e| std::cmp::Reverse(e.0));
    let mut i = 0;
    let mut added = Vec::new();
    while i < sorted.len() {
        let step = sorted[i].0;
        added.clear();
        while i < sorted.len() && sorted[i].0 == step {
            let (_, from, to) = *sorted[i];
            if reach[to.index()] && !reach[from.index()] {
                added.push(from.index());
            }
            i += 1;
        }
        for &v in &added {
            reach[v] = true;
        }
    }
    reach
}
