use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hash_tree::TreeKind;
use crate::message::DistributionKind;
use crate::protocols::RejectReason;

use super::adversary::AdversaryReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Publisher,
    Subscriber(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Key setup: pairwise keys or chain generation.
    Initialize,
    Prioritize,
    TreeBuilt,
    /// Baseline MAC precomputation.
    Precomputed,
    AnnounceSent,
    AnnounceRecv,
    MsgArrived,
    Proved,
    CacheMiss,
    KeyDisclosed,
    Verified,
    Rejected,
    Dropped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_us: u64,
    pub party: Party,
    pub kind: EventKind,
    pub slot: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg_id: Option<u64>,
    pub hash_ops: u64,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub adversarial: bool,
}

/// Events in the order they were processed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|source| crate::Error::Io { path: "<trace>".into(), source })?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line.map_err(|source| crate::Error::Io { path: "<trace>".into(), source })?;
            if !line.trim().is_empty() {
                events.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { events })
    }

    pub fn ops_by_party(&self) -> BTreeMap<Party, u64> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            *out.entry(e.party).or_insert(0) += e.hash_ops;
        }
        out
    }

    pub fn is_time_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time_us <= w[1].time_us)
    }
}

/// Summary statistics (population standard deviation).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: u64,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: v.len() as u64,
            mean,
            stddev: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PublisherTotals {
    pub total_ops: u64,
    /// Key setup, including chain generation.
    pub init_ops: u64,
    pub pre_message_ops: u64,
    pub post_message_ops: u64,
    /// `total - chain generation + one chain step per built interval`;
    /// present for the chain-based scheme.
    pub amortized_total_ops: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubscriberTotals {
    pub total_ops: u64,
    pub verified: u64,
    pub rejected: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scheme: String,
    pub tree_kind: Option<TreeKind>,
    pub n: usize,
    pub k: u32,
    pub distribution: DistributionKind,
    pub seed: u64,
    pub horizon: u32,
    /// True messages sent, repeats included.
    pub messages: u64,
    /// Honest packets that reached a subscriber.
    pub deliveries: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    /// Repeated sends that reused an earlier packet verbatim.
    pub repeated_proofs: u64,
    pub publisher: PublisherTotals,
    /// Publisher ops between a message's arrival and its transmission.
    pub post_message_ops: Stats,
    pub subscribers: Vec<SubscriberTotals>,
    /// Honest subscriber ops, including announcement checks, per delivery.
    pub subscriber_ops_per_message: f64,
    /// Ops of the per-message verification call.
    pub verify_ops: Stats,
    pub latency_us: Stats,
    /// 32-byte values sent per message, counted from wire encodings.
    pub communication_values: Stats,
    /// Honest-packet rejections by cause.
    pub rejections: BTreeMap<RejectReason, u64>,
    pub adversary: Option<AdversaryReport>,
    pub invariant_violations: Vec<String>,
}

impl SimReport {
    pub fn is_clean(&self) -> bool {
        self.invariant_violations.is_empty() && self.adversary.as_ref().is_none_or(|a| a.accepted == 0)
    }
}

/// Per-delivery timing and cost, recovered from a trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub msg_id: u64,
    pub subscriber: usize,
    pub post_message_source_ops: u64,
    pub verify_ops: u64,
    /// From arrival at the publisher to the end of verification.
    pub end_to_end_us: u64,
    pub accepted: bool,
}

/// Joins each honest verification with its message's arrival and send
/// events. `hash_op_time_ns` converts verification ops to time.
pub fn latency_profile(trace: &EventTrace, hash_op_time_ns: u64) -> Vec<LatencyRecord> {
    let mut arrived: HashMap<u64, u64> = HashMap::new();
    let mut post_ops: HashMap<u64, u64> = HashMap::new();
    let mut out = Vec::new();
    for e in trace.events.iter().filter(|e| !e.adversarial) {
        let Some(id) = e.msg_id else { continue };
        match (e.party, e.kind) {
            (Party::Publisher, EventKind::MsgArrived) => {
                arrived.insert(id, e.time_us);
            }
            (Party::Publisher, EventKind::Proved | EventKind::CacheMiss) => {
                post_ops.insert(id, e.hash_ops);
            }
            (Party::Subscriber(s), EventKind::Verified | EventKind::Rejected) => {
                let start = arrived.get(&id).copied().unwrap_or(e.time_us);
                out.push(LatencyRecord {
                    msg_id: id,
                    subscriber: s,
                    post_message_source_ops: post_ops.get(&id).copied().unwrap_or(0),
                    verify_ops: e.hash_ops,
                    end_to_end_us: e.time_us - start + e.hash_ops * hash_op_time_ns / 1000,
                    accepted: e.kind == EventKind::Verified,
                });
            }
            _ => {}
        }
    }
    out
}
