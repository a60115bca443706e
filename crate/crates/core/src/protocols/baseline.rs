//! Per-message MAC designs that differ only in what the publisher MACs
//! before the true message is known.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, OpCounter, SymmetricKey};
use crate::error::{Error, Result};
use crate::message::{Message, PrioritizedSet};

use super::{message_mac, MacTaggedMessage, RejectReason, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineDesign {
    /// MAC after the message is known.
    NoPrecompute,
    /// Precompute MACs for the most likely candidate.
    PredictOne,
    /// Precompute MACs for every candidate.
    PrecomputeAll,
    /// Precompute MACs for the `2^k_u` urgent state changes.
    StateChange,
}

impl BaselineDesign {
    pub const ALL: [BaselineDesign; 4] = [Self::NoPrecompute, Self::PredictOne, Self::PrecomputeAll, Self::StateChange];

    pub fn label(self) -> &'static str {
        match self {
            Self::NoPrecompute => "NO_PRECOMPUTE",
            Self::PredictOne => "PREDICT_ONE",
            Self::PrecomputeAll => "PRECOMPUTE_ALL",
            Self::StateChange => "STATE_CHANGE",
        }
    }
}

impl fmt::Display for BaselineDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BaselineDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown baseline design `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub design: BaselineDesign,
    pub k: u32,
    /// Urgent fields for [`BaselineDesign::StateChange`]; must be below `k`.
    #[serde(default)]
    pub k_u: u32,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.design == BaselineDesign::StateChange && self.k_u >= self.k {
            return Err(Error::ConfigInvalid(format!("k_u = {} must be below k = {}", self.k_u, self.k)));
        }
        Ok(())
    }

    /// Candidate indices whose MACs are computed ahead of time.
    ///
    /// Urgent state changes are candidates `1..=2^k_u`; candidate 0 (the
    /// retransmission) is never urgent. Ties for the most likely candidate
    /// go to the lowest index.
    pub fn precomputed_indices(&self, set: &PrioritizedSet) -> Vec<usize> {
        match self.design {
            BaselineDesign::NoPrecompute => Vec::new(),
            BaselineDesign::PredictOne => {
                let w = set.weights();
                let best = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
                if w.is_empty() { Vec::new() } else { vec![best] }
            }
            BaselineDesign::PrecomputeAll => (0..set.len()).collect(),
            BaselineDesign::StateChange => (1..=(1usize << self.k_u)).filter(|&i| i < set.len()).collect(),
        }
    }
}

/// Publisher for one of the baseline designs.
#[derive(Clone, Debug)]
pub struct BaselinePublisher {
    config: BaselineConfig,
    keys: Vec<SymmetricKey>,
    cache: HashMap<Vec<u8>, Vec<Digest>>,
    ts: u64,
}

impl BaselinePublisher {
    pub fn new(config: BaselineConfig, keys: Vec<SymmetricKey>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, keys, cache: HashMap::new(), ts: 0 })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    /// Discards the previous interval's MACs and precomputes this one's.
    /// Costs `2N` per precomputed candidate.
    pub fn precompute(&mut self, set: &PrioritizedSet, ts: u64, ctr: &mut OpCounter) -> Result<()> {
        self.cache.clear();
        self.ts = ts;
        for i in self.config.precomputed_indices(set) {
            let enc = set.messages()[i].canonical_encode()?;
            let macs = self.keys.iter().map(|k| message_mac(k, &enc, ts, ctr)).collect();
            self.cache.insert(enc, macs);
        }
        Ok(())
    }

    /// Sends `m` stamped with the interval timestamp. Returns whether its
    /// MACs were already cached; a miss costs `2N`.
    pub fn send(&self, m: &Message, ctr: &mut OpCounter) -> Result<(MacTaggedMessage, bool)> {
        let enc = m.canonical_encode()?;
        match self.cache.get(&enc) {
            Some(macs) => Ok((MacTaggedMessage { message: m.clone(), ts: self.ts, macs: macs.clone() }, true)),
            None => Ok((MacTaggedMessage::sign(&self.keys, m.clone(), self.ts, ctr)?, false)),
        }
    }
}

/// Subscriber for the baseline designs. Each message costs 2.
#[derive(Clone, Debug)]
pub struct BaselineSubscriber {
    pub index: usize,
    pub key: SymmetricKey,
}

impl BaselineSubscriber {
    pub fn verify(&self, msg: &MacTaggedMessage, ctr: &mut OpCounter) -> Verdict {
        match msg.verify(self.index, &self.key, ctr) {
            Ok(true) => Verdict::Accept,
            Ok(false) => Verdict::Reject(RejectReason::BadMac),
            Err(_) => Verdict::Reject(RejectReason::Malformed),
        }
    }
}

/// One interval of a baseline run: the candidate set, its timestamp and
/// the messages actually sent.
#[derive(Clone, Debug)]
pub struct BaselineSlot {
    pub set: PrioritizedSet,
    pub ts: u64,
    pub sent: Vec<Message>,
}

/// Operation counts from [`run_baseline`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub pre_message: Vec<u64>,
    pub post_message: Vec<u64>,
    pub subscriber: Vec<u64>,
    pub communication: Vec<u64>,
    pub hits: u64,
    pub misses: u64,
    pub rejected: u64,
}

impl CostReport {
    pub fn publisher_total(&self) -> u64 {
        self.pre_message.iter().sum::<u64>() + self.post_message.iter().sum::<u64>()
    }
}

/// Runs a baseline design over a trace, verifying every message at every
/// subscriber.
pub fn run_baseline(config: BaselineConfig, keys: &[SymmetricKey], trace: &[BaselineSlot], cost_model: crate::crypto::CostModel) -> Result<CostReport> {
    let mut publisher = BaselinePublisher::new(config, keys.to_vec())?;
    let subs: Vec<BaselineSubscriber> = keys.iter().cloned().enumerate().map(|(index, key)| BaselineSubscriber { index, key }).collect();
    let mut ctr = OpCounter::with_cost_model(cost_model);
    let mut report = CostReport::default();
    for slot in trace {
        let (r, c) = ctr.measure(|c| publisher.precompute(&slot.set, slot.ts, c));
        r?;
        report.pre_message.push(c);
        for m in &slot.sent {
            let (r, c) = ctr.measure(|c| publisher.send(m, c));
            let (tagged, hit) = r?;
            report.post_message.push(c);
            if hit {
                report.hits += 1;
            } else {
                report.misses += 1;
            }
            report.communication.push(tagged.overhead_values()? as u64);
            for s in &subs {
                let (v, c) = ctr.measure(|c| s.verify(&tagged, c));
                report.subscriber.push(c);
                if !v.is_accept() {
                    report.rejected += 1;
                }
            }
        }
    }
    Ok(report)
}
