//! Closed-form operation counts, in hash-equivalents (an HMAC counts as 2).
//!
//! `n` is the number of subscribers, `k` the number of unpredictable binary
//! fields, `k_u` the urgent fields of the state-change design and `depth`
//! the proof length of the leaf being sent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash_tree::TreeKind;

use super::baseline::BaselineDesign;

/// Every design the cost table covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Baseline(BaselineDesign),
    Cma(TreeKind),
    Cmma(TreeKind),
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Baseline(BaselineDesign::NoPrecompute),
        Scheme::Baseline(BaselineDesign::PredictOne),
        Scheme::Baseline(BaselineDesign::PrecomputeAll),
        Scheme::Baseline(BaselineDesign::StateChange),
        Scheme::Cma(TreeKind::Mht),
        Scheme::Cma(TreeKind::Hht),
        Scheme::Cmma(TreeKind::Mht),
        Scheme::Cmma(TreeKind::Hht),
    ];

    /// Scheme name without the tree kind.
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline(d) => d.label(),
            Scheme::Cma(_) => "CMA",
            Scheme::Cmma(_) => "CMMA",
        }
    }

    pub fn tree_kind(self) -> Option<TreeKind> {
        match self {
            Scheme::Baseline(_) => None,
            Scheme::Cma(t) | Scheme::Cmma(t) => Some(t),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tree_kind() {
            Some(t) => write!(f, "{}-{}", self.name(), t.label()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown scheme `{s}`")))
    }
}

/// Which candidate the true message turned out to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The precomputed (or urgent) case.
    Hit,
    /// The non-precomputed (or non-urgent) case.
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    pub n: u64,
    pub k: u32,
    pub k_u: u32,
    pub depth: u64,
}

/// Expected costs for one message and one interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Costs {
    /// Publisher work after the true message is known.
    pub post_message: u64,
    /// Publisher work before the interval, per interval.
    pub per_interval: u64,
    pub subscriber: u64,
    /// 32-byte values sent per message.
    pub communication: u64,
}

fn pow2(e: u32) -> u64 {
    1u64 << e
}

/// Table entry for `scheme`. Tree schemes ignore `outcome`; the baseline
/// ones ignore `depth`.
pub fn expected(scheme: Scheme, p: CostParams, outcome: Outcome) -> Costs {
    let n = p.n;
    let d = p.depth;
    let mac_all = 2 * n;
    let tree = 2 * pow2(p.k) - 1;
    let miss = |c| if outcome == Outcome::Hit { 0 } else { c };
    match scheme {
        Scheme::Baseline(BaselineDesign::NoPrecompute) => Costs { post_message: mac_all, per_interval: 0, subscriber: 2, communication: n },
        Scheme::Baseline(BaselineDesign::PredictOne) => Costs { post_message: miss(mac_all), per_interval: mac_all, subscriber: 2, communication: n },
        Scheme::Baseline(BaselineDesign::PrecomputeAll) => {
            Costs { post_message: 0, per_interval: mac_all * pow2(p.k), subscriber: 2, communication: n }
        }
        Scheme::Baseline(BaselineDesign::StateChange) => {
            Costs { post_message: miss(mac_all), per_interval: mac_all * pow2(p.k_u), subscriber: 2, communication: n }
        }
        Scheme::Cma(_) => Costs { post_message: 0, per_interval: mac_all + tree, subscriber: d + 3, communication: n * (d + 2) },
        // tree + derive 1 + MAC 2 + amortized chain step 1
        Scheme::Cmma(_) => Costs { post_message: 0, per_interval: tree + 4, subscriber: d + 5, communication: d + 3 },
    }
}

/// Publisher total over `intervals` intervals carrying `messages` messages,
/// all with the given outcome.
pub fn publisher_total(scheme: Scheme, p: CostParams, outcome: Outcome, intervals: u64, messages: u64) -> u64 {
    let c = expected(scheme, p, outcome);
    c.per_interval * intervals + c.post_message * messages
}
