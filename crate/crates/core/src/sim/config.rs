use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash_tree::TreeKind;
use crate::message::{DistributionKind, GoosePdu, MAX_K};
use crate::protocols::baseline::BaselineDesign;
use crate::protocols::complexity::Scheme;
use crate::tesla::DisclosureSchedule;

use super::adversary::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemeKind {
    Cma,
    Cmma,
    NoPrecompute,
    PredictOne,
    PrecomputeAll,
    StateChange,
}

impl SchemeKind {
    pub fn with_tree(self, tree: TreeKind) -> Scheme {
        match self {
            SchemeKind::Cma => Scheme::Cma(tree),
            SchemeKind::Cmma => Scheme::Cmma(tree),
            SchemeKind::NoPrecompute => Scheme::Baseline(BaselineDesign::NoPrecompute),
            SchemeKind::PredictOne => Scheme::Baseline(BaselineDesign::PredictOne),
            SchemeKind::PrecomputeAll => Scheme::Baseline(BaselineDesign::PrecomputeAll),
            SchemeKind::StateChange => Scheme::Baseline(BaselineDesign::StateChange),
        }
    }

    pub fn uses_tree(self) -> bool {
        matches!(self, SchemeKind::Cma | SchemeKind::Cmma)
    }
}

/// Adversary attached to subscriber 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub strategy: Strategy,
    /// Total forgery attempts, spread over the honest messages.
    pub attempts: u64,
}

/// One simulation run. Times are in microseconds unless the name says
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of subscribers.
    pub n: usize,
    pub k: u32,
    /// Urgent fields for the state-change design.
    pub k_u: u32,
    pub scheme: SchemeKind,
    pub tree_kind: TreeKind,
    pub distribution: DistributionKind,
    /// Seed for [`DistributionKind::ExpIid`] weights; defaults to `seed`.
    pub distribution_seed: Option<u64>,
    /// Interval length; one prioritization and one tree per interval.
    pub time_allowed_to_live_ms: u64,
    /// Transmissions per interval. Repeats resend the first packet verbatim.
    pub messages_per_interval: u32,
    /// Probability a slot's message is drawn from the weights rather than
    /// being the most likely candidate.
    pub p_change: f64,
    /// Probability a slot's message lies outside the prioritized set.
    pub surprise_probability: f64,
    pub delay_min_us: u64,
    pub delay_max_us: u64,
    /// Each subscriber's clock is off by a fixed amount in `[-eps, eps]`.
    pub max_sync_error_us: u64,
    /// Loss probability for message packets, per link.
    pub loss_probability: f64,
    /// Loss probability for root announcements, per link.
    pub announcement_loss: f64,
    pub disclosure_delay: u32,
    /// Number of slots `T`.
    pub horizon: u32,
    /// Key-chain length; defaults to `horizon`.
    pub chain_length: Option<u32>,
    /// Pairwise keys are re-established every this many slots.
    pub rekey_every: Option<u32>,
    /// Simulated processing time per hash operation, in nanoseconds.
    pub hash_op_time_ns: u64,
    pub seed: u64,
    /// Fixed header fields for every candidate.
    pub template: GoosePdu,
    /// Per-slot true candidate index; `null` forces a surprise message.
    pub scripted_truth: Option<Vec<Option<usize>>>,
    pub adversary: Option<AdversaryConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 5,
            k: 3,
            k_u: 1,
            scheme: SchemeKind::Cmma,
            tree_kind: TreeKind::Hht,
            distribution: DistributionKind::NinetyUniform,
            distribution_seed: None,
            time_allowed_to_live_ms: 100,
            messages_per_interval: 1,
            p_change: 1.0,
            surprise_probability: 0.0,
            delay_min_us: 50,
            delay_max_us: 500,
            max_sync_error_us: 100,
            loss_probability: 0.0,
            announcement_loss: 0.0,
            disclosure_delay: 1,
            horizon: 100,
            chain_length: None,
            rekey_every: None,
            hash_op_time_ns: 1000,
            seed: 0,
            template: GoosePdu::default(),
            scripted_truth: None,
            adversary: None,
        }
    }
}

fn check_probability(name: &str, p: f64, below_one: bool) -> Result<()> {
    let ok = p.is_finite() && p >= 0.0 && if below_one { p < 1.0 } else { p <= 1.0 };
    if ok {
        Ok(())
    } else {
        let range = if below_one { "[0, 1)" } else { "[0, 1]" };
        Err(Error::ConfigInvalid(format!("{name} = {p} must lie in {range}")))
    }
}

impl SimConfig {
    pub fn interval_length_us(&self) -> u64 {
        self.time_allowed_to_live_ms * 1000
    }

    pub fn chain_len(&self) -> u32 {
        self.chain_length.unwrap_or(self.horizon)
    }

    pub fn schedule(&self) -> DisclosureSchedule {
        DisclosureSchedule { interval_length: self.interval_length_us(), start_time: 0, disclosure_delay: self.disclosure_delay }
    }

    /// Intervals between building a slot's tree and serving its message.
    pub fn lag(&self) -> u32 {
        if self.scheme == SchemeKind::Cmma { self.disclosure_delay } else { 0 }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme.with_tree(self.tree_kind)
    }

    /// Messages are sent at an offset in `[max_delay, interval - max_delay - 2 eps)`
    /// so that announcements arrive first and deliveries finish within the
    /// interval.
    pub fn message_window(&self) -> (u64, u64) {
        let lo = self.delay_max_us;
        let hi = self.interval_length_us().saturating_sub(self.delay_max_us + 2 * self.max_sync_error_us);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.k > MAX_K {
            return Err(Error::KTooLarge(self.k));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.messages_per_interval == 0 {
            return bad("messages_per_interval must be at least 1".into());
        }
        if self.time_allowed_to_live_ms == 0 || self.time_allowed_to_live_ms > u64::from(u16::MAX) {
            return bad(format!("time_allowed_to_live_ms = {} must be in 1..=65535", self.time_allowed_to_live_ms));
        }
        if u32::from(self.template.num_dat_set_entries) < self.k {
            return bad(format!("template numDatSetEntries = {} cannot hold k = {}", self.template.num_dat_set_entries, self.k));
        }
        check_probability("p_change", self.p_change, false)?;
        check_probability("surprise_probability", self.surprise_probability, false)?;
        check_probability("loss_probability", self.loss_probability, true)?;
        check_probability("announcement_loss", self.announcement_loss, true)?;
        if self.delay_min_us > self.delay_max_us {
            return bad(format!("delay_min_us = {} exceeds delay_max_us = {}", self.delay_min_us, self.delay_max_us));
        }
        let (lo, hi) = self.message_window();
        if lo >= hi {
            return bad(format!(
                "interval of {} us leaves no send window after 2 * (max delay {} + sync error {})",
                self.interval_length_us(),
                self.delay_max_us,
                self.max_sync_error_us
            ));
        }
        if self.scheme == SchemeKind::StateChange && self.k_u >= self.k {
            return bad(format!("k_u = {} must be below k = {}", self.k_u, self.k));
        }
        if self.scheme == SchemeKind::Cmma {
            // the announcement may arrive max_delay late on a clock eps ahead,
            // and the receiver adds eps again in the safety check
            self.schedule().validate(self.delay_max_us + self.max_sync_error_us, self.max_sync_error_us)?;
            if self.chain_len() < self.horizon {
                return bad(format!("chain_length = {} is shorter than horizon = {}", self.chain_len(), self.horizon));
            }
        }
        if let Some(0) = self.rekey_every {
            return bad("rekey_every must be at least 1".into());
        }
        if let Some(script) = &self.scripted_truth {
            if script.len() < self.horizon as usize {
                return bad(format!("scripted_truth has {} entries for {} slots", script.len(), self.horizon));
            }
            if let Some(i) = script.iter().flatten().find(|&&i| i >= 1usize << self.k) {
                return bad(format!("scripted index {i} is outside 2^k = {} candidates", 1usize << self.k));
            }
        }
        if self.adversary.is_some() && !self.scheme.uses_tree() {
            return bad("adversaries are only modeled for CMA and CMMA".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn json_defaults_fill_in() {
        let c: SimConfig = serde_json::from_str(r#"{"scheme":"CMA","n":7,"tree_kind":"MHT"}"#).unwrap();
        assert_eq!(c.n, 7);
        assert_eq!(c.scheme, SchemeKind::Cma);
        assert_eq!(c.k, 3);
        assert!(serde_json::from_str::<SimConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn violations_name_the_constraint() {
        let cases: Vec<(SimConfig, &str)> = vec![
            (SimConfig { n: 0, ..Default::default() }, "n must"),
            (SimConfig { loss_probability: 1.0, ..Default::default() }, "loss_probability"),
            (SimConfig { delay_min_us: 600, ..Default::default() }, "delay_min_us"),
            (SimConfig { time_allowed_to_live_ms: 1, ..Default::default() }, "send window"),
            (SimConfig { scheme: SchemeKind::StateChange, k_u: 3, ..Default::default() }, "k_u"),
            (SimConfig { chain_length: Some(10), ..Default::default() }, "chain_length"),
            (SimConfig { disclosure_delay: 0, ..Default::default() }, "disclosure delay"),
        ];
        for (cfg, needle) in cases {
            let msg = cfg.validate().unwrap_err().to_string();
            assert!(msg.contains(needle), "{msg} lacks {needle}");
        }
    }

    #[test]
    fn cmma_safety_margin() {
        // d * len must exceed max_delay + 2 eps
        let ok = SimConfig { time_allowed_to_live_ms: 2, delay_max_us: 500, max_sync_error_us: 400, ..Default::default() };
        assert!(ok.validate().is_ok());
        let tight = SimConfig { delay_max_us: 700, ..ok };
        assert!(tight.validate().is_err());
    }
}
