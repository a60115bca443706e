//! Operation counts for one interval of one scheme, measured by running
//! the real publisher and subscriber code.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{CostModel, Digest, OpCounter};
use crate::error::{Error, Result};
use crate::hash_tree::AuthTree;
use crate::message::{Distribution, DistributionKind, GoosePdu, MessageTemplate, PrioritizedSet};
use crate::protocols::baseline::{BaselineConfig, BaselinePublisher, BaselineSubscriber};
use crate::protocols::cma::{CmaPublisher, CmaSubscriber};
use crate::protocols::cmma::{cmma_initialize, CmmaPublisher, CmmaSubscriber};
use crate::protocols::complexity::Scheme;
use crate::protocols::{pairwise_keys, prioritize, Verdict};
use crate::tesla::DisclosureSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Point {
    pub scheme: Scheme,
    pub n: usize,
    pub k: u32,
    pub k_u: u32,
    pub distribution: DistributionKind,
}

/// Costs when candidate `index` turns out to be the true message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MessageCost {
    pub index: usize,
    /// Proof length for tree schemes.
    pub depth: Option<usize>,
    /// Whether evidence for this candidate was precomputed.
    pub hit: bool,
    pub post_message: u64,
    /// One entry per subscriber.
    pub subscriber: Vec<u64>,
    pub communication: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalCost {
    pub point: Point,
    /// Publisher work before the interval. For the chain-based scheme this
    /// includes one amortized chain step.
    pub per_interval: u64,
    pub weights: Vec<f64>,
    pub messages: Vec<MessageCost>,
}

impl IntervalCost {
    /// Expectation of `f` over the candidate weights.
    pub fn expected(&self, f: impl Fn(&MessageCost) -> f64) -> f64 {
        self.messages.iter().map(|m| self.weights[m.index] * f(m)).sum()
    }
}

const SCHEDULE: DisclosureSchedule = DisclosureSchedule { interval_length: 100_000, start_time: 0, disclosure_delay: 1 };

fn template(k: u32) -> MessageTemplate {
    let pdu = GoosePdu { num_dat_set_entries: GoosePdu::default().num_dat_set_entries.max(k as u16), ..GoosePdu::default() };
    MessageTemplate::new(pdu, k)
}

/// Builds interval 1 for `p` and sends every candidate in turn. Each
/// candidate is verified by fresh copies of the subscribers so that every
/// measurement sees a key gap of 1.
pub fn measure_interval(p: Point, seed: u64, cost_model: CostModel) -> Result<IntervalCost> {
    let set = prioritize(1, &template(p.k), &Distribution::new(p.distribution, p.k).with_seed(seed))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut ctr = OpCounter::with_cost_model(cost_model);
    let keys = pairwise_keys(p.n, &mut rng);
    let ts = 100;
    let (per_interval, messages) = match p.scheme {
        Scheme::Baseline(design) => {
            let cfg = BaselineConfig { design, k: p.k, k_u: p.k_u };
            let mut publisher = BaselinePublisher::new(cfg, keys.clone())?;
            let (r, pre) = ctr.measure(|c| publisher.precompute(&set, ts, c));
            r?;
            let precomputed = cfg.precomputed_indices(&set);
            let subs: Vec<BaselineSubscriber> = keys.into_iter().enumerate().map(|(index, key)| BaselineSubscriber { index, key }).collect();
            let mut out = Vec::with_capacity(set.len());
            for (j, m) in set.messages().iter().enumerate() {
                let (r, post) = ctr.measure(|c| publisher.send(m, c));
                let (tagged, hit) = r?;
                debug_assert_eq!(hit, precomputed.contains(&j));
                let subscriber = subs.iter().map(|s| checked(ctr.measure(|c| s.verify(&tagged, c)))).collect::<Result<_>>()?;
                out.push(MessageCost { index: j, depth: None, hit, post_message: post, subscriber, communication: tagged.overhead_values()? as u64 });
            }
            (pre, out)
        }
        Scheme::Cma(kind) => {
            let publisher = CmaPublisher::new(keys.clone());
            let (r, pre) = ctr.measure(|c| publisher.construct(&set, ts, kind, &mut rng, c));
            let (tree, ann) = r?;
            let subs: Vec<CmaSubscriber> = keys.into_iter().enumerate().map(|(i, k)| CmaSubscriber::new(i, k, 1000)).collect();
            let mut out = Vec::with_capacity(set.len());
            for (j, m) in set.messages().iter().enumerate() {
                let (am, post) = ctr.measure(|c| publisher.prove(&tree, m, c));
                let am = am?;
                let mut subscriber = Vec::with_capacity(subs.len());
                for s in &subs {
                    let mut s = s.clone();
                    let (v1, a) = ctr.measure(|c| s.pre_verify(&ann, ts, c));
                    let (v2, b) = ctr.measure(|c| s.verify(&am, ts, c));
                    checked((v1, 0))?;
                    subscriber.push(checked((v2, a + b))?);
                }
                let communication = (p.n * am.overhead_values()? + ann.mac_count()) as u64;
                out.push(MessageCost { index: j, depth: Some(leaf_depth(&tree, j)), hit: true, post_message: post, subscriber, communication });
            }
            (pre, out)
        }
        Scheme::Cmma(kind) => {
            let mut seed_bytes = [0u8; 32];
            rand::RngCore::fill_bytes(&mut rng, &mut seed_bytes);
            let mut scratch = OpCounter::with_cost_model(cost_model);
            let (publisher, bootstrap) = cmma_initialize(4, Digest::from_bytes(seed_bytes), None, SCHEDULE, &mut scratch);
            let (r, pre) = ctr.measure(|c| publisher.construct(&set, ts, kind, &mut rng, c));
            let (tree, ann) = r?;
            let sub = CmmaSubscriber::new(&bootstrap, 0);
            let mut out = Vec::with_capacity(set.len());
            for (j, m) in set.messages().iter().enumerate() {
                let (am, post) = ctr.measure(|c| publisher.prove(&tree, m, 1 + SCHEDULE.disclosure_delay, c));
                let am = am?;
                let mut subscriber = Vec::with_capacity(p.n);
                for _ in 0..p.n {
                    let mut s = sub.clone();
                    checked((s.receive_announcement(&ann, SCHEDULE.interval_start(1)), 0))?;
                    subscriber.push(checked(ctr.measure(|c| s.verify(&am, c)))?);
                }
                let communication = (am.overhead_values()? + ann.mac_count()) as u64;
                out.push(MessageCost { index: j, depth: Some(leaf_depth(&tree, j)), hit: true, post_message: post, subscriber, communication });
            }
            (pre + CmmaPublisher::AMORTIZED_CHAIN_COST, out)
        }
    };
    Ok(IntervalCost { point: p, per_interval, weights: set.weights().to_vec(), messages })
}

fn leaf_depth(tree: &AuthTree, message_index: usize) -> usize {
    tree.leaves()[message_index].depth
}

fn checked((v, ops): (Verdict, u64)) -> Result<u64> {
    match v {
        Verdict::Accept => Ok(ops),
        Verdict::Reject(r) => Err(Error::ConfigInvalid(format!("honest measurement rejected: {r}"))),
    }
}

/// The candidate set used by every measurement.
pub fn candidate_set(k: u32, distribution: DistributionKind, seed: u64) -> Result<PrioritizedSet> {
    prioritize(1, &template(k), &Distribution::new(distribution, k).with_seed(seed))
}
