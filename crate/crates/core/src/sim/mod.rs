//! Deterministic discrete-event simulation of one publisher and `n`
//! subscribers.
//!
//! Slot `i` is prioritized at the start of interval `i` and its message is
//! sent in interval `i + lag` (`lag = d` for the chain-based scheme, else
//! 0) at a random offset. Every subscriber clock carries a fixed skew.

pub mod adversary;
pub mod config;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::rc::Rc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::{Digest, OpCounter};
use crate::error::Result;
use crate::hash_tree::AuthTree;
use crate::message::{make_weights, unit_f64, Distribution, Message, MessageTemplate, PrioritizedSet};
use crate::protocols::baseline::{BaselineConfig, BaselinePublisher, BaselineSubscriber};
use crate::protocols::cma::{CmaPublisher, CmaSubscriber};
use crate::protocols::cmma::{cmma_initialize, CmmaPublisher, CmmaSubscriber};
use crate::protocols::complexity::Scheme;
use crate::protocols::{
    overhead_values, pairwise_keys, AuthenticatedMessage, MacTaggedMessage, Outgoing, RejectReason, RootAnnouncement, Verdict,
};
use crate::tesla::{DisclosureSchedule, KeyDisclosure};

pub use adversary::{AdversaryReport, Strategy};
pub use config::{AdversaryConfig, SchemeKind, SimConfig};
pub use trace::{latency_profile, EventKind, EventTrace, LatencyRecord, Party, SimReport, Stats, TraceEvent};

use adversary::{Adversary, AttackContext, Injection, SlotRecord};
use trace::{PublisherTotals, SubscriberTotals};

/// A message packet as sent on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    /// Message, proof and optional disclosed key.
    Proved(Vec<u8>),
    /// Message with per-subscriber MACs.
    Tagged(Vec<u8>),
}

impl Packet {
    pub fn bytes(&self) -> &[u8] {
        match self {
            Packet::Proved(b) | Packet::Tagged(b) => b,
        }
    }

    pub(crate) fn with_bytes(&self, bytes: Vec<u8>) -> Packet {
        match self {
            Packet::Proved(_) => Packet::Proved(bytes),
            Packet::Tagged(_) => Packet::Tagged(bytes),
        }
    }
}

/// Random streams, one per concern, so that e.g. changing the loss rate
/// does not change the traffic.
const STREAM_TRAFFIC: u64 = 1;
const STREAM_NETWORK: u64 = 2;
const STREAM_CRYPTO: u64 = 3;
const STREAM_ADVERSARY: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug)]
enum Truth {
    Index(usize),
    Surprise(usize),
}

#[derive(Clone, Debug)]
struct SlotPlan {
    truth: Truth,
    /// Send offsets within the serving interval, ascending.
    offsets: Vec<u64>,
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn plan_traffic(cfg: &SimConfig, weights: &[f64]) -> Vec<SlotPlan> {
    let mut rng = stream(cfg.seed, STREAM_TRAFFIC);
    let (lo, hi) = cfg.message_window();
    (0..cfg.horizon as usize)
        .map(|slot| {
            let drawn = if unit_f64(&mut rng) < cfg.p_change { sample_index(weights, unit_f64(&mut rng)) } else { 0 };
            let surprise = unit_f64(&mut rng) < cfg.surprise_probability;
            let mut truth = if surprise { Truth::Surprise(drawn) } else { Truth::Index(drawn) };
            if let Some(script) = &cfg.scripted_truth {
                truth = match script[slot] {
                    Some(i) => Truth::Index(i),
                    None => Truth::Surprise(0),
                };
            }
            let mut offsets: Vec<u64> = (0..cfg.messages_per_interval).map(|_| rng.random_range(lo..hi)).collect();
            offsets.sort_unstable();
            SlotPlan { truth, offsets }
        })
        .collect()
}

enum Publisher {
    Cma(CmaPublisher),
    Cmma(CmmaPublisher),
    Baseline(BaselinePublisher),
}

enum Subscriber {
    Cma(CmaSubscriber),
    Cmma(CmmaSubscriber),
    Baseline(BaselineSubscriber),
}

enum Ev {
    SlotStart(u32),
    Serve { slot: u32, rep: u32 },
    AnnArrive { sub: usize, slot: u32, bytes: Rc<Vec<u8>> },
    Deliver { sub: usize, slot: u32, msg_id: u64, packet: Rc<Packet> },
}

struct Scheduled {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct SlotState {
    tree: Option<AuthTree>,
    set: PrioritizedSet,
    announcement_macs: usize,
    sent: Option<(Rc<Packet>, bool)>,
}

struct Simulation {
    cfg: SimConfig,
    schedule: DisclosureSchedule,
    plan: Vec<SlotPlan>,
    weights: Vec<f64>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    events: Vec<TraceEvent>,
    publisher: Publisher,
    subs: Vec<Subscriber>,
    pub_ctr: OpCounter,
    sub_ctrs: Vec<OpCounter>,
    net_rng: ChaCha20Rng,
    crypto_rng: ChaCha20Rng,
    skews: Vec<i64>,
    slots: BTreeMap<u32, SlotState>,
    ann_delivered: Vec<HashSet<u32>>,
    revealed_nonces: HashSet<[u8; 32]>,
    history: BTreeMap<u32, SlotRecord>,
    adversary: Option<Adversary>,
    next_msg_id: u64,
    messages: u64,
    hits: u64,
    misses: u64,
    repeated: u64,
    chain_init_ops: u64,
    built_slots: u64,
    comm_values: Vec<f64>,
    violations: Vec<String>,
}

/// Runs one simulation.
pub fn run_sim(cfg: &SimConfig) -> Result<(SimReport, EventTrace)> {
    cfg.validate()?;
    let sim = Simulation::new(cfg.clone())?;
    Ok(sim.run())
}

/// Runs `cfg` with `strategy` attacking subscriber 0 for `attempts` tries.
pub fn inject_adversary(cfg: &SimConfig, strategy: Strategy, attempts: u64) -> Result<SimReport> {
    let cfg = SimConfig { adversary: Some(AdversaryConfig { strategy, attempts }), ..cfg.clone() };
    Ok(run_sim(&cfg)?.0)
}

impl Simulation {
    fn new(cfg: SimConfig) -> Result<Self> {
        let dist = Distribution::new(cfg.distribution, cfg.k).with_seed(cfg.distribution_seed.unwrap_or(cfg.seed));
        let weights = make_weights(&dist)?;
        let plan = plan_traffic(&cfg, &weights);
        let mut net_rng = stream(cfg.seed, STREAM_NETWORK);
        let eps = cfg.max_sync_error_us as i64;
        let skews = (0..cfg.n).map(|_| net_rng.random_range(-eps..=eps)).collect();
        let mut crypto_rng = stream(cfg.seed, STREAM_CRYPTO);
        let schedule = cfg.schedule();
        let mut pub_ctr = OpCounter::new();
        let keys = pairwise_keys(cfg.n, &mut crypto_rng);
        let (publisher, subs, chain_init_ops) = match cfg.scheme {
            SchemeKind::Cma => {
                let subs = keys
                    .iter()
                    .enumerate()
                    .map(|(i, k)| Subscriber::Cma(CmaSubscriber::new(i, k.clone(), cfg.time_allowed_to_live_ms)))
                    .collect();
                (Publisher::Cma(CmaPublisher::new(keys)), subs, 0)
            }
            SchemeKind::Cmma => {
                let mut seed = [0u8; 32];
                crypto_rng.fill_bytes(&mut seed);
                let ((p, bootstrap), ops) =
                    pub_ctr.measure(|c| cmma_initialize(cfg.chain_len(), Digest::from_bytes(seed), None, schedule, c));
                let subs = keys
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        Subscriber::Cmma(
                            CmmaSubscriber::new(&bootstrap, cfg.max_sync_error_us).with_fallback_key(i, k.clone(), cfg.time_allowed_to_live_ms),
                        )
                    })
                    .collect();
                (Publisher::Cmma(p.with_fallback_keys(keys)), subs, ops)
            }
            _ => {
                let Scheme::Baseline(design) = cfg.scheme() else { unreachable!("tree schemes handled above") };
                let bc = BaselineConfig { design, k: cfg.k, k_u: cfg.k_u };
                let subs = keys
                    .iter()
                    .enumerate()
                    .map(|(index, key)| Subscriber::Baseline(BaselineSubscriber { index, key: key.clone() }))
                    .collect();
                (Publisher::Baseline(BaselinePublisher::new(bc, keys)?), subs, 0)
            }
        };
        let adversary = cfg.adversary.map(|a| Adversary::new(a.strategy, a.attempts, stream(cfg.seed, STREAM_ADVERSARY)));
        let n = cfg.n;
        let mut sim = Self {
            schedule,
            plan,
            weights,
            queue: BinaryHeap::new(),
            seq: 0,
            events: Vec::new(),
            publisher,
            subs,
            pub_ctr,
            sub_ctrs: vec![OpCounter::new(); n],
            net_rng,
            crypto_rng,
            skews,
            slots: BTreeMap::new(),
            ann_delivered: vec![HashSet::new(); n],
            revealed_nonces: HashSet::new(),
            history: BTreeMap::new(),
            adversary,
            next_msg_id: 0,
            messages: 0,
            hits: 0,
            misses: 0,
            repeated: 0,
            chain_init_ops,
            built_slots: 0,
            comm_values: Vec::new(),
            violations: Vec::new(),
            cfg,
        };
        sim.log(0, Party::Publisher, EventKind::Initialize, 0, None, chain_init_ops, 0);
        for slot in 1..=sim.cfg.horizon {
            let t = sim.schedule.interval_start(slot);
            sim.push(t, Ev::SlotStart(slot));
        }
        Ok(sim)
    }

    fn push(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, ev }));
    }

    #[allow(clippy::too_many_arguments)]
    fn log(&mut self, time_us: u64, party: Party, kind: EventKind, slot: u32, msg_id: Option<u64>, hash_ops: u64, bytes: usize) {
        self.events.push(TraceEvent { time_us, party, kind, slot, msg_id, hash_ops, bytes, reason: None, adversarial: false });
    }

    fn local_time(&self, sub: usize, t: u64) -> u64 {
        (t as i64 + self.skews[sub]).max(0) as u64
    }

    fn delay(&mut self) -> u64 {
        self.net_rng.random_range(self.cfg.delay_min_us..=self.cfg.delay_max_us)
    }

    fn lost(&mut self, p: f64) -> bool {
        p > 0.0 && unit_f64(&mut self.net_rng) < p
    }

    fn run(mut self) -> (SimReport, EventTrace) {
        while let Some(Reverse(s)) = self.queue.pop() {
            let r = match s.ev {
                Ev::SlotStart(slot) => self.slot_start(s.time, slot),
                Ev::Serve { slot, rep } => self.serve(s.time, slot, rep),
                Ev::AnnArrive { sub, slot, bytes } => {
                    self.receive_announcement(s.time, sub, slot, &bytes, false);
                    Ok(())
                }
                Ev::Deliver { sub, slot, msg_id, packet } => {
                    self.deliver(s.time, sub, slot, msg_id, &packet);
                    Ok(())
                }
            };
            if let Err(e) = r {
                self.violations.push(format!("at {} us: {e}", s.time));
            }
        }
        self.finish()
    }

    fn slot_template(&self, slot: u32, ts_ms: u64) -> MessageTemplate {
        let mut pdu = self.cfg.template.clone();
        pdu.time_allowed_to_live = self.cfg.time_allowed_to_live_ms as u16;
        pdu.t = ts_ms;
        pdu.sq_num = slot;
        MessageTemplate::new(pdu, self.cfg.k)
    }

    fn slot_start(&mut self, now: u64, slot: u32) -> Result<()> {
        let ts_ms = now / 1000;
        if let (Some(period), true) = (self.cfg.rekey_every, matches!(self.publisher, Publisher::Cma(_))) {
            if slot > 1 && (slot - 1).is_multiple_of(period) {
                let keys = pairwise_keys(self.cfg.n, &mut self.crypto_rng);
                for (s, k) in self.subs.iter_mut().zip(&keys) {
                    if let Subscriber::Cma(c) = s {
                        c.rekey(k.clone());
                    }
                }
                self.publisher = Publisher::Cma(CmaPublisher::new(keys));
                self.log(now, Party::Publisher, EventKind::Initialize, slot, None, 0, 0);
            }
        }

        let tpl = self.slot_template(slot, ts_ms);
        let set = PrioritizedSet::new(slot, crate::message::enumerate_candidates(&tpl)?, self.weights.clone())?;
        self.log(now, Party::Publisher, EventKind::Prioritize, slot, None, 0, 0);

        let kind = self.cfg.tree_kind;
        let mut ctr = std::mem::take(&mut self.pub_ctr);
        let built = match &mut self.publisher {
            Publisher::Cma(p) => ctr.measure(|c| p.construct(&set, ts_ms, kind, &mut self.crypto_rng, c).map(|(t, a)| (Some(t), Some(a)))),
            Publisher::Cmma(p) => ctr.measure(|c| p.construct(&set, ts_ms, kind, &mut self.crypto_rng, c).map(|(t, a)| (Some(t), Some(a)))),
            Publisher::Baseline(p) => ctr.measure(|c| p.precompute(&set, ts_ms, c).map(|()| (None, None))),
        };
        self.pub_ctr = ctr;
        let ((tree, ann), ops) = (built.0?, built.1);
        self.built_slots += 1;
        let event = if tree.is_some() { EventKind::TreeBuilt } else { EventKind::Precomputed };
        self.log(now, Party::Publisher, event, slot, None, ops, 0);

        if let Some(t) = &tree {
            for leaf in t.leaves() {
                if self.revealed_nonces.contains(leaf.nonce.as_bytes()) {
                    self.violations.push(format!("slot {slot}: tree reuses a revealed nonce"));
                }
            }
        }

        let announcement_macs = ann.as_ref().map_or(0, RootAnnouncement::mac_count);
        if let Some(ann) = ann {
            let bytes = Rc::new(ann.encode());
            self.log(now, Party::Publisher, EventKind::AnnounceSent, slot, None, 0, bytes.len());
            self.history.insert(slot, SlotRecord { ann: bytes.clone(), packet: None });
            for sub in 0..self.cfg.n {
                let d = self.delay();
                if self.lost(self.cfg.announcement_loss) {
                    self.log(now, Party::Subscriber(sub), EventKind::Dropped, slot, None, 0, bytes.len());
                } else {
                    self.push(now + d, Ev::AnnArrive { sub, slot, bytes: bytes.clone() });
                }
            }
        }
        self.slots.insert(slot, SlotState { tree, set, announcement_macs, sent: None });

        let serve_start = self.schedule.interval_start(slot + self.cfg.lag());
        let offsets = self.plan[slot as usize - 1].offsets.clone();
        for (rep, off) in offsets.into_iter().enumerate() {
            self.push(serve_start + off, Ev::Serve { slot, rep: rep as u32 });
        }
        Ok(())
    }

    fn true_message(&self, slot: u32) -> (Message, bool) {
        let set = &self.slots[&slot].set;
        match self.plan[slot as usize - 1].truth {
            Truth::Index(i) => (set.messages()[i].clone(), false),
            Truth::Surprise(i) => {
                let mut m = set.messages()[i].clone();
                m.pdu.fixed_all_data.push(0xFF);
                (m, true)
            }
        }
    }

    fn serve(&mut self, now: u64, slot: u32, rep: u32) -> Result<()> {
        let msg_id = self.next_msg_id;
        self.next_msg_id += 1;
        self.messages += 1;
        self.log(now, Party::Publisher, EventKind::MsgArrived, slot, Some(msg_id), 0, 0);
        let (truth, _) = self.true_message(slot);
        let current_interval = self.schedule.interval_at(now);

        let cached = self.slots[&slot].sent.clone();
        let (packet, hit, ops) = match cached {
            Some((p, hit)) => {
                self.repeated += 1;
                (p, hit, 0)
            }
            None => {
                let tree = self.slots[&slot].tree.as_ref();
                let mut ctr = std::mem::take(&mut self.pub_ctr);
                let (out, ops) = ctr.measure(|c| -> Result<(Packet, bool)> {
                    match &self.publisher {
                        Publisher::Cma(p) => to_packet(p.send(tree.expect("tree scheme"), &truth, now / 1000, c)?),
                        Publisher::Cmma(p) => to_packet(p.send(tree.expect("tree scheme"), &truth, current_interval, now / 1000, c)?),
                        Publisher::Baseline(p) => {
                            let (tagged, hit) = p.send(&truth, c)?;
                            Ok((Packet::Tagged(tagged.encode()?), hit))
                        }
                    }
                });
                self.pub_ctr = ctr;
                let (packet, hit) = out?;
                let packet = Rc::new(packet);
                self.slots.get_mut(&slot).expect("slot exists").sent = Some((packet.clone(), hit));
                (packet, hit, ops)
            }
        };
        if rep == 0 {
            if hit {
                self.hits += 1;
            } else {
                self.misses += 1;
            }
        }
        let kind = if hit { EventKind::Proved } else { EventKind::CacheMiss };
        self.log(now, Party::Publisher, kind, slot, Some(msg_id), ops, packet.bytes().len());
        if hit && self.cfg.scheme.uses_tree() && ops != 0 {
            self.violations.push(format!("message {msg_id}: {ops} publisher ops after arrival on a cache hit"));
        }

        if let Packet::Proved(b) = packet.as_ref() {
            let am = AuthenticatedMessage::decode(b)?;
            self.revealed_nonces.insert(*am.proof.nonce.as_bytes());
            if let Some(KeyDisclosure { index, .. }) = am.disclosed_key {
                self.log(now, Party::Publisher, EventKind::KeyDisclosed, index, Some(msg_id), 0, KeyDisclosure::WIRE_LEN);
            }
        }
        self.comm_values.push(self.communication_values(slot, &packet)? as f64);
        if let Some(rec) = self.history.get_mut(&slot) {
            rec.packet = Some(packet.clone());
        }

        let send_at = now + ops * self.cfg.hash_op_time_ns / 1000;
        for sub in 0..self.cfg.n {
            let d = self.delay();
            if self.lost(self.cfg.loss_probability) {
                self.log(now, Party::Subscriber(sub), EventKind::Dropped, slot, Some(msg_id), 0, packet.bytes().len());
            } else {
                self.push(send_at + d, Ev::Deliver { sub, slot, msg_id, packet: packet.clone() });
            }
        }
        if rep + 1 == self.cfg.messages_per_interval {
            if let Some(s) = self.slots.get_mut(&slot) {
                s.tree = None;
            }
        }
        Ok(())
    }

    /// 32-byte values on the wire for one message, including its share of
    /// the announcement's MACs.
    fn communication_values(&self, slot: u32, packet: &Packet) -> Result<usize> {
        match packet {
            Packet::Tagged(b) => Ok(MacTaggedMessage::decode(b)?.macs.len()),
            Packet::Proved(b) => {
                let (_, msg_len) = Message::decode_prefix(b)?;
                let per_copy = overhead_values(b, msg_len)?;
                let macs = self.slots[&slot].announcement_macs;
                let copies = if self.cfg.scheme == SchemeKind::Cma { self.cfg.n } else { 1 };
                Ok(copies * per_copy + macs)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn reject_event(&mut self, time: u64, sub: usize, slot: u32, msg_id: Option<u64>, ops: u64, bytes: usize, reason: RejectReason, adversarial: bool) {
        self.events.push(TraceEvent {
            time_us: time,
            party: Party::Subscriber(sub),
            kind: EventKind::Rejected,
            slot,
            msg_id,
            hash_ops: ops,
            bytes,
            reason: Some(reason),
            adversarial,
        });
    }

    fn receive_announcement(&mut self, now: u64, sub: usize, slot: u32, bytes: &[u8], adversarial: bool) -> Verdict {
        let local = self.local_time(sub, now);
        let single = self.cfg.scheme == SchemeKind::Cmma;
        let mut ctr = std::mem::take(&mut self.sub_ctrs[sub]);
        let (verdict, ops) = ctr.measure(|c| match RootAnnouncement::decode(bytes, single) {
            Err(_) => Verdict::Reject(RejectReason::Malformed),
            Ok(ann) => match &mut self.subs[sub] {
                Subscriber::Cma(s) => s.pre_verify(&ann, local / 1000, c),
                Subscriber::Cmma(s) => s.receive_announcement(&ann, local),
                Subscriber::Baseline(_) => Verdict::Reject(RejectReason::Malformed),
            },
        });
        self.sub_ctrs[sub] = ctr;
        match verdict {
            Verdict::Accept => {
                if !adversarial {
                    self.ann_delivered[sub].insert(slot);
                }
                self.events.push(TraceEvent {
                    time_us: now,
                    party: Party::Subscriber(sub),
                    kind: EventKind::AnnounceRecv,
                    slot,
                    msg_id: None,
                    hash_ops: ops,
                    bytes: bytes.len(),
                    reason: None,
                    adversarial,
                });
            }
            Verdict::Reject(r) => {
                if !adversarial {
                    self.violations.push(format!("subscriber {sub} rejected the honest announcement for slot {slot}: {r}"));
                }
                self.reject_event(now, sub, slot, None, ops, bytes.len(), r, adversarial);
            }
        }
        verdict
    }

    fn verify_packet(&mut self, now: u64, sub: usize, packet: &Packet) -> (Verdict, u64) {
        let local = self.local_time(sub, now);
        let mut ctr = std::mem::take(&mut self.sub_ctrs[sub]);
        let out = ctr.measure(|c| match packet {
            Packet::Proved(b) => match AuthenticatedMessage::decode(b) {
                Err(_) => Verdict::Reject(RejectReason::Malformed),
                Ok(am) => match &mut self.subs[sub] {
                    Subscriber::Cma(s) => s.verify(&am, local / 1000, c),
                    Subscriber::Cmma(s) => s.verify(&am, c),
                    Subscriber::Baseline(_) => Verdict::Reject(RejectReason::Malformed),
                },
            },
            Packet::Tagged(b) => match MacTaggedMessage::decode(b) {
                Err(_) => Verdict::Reject(RejectReason::Malformed),
                Ok(m) => match &self.subs[sub] {
                    Subscriber::Cma(s) => s.verify_fallback(&m, local / 1000, c),
                    Subscriber::Cmma(s) => s.verify_fallback(&m, local / 1000, c),
                    Subscriber::Baseline(s) => s.verify(&m, c),
                },
            },
        });
        self.sub_ctrs[sub] = ctr;
        out
    }

    fn deliver(&mut self, now: u64, sub: usize, slot: u32, msg_id: u64, packet: &Rc<Packet>) {
        let (verdict, ops) = self.verify_packet(now, sub, packet);
        match verdict {
            Verdict::Accept => {
                self.log(now, Party::Subscriber(sub), EventKind::Verified, slot, Some(msg_id), ops, packet.bytes().len());
            }
            Verdict::Reject(r) => {
                let expected = matches!(packet.as_ref(), Packet::Proved(_)) && !self.ann_delivered[sub].contains(&slot);
                if !expected {
                    self.violations.push(format!("subscriber {sub} rejected honest message {msg_id} ({r})"));
                }
                self.reject_event(now, sub, slot, Some(msg_id), ops, packet.bytes().len(), r, false);
            }
        }
        if sub == 0 {
            self.attack(now, slot, packet);
        }
    }

    fn attack(&mut self, now: u64, slot: u32, honest: &Packet) {
        let Some(mut adv) = self.adversary.take() else { return };
        let total = u64::from(self.cfg.horizon) * u64::from(self.cfg.messages_per_interval);
        let left = total.saturating_sub(self.messages) + 1;
        let quota = adv.remaining.div_ceil(left);
        let ctx = AttackContext {
            scheme: self.cfg.scheme,
            n: self.cfg.n,
            slot,
            now_ms: self.local_time(0, now) / 1000,
            ttl_ms: self.cfg.time_allowed_to_live_ms,
            honest,
            history: &self.history,
        };
        let mut batches = Vec::new();
        for _ in 0..quota {
            match adv.craft(&ctx) {
                Ok(Some(b)) => batches.push(b),
                Ok(None) => break,
                Err(e) => {
                    self.violations.push(format!("adversary failed to craft: {e}"));
                    break;
                }
            }
        }
        for batch in batches {
            adv.remaining -= 1;
            adv.report.attempts += 1;
            for inj in batch {
                adv.report.delivered += 1;
                let (verdict, counts) = match inj {
                    Injection::Announcement { slot: s, bytes } => {
                        // buffering is not acceptance; a pairwise-key check is
                        (self.receive_announcement(now, 0, s, &bytes, true), self.cfg.scheme == SchemeKind::Cma)
                    }
                    Injection::Packet(p) => {
                        let (v, ops) = self.verify_packet(now, 0, &p);
                        let kind = if v.is_accept() { EventKind::Verified } else { EventKind::Rejected };
                        self.events.push(TraceEvent {
                            time_us: now,
                            party: Party::Subscriber(0),
                            kind,
                            slot,
                            msg_id: None,
                            hash_ops: ops,
                            bytes: p.bytes().len(),
                            reason: match v {
                                Verdict::Reject(r) => Some(r),
                                Verdict::Accept => None,
                            },
                            adversarial: true,
                        });
                        (v, true)
                    }
                };
                match verdict {
                    Verdict::Accept if counts => adv.report.accepted += 1,
                    Verdict::Accept => {}
                    Verdict::Reject(r) => *adv.report.rejections.entry(r).or_insert(0) += 1,
                }
            }
        }
        self.adversary = Some(adv);
    }

    fn finish(mut self) -> (SimReport, EventTrace) {
        let trace = EventTrace { events: std::mem::take(&mut self.events) };
        if !trace.is_time_ordered() {
            self.violations.push("trace timestamps decrease".into());
        }
        let by_party = trace.ops_by_party();
        let pub_total = by_party.get(&Party::Publisher).copied().unwrap_or(0);
        if pub_total != self.pub_ctr.hash_ops() {
            self.violations.push(format!("publisher trace ops {pub_total} != counter {}", self.pub_ctr.hash_ops()));
        }
        let mut subscribers = Vec::with_capacity(self.cfg.n);
        for (i, ctr) in self.sub_ctrs.iter().enumerate() {
            let t = by_party.get(&Party::Subscriber(i)).copied().unwrap_or(0);
            if t != ctr.hash_ops() {
                self.violations.push(format!("subscriber {i} trace ops {t} != counter {}", ctr.hash_ops()));
            }
            subscribers.push(SubscriberTotals { total_ops: t, ..Default::default() });
        }

        let mut publisher = PublisherTotals { total_ops: pub_total, ..Default::default() };
        let mut post = Vec::new();
        let mut verify = Vec::new();
        let mut honest_sub_ops = 0u64;
        let mut deliveries = 0u64;
        let mut rejections = BTreeMap::new();
        for e in &trace.events {
            match (e.party, e.kind) {
                (Party::Publisher, EventKind::Initialize) => publisher.init_ops += e.hash_ops,
                (Party::Publisher, EventKind::TreeBuilt | EventKind::Precomputed) => publisher.pre_message_ops += e.hash_ops,
                (Party::Publisher, EventKind::Proved | EventKind::CacheMiss) => {
                    publisher.post_message_ops += e.hash_ops;
                    post.push(e.hash_ops as f64);
                }
                (Party::Subscriber(s), kind) => {
                    if !e.adversarial {
                        honest_sub_ops += e.hash_ops;
                    }
                    match kind {
                        EventKind::Verified | EventKind::Rejected if e.msg_id.is_some() && !e.adversarial => {
                            deliveries += 1;
                            verify.push(e.hash_ops as f64);
                            if kind == EventKind::Verified {
                                subscribers[s].verified += 1;
                            } else {
                                subscribers[s].rejected += 1;
                                *rejections.entry(e.reason.expect("rejections carry a reason")).or_insert(0) += 1;
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        if self.cfg.scheme == SchemeKind::Cmma {
            publisher.amortized_total_ops =
                Some(pub_total - self.chain_init_ops + self.built_slots * CmmaPublisher::AMORTIZED_CHAIN_COST);
        }
        let latency = latency_profile(&trace, self.cfg.hash_op_time_ns);
        let scheme = self.cfg.scheme();
        let report = SimReport {
            scheme: scheme.name().to_string(),
            tree_kind: scheme.tree_kind(),
            n: self.cfg.n,
            k: self.cfg.k,
            distribution: self.cfg.distribution,
            seed: self.cfg.seed,
            horizon: self.cfg.horizon,
            messages: self.messages,
            deliveries,
            hits: self.hits,
            misses: self.misses,
            hit_rate: if self.hits + self.misses == 0 { 0.0 } else { self.hits as f64 / (self.hits + self.misses) as f64 },
            repeated_proofs: self.repeated,
            publisher,
            post_message_ops: Stats::from_values(post),
            subscribers,
            subscriber_ops_per_message: if deliveries == 0 { 0.0 } else { honest_sub_ops as f64 / deliveries as f64 },
            verify_ops: Stats::from_values(verify),
            latency_us: Stats::from_values(latency.iter().map(|r| r.end_to_end_us as f64)),
            communication_values: Stats::from_values(std::mem::take(&mut self.comm_values)),
            rejections,
            adversary: self.adversary.map(|a| a.report),
            invariant_violations: self.violations,
        };
        (report, trace)
    }
}

fn to_packet(out: Outgoing) -> Result<(Packet, bool)> {
    Ok(match out {
        Outgoing::Proved(am) => (Packet::Proved(am.encode()?), true),
        Outgoing::Fallback(m) => (Packet::Tagged(m.encode()?), false),
    })
}
