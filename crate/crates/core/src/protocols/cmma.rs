//! Multicast scheme: each interval's root carries a single MAC keyed by a
//! chain value that is disclosed `d` intervals later.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::crypto::{digest_eq, Digest, OpCounter, SymmetricKey};
use crate::error::{Error, Result};
use crate::hash_tree::{root_from_encoded, AuthTree, TreeKind};
use crate::message::{Message, PrioritizedSet};
use crate::tesla::{mac_key_for_interval, safety_check, ChainBootstrap, DisclosureSchedule, KeyChain, KeyDisclosure, ReceiverKeyStore};

use super::{prove_from, root_mac, AuthenticatedMessage, MacTaggedMessage, Outgoing, RejectReason, RootAnnouncement, RootAuth, Verdict};

/// Publisher state: the key chain and its schedule. Pairwise keys are
/// only used for messages outside the prioritized set.
#[derive(Clone, Debug)]
pub struct CmmaPublisher {
    chain: KeyChain,
    schedule: DisclosureSchedule,
    fallback_keys: Vec<SymmetricKey>,
}

/// Generates a chain of `len` keys from `seed`. With `previous`, the new
/// commitment is authenticated by that chain's last key; otherwise it must
/// be installed out of band. Costs `len` hashes, plus 3 when chained.
pub fn cmma_initialize(
    len: u32,
    seed: Digest,
    previous: Option<&KeyChain>,
    schedule: DisclosureSchedule,
    ctr: &mut OpCounter,
) -> (CmmaPublisher, ChainBootstrap) {
    let chain = KeyChain::generate(seed, len, ctr);
    let bootstrap = match previous {
        Some(prev) => ChainBootstrap::chained(&chain, schedule, prev, ctr),
        None => ChainBootstrap::pre_trusted(&chain, schedule),
    };
    (CmmaPublisher { chain, schedule, fallback_keys: Vec::new() }, bootstrap)
}

impl CmmaPublisher {
    /// Attaches pairwise keys for cache-miss fallback.
    pub fn with_fallback_keys(mut self, keys: Vec<SymmetricKey>) -> Self {
        self.fallback_keys = keys;
        self
    }

    pub fn chain(&self) -> &KeyChain {
        &self.chain
    }

    pub fn schedule(&self) -> &DisclosureSchedule {
        &self.schedule
    }

    /// Chain hashes per interval once generation is spread over the chain's
    /// lifetime.
    pub const AMORTIZED_CHAIN_COST: u64 = 1;

    fn chain_key(&self, interval: u32) -> Result<Digest> {
        if interval == 0 {
            return Err(Error::ChainExhausted(0));
        }
        self.chain.key(interval).ok_or(Error::ChainExhausted(interval))
    }

    /// Builds the tree for `set.interval()` and MACs its root under
    /// `H'(C_i)`. Costs `(2n - 1) + 3`.
    pub fn construct<R: RngCore + ?Sized>(
        &self,
        set: &PrioritizedSet,
        ts: u64,
        kind: TreeKind,
        rng: &mut R,
        ctr: &mut OpCounter,
    ) -> Result<(AuthTree, RootAnnouncement)> {
        let c = self.chain_key(set.interval())?;
        let tree = AuthTree::build(kind, set, rng, ctr)?;
        let key = mac_key_for_interval(&c, ctr);
        let root = tree.root();
        let mac = root_mac(&key, ts, &root, ctr);
        let ann = RootAnnouncement { interval: tree.interval(), ts, root, auth: RootAuth::Single(mac) };
        Ok((tree, ann))
    }

    /// Proves `true_msg` and discloses `C_i` for the tree's interval `i`.
    /// Fails if `current_interval < i + d`. No hashing.
    pub fn prove(&self, tree: &AuthTree, true_msg: &Message, current_interval: u32, ctr: &mut OpCounter) -> Result<AuthenticatedMessage> {
        let i = tree.interval();
        let earliest = self.schedule.earliest_disclosure(i);
        if current_interval < earliest {
            return Err(Error::ScheduleViolation { interval: i, earliest, now: current_interval });
        }
        let key = self.chain_key(i)?;
        let proof = prove_from(tree, true_msg, ctr)?;
        Ok(AuthenticatedMessage { message: true_msg.clone(), proof, disclosed_key: Some(KeyDisclosure { index: i, key }) })
    }

    /// Proves `true_msg` if cached, else MACs it with the pairwise keys.
    pub fn send(&self, tree: &AuthTree, true_msg: &Message, current_interval: u32, ts: u64, ctr: &mut OpCounter) -> Result<Outgoing> {
        match self.prove(tree, true_msg, current_interval, ctr) {
            Ok(am) => Ok(Outgoing::Proved(am)),
            Err(Error::CacheMiss) => Ok(Outgoing::Fallback(MacTaggedMessage::sign(&self.fallback_keys, true_msg.clone(), ts, ctr)?)),
            Err(e) => Err(e),
        }
    }
}

/// Subscriber state: verified chain position and announcements that
/// passed the safety check, indexed by interval.
#[derive(Clone, Debug)]
pub struct CmmaSubscriber {
    store: ReceiverKeyStore,
    schedule: DisclosureSchedule,
    max_sync_error: u64,
    pending: BTreeMap<u32, Vec<RootAnnouncement>>,
    fallback: Option<(usize, SymmetricKey)>,
    ttl_ms: u64,
}

impl CmmaSubscriber {
    /// Subscriber for a pre-trusted bootstrap.
    pub fn new(bootstrap: &ChainBootstrap, max_sync_error: u64) -> Self {
        Self {
            store: ReceiverKeyStore::new(bootstrap.commitment),
            schedule: bootstrap.schedule,
            max_sync_error,
            pending: BTreeMap::new(),
            fallback: None,
            ttl_ms: u64::MAX,
        }
    }

    /// Enables verification of fallback messages addressed to `index`.
    pub fn with_fallback_key(mut self, index: usize, key: SymmetricKey, ttl_ms: u64) -> Self {
        self.fallback = Some((index, key));
        self.ttl_ms = ttl_ms;
        self
    }

    pub fn key_store(&self) -> &ReceiverKeyStore {
        &self.store
    }

    pub fn pending_len(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    /// Moves to a new chain after checking its bootstrap against the
    /// disclosed last key of the current one.
    pub fn rollover(&mut self, next: &ChainBootstrap, prev_len: u32, prev_last: &Digest, ctr: &mut OpCounter) -> Result<bool> {
        match next.accept(&mut self.store, prev_len, prev_last, ctr)? {
            Some(store) => {
                self.store = store;
                self.schedule = next.schedule;
                self.pending.clear();
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Buffers an announcement received at local time `arrival` if its key
    /// cannot have been disclosed yet. No hashing.
    pub fn receive_announcement(&mut self, ann: &RootAnnouncement, arrival: u64) -> Verdict {
        if !matches!(ann.auth, RootAuth::Single(_)) {
            return Verdict::Reject(RejectReason::Malformed);
        }
        if ann.interval <= self.store.last_verified().0 || !safety_check(arrival, &self.schedule, ann.interval, self.max_sync_error) {
            return Verdict::Reject(RejectReason::Unsafe);
        }
        self.pending.entry(ann.interval).or_default().push(ann.clone());
        Verdict::Accept
    }

    /// Authenticates the disclosed key against the chain (cost: index gap),
    /// then the root MAC (3), then the proof (`D + 1`). Stops at the first
    /// failing stage.
    pub fn verify(&mut self, am: &AuthenticatedMessage, ctr: &mut OpCounter) -> Verdict {
        let Some(disclosed) = am.disclosed_key else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        let i = disclosed.index;
        let Some(candidates) = self.pending.get(&i) else {
            return Verdict::Reject(RejectReason::MissingAnnouncement);
        };
        let candidates = candidates.clone();
        match self.store.authenticate_key(&disclosed.key, i, ctr) {
            Ok(true) => {}
            Ok(false) => return Verdict::Reject(RejectReason::BadKey),
            Err(_) => return Verdict::Reject(RejectReason::StaleKey),
        }
        self.prune_pending();

        let key = mac_key_for_interval(&disclosed.key, ctr);
        let authentic: Vec<&RootAnnouncement> = candidates
            .iter()
            .filter(|a| match a.auth {
                RootAuth::Single(mac) => digest_eq(&root_mac(&key, a.ts, &a.root, ctr), &mac),
                RootAuth::PerDestination(_) => false,
            })
            .collect();
        if authentic.is_empty() {
            return Verdict::Reject(RejectReason::BadMac);
        }
        // Keep only authentic announcements for later messages of the interval.
        self.pending.insert(i, authentic.iter().map(|a| (*a).clone()).collect());

        let Ok(enc) = am.message.canonical_encode() else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        let root = root_from_encoded(&enc, &am.proof, ctr);
        if authentic.iter().any(|a| digest_eq(&a.root, &root)) {
            Verdict::Accept
        } else {
            Verdict::Reject(RejectReason::NoMatchingRoot)
        }
    }

    fn prune_pending(&mut self) {
        let verified = self.store.last_verified().0;
        self.pending.retain(|&i, _| i >= verified);
    }

    /// Checks a fallback message. Costs 2.
    pub fn verify_fallback(&self, msg: &MacTaggedMessage, now_ms: u64, ctr: &mut OpCounter) -> Verdict {
        let Some((index, key)) = &self.fallback else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        if msg.ts.saturating_add(self.ttl_ms) <= now_ms {
            return Verdict::Reject(RejectReason::StaleTimestamp);
        }
        match msg.verify(*index, key, ctr) {
            Ok(true) => Verdict::Accept,
            Ok(false) => Verdict::Reject(RejectReason::BadMac),
            Err(_) => Verdict::Reject(RejectReason::Malformed),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::message::{Distribution, DistributionKind, GoosePdu, MessageTemplate};
    use crate::protocols::prioritize;

    const SCHED: DisclosureSchedule = DisclosureSchedule { interval_length: 100_000, start_time: 0, disclosure_delay: 1 };

    fn setup(k: u32, interval: u32) -> (CmmaPublisher, CmmaSubscriber, PrioritizedSet, ChaCha20Rng) {
        let mut ctr = OpCounter::new();
        let (p, b) = cmma_initialize(16, Digest::from_bytes([5; 32]), None, SCHED, &mut ctr);
        let s = CmmaSubscriber::new(&b, 100);
        let tpl = MessageTemplate::new(GoosePdu::default(), k);
        let set = prioritize(interval, &tpl, &Distribution::new(DistributionKind::HalfUniform, k)).unwrap();
        (p, s, set, ChaCha20Rng::seed_from_u64(3))
    }

    #[test]
    fn end_to_end_costs() {
        let (p, mut s, set, mut rng) = setup(3, 1);
        let mut ctr = OpCounter::new();
        let ((tree, ann), cost) = ctr.measure(|c| p.construct(&set, 100, TreeKind::Mht, &mut rng, c).unwrap());
        assert_eq!(cost, 15 + 3);
        assert_eq!(s.receive_announcement(&ann, 100_050), Verdict::Accept);
        for (j, m) in set.messages().iter().enumerate() {
            let (am, c) = ctr.measure(|c| p.prove(&tree, m, 2, c).unwrap());
            assert_eq!(c, 0);
            let (v, c) = ctr.measure(|c| s.verify(&am, c));
            assert_eq!(v, Verdict::Accept);
            // first message pays the chain step; later ones reuse the key
            assert_eq!(c, if j == 0 { 1 + 3 + 4 } else { 3 + 4 });
        }
    }

    #[test]
    fn early_disclosure_refused() {
        let (p, _, set, mut rng) = setup(1, 3);
        let mut ctr = OpCounter::new();
        let (tree, _) = p.construct(&set, 300, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
        let err = p.prove(&tree, &set.messages()[0], 3, &mut ctr).unwrap_err();
        assert!(matches!(err, Error::ScheduleViolation { interval: 3, earliest: 4, now: 3 }));
        assert!(p.prove(&tree, &set.messages()[0], 4, &mut ctr).is_ok());
    }

    #[test]
    fn interval_zero_and_beyond_chain() {
        let (p, _, set, mut rng) = setup(1, 0);
        let mut ctr = OpCounter::new();
        assert!(matches!(p.construct(&set, 0, TreeKind::Mht, &mut rng, &mut ctr), Err(Error::ChainExhausted(0))));
        let (_, _, set, _) = setup(1, 17);
        assert!(matches!(p.construct(&set, 0, TreeKind::Mht, &mut rng, &mut ctr), Err(Error::ChainExhausted(17))));
    }

    #[test]
    fn late_announcement_unsafe() {
        let (p, mut s, set, mut rng) = setup(2, 1);
        let mut ctr = OpCounter::new();
        let (tree, ann) = p.construct(&set, 100, TreeKind::Hht, &mut rng, &mut ctr).unwrap();
        // disclosure at 200_000; arrival + eps must be strictly earlier
        assert_eq!(s.receive_announcement(&ann, 199_900), Verdict::Reject(RejectReason::Unsafe));
        let am = p.prove(&tree, &set.messages()[0], 2, &mut ctr).unwrap();
        assert_eq!(s.verify(&am, &mut ctr), Verdict::Reject(RejectReason::MissingAnnouncement));
        assert_eq!(s.receive_announcement(&ann, 199_899), Verdict::Accept);
        assert!(s.verify(&am, &mut ctr).is_accept());
    }

    #[test]
    fn lost_intervals_recovered() {
        let (p, mut s, _, mut rng) = setup(2, 1);
        let tpl = MessageTemplate::new(GoosePdu::default(), 2);
        let set = prioritize(6, &tpl, &Distribution::new(DistributionKind::HalfUniform, 2)).unwrap();
        let mut ctr = OpCounter::new();
        let (tree, ann) = p.construct(&set, 600, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
        s.receive_announcement(&ann, 600_000);
        let am = p.prove(&tree, &set.messages()[3], 7, &mut ctr).unwrap();
        let (v, c) = ctr.measure(|c| s.verify(&am, c));
        assert!(v.is_accept());
        assert_eq!(c, 6 + 3 + 3);
        assert_eq!(s.key_store().last_verified().0, 6);
    }

    #[test]
    fn forged_announcement_does_not_block_honest_one() {
        let (p, mut s, set, mut rng) = setup(2, 1);
        let mut ctr = OpCounter::new();
        let (tree, ann) = p.construct(&set, 100, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
        let forged = RootAnnouncement { root: Digest::from_bytes([0xAA; 32]), ..ann.clone() };
        assert!(s.receive_announcement(&forged, 100_000).is_accept());
        assert!(s.receive_announcement(&ann, 100_001).is_accept());
        let am = p.prove(&tree, &set.messages()[1], 2, &mut ctr).unwrap();
        assert!(s.verify(&am, &mut ctr).is_accept());
    }

    #[test]
    fn wrong_key_rejected_before_mac() {
        let (p, mut s, set, mut rng) = setup(2, 1);
        let mut ctr = OpCounter::new();
        let (tree, ann) = p.construct(&set, 100, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
        s.receive_announcement(&ann, 100_000);
        let mut am = p.prove(&tree, &set.messages()[1], 2, &mut ctr).unwrap();
        am.disclosed_key = Some(KeyDisclosure { index: 1, key: Digest::from_bytes([1; 32]) });
        let (v, c) = ctr.measure(|c| s.verify(&am, c));
        assert_eq!(v, Verdict::Reject(RejectReason::BadKey));
        assert_eq!(c, 1);
    }

    #[test]
    fn chained_rollover() {
        let mut ctr = OpCounter::new();
        let (p1, b1) = cmma_initialize(4, Digest::from_bytes([1; 32]), None, SCHED, &mut ctr);
        let (_, b2) = cmma_initialize(4, Digest::from_bytes([2; 32]), Some(p1.chain()), SCHED, &mut ctr);
        let mut s = CmmaSubscriber::new(&b1, 100);
        assert!(!s.rollover(&b2, 4, &Digest::from_bytes([9; 32]), &mut ctr).unwrap());
        assert!(s.rollover(&b2, 4, &p1.chain().last(), &mut ctr).unwrap());
        assert_eq!(s.key_store().last_verified(), (0, b2.commitment));
    }
}
