//! Pairwise-key scheme: one MAC per subscriber on each interval's root.

use rand::RngCore;

use crate::crypto::{digest_eq, Digest, OpCounter, SymmetricKey};
use crate::error::{Error, Result};
use crate::hash_tree::{root_from_encoded, AuthTree, TreeKind};
use crate::message::{Message, PrioritizedSet};

use super::{pairwise_keys, prove_from, root_mac, AuthenticatedMessage, MacTaggedMessage, Outgoing, RejectReason, RootAnnouncement, RootAuth, Verdict};

/// Publisher state: one key per subscriber.
#[derive(Clone, Debug)]
pub struct CmaPublisher {
    keys: Vec<SymmetricKey>,
}

/// Generates `n` pairwise keys and hands one to each subscriber.
pub fn cma_initialize<R: RngCore + ?Sized>(n: usize, ttl_ms: u64, rng: &mut R) -> (CmaPublisher, Vec<CmaSubscriber>) {
    let keys = pairwise_keys(n, rng);
    let subs = keys.iter().enumerate().map(|(i, k)| CmaSubscriber::new(i, k.clone(), ttl_ms)).collect();
    (CmaPublisher { keys }, subs)
}

impl CmaPublisher {
    pub fn new(keys: Vec<SymmetricKey>) -> Self {
        Self { keys }
    }

    pub fn subscriber_count(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[SymmetricKey] {
        &self.keys
    }

    /// Builds the interval's tree and MACs its root for every subscriber.
    /// Costs `(2n - 1) + 2N`.
    pub fn construct<R: RngCore + ?Sized>(
        &self,
        set: &PrioritizedSet,
        ts: u64,
        kind: TreeKind,
        rng: &mut R,
        ctr: &mut OpCounter,
    ) -> Result<(AuthTree, RootAnnouncement)> {
        let tree = AuthTree::build(kind, set, rng, ctr)?;
        let ann = self.announce(&tree, ts, ctr);
        Ok((tree, ann))
    }

    /// MACs an existing tree's root. Costs `2N`.
    pub fn announce(&self, tree: &AuthTree, ts: u64, ctr: &mut OpCounter) -> RootAnnouncement {
        let root = tree.root();
        let macs = self.keys.iter().map(|k| root_mac(k, ts, &root, ctr)).collect();
        RootAnnouncement { interval: tree.interval(), ts, root, auth: RootAuth::PerDestination(macs) }
    }

    /// Looks up the proof for `true_msg`. No hashing.
    pub fn prove(&self, tree: &AuthTree, true_msg: &Message, ctr: &mut OpCounter) -> Result<AuthenticatedMessage> {
        let proof = prove_from(tree, true_msg, ctr)?;
        Ok(AuthenticatedMessage { message: true_msg.clone(), proof, disclosed_key: None })
    }

    /// Proves `true_msg` if cached, else MACs it for every subscriber.
    pub fn send(&self, tree: &AuthTree, true_msg: &Message, ts: u64, ctr: &mut OpCounter) -> Result<Outgoing> {
        match self.prove(tree, true_msg, ctr) {
            Ok(am) => Ok(Outgoing::Proved(am)),
            Err(Error::CacheMiss) => Ok(Outgoing::Fallback(MacTaggedMessage::sign(&self.keys, true_msg.clone(), ts, ctr)?)),
            Err(e) => Err(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct CachedRoot {
    interval: u32,
    root: Digest,
    expiry: u64,
}

/// Verified roots that have not yet expired.
#[derive(Clone, Debug, Default)]
pub struct RootCache {
    entries: Vec<CachedRoot>,
}

impl RootCache {
    pub fn insert(&mut self, interval: u32, root: Digest, expiry: u64, now: u64) {
        self.prune(now);
        self.entries.push(CachedRoot { interval, root, expiry });
    }

    pub fn prune(&mut self, now: u64) {
        self.entries.retain(|e| now < e.expiry);
    }

    /// Interval of an unexpired entry matching `root`.
    pub fn lookup(&self, root: &Digest, now: u64) -> Option<u32> {
        self.entries.iter().find(|e| now < e.expiry && digest_eq(&e.root, root)).map(|e| e.interval)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Subscriber state: its pairwise key and cache of verified roots.
#[derive(Clone, Debug)]
pub struct CmaSubscriber {
    index: usize,
    key: SymmetricKey,
    ttl_ms: u64,
    cache: RootCache,
}

impl CmaSubscriber {
    pub fn new(index: usize, key: SymmetricKey, ttl_ms: u64) -> Self {
        Self { index, key, ttl_ms, cache: RootCache::default() }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Replaces the pairwise key, keeping already verified roots.
    pub fn rekey(&mut self, key: SymmetricKey) {
        self.key = key;
    }

    pub fn cache(&self) -> &RootCache {
        &self.cache
    }

    /// Checks the root MAC and freshness and caches the root until
    /// `ts + TTL`. Costs 2 when the MAC is checked.
    pub fn pre_verify(&mut self, ann: &RootAnnouncement, now_ms: u64, ctr: &mut OpCounter) -> Verdict {
        let RootAuth::PerDestination(macs) = &ann.auth else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        let Some(mac) = macs.get(self.index) else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        let expiry = ann.ts.saturating_add(self.ttl_ms);
        if expiry <= now_ms {
            return Verdict::Reject(RejectReason::StaleTimestamp);
        }
        if !digest_eq(&root_mac(&self.key, ann.ts, &ann.root, ctr), mac) {
            return Verdict::Reject(RejectReason::BadMac);
        }
        self.cache.insert(ann.interval, ann.root, expiry, now_ms);
        Verdict::Accept
    }

    /// Recomputes the root from the proof and looks it up. Costs `D + 1`.
    pub fn verify(&mut self, am: &AuthenticatedMessage, now_ms: u64, ctr: &mut OpCounter) -> Verdict {
        let Ok(enc) = am.message.canonical_encode() else {
            return Verdict::Reject(RejectReason::Malformed);
        };
        let root = root_from_encoded(&enc, &am.proof, ctr);
        self.cache.prune(now_ms);
        match self.cache.lookup(&root, now_ms) {
            Some(_) => Verdict::Accept,
            None => Verdict::Reject(RejectReason::NoMatchingRoot),
        }
    }

    /// Checks a fallback message. Costs 2.
    pub fn verify_fallback(&self, msg: &MacTaggedMessage, now_ms: u64, ctr: &mut OpCounter) -> Verdict {
        if msg.ts.saturating_add(self.ttl_ms) <= now_ms {
            return Verdict::Reject(RejectReason::StaleTimestamp);
        }
        match msg.verify(self.index, &self.key, ctr) {
            Ok(true) => Verdict::Accept,
            Ok(false) => Verdict::Reject(RejectReason::BadMac),
            Err(_) => Verdict::Reject(RejectReason::Malformed),
        }
    }
}
