//! One-way key chains with delayed disclosure.
//!
//! `C_L` is random; `C_{i-1} = H(C_i)`. Keys are used in reverse order of
//! generation, one per interval, and `C_i` is revealed `d` intervals after
//! interval `i` begins. A receiver holding any verified `C_j` authenticates a
//! later `C_i` by hashing it `i - j` times.

use serde::{Deserialize, Serialize};

use crate::crypto::{derive_key, digest_eq, hash, hmac, Digest, OpCounter, SymmetricKey, DIGEST_LEN};
use crate::error::{Error, Result};

/// `C_0 ..= C_L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyChain {
    values: Vec<Digest>,
}

impl KeyChain {
    /// Builds a chain of `len + 1` values ending at `seed`. Costs `len` hashes.
    pub fn generate(seed: Digest, len: u32, ctr: &mut OpCounter) -> Self {
        let mut values = vec![seed; len as usize + 1];
        for i in (1..=len as usize).rev() {
            values[i - 1] = hash(values[i].as_bytes(), ctr);
        }
        Self { values }
    }

    /// `L`, the number of usable keys.
    pub fn len(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 1
    }

    pub fn key(&self, index: u32) -> Option<Digest> {
        self.values.get(index as usize).copied()
    }

    /// `C_0`, distributed to receivers ahead of time.
    pub fn commitment(&self) -> Digest {
        self.values[0]
    }

    /// `C_L`, used to authenticate the commitment of the next chain.
    pub fn last(&self) -> Digest {
        self.values[self.values.len() - 1]
    }
}

/// MAC key for the interval keyed by chain value `c`: `H'(c)`. One hash.
pub fn mac_key_for_interval(c: &Digest, ctr: &mut OpCounter) -> SymmetricKey {
    derive_key(c, ctr)
}

/// Interval timing and disclosure lag. Interval `i` begins at
/// `start_time + i * interval_length`; interval 0 is the bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureSchedule {
    pub interval_length: u64,
    pub start_time: u64,
    pub disclosure_delay: u32,
}

impl DisclosureSchedule {
    pub fn interval_start(&self, interval: u32) -> u64 {
        self.start_time + u64::from(interval) * self.interval_length
    }

    /// Interval containing time `t` (0 before the schedule starts).
    pub fn interval_at(&self, t: u64) -> u32 {
        (t.saturating_sub(self.start_time) / self.interval_length) as u32
    }

    /// When `C_interval` becomes public.
    pub fn disclosure_time(&self, interval: u32) -> u64 {
        self.interval_start(interval + self.disclosure_delay)
    }

    /// Earliest interval in which `C_interval` may be revealed.
    pub fn earliest_disclosure(&self, interval: u32) -> u32 {
        interval + self.disclosure_delay
    }

    /// Checks `d >= 1` and `d * interval_length > max_network_delay + max_sync_error`.
    pub fn validate(&self, max_network_delay: u64, max_sync_error: u64) -> Result<()> {
        if self.interval_length == 0 {
            return Err(Error::ConfigInvalid("interval_length must be positive".into()));
        }
        if self.disclosure_delay == 0 {
            return Err(Error::ConfigInvalid("disclosure delay d must be at least 1".into()));
        }
        let lag = u64::from(self.disclosure_delay) * self.interval_length;
        if lag <= max_network_delay + max_sync_error {
            return Err(Error::ConfigInvalid(format!(
                "d * interval_length = {lag} must exceed max network delay {max_network_delay} + sync error {max_sync_error}"
            )));
        }
        Ok(())
    }

    fn to_bytes(self) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[..8].copy_from_slice(&self.interval_length.to_be_bytes());
        out[8..16].copy_from_slice(&self.start_time.to_be_bytes());
        out[16..].copy_from_slice(&self.disclosure_delay.to_be_bytes());
        out
    }
}

/// True iff a packet for `interval`, received at local time `arrival_time`,
/// provably arrived before `C_interval` was disclosed given clock error `eps`.
pub fn safety_check(arrival_time: u64, schedule: &DisclosureSchedule, interval: u32, eps: u64) -> bool {
    arrival_time.saturating_add(eps) < schedule.disclosure_time(interval)
}

/// Disclosed chain key: `u32 index || 32-byte key` on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyDisclosure {
    pub index: u32,
    pub key: Digest,
}

impl KeyDisclosure {
    pub const WIRE_LEN: usize = 4 + DIGEST_LEN;

    pub fn encode(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = [0u8; Self::WIRE_LEN];
        out[..4].copy_from_slice(&self.index.to_be_bytes());
        out[4..].copy_from_slice(self.key.as_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() != Self::WIRE_LEN {
            return Err(Error::Malformed("key disclosure must be 36 bytes"));
        }
        Ok(Self {
            index: u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")),
            key: Digest::from_slice(&buf[4..]).expect("32 bytes"),
        })
    }
}

/// The receiver's most recently verified chain value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceiverKeyStore {
    index: u32,
    key: Digest,
}

impl ReceiverKeyStore {
    /// Starts from a trusted commitment `C_0`.
    pub fn new(commitment: Digest) -> Self {
        Self { index: 0, key: commitment }
    }

    pub fn last_verified(&self) -> (u32, Digest) {
        (self.index, self.key)
    }

    /// Verifies `candidate` as `C_claimed` by hashing it down to the stored
    /// value. Costs `claimed - stored` hashes; updates the store on success.
    pub fn verify_disclosed_key(&mut self, candidate: &Digest, claimed: u32, ctr: &mut OpCounter) -> Result<bool> {
        if claimed <= self.index {
            return Err(Error::StaleIndex { claimed, verified: self.index });
        }
        let mut acc = *candidate;
        for _ in self.index..claimed {
            acc = hash(acc.as_bytes(), ctr);
        }
        if digest_eq(&acc, &self.key) {
            self.index = claimed;
            self.key = *candidate;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Like [`verify_disclosed_key`](Self::verify_disclosed_key) but also
    /// accepts a re-disclosure of the already-verified value at no cost.
    pub fn authenticate_key(&mut self, candidate: &Digest, claimed: u32, ctr: &mut OpCounter) -> Result<bool> {
        if claimed == self.index {
            return Ok(digest_eq(candidate, &self.key));
        }
        self.verify_disclosed_key(candidate, claimed, ctr)
    }
}

/// How the commitment of a chain is authenticated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainAnchor {
    /// Installed out of band (first chain).
    PreTrusted,
    /// MAC under `H'(C_L)` of the previous chain.
    Previous { mac: Digest },
}

/// Commitment and schedule for a new chain, as delivered to receivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainBootstrap {
    pub commitment: Digest,
    pub schedule: DisclosureSchedule,
    pub anchor: ChainAnchor,
}

fn bootstrap_mac(prev_last: &Digest, commitment: &Digest, schedule: &DisclosureSchedule, ctr: &mut OpCounter) -> Digest {
    let key = derive_key(prev_last, ctr);
    hmac(&key, &[commitment.as_bytes(), &schedule.to_bytes()], ctr)
}

impl ChainBootstrap {
    pub fn pre_trusted(chain: &KeyChain, schedule: DisclosureSchedule) -> Self {
        Self { commitment: chain.commitment(), schedule, anchor: ChainAnchor::PreTrusted }
    }

    /// Authenticates `chain`'s commitment with the final key of `previous`.
    pub fn chained(chain: &KeyChain, schedule: DisclosureSchedule, previous: &KeyChain, ctr: &mut OpCounter) -> Self {
        let mac = bootstrap_mac(&previous.last(), &chain.commitment(), &schedule, ctr);
        Self { commitment: chain.commitment(), schedule, anchor: ChainAnchor::Previous { mac } }
    }

    /// Receiver side of a chained bootstrap. `prev_last` is the disclosed
    /// `C_L` of the previous chain, checked against `store` first. Returns a
    /// fresh store anchored at the new commitment.
    pub fn accept(&self, store: &mut ReceiverKeyStore, prev_len: u32, prev_last: &Digest, ctr: &mut OpCounter) -> Result<Option<ReceiverKeyStore>> {
        let ChainAnchor::Previous { mac } = self.anchor else {
            return Ok(Some(ReceiverKeyStore::new(self.commitment)));
        };
        if !store.authenticate_key(prev_last, prev_len, ctr)? {
            return Ok(None);
        }
        let expected = bootstrap_mac(prev_last, &self.commitment, &self.schedule, ctr);
        Ok(digest_eq(&expected, &mac).then(|| ReceiverKeyStore::new(self.commitment)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seed(b: u8) -> Digest {
        Digest::from_bytes([b; 32])
    }

    #[test]
    fn empty_chain() {
        let mut ctr = OpCounter::new();
        let c = KeyChain::generate(seed(1), 0, &mut ctr);
        assert_eq!(ctr.hash_ops(), 0);
        assert_eq!(c.commitment(), seed(1));
        assert!(c.is_empty());
    }

    #[test]
    fn chain_of_three() {
        let mut ctr = OpCounter::new();
        let c = KeyChain::generate(seed(2), 3, &mut ctr);
        let mut scratch = OpCounter::new();
        let h3 = hash(hash(hash(seed(2).as_bytes(), &mut scratch).as_bytes(), &mut scratch).as_bytes(), &mut scratch);
        assert_eq!(c.commitment(), h3);
        assert_eq!(c.key(3), Some(seed(2)));
        assert_eq!(ctr.hash_ops(), 3);
    }

    #[test]
    fn chain_generation_cost_is_len() {
        let mut ctr = OpCounter::new();
        KeyChain::generate(seed(3), 100, &mut ctr);
        assert_eq!(ctr.hash_ops(), 100);
    }

    #[test]
    fn consecutive_and_gapped_disclosure() {
        let chain = KeyChain::generate(seed(4), 10, &mut OpCounter::new());
        let mut store = ReceiverKeyStore::new(chain.commitment());
        let mut ctr = OpCounter::new();
        assert!(store.verify_disclosed_key(&chain.key(1).unwrap(), 1, &mut ctr).unwrap());
        assert_eq!(ctr.hash_ops(), 1);
        ctr.reset();
        assert!(store.verify_disclosed_key(&chain.key(4).unwrap(), 4, &mut ctr).unwrap());
        assert_eq!(ctr.hash_ops(), 3);
        assert_eq!(store.last_verified(), (4, chain.key(4).unwrap()));
    }

    #[test]
    fn random_candidate_rejected_and_store_unchanged() {
        let chain = KeyChain::generate(seed(5), 5, &mut OpCounter::new());
        let mut store = ReceiverKeyStore::new(chain.commitment());
        assert!(!store.verify_disclosed_key(&seed(99), 2, &mut OpCounter::new()).unwrap());
        assert_eq!(store.last_verified().0, 0);
    }

    #[test]
    fn stale_index_rejected() {
        let chain = KeyChain::generate(seed(6), 5, &mut OpCounter::new());
        let mut store = ReceiverKeyStore::new(chain.commitment());
        store.verify_disclosed_key(&chain.key(3).unwrap(), 3, &mut OpCounter::new()).unwrap();
        for i in [0, 2, 3] {
            assert!(matches!(
                store.verify_disclosed_key(&chain.key(i).unwrap(), i, &mut OpCounter::new()),
                Err(Error::StaleIndex { claimed, verified: 3 }) if claimed == i
            ));
        }
        assert!(store.authenticate_key(&chain.key(3).unwrap(), 3, &mut OpCounter::new()).unwrap());
    }

    #[test]
    fn mac_key_properties() {
        let c = seed(7);
        let mut ctr = OpCounter::new();
        let k1 = mac_key_for_interval(&c, &mut ctr);
        assert_eq!(ctr.hash_ops(), 1);
        assert_eq!(k1, mac_key_for_interval(&c, &mut ctr));
        assert_ne!(k1.as_bytes(), c.as_bytes());
        assert_ne!(k1.as_bytes(), hash(c.as_bytes(), &mut ctr).as_bytes());
    }

    #[test]
    fn safety_check_boundaries() {
        let s = DisclosureSchedule { interval_length: 1000, start_time: 0, disclosure_delay: 2 };
        assert_eq!(s.disclosure_time(3), 5000);
        assert!(safety_check(3100, &s, 3, 100));
        assert!(!safety_check(5200, &s, 3, 100));
        assert!(!safety_check(4900, &s, 3, 100));
        assert!(safety_check(4899, &s, 3, 100));
    }

    #[test]
    fn schedule_validation() {
        let s = DisclosureSchedule { interval_length: 1000, start_time: 0, disclosure_delay: 1 };
        assert!(s.validate(500, 400).is_ok());
        assert!(s.validate(600, 400).is_err());
        assert!(DisclosureSchedule { disclosure_delay: 0, ..s }.validate(0, 0).is_err());
        assert_eq!(s.interval_at(2500), 2);
    }

    #[test]
    fn key_disclosure_wire() {
        let d = KeyDisclosure { index: 0x01020304, key: seed(8) };
        let enc = d.encode();
        assert_eq!(&enc[..4], &[1, 2, 3, 4]);
        assert_eq!(KeyDisclosure::decode(&enc).unwrap(), d);
        assert!(KeyDisclosure::decode(&enc[..35]).is_err());
    }

    #[test]
    fn chained_bootstrap() {
        let sched = DisclosureSchedule { interval_length: 1000, start_time: 0, disclosure_delay: 1 };
        let first = KeyChain::generate(seed(9), 4, &mut OpCounter::new());
        let second = KeyChain::generate(seed(10), 4, &mut OpCounter::new());
        let boot = ChainBootstrap::chained(&second, sched, &first, &mut OpCounter::new());

        let mut store = ReceiverKeyStore::new(first.commitment());
        let next = boot.accept(&mut store, 4, &first.last(), &mut OpCounter::new()).unwrap().unwrap();
        assert_eq!(next.last_verified(), (0, second.commitment()));

        let mut store = ReceiverKeyStore::new(first.commitment());
        let forged = ChainBootstrap { commitment: seed(11), ..boot };
        assert!(forged.accept(&mut store, 4, &first.last(), &mut OpCounter::new()).unwrap().is_none());

        let mut store = ReceiverKeyStore::new(first.commitment());
        assert!(boot.accept(&mut store, 4, &seed(12), &mut OpCounter::new()).unwrap().is_none());

        let pt = ChainBootstrap::pre_trusted(&first, sched);
        let mut store = ReceiverKeyStore::new(seed(0));
        assert_eq!(pt.accept(&mut store, 0, &seed(0), &mut OpCounter::new()).unwrap().unwrap().last_verified(), (0, first.commitment()));
    }

    proptest! {
        #[test]
        fn chain_soundness(len in 1u32..64, a in 0u32..64, b in 0u32..64, s in any::<[u8; 32]>()) {
            let (a, b) = (a.min(b) % (len + 1), a.max(b) % (len + 1));
            prop_assume!(a < b);
            let chain = KeyChain::generate(Digest::from_bytes(s), len, &mut OpCounter::new());
            let mut acc = chain.key(b).unwrap();
            let mut ctr = OpCounter::new();
            for _ in a..b {
                acc = hash(acc.as_bytes(), &mut ctr);
            }
            prop_assert_eq!(acc, chain.key(a).unwrap());
        }

        #[test]
        fn loss_recovery(losses in proptest::collection::vec(any::<bool>(), 1..80), s in any::<[u8; 32]>()) {
            let len = losses.len() as u32;
            let chain = KeyChain::generate(Digest::from_bytes(s), len, &mut OpCounter::new());
            let mut store = ReceiverKeyStore::new(chain.commitment());
            for (i, lost) in losses.iter().enumerate() {
                let idx = i as u32 + 1;
                if *lost {
                    continue;
                }
                let gap = idx - store.last_verified().0;
                let mut ctr = OpCounter::new();
                prop_assert!(store.verify_disclosed_key(&chain.key(idx).unwrap(), idx, &mut ctr).unwrap());
                prop_assert_eq!(ctr.hash_ops(), u64::from(gap));
            }
        }
    }
}
