//! Publisher and subscriber state machines.
//!
//! * [`cma`]: the root of each interval's tree is MACed once per subscriber
//!   with pairwise keys.
//! * [`cmma`]: the root is MACed once under a key-chain value disclosed
//!   later, so publisher cost does not depend on the number of subscribers.
//! * [`baseline`]: per-message MAC designs with no, partial, or full
//!   precomputation.
//! * [`complexity`]: closed-form operation counts for all of the above.
//!
//! In every design the per-message evidence is gathered from a cache; the
//! publisher only hashes after a message is known when the message was not
//! anticipated.

pub mod baseline;
pub mod cma;
pub mod cmma;
pub mod complexity;

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::crypto::{digest_eq, hmac, Digest, OpCounter, SymmetricKey, DIGEST_LEN};
use crate::error::{Error, Result};
use crate::hash_tree::{AuthTree, Proof};
use crate::message::{enumerate_candidates, make_weights, Distribution, Message, MessageTemplate, PrioritizedSet};
use crate::tesla::KeyDisclosure;

/// Builds the candidate set for `interval`: every instantiation of `tpl`
/// weighted by `d`.
pub fn prioritize(interval: u32, tpl: &MessageTemplate, d: &Distribution) -> Result<PrioritizedSet> {
    tpl.validate()?;
    let messages = enumerate_candidates(tpl)?;
    let weights = make_weights(&Distribution { k: tpl.k, ..*d })?;
    PrioritizedSet::new(interval, messages, weights)
}

/// Authentication attached to a root announcement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RootAuth {
    /// One MAC per subscriber, in subscriber order.
    PerDestination(Vec<Digest>),
    /// A single MAC under the interval's chain key.
    Single(Digest),
}

/// Pre-message announcement of an interval's tree root.
///
/// Wire: `u32 interval || u64 ts || root || MACs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootAnnouncement {
    pub interval: u32,
    /// Epoch milliseconds.
    pub ts: u64,
    pub root: Digest,
    pub auth: RootAuth,
}

/// Fixed part of the announcement wire encoding.
pub const ANNOUNCEMENT_HEADER_LEN: usize = 4 + 8 + DIGEST_LEN;

impl RootAnnouncement {
    pub fn mac_count(&self) -> usize {
        match &self.auth {
            RootAuth::PerDestination(m) => m.len(),
            RootAuth::Single(_) => 1,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ANNOUNCEMENT_HEADER_LEN + self.mac_count() * DIGEST_LEN);
        out.extend_from_slice(&self.interval.to_be_bytes());
        out.extend_from_slice(&self.ts.to_be_bytes());
        out.extend_from_slice(self.root.as_bytes());
        match &self.auth {
            RootAuth::PerDestination(macs) => macs.iter().for_each(|m| out.extend_from_slice(m.as_bytes())),
            RootAuth::Single(m) => out.extend_from_slice(m.as_bytes()),
        }
        out
    }

    /// Decodes an announcement; `single` selects the one-MAC form.
    pub fn decode(buf: &[u8], single: bool) -> Result<Self> {
        if buf.len() < ANNOUNCEMENT_HEADER_LEN || !(buf.len() - ANNOUNCEMENT_HEADER_LEN).is_multiple_of(DIGEST_LEN) {
            return Err(Error::Malformed("announcement length"));
        }
        let interval = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes"));
        let ts = u64::from_be_bytes(buf[4..12].try_into().expect("8 bytes"));
        let root = Digest::from_slice(&buf[12..44]).expect("32 bytes");
        let macs: Vec<Digest> = buf[ANNOUNCEMENT_HEADER_LEN..]
            .chunks_exact(DIGEST_LEN)
            .map(|c| Digest::from_slice(c).expect("32 bytes"))
            .collect();
        let auth = if single {
            match macs.as_slice() {
                [m] => RootAuth::Single(*m),
                _ => return Err(Error::Malformed("single-MAC announcement must carry exactly one MAC")),
            }
        } else {
            if macs.is_empty() {
                return Err(Error::Malformed("announcement carries no MAC"));
            }
            RootAuth::PerDestination(macs)
        };
        Ok(Self { interval, ts, root, auth })
    }
}

/// MAC binding a root to its timestamp: `HMAC(key, ts, root)`.
pub fn root_mac(key: &SymmetricKey, ts: u64, root: &Digest, ctr: &mut OpCounter) -> Digest {
    hmac(key, &[&ts.to_be_bytes(), root.as_bytes()], ctr)
}

/// A message with its inclusion proof, and for the multicast scheme the
/// chain key that authenticates the proof's root.
///
/// Wire: `message || proof || [u32 index || key]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthenticatedMessage {
    pub message: Message,
    pub proof: Proof,
    pub disclosed_key: Option<KeyDisclosure>,
}

impl AuthenticatedMessage {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = self.message.canonical_encode()?;
        out.extend_from_slice(&self.proof.encode()?);
        if let Some(k) = &self.disclosed_key {
            out.extend_from_slice(&k.encode());
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (message, used) = Message::decode_prefix(buf)?;
        let (proof, proof_len) = Proof::decode_prefix(&buf[used..])?;
        let rest = &buf[used + proof_len..];
        let disclosed_key = match rest.len() {
            0 => None,
            KeyDisclosure::WIRE_LEN => Some(KeyDisclosure::decode(rest)?),
            _ => return Err(Error::Malformed("trailing bytes after proof")),
        };
        Ok(Self { message, proof, disclosed_key })
    }

    /// 32-byte values carried beyond the message itself, counted from the
    /// wire encoding: nonce, siblings and any disclosed key.
    pub fn overhead_values(&self) -> Result<usize> {
        let wire = self.encode()?;
        let msg_len = self.message.canonical_encode()?.len();
        overhead_values(&wire, msg_len)
    }
}

/// Counts 32-byte values in an encoded authenticated message after the
/// first `msg_len` bytes, excluding the depth byte, side flags and key index.
pub fn overhead_values(wire: &[u8], msg_len: usize) -> Result<usize> {
    let tail = wire.get(msg_len..).ok_or(Error::Malformed("message longer than wire"))?;
    let depth = *tail.get(DIGEST_LEN).ok_or(Error::Malformed("missing proof depth"))? as usize;
    let proof_len = DIGEST_LEN + 1 + depth * (DIGEST_LEN + 1);
    let key_framing = match tail.len().checked_sub(proof_len) {
        Some(0) => 0,
        Some(KeyDisclosure::WIRE_LEN) => 4,
        _ => return Err(Error::Malformed("unexpected tail length")),
    };
    let payload = tail.len() - 1 - depth - key_framing;
    debug_assert_eq!(payload % DIGEST_LEN, 0);
    Ok(payload / DIGEST_LEN)
}

/// Per-destination MACs over a raw message, used when the true message
/// was not anticipated and by the per-message baseline designs.
///
/// Wire: `message || u64 ts || N × MAC`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacTaggedMessage {
    pub message: Message,
    pub ts: u64,
    pub macs: Vec<Digest>,
}

/// `HMAC(key, encode(m), ts)`.
pub fn message_mac(key: &SymmetricKey, encoding: &[u8], ts: u64, ctr: &mut OpCounter) -> Digest {
    hmac(key, &[encoding, &ts.to_be_bytes()], ctr)
}

impl MacTaggedMessage {
    /// MACs `message` for every key. Costs `2N`.
    pub fn sign(keys: &[SymmetricKey], message: Message, ts: u64, ctr: &mut OpCounter) -> Result<Self> {
        let enc = message.canonical_encode()?;
        let macs = keys.iter().map(|k| message_mac(k, &enc, ts, ctr)).collect();
        Ok(Self { message, ts, macs })
    }

    /// Checks the MAC addressed to subscriber `index`. Costs 2.
    pub fn verify(&self, index: usize, key: &SymmetricKey, ctr: &mut OpCounter) -> Result<bool> {
        let Some(mac) = self.macs.get(index) else {
            return Ok(false);
        };
        let enc = self.message.canonical_encode()?;
        Ok(digest_eq(&message_mac(key, &enc, self.ts, ctr), mac))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = self.message.canonical_encode()?;
        out.extend_from_slice(&self.ts.to_be_bytes());
        self.macs.iter().for_each(|m| out.extend_from_slice(m.as_bytes()));
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (message, used) = Message::decode_prefix(buf)?;
        let rest = &buf[used..];
        if rest.len() < 8 || !(rest.len() - 8).is_multiple_of(DIGEST_LEN) {
            return Err(Error::Malformed("tagged message tail length"));
        }
        let ts = u64::from_be_bytes(rest[..8].try_into().expect("8 bytes"));
        let macs = rest[8..].chunks_exact(DIGEST_LEN).map(|c| Digest::from_slice(c).expect("32 bytes")).collect();
        Ok(Self { message, ts, macs })
    }

    /// MAC values carried, counted from the wire encoding.
    pub fn overhead_values(&self) -> Result<usize> {
        let wire = self.encode()?;
        let msg_len = self.message.canonical_encode()?.len();
        Ok((wire.len() - msg_len - 8) / DIGEST_LEN)
    }
}

/// What a publisher sends for one true message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outgoing {
    /// Served from the precomputed tree.
    Proved(AuthenticatedMessage),
    /// Cache miss: authenticated on the fly with pairwise MACs.
    Fallback(MacTaggedMessage),
}

/// Reasons a subscriber rejects an announcement or message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Root or message MAC did not verify.
    BadMac,
    /// Announcement timestamp outside the freshness window.
    StaleTimestamp,
    /// Proof does not lead to any cached or announced root.
    NoMatchingRoot,
    /// No announcement received for the disclosed interval.
    MissingAnnouncement,
    /// Disclosed key is not on the chain.
    BadKey,
    /// Disclosed key index is older than the verified one.
    StaleKey,
    /// Announcement arrived after its key could have been disclosed.
    Unsafe,
    /// Could not be parsed or lacks a required field.
    Malformed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::BadMac => "bad_mac",
            Self::StaleTimestamp => "stale_timestamp",
            Self::NoMatchingRoot => "no_matching_root",
            Self::MissingAnnouncement => "missing_announcement",
            Self::BadKey => "bad_key",
            Self::StaleKey => "stale_key",
            Self::Unsafe => "unsafe",
            Self::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Pairwise keys for `n` subscribers.
pub fn pairwise_keys<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Vec<SymmetricKey> {
    (0..n).map(|_| SymmetricKey::random(rng)).collect()
}

fn prove_from(tree: &AuthTree, true_msg: &Message, ctr: &mut OpCounter) -> Result<Proof> {
    let idx = tree.find_message(true_msg).ok_or(Error::CacheMiss)?;
    tree.prove(idx, ctr)
}
