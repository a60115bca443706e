//! Forgery attempts injected at one subscriber alongside honest traffic.
//!
//! The adversary sees every packet on the wire, including disclosed chain
//! keys, but holds no pairwise key and no undisclosed chain value.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, OpCounter, SymmetricKey};
use crate::error::{Error, Result};
use crate::hash_tree::{AuthTree, Proof};
use crate::message::{Message, PrioritizedSet};
use crate::protocols::{root_mac, AuthenticatedMessage, RejectReason, RootAnnouncement, RootAuth};
use crate::tesla::{mac_key_for_interval, KeyDisclosure};

use super::config::SchemeKind;
use super::Packet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Flip one bit of the message body.
    TamperMsg,
    /// Flip one bit of the proof or MAC field.
    TamperProof,
    /// Announce an adversary root MACed under a guessed key.
    ForgeMac,
    /// Replay an expired announcement and its message.
    ReplayOldRoot,
    /// Use an already disclosed chain key to MAC a forged root.
    EarlyKey,
    /// Pair a proof from an earlier interval with a new message.
    ReuseNonce,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Self::TamperMsg, Self::TamperProof, Self::ForgeMac, Self::ReplayOldRoot, Self::EarlyKey, Self::ReuseNonce];

    pub fn label(self) -> &'static str {
        match self {
            Self::TamperMsg => "tamper_msg",
            Self::TamperProof => "tamper_proof",
            Self::ForgeMac => "forge_mac",
            Self::ReplayOldRoot => "replay_old_root",
            Self::EarlyKey => "early_key",
            Self::ReuseNonce => "reuse_nonce",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown adversary strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryReport {
    pub strategy: Strategy,
    pub attempts: u64,
    /// Forged packets and announcements handed to the subscriber.
    pub delivered: u64,
    /// Forged messages (or, for pairwise keys, announcements) accepted.
    pub accepted: u64,
    pub rejections: BTreeMap<RejectReason, u64>,
}

/// Something the adversary puts on the wire.
#[derive(Clone, Debug)]
pub(crate) enum Injection {
    Announcement { slot: u32, bytes: Vec<u8> },
    Packet(Packet),
}

#[derive(Clone, Debug)]
pub(crate) struct SlotRecord {
    pub ann: Rc<Vec<u8>>,
    pub packet: Option<Rc<Packet>>,
}

/// What the adversary has observed when an honest packet is delivered.
pub(crate) struct AttackContext<'a> {
    pub scheme: SchemeKind,
    pub n: usize,
    pub slot: u32,
    pub now_ms: u64,
    pub ttl_ms: u64,
    pub honest: &'a Packet,
    pub history: &'a BTreeMap<u32, SlotRecord>,
}

pub(crate) struct Adversary {
    pub strategy: Strategy,
    pub remaining: u64,
    pub rng: ChaCha20Rng,
    pub report: AdversaryReport,
    forged: u64,
}

fn flip_bit<R: RngCore>(bytes: &mut [u8], range: std::ops::Range<usize>, rng: &mut R) {
    let bit = rng.random_range(range.start * 8..range.end * 8);
    bytes[bit / 8] ^= 0x80 >> (bit % 8);
}

fn random_digest<R: RngCore>(rng: &mut R) -> Digest {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    Digest::from_bytes(b)
}

impl Adversary {
    pub fn new(strategy: Strategy, attempts: u64, rng: ChaCha20Rng) -> Self {
        Self {
            strategy,
            remaining: attempts,
            rng,
            report: AdversaryReport { strategy, attempts: 0, delivered: 0, accepted: 0, rejections: BTreeMap::new() },
            forged: 0,
        }
    }

    /// A message the publisher never sent, derived from `m`.
    fn forged_message(&mut self, m: &Message) -> Message {
        self.forged += 1;
        let mut f = m.clone();
        f.pdu.fixed_all_data.extend_from_slice(&self.forged.to_be_bytes());
        f
    }

    /// One-leaf tree over a forged message, built with the adversary's own
    /// nonce. Its cost is not charged to any party.
    fn forged_tree(&mut self, m: &Message, slot: u32) -> Result<(Message, AuthTree, Proof)> {
        let f = self.forged_message(m);
        let set = PrioritizedSet::uniform(slot, vec![f.clone()])?;
        let mut scratch = OpCounter::new();
        let tree = AuthTree::build_mht(&set, &mut self.rng, &mut scratch)?;
        let proof = tree.prove(0, &mut scratch)?;
        Ok((f, tree, proof))
    }

    fn forged_announcement(&mut self, ctx: &AttackContext<'_>, interval: u32, ts: u64, root: Digest, key: Option<&Digest>) -> Injection {
        let mut scratch = OpCounter::new();
        let auth = match ctx.scheme {
            SchemeKind::Cmma => {
                let chain_value = key.copied().unwrap_or_else(|| random_digest(&mut self.rng));
                let k = mac_key_for_interval(&chain_value, &mut scratch);
                RootAuth::Single(root_mac(&k, ts, &root, &mut scratch))
            }
            _ => RootAuth::PerDestination(
                (0..ctx.n)
                    .map(|_| {
                        let guess = SymmetricKey::random(&mut self.rng);
                        root_mac(&guess, ts, &root, &mut scratch)
                    })
                    .collect(),
            ),
        };
        Injection::Announcement { slot: interval, bytes: RootAnnouncement { interval, ts, root, auth }.encode() }
    }

    /// Builds one attempt, or `None` if the strategy has nothing to work
    /// with yet.
    pub fn craft(&mut self, ctx: &AttackContext<'_>) -> Result<Option<Vec<Injection>>> {
        let honest_bytes = match ctx.honest {
            Packet::Proved(b) | Packet::Tagged(b) => b,
        };
        let (honest_msg, msg_len) = Message::decode_prefix(honest_bytes)?;
        let honest_am = match ctx.honest {
            Packet::Proved(b) => Some(AuthenticatedMessage::decode(b)?),
            Packet::Tagged(_) => None,
        };
        let disclosed = honest_am.as_ref().and_then(|am| am.disclosed_key);

        let out = match self.strategy {
            Strategy::TamperMsg => {
                let mut b = honest_bytes.clone();
                flip_bit(&mut b, 0..msg_len, &mut self.rng);
                vec![Injection::Packet(ctx.honest.with_bytes(b))]
            }
            Strategy::TamperProof => {
                let mut b = honest_bytes.clone();
                let range = match ctx.honest {
                    Packet::Proved(_) => {
                        let (_, proof_len) = Proof::decode_prefix(&b[msg_len..])?;
                        msg_len..msg_len + proof_len
                    }
                    // the MAC addressed to the attacked subscriber
                    Packet::Tagged(_) => msg_len + 8..msg_len + 8 + crate::crypto::DIGEST_LEN,
                };
                flip_bit(&mut b, range, &mut self.rng);
                vec![Injection::Packet(ctx.honest.with_bytes(b))]
            }
            Strategy::ForgeMac => {
                // a root for a slot whose key is still secret
                let interval = disclosed.map_or(ctx.slot, |d| d.index + 1);
                let (f, tree, proof) = self.forged_tree(&honest_msg, interval)?;
                let ann = self.forged_announcement(ctx, interval, ctx.now_ms, tree.root(), None);
                let disclosed_key = match ctx.scheme {
                    SchemeKind::Cmma => Some(KeyDisclosure { index: interval, key: random_digest(&mut self.rng) }),
                    _ => None,
                };
                let am = AuthenticatedMessage { message: f, proof, disclosed_key };
                vec![ann, Injection::Packet(Packet::Proved(am.encode()?))]
            }
            Strategy::ReplayOldRoot => {
                let Some(old) = self.pick_expired(ctx) else { return Ok(None) };
                let mut v = vec![Injection::Announcement { slot: old.0, bytes: old.1.ann.as_ref().clone() }];
                if let Some(p) = &old.1.packet {
                    v.push(Injection::Packet(p.as_ref().clone()));
                }
                v
            }
            Strategy::EarlyKey => {
                let (f, tree, proof) = self.forged_tree(&honest_msg, ctx.slot)?;
                match disclosed {
                    Some(d) if ctx.scheme == SchemeKind::Cmma => {
                        let ts = ctx.history.get(&d.index).map_or(ctx.now_ms, |r| {
                            RootAnnouncement::decode(&r.ann, true).map_or(ctx.now_ms, |a| a.ts)
                        });
                        let ann = self.forged_announcement(ctx, d.index, ts, tree.root(), Some(&d.key));
                        let am = AuthenticatedMessage { message: f, proof, disclosed_key: Some(d) };
                        vec![ann, Injection::Packet(Packet::Proved(am.encode()?))]
                    }
                    _ => {
                        // no chain: announce a root far in the future
                        let ann = self.forged_announcement(ctx, ctx.slot + 10, ctx.now_ms + 10 * ctx.ttl_ms, tree.root(), None);
                        let am = AuthenticatedMessage { message: f, proof, disclosed_key: None };
                        vec![ann, Injection::Packet(Packet::Proved(am.encode()?))]
                    }
                }
            }
            Strategy::ReuseNonce => {
                let old_am = ctx.history.range(..ctx.slot).rev().find_map(|(_, r)| match r.packet.as_deref() {
                    Some(Packet::Proved(b)) => AuthenticatedMessage::decode(b).ok(),
                    _ => None,
                });
                let Some(old_am) = old_am else { return Ok(None) };
                let message = self.forged_message(&honest_msg);
                let am = AuthenticatedMessage { message, proof: old_am.proof, disclosed_key: disclosed.or(old_am.disclosed_key) };
                vec![Injection::Packet(Packet::Proved(am.encode()?))]
            }
        };
        Ok(Some(out))
    }

    fn pick_expired<'h>(&mut self, ctx: &AttackContext<'h>) -> Option<(u32, &'h SlotRecord)> {
        let old: Vec<(u32, &SlotRecord)> = ctx
            .history
            .range(..ctx.slot.saturating_sub(1))
            .map(|(&s, r)| (s, r))
            .filter(|(_, r)| {
                let single = ctx.scheme == SchemeKind::Cmma;
                RootAnnouncement::decode(&r.ann, single).is_ok_and(|a| a.ts + ctx.ttl_ms <= ctx.now_ms)
            })
            .collect();
        if old.is_empty() {
            return None;
        }
        Some(old[self.rng.random_range(0..old.len())])
    }
}
