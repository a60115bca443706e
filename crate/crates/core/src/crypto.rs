//! Hash, MAC, key-derivation and nonce primitives.
//!
//! Every primitive takes an [`OpCounter`] and charges it according to the
//! counter's [`CostModel`]. The counter is the cost unit used by the rest of
//! the crate: tree construction, proof verification and key-chain walks are
//! all reported in secure-hash operations.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Output length of the digest function, in bytes.
pub const DIGEST_LEN: usize = 32;

/// Domain-separation prefix for leaf hashing.
pub const LEAF_PREFIX: u8 = 0x00;
/// Domain-separation prefix for internal tree nodes.
pub const NODE_PREFIX: u8 = 0x01;
/// Domain-separation prefix for the MAC-key derivation function.
pub const DERIVE_PREFIX: u8 = 0x02;

macro_rules! byte_newtype {
    ($name:ident) => {
        impl $name {
            pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; DIGEST_LEN]>::try_from(bytes).ok().map(Self)
            }

            pub const fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
                &self.0
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }
    };
}

/// A 256-bit digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; DIGEST_LEN]);
byte_newtype!(Digest);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex(&self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A 256-bit symmetric key. Never appears in announcements or proofs.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; DIGEST_LEN]);
byte_newtype!(SymmetricKey);

impl SymmetricKey {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// A 256-bit per-leaf nonce.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce([u8; DIGEST_LEN]);
byte_newtype!(Nonce);

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex(&self.0))
    }
}

fn hex(bytes: &[u8]) -> String {
    use fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// How many secure-hash operations each primitive is charged.
///
/// The default charges 1 per hash, 2 per HMAC and 1 per key derivation.
/// Other values exist only to check that cost accounting is sensitive to the
/// convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub hash: u64,
    pub hmac: u64,
    pub derive_key: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { hash: 1, hmac: 2, derive_key: 1 }
    }
}

/// Running tally of secure-hash operations for one party in one context.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    hash_ops: u64,
    model: CostModel,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cost_model(model: CostModel) -> Self {
        Self { hash_ops: 0, model }
    }

    pub fn hash_ops(&self) -> u64 {
        self.hash_ops
    }

    pub fn cost_model(&self) -> CostModel {
        self.model
    }

    /// Zeroes the tally; the cost model is kept.
    pub fn reset(&mut self) {
        self.hash_ops = 0;
    }

    /// Runs `f` and returns its result with the number of operations it charged.
    pub fn measure<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> (T, u64) {
        let before = self.hash_ops;
        let out = f(self);
        (out, self.hash_ops - before)
    }

    fn charge(&mut self, ops: u64) {
        self.hash_ops += ops;
    }
}

/// Secure hash of `data`. Charges one hash operation.
pub fn hash(data: &[u8], ctr: &mut OpCounter) -> Digest {
    ctr.charge(ctr.model.hash);
    Digest(Sha256::digest(data).into())
}

/// Hash of `prefix || parts[0] || parts[1] || ...`, charged as one hash operation.
pub fn hash_prefixed(prefix: u8, parts: &[&[u8]], ctr: &mut OpCounter) -> Digest {
    ctr.charge(ctr.model.hash);
    let mut h = Sha256::new();
    h.update([prefix]);
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Raw HMAC-SHA256 with no framing and no accounting.
pub fn hmac_sha256(key: &[u8], data: &[u8]) -> Digest {
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    Digest(mac.finalize().into_bytes().into())
}

/// Frames each part with a 4-byte big-endian length prefix.
pub fn frame_parts(parts: &[&[u8]]) -> Vec<u8> {
    let len = parts.iter().map(|p| 4 + p.len()).sum();
    let mut out = Vec::with_capacity(len);
    for p in parts {
        let n = u32::try_from(p.len()).expect("MAC input part exceeds u32 length");
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(p);
    }
    out
}

/// Keyed MAC over the length-framed concatenation of `parts`. Charges two
/// hash operations regardless of input length.
pub fn hmac(key: &SymmetricKey, parts: &[&[u8]], ctr: &mut OpCounter) -> Digest {
    ctr.charge(ctr.model.hmac);
    hmac_sha256(&key.0, &frame_parts(parts))
}

/// Derives a MAC key from a chain value: `H(0x02 || c)`. One hash operation.
pub fn derive_key(c: &Digest, ctr: &mut OpCounter) -> SymmetricKey {
    ctr.charge(ctr.model.derive_key);
    let mut h = Sha256::new();
    h.update([DERIVE_PREFIX]);
    h.update(c.0);
    SymmetricKey(h.finalize().into())
}

/// Draws a fresh 256-bit nonce.
pub fn gen_nonce<R: RngCore + ?Sized>(rng: &mut R) -> Nonce {
    let mut bytes = [0u8; DIGEST_LEN];
    rng.fill_bytes(&mut bytes);
    Nonce(bytes)
}

/// Constant-length comparison of two digests.
pub fn digest_eq(a: &Digest, b: &Digest) -> bool {
    a.0.iter().zip(b.0.iter()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
