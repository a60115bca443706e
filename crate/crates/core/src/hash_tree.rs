//! Merkle and Huffman hash trees over nonced candidate messages.
//!
//! Leaves are `H(0x00 || encode(m) || nonce)`, internal nodes are
//! `H(0x01 || left || right)`. A Merkle tree (MHT) is balanced over a
//! power-of-two leaf count; a Huffman tree (HHT) places each leaf at the depth
//! of its Huffman code length so likely messages get short proofs.
//!
//! Both constructions cost exactly `2n - 1` hash operations for `n` leaves.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::crypto::{gen_nonce, hash_prefixed, Digest, Nonce, OpCounter, DIGEST_LEN, LEAF_PREFIX, NODE_PREFIX};
use crate::error::{Error, Result};
use crate::message::{Message, PrioritizedSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TreeKind {
    Mht,
    Hht,
}

impl TreeKind {
    pub fn label(self) -> &'static str {
        match self {
            TreeKind::Mht => "MHT",
            TreeKind::Hht => "HHT",
        }
    }
}

/// Which side of the path node a sibling sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn to_byte(self) -> u8 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Side::Left),
            1 => Ok(Side::Right),
            _ => Err(Error::Malformed("side flag must be 0 or 1")),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    digest: Digest,
    parent: Option<usize>,
    children: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leaf {
    pub message_index: usize,
    pub nonce: Nonce,
    pub depth: usize,
    pub digest: Digest,
}

/// A hash tree held privately by the publisher for one interval.
#[derive(Clone, Debug)]
pub struct AuthTree {
    interval: u32,
    kind: TreeKind,
    leaves: Vec<Leaf>,
    encodings: Vec<Vec<u8>>,
    nodes: Vec<Node>,
    root: usize,
}

/// Inclusion proof: the leaf nonce plus sibling digests from leaf to root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proof {
    /// Known to the prover; not carried on the wire.
    pub leaf_index: Option<usize>,
    pub nonce: Nonce,
    pub siblings: Vec<(Side, Digest)>,
}

impl Proof {
    pub fn depth(&self) -> usize {
        self.siblings.len()
    }

    /// Number of 32-byte values this proof transmits (nonce plus siblings).
    pub fn value_count(&self) -> usize {
        1 + self.siblings.len()
    }

    /// `nonce || D || D × (side || digest)`.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let d = u8::try_from(self.siblings.len()).map_err(|_| Error::Malformed("proof depth exceeds 255"))?;
        let mut out = Vec::with_capacity(DIGEST_LEN + 1 + self.siblings.len() * (DIGEST_LEN + 1));
        out.extend_from_slice(self.nonce.as_bytes());
        out.push(d);
        for (side, digest) in &self.siblings {
            out.push(side.to_byte());
            out.extend_from_slice(digest.as_bytes());
        }
        Ok(out)
    }

    /// Parses a proof from the front of `buf`, returning bytes consumed.
    pub fn decode_prefix(buf: &[u8]) -> Result<(Self, usize)> {
        let nonce = buf
            .get(..DIGEST_LEN)
            .and_then(Nonce::from_slice)
            .ok_or(Error::Malformed("truncated proof nonce"))?;
        let d = *buf.get(DIGEST_LEN).ok_or(Error::Malformed("missing proof depth"))? as usize;
        let mut pos = DIGEST_LEN + 1;
        let mut siblings = Vec::with_capacity(d);
        for _ in 0..d {
            let chunk = buf.get(pos..pos + DIGEST_LEN + 1).ok_or(Error::Malformed("truncated proof sibling"))?;
            let side = Side::from_byte(chunk[0])?;
            siblings.push((side, Digest::from_slice(&chunk[1..]).expect("32 bytes")));
            pos += DIGEST_LEN + 1;
        }
        Ok((Proof { leaf_index: None, nonce, siblings }, pos))
    }
}

fn leaf_digest(encoding: &[u8], nonce: &Nonce, ctr: &mut OpCounter) -> Digest {
    hash_prefixed(LEAF_PREFIX, &[encoding, nonce.as_bytes()], ctr)
}

fn node_digest(left: &Digest, right: &Digest, ctr: &mut OpCounter) -> Digest {
    hash_prefixed(NODE_PREFIX, &[left.as_bytes(), right.as_bytes()], ctr)
}

/// Heap entry ordered by (weight, smallest contained message index).
struct Pending {
    weight: f64,
    min_index: usize,
    node: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.total_cmp(&other.weight).then(self.min_index.cmp(&other.min_index))
    }
}

impl AuthTree {
    /// Balanced Merkle tree over a power-of-two candidate set.
    pub fn build_mht<R: RngCore + ?Sized>(set: &PrioritizedSet, rng: &mut R, ctr: &mut OpCounter) -> Result<Self> {
        let enc = encode_all(set.messages())?;
        Self::mht_from_encoded(set.interval(), enc, rng, ctr)
    }

    /// Huffman tree shaped by the set's weights.
    pub fn build_hht<R: RngCore + ?Sized>(set: &PrioritizedSet, rng: &mut R, ctr: &mut OpCounter) -> Result<Self> {
        let enc = encode_all(set.messages())?;
        Self::hht_from_encoded(set.interval(), enc, set.weights(), rng, ctr)
    }

    pub fn build<R: RngCore + ?Sized>(kind: TreeKind, set: &PrioritizedSet, rng: &mut R, ctr: &mut OpCounter) -> Result<Self> {
        match kind {
            TreeKind::Mht => Self::build_mht(set, rng, ctr),
            TreeKind::Hht => Self::build_hht(set, rng, ctr),
        }
    }

    /// Merkle tree over already-encoded leaf payloads.
    pub fn mht_from_encoded<R: RngCore + ?Sized>(
        interval: u32,
        encodings: Vec<Vec<u8>>,
        rng: &mut R,
        ctr: &mut OpCounter,
    ) -> Result<Self> {
        let n = encodings.len();
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        let (mut nodes, nonces) = leaf_nodes(&encodings, rng, ctr);
        let mut level: Vec<usize> = (0..n).collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2);
            for pair in level.chunks_exact(2) {
                next.push(join(&mut nodes, pair[0], pair[1], ctr));
            }
            level = next;
        }
        Ok(Self::finish(interval, TreeKind::Mht, encodings, nonces, nodes, level[0]))
    }

    /// Huffman tree over already-encoded leaf payloads. Ties in the merge
    /// queue are broken by the smallest message index a subtree contains, and
    /// the first node popped becomes the left child.
    pub fn hht_from_encoded<R: RngCore + ?Sized>(
        interval: u32,
        encodings: Vec<Vec<u8>>,
        weights: &[f64],
        rng: &mut R,
        ctr: &mut OpCounter,
    ) -> Result<Self> {
        let n = encodings.len();
        if n == 0 || weights.len() != n {
            return Err(Error::InvalidSet(format!("{n} leaves with {} weights", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSet("weights must be non-negative reals".into()));
        }
        let (mut nodes, nonces) = leaf_nodes(&encodings, rng, ctr);
        let mut heap: BinaryHeap<Reverse<Pending>> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Reverse(Pending { weight: w, min_index: i, node: i }))
            .collect();
        while heap.len() > 1 {
            let Reverse(a) = heap.pop().expect("len > 1");
            let Reverse(b) = heap.pop().expect("len > 1");
            let node = join(&mut nodes, a.node, b.node, ctr);
            heap.push(Reverse(Pending {
                weight: a.weight + b.weight,
                min_index: a.min_index.min(b.min_index),
                node,
            }));
        }
        let root = heap.pop().expect("non-empty").0.node;
        Ok(Self::finish(interval, TreeKind::Hht, encodings, nonces, nodes, root))
    }

    fn finish(interval: u32, kind: TreeKind, encodings: Vec<Vec<u8>>, nonces: Vec<Nonce>, nodes: Vec<Node>, root: usize) -> Self {
        let mut depth = vec![0usize; nodes.len()];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if let Some((l, r)) = nodes[i].children {
                depth[l] = depth[i] + 1;
                depth[r] = depth[i] + 1;
                stack.push(l);
                stack.push(r);
            }
        }
        let leaves = nonces
            .into_iter()
            .enumerate()
            .map(|(i, nonce)| Leaf { message_index: i, nonce, depth: depth[i], digest: nodes[i].digest })
            .collect();
        Self { interval, kind, leaves, encodings, nodes, root }
    }

    pub fn interval(&self) -> u32 {
        self.interval
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn root(&self) -> Digest {
        self.nodes[self.root].digest
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn depths(&self) -> Vec<usize> {
        self.leaves.iter().map(|l| l.depth).collect()
    }

    pub fn max_depth(&self) -> usize {
        self.leaves.iter().map(|l| l.depth).max().unwrap_or(0)
    }

    /// Leaf index whose payload encodes to `encoding`.
    pub fn find(&self, encoding: &[u8]) -> Option<usize> {
        self.encodings.iter().position(|e| e == encoding)
    }

    /// Leaf index holding message `m`.
    pub fn find_message(&self, m: &Message) -> Option<usize> {
        m.canonical_encode().ok().and_then(|e| self.find(&e))
    }

    pub fn encoding(&self, index: usize) -> Option<&[u8]> {
        self.encodings.get(index).map(Vec::as_slice)
    }

    /// Collects the inclusion proof for leaf `index`. Performs no hashing;
    /// the counter is accepted only to make that explicit at call sites.
    pub fn prove(&self, index: usize, _ctr: &mut OpCounter) -> Result<Proof> {
        let leaf = self.leaves.get(index).ok_or(Error::IndexOutOfRange { index, len: self.leaves.len() })?;
        let mut siblings = Vec::with_capacity(leaf.depth);
        let mut cur = index;
        while let Some(p) = self.nodes[cur].parent {
            let (l, r) = self.nodes[p].children.expect("parent has children");
            if l == cur {
                siblings.push((Side::Right, self.nodes[r].digest));
            } else {
                siblings.push((Side::Left, self.nodes[l].digest));
            }
            cur = p;
        }
        Ok(Proof { leaf_index: Some(index), nonce: leaf.nonce, siblings })
    }

    /// `Σ p_j · depth_j` over the leaves.
    pub fn expected_depth(&self, weights: &[f64]) -> f64 {
        self.leaves.iter().zip(weights).map(|(l, w)| w * l.depth as f64).sum()
    }

    /// Recomputes every node digest and checks it against the stored value.
    pub fn check_consistency(&self) -> bool {
        let mut scratch = OpCounter::new();
        self.nodes.iter().enumerate().all(|(i, node)| match node.children {
            Some((l, r)) => node_digest(&self.nodes[l].digest, &self.nodes[r].digest, &mut scratch) == node.digest,
            None => leaf_digest(&self.encodings[i], &self.leaves[i].nonce, &mut scratch) == node.digest,
        })
    }
}

fn encode_all(messages: &[Message]) -> Result<Vec<Vec<u8>>> {
    messages.iter().map(Message::canonical_encode).collect()
}

fn leaf_nodes<R: RngCore + ?Sized>(encodings: &[Vec<u8>], rng: &mut R, ctr: &mut OpCounter) -> (Vec<Node>, Vec<Nonce>) {
    let mut nodes = Vec::with_capacity(2 * encodings.len());
    let mut nonces = Vec::with_capacity(encodings.len());
    for enc in encodings {
        let nonce = gen_nonce(rng);
        nodes.push(Node { digest: leaf_digest(enc, &nonce, ctr), parent: None, children: None });
        nonces.push(nonce);
    }
    (nodes, nonces)
}

fn join(nodes: &mut Vec<Node>, left: usize, right: usize, ctr: &mut OpCounter) -> usize {
    let digest = node_digest(&nodes[left].digest, &nodes[right].digest, ctr);
    let id = nodes.len();
    nodes.push(Node { digest, parent: None, children: Some((left, right)) });
    nodes[left].parent = Some(id);
    nodes[right].parent = Some(id);
    id
}

/// Root implied by an encoded leaf payload and a proof. Costs `D + 1` hashes.
pub fn root_from_encoded(encoding: &[u8], proof: &Proof, ctr: &mut OpCounter) -> Digest {
    let mut acc = leaf_digest(encoding, &proof.nonce, ctr);
    for (side, sib) in &proof.siblings {
        acc = match side {
            Side::Left => node_digest(sib, &acc, ctr),
            Side::Right => node_digest(&acc, sib, ctr),
        };
    }
    acc
}

/// Root implied by message `m` and `proof`.
pub fn root_from_proof(m: &Message, proof: &Proof, ctr: &mut OpCounter) -> Result<Digest> {
    Ok(root_from_encoded(&m.canonical_encode()?, proof, ctr))
}
