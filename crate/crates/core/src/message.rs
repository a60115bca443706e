//! GOOSE-shaped message records and the weight distributions used to
//! prioritize candidate messages.
//!
//! A message is a fully predictable header plus `k` unpredictable binary
//! fields appended to the data set. Enumerating all `2^k` bit patterns yields
//! the candidate set a publisher can precompute evidence for.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `k` accepted by [`enumerate_candidates`].
pub const MAX_K: u32 = 20;

/// Predictable portion of a GOOSE PDU.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GoosePdu {
    pub gocb_ref: String,
    /// Milliseconds.
    #[serde(rename = "timeAllowedtoLive")]
    pub time_allowed_to_live: u16,
    pub dat_set: String,
    #[serde(rename = "goID")]
    pub go_id: String,
    /// Epoch milliseconds of the last status change.
    pub t: u64,
    pub st_num: u32,
    pub sq_num: u32,
    pub test: bool,
    pub conf_rev: u32,
    pub nds_com: bool,
    pub num_dat_set_entries: u16,
    #[serde(default, rename = "fixedAllData")]
    pub fixed_all_data: Vec<u8>,
}

impl Default for GoosePdu {
    fn default() -> Self {
        Self {
            gocb_ref: "IED1LD0/LLN0$GO$gcb01".into(),
            time_allowed_to_live: 100,
            dat_set: "IED1LD0/LLN0$Protection".into(),
            go_id: "IED1_PROT".into(),
            t: 0,
            st_num: 1,
            sq_num: 0,
            test: false,
            conf_rev: 1,
            nds_com: false,
            num_dat_set_entries: 8,
            fixed_all_data: vec![0x00, 0x00],
        }
    }
}

/// A PDU header with `k` unpredictable binary fields left open.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTemplate {
    #[serde(flatten)]
    pub pdu: GoosePdu,
    pub k: u32,
}

impl MessageTemplate {
    pub fn new(pdu: GoosePdu, k: u32) -> Self {
        Self { pdu, k }
    }

    /// Checks the template invariants. Each unpredictable field occupies one
    /// data-set entry, so `numDatSetEntries` must be at least `k`.
    pub fn validate(&self) -> Result<()> {
        if self.pdu.time_allowed_to_live == 0 {
            return Err(Error::InvalidTemplate("timeAllowedtoLive must be positive".into()));
        }
        if u32::from(self.pdu.num_dat_set_entries) < self.k {
            return Err(Error::InvalidTemplate(format!(
                "numDatSetEntries = {} cannot hold k = {} binary fields",
                self.pdu.num_dat_set_entries, self.k
            )));
        }
        Ok(())
    }

    pub fn instantiate(&self, bits: Vec<bool>) -> Message {
        debug_assert_eq!(bits.len() as u32, self.k);
        Message { pdu: self.pdu.clone(), unpredictable: bits }
    }
}

impl Default for MessageTemplate {
    fn default() -> Self {
        Self { pdu: GoosePdu::default(), k: 3 }
    }
}

/// A fully instantiated message.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    #[serde(flatten)]
    pub pdu: GoosePdu,
    pub unpredictable: Vec<bool>,
}

fn put_str(out: &mut Vec<u8>, field: &'static str, s: &str) -> Result<()> {
    let len = u8::try_from(s.len()).map_err(|_| Error::Oversize { field, len: s.len() })?;
    out.push(len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Packs bits MSB-first into bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Returns the `k` bits of `index`, most significant first.
pub fn index_bits(index: u64, k: u32) -> Vec<bool> {
    (0..k).map(|j| (index >> (k - 1 - j)) & 1 == 1).collect()
}

impl Message {
    /// Canonical byte encoding, in PDU field order:
    ///
    /// ```text
    /// len8 gocbRef | u16 timeAllowedtoLive | len8 datSet | len8 goID | u64 t
    /// | u32 stNum | u32 sqNum | u8 test | u32 confRev | u8 ndsCom
    /// | u16 numDatSetEntries | len32 fixedAllData | u16 k | packed bits
    /// ```
    ///
    /// All integers are big-endian.
    pub fn canonical_encode(&self) -> Result<Vec<u8>> {
        let p = &self.pdu;
        let mut out = Vec::with_capacity(64 + p.gocb_ref.len() + p.dat_set.len() + p.go_id.len() + p.fixed_all_data.len());
        put_str(&mut out, "gocbRef", &p.gocb_ref)?;
        out.extend_from_slice(&p.time_allowed_to_live.to_be_bytes());
        put_str(&mut out, "datSet", &p.dat_set)?;
        put_str(&mut out, "goID", &p.go_id)?;
        out.extend_from_slice(&p.t.to_be_bytes());
        out.extend_from_slice(&p.st_num.to_be_bytes());
        out.extend_from_slice(&p.sq_num.to_be_bytes());
        out.push(u8::from(p.test));
        out.extend_from_slice(&p.conf_rev.to_be_bytes());
        out.push(u8::from(p.nds_com));
        out.extend_from_slice(&p.num_dat_set_entries.to_be_bytes());
        let data_len = u32::try_from(p.fixed_all_data.len()).map_err(|_| Error::Oversize {
            field: "fixedAllData",
            len: p.fixed_all_data.len(),
        })?;
        out.extend_from_slice(&data_len.to_be_bytes());
        out.extend_from_slice(&p.fixed_all_data);
        let k = u16::try_from(self.unpredictable.len()).map_err(|_| Error::Oversize {
            field: "unpredictable",
            len: self.unpredictable.len(),
        })?;
        out.extend_from_slice(&k.to_be_bytes());
        out.extend_from_slice(&pack_bits(&self.unpredictable));
        Ok(out)
    }

    /// Parses one canonically encoded message from the front of `buf`,
    /// returning it with the number of bytes consumed.
    pub fn decode_prefix(buf: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { buf, pos: 0 };
        let gocb_ref = r.string()?;
        let time_allowed_to_live = u16::from_be_bytes(r.array()?);
        let dat_set = r.string()?;
        let go_id = r.string()?;
        let t = u64::from_be_bytes(r.array()?);
        let st_num = u32::from_be_bytes(r.array()?);
        let sq_num = u32::from_be_bytes(r.array()?);
        let test = r.flag()?;
        let conf_rev = u32::from_be_bytes(r.array()?);
        let nds_com = r.flag()?;
        let num_dat_set_entries = u16::from_be_bytes(r.array()?);
        let data_len = u32::from_be_bytes(r.array()?) as usize;
        let fixed_all_data = r.take(data_len)?.to_vec();
        let k = u16::from_be_bytes(r.array()?) as usize;
        let packed = r.take(k.div_ceil(8))?;
        let unpredictable: Vec<bool> = (0..k).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        if pack_bits(&unpredictable) != packed {
            return Err(Error::Malformed("nonzero padding bits"));
        }
        let msg = Message {
            pdu: GoosePdu {
                gocb_ref,
                time_allowed_to_live,
                dat_set,
                go_id,
                t,
                st_num,
                sq_num,
                test,
                conf_rev,
                nds_com,
                num_dat_set_entries,
                fixed_all_data,
            },
            unpredictable,
        };
        Ok((msg, r.pos))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Malformed("truncated message"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self) -> Result<String> {
        let [n] = self.array::<1>()?;
        let bytes = self.take(n as usize)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed("string field is not UTF-8"))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.array::<1>()? {
            [0] => Ok(false),
            [1] => Ok(true),
            _ => Err(Error::Malformed("boolean field out of range")),
        }
    }
}

/// All `2^k` instantiations of `tpl`, in lexicographic order of the
/// unpredictable bits.
pub fn enumerate_candidates(tpl: &MessageTemplate) -> Result<Vec<Message>> {
    if tpl.k > MAX_K {
        return Err(Error::KTooLarge(tpl.k));
    }
    Ok((0..1u64 << tpl.k).map(|i| tpl.instantiate(index_bits(i, tpl.k))).collect())
}

/// Candidate successors of `current` for the next transmission.
///
/// Index 0 is the retransmission (same data, `sqNum + 1`). Index `j > 0`
/// is the state change whose bits are `current XOR bits(j)`, carrying
/// `stNum + 1`, `sqNum = 0` and `t = change_time_ms`.
pub fn successor_candidates(current: &Message, change_time_ms: u64) -> Result<Vec<Message>> {
    let k = current.unpredictable.len() as u32;
    if k > MAX_K {
        return Err(Error::KTooLarge(k));
    }
    let mut out = Vec::with_capacity(1 << k);
    let mut retransmit = current.clone();
    retransmit.pdu.sq_num = retransmit.pdu.sq_num.wrapping_add(1);
    out.push(retransmit);
    for j in 1..1u64 << k {
        let mut m = current.clone();
        for (b, flip) in m.unpredictable.iter_mut().zip(index_bits(j, k)) {
            *b ^= flip;
        }
        m.pdu.st_num = m.pdu.st_num.wrapping_add(1);
        m.pdu.sq_num = 0;
        m.pdu.t = change_time_ms;
        out.push(m);
    }
    Ok(out)
}

/// The four candidate-weight distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistributionKind {
    /// `2^k` i.i.d. exponential samples, normalized.
    ExpIid,
    /// `Pr(m_i) = 2^-i` for `i < 2^k`, last message takes the remainder.
    Geometric,
    /// `Pr(m_1) = 0.5`, the rest share 0.5 uniformly.
    HalfUniform,
    /// `Pr(m_1) = 0.9`, the rest share 0.1 uniformly.
    NinetyUniform,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 4] =
        [Self::ExpIid, Self::Geometric, Self::HalfUniform, Self::NinetyUniform];

    pub fn label(self) -> &'static str {
        match self {
            Self::ExpIid => "EXP_IID",
            Self::Geometric => "GEOMETRIC",
            Self::HalfUniform => "HALF_UNIFORM",
            Self::NinetyUniform => "NINETY_UNIFORM",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distribution {
    pub kind: DistributionKind,
    pub k: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Distribution {
    pub fn new(kind: DistributionKind, k: u32) -> Self {
        Self { kind, k, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits of a 64-bit word.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Weight vector of length `2^k` for `d`. For `k = 0` every kind yields `[1.0]`.
pub fn make_weights(d: &Distribution) -> Result<Vec<f64>> {
    if d.k > MAX_K {
        return Err(Error::KTooLarge(d.k));
    }
    let n = 1usize << d.k;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let w = match d.kind {
        DistributionKind::ExpIid => {
            let mut rng = ChaCha20Rng::seed_from_u64(d.seed);
            // inverse CDF; 1 - u lies in (0, 1]
            let samples: Vec<f64> = (0..n).map(|_| -(1.0 - unit_f64(&mut rng)).ln()).collect();
            let total: f64 = samples.iter().sum();
            samples.into_iter().map(|x| x / total).collect()
        }
        DistributionKind::Geometric => {
            let mut w: Vec<f64> = (1..n as i32).map(|i| 2f64.powi(-i)).collect();
            w.push(2f64.powi(-(n as i32) + 1));
            w
        }
        DistributionKind::HalfUniform => head_then_uniform(0.5, n),
        DistributionKind::NinetyUniform => head_then_uniform(0.9, n),
    };
    Ok(w)
}

fn head_then_uniform(head: f64, n: usize) -> Vec<f64> {
    let rest = (1.0 - head) / (n - 1) as f64;
    std::iter::once(head).chain(std::iter::repeat_n(rest, n - 1)).collect()
}

/// Tolerance on the weight sum.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Candidate messages for one interval with their normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritizedSet {
    interval: u32,
    messages: Vec<Message>,
    weights: Vec<f64>,
}

impl PrioritizedSet {
    pub fn new(interval: u32, messages: Vec<Message>, weights: Vec<f64>) -> Result<Self> {
        if messages.is_empty() {
            return Err(Error::InvalidSet("no candidate messages".into()));
        }
        if messages.len() != weights.len() {
            return Err(Error::InvalidSet(format!(
                "{} messages but {} weights",
                messages.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidSet(format!("weight {w} is not a non-negative real")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidSet(format!("weights sum to {sum}")));
        }
        let mut seen = std::collections::HashSet::with_capacity(messages.len());
        for m in &messages {
            if !seen.insert(m.canonical_encode()?) {
                return Err(Error::InvalidSet("duplicate candidate message".into()));
            }
        }
        Ok(Self { interval, messages, weights })
    }

    /// Uniform weights over `messages`.
    pub fn uniform(interval: u32, messages: Vec<Message>) -> Result<Self> {
        let n = messages.len().max(1);
        Self::new(interval, messages, vec![1.0 / n as f64; n])
    }

    pub fn interval(&self) -> u32 {
        self.interval
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn position(&self, m: &Message) -> Option<usize> {
        self.messages.iter().position(|x| x == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tpl(k: u32) -> MessageTemplate {
        MessageTemplate::new(GoosePdu::default(), k)
    }

    #[test]
    fn enumerate_small_k() {
        assert_eq!(enumerate_candidates(&tpl(0)).unwrap().len(), 1);
        let c = enumerate_candidates(&tpl(2)).unwrap();
        let bits: Vec<_> = c.iter().map(|m| m.unpredictable.clone()).collect();
        assert_eq!(
            bits,
            vec![vec![false, false], vec![false, true], vec![true, false], vec![true, true]]
        );
    }

    #[test]
    fn enumerate_k5_distinct() {
        let c = enumerate_candidates(&tpl(5)).unwrap();
        assert_eq!(c.len(), 32);
        let enc: std::collections::HashSet<_> = c.iter().map(|m| m.canonical_encode().unwrap()).collect();
        assert_eq!(enc.len(), 32);
    }

    #[test]
    fn enumerate_rejects_large_k() {
        assert!(matches!(enumerate_candidates(&tpl(21)), Err(Error::KTooLarge(21))));
    }

    #[test]
    fn oversize_string_rejected() {
        let mut m = tpl(1).instantiate(vec![true]);
        m.pdu.go_id = "x".repeat(256);
        assert!(matches!(m.canonical_encode(), Err(Error::Oversize { field: "goID", .. })));
        m.pdu.go_id = "x".repeat(255);
        assert!(m.canonical_encode().is_ok());
    }

    #[test]
    fn bit_flip_changes_encoding() {
        let m = tpl(4).instantiate(vec![false, true, false, false]);
        let mut m2 = m.clone();
        m2.unpredictable[3] = true;
        assert_ne!(m.canonical_encode().unwrap(), m2.canonical_encode().unwrap());
        assert_eq!(m.canonical_encode().unwrap(), m.canonical_encode().unwrap());
    }

    #[test]
    fn template_validation() {
        assert!(tpl(3).validate().is_ok());
        let mut t = tpl(3);
        t.pdu.time_allowed_to_live = 0;
        assert!(t.validate().is_err());
        let mut t = tpl(9);
        t.pdu.num_dat_set_entries = 8;
        assert!(t.validate().is_err());
    }

    #[test]
    fn successors_start_with_retransmission() {
        let cur = tpl(2).instantiate(vec![true, false]);
        let s = successor_candidates(&cur, 777).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].unpredictable, cur.unpredictable);
        assert_eq!(s[0].pdu.sq_num, cur.pdu.sq_num + 1);
        assert_eq!(s[0].pdu.st_num, cur.pdu.st_num);
        assert_eq!(s[1].unpredictable, vec![true, true]);
        assert_eq!(s[3].unpredictable, vec![false, true]);
        for m in &s[1..] {
            assert_eq!(m.pdu.st_num, cur.pdu.st_num + 1);
            assert_eq!(m.pdu.sq_num, 0);
            assert_eq!(m.pdu.t, 777);
        }
    }

    #[test]
    fn geometric_and_half_uniform_values() {
        let g = make_weights(&Distribution::new(DistributionKind::Geometric, 2)).unwrap();
        assert_eq!(g, vec![0.5, 0.25, 0.125, 0.125]);
        let h = make_weights(&Distribution::new(DistributionKind::HalfUniform, 2)).unwrap();
        assert_eq!(h[0], 0.5);
        for w in &h[1..] {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
        let n = make_weights(&Distribution::new(DistributionKind::NinetyUniform, 5)).unwrap();
        assert_eq!(n.len(), 32);
        assert_eq!(n[0], 0.9);
    }

    #[test]
    fn geometric_sums_to_one_exactly() {
        // scale by 2^(n-1) and sum as integers
        for k in 1..=6u32 {
            let n = 1u32 << k;
            let w = make_weights(&Distribution::new(DistributionKind::Geometric, k)).unwrap();
            let scale = 2f64.powi(n as i32 - 1);
            let total: u128 = w.iter().map(|x| (x * scale) as u128).sum();
            assert_eq!(total, 1u128 << (n - 1), "k = {k}");
            assert_eq!(w.iter().map(|x| x * scale).map(|x| x.fract()).sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn exp_iid_reproducible() {
        let d = Distribution::new(DistributionKind::ExpIid, 5).with_seed(42);
        let a = make_weights(&d).unwrap();
        let b = make_weights(&d).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let c = make_weights(&d.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn k_zero_weights() {
        for kind in DistributionKind::ALL {
            assert_eq!(make_weights(&Distribution::new(kind, 0)).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn prioritized_set_invariants() {
        let msgs = enumerate_candidates(&tpl(1)).unwrap();
        assert!(PrioritizedSet::new(0, msgs.clone(), vec![0.5, 0.5]).is_ok());
        assert!(PrioritizedSet::new(0, msgs.clone(), vec![0.6, 0.5]).is_err());
        assert!(PrioritizedSet::new(0, msgs.clone(), vec![1.0]).is_err());
        assert!(PrioritizedSet::new(0, msgs.clone(), vec![1.5, -0.5]).is_err());
        let dup = vec![msgs[0].clone(), msgs[0].clone()];
        assert!(PrioritizedSet::new(0, dup, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn template_json_uses_goose_names() {
        let json = serde_json::to_value(tpl(2)).unwrap();
        for key in ["gocbRef", "timeAllowedtoLive", "datSet", "goID", "stNum", "sqNum", "confRev", "ndsCom", "numDatSetEntries", "k"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let back: MessageTemplate = serde_json::from_value(json).unwrap();
        assert_eq!(back, tpl(2));
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        (
            "[a-zA-Z0-9/$]{0,20}",
            any::<u16>(),
            "[a-zA-Z0-9/$]{0,20}",
            "[a-zA-Z0-9_]{0,12}",
            (any::<u64>(), any::<u32>(), any::<u32>(), any::<bool>()),
            (any::<u32>(), any::<bool>(), any::<u16>()),
            proptest::collection::vec(any::<u8>(), 0..16),
            proptest::collection::vec(any::<bool>(), 0..12),
        )
            .prop_map(|(g, ttl, ds, id, (t, st, sq, test), (cr, nc, ne), data, bits)| Message {
                pdu: GoosePdu {
                    gocb_ref: g,
                    time_allowed_to_live: ttl,
                    dat_set: ds,
                    go_id: id,
                    t,
                    st_num: st,
                    sq_num: sq,
                    test,
                    conf_rev: cr,
                    nds_com: nc,
                    num_dat_set_entries: ne,
                    fixed_all_data: data,
                },
                unpredictable: bits,
            })
    }

    proptest! {
        #[test]
        fn encoding_is_injective(a in arb_message(), b in arb_message()) {
            let ea = a.canonical_encode().unwrap();
            let eb = b.canonical_encode().unwrap();
            prop_assert_eq!(ea == eb, a == b);
        }

        #[test]
        fn decode_inverts_encode(m in arb_message(), tail in proptest::collection::vec(any::<u8>(), 0..8)) {
            let mut enc = m.canonical_encode().unwrap();
            let len = enc.len();
            enc.extend_from_slice(&tail);
            let (back, used) = Message::decode_prefix(&enc).unwrap();
            prop_assert_eq!(used, len);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn weights_are_normalized(kind in prop::sample::select(DistributionKind::ALL.to_vec()), k in 1u32..=10, seed in any::<u64>()) {
            let w = make_weights(&Distribution { kind, k, seed }).unwrap();
            prop_assert_eq!(w.len(), 1usize << k);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }
    }
}
