use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use cmma_core::crypto::{Digest, OpCounter};
use cmma_core::hash_tree::TreeKind;
use cmma_core::message::{Distribution, DistributionKind, GoosePdu, MessageTemplate, PrioritizedSet};
use cmma_core::protocols::baseline::{BaselineConfig, BaselineDesign, BaselinePublisher, BaselineSubscriber};
use cmma_core::protocols::cma::cma_initialize;
use cmma_core::protocols::cmma::{cmma_initialize, CmmaSubscriber};
use cmma_core::protocols::{prioritize, AuthenticatedMessage, MacTaggedMessage, RejectReason, RootAnnouncement, Verdict};
use cmma_core::tesla::DisclosureSchedule;

const SCHED: DisclosureSchedule = DisclosureSchedule { interval_length: 100_000, start_time: 0, disclosure_delay: 1 };

fn set(interval: u32, k: u32, dist: DistributionKind) -> PrioritizedSet {
    let tpl = MessageTemplate::new(GoosePdu { num_dat_set_entries: 8, ..GoosePdu::default() }, k);
    prioritize(interval, &tpl, &Distribution::new(dist, k).with_seed(u64::from(interval))).unwrap()
}

fn kind_strategy() -> impl Strategy<Value = TreeKind> {
    prop_oneof![Just(TreeKind::Mht), Just(TreeKind::Hht)]
}

fn dist_strategy() -> impl Strategy<Value = DistributionKind> {
    proptest::sample::select(DistributionKind::ALL.to_vec())
}

fn flip(bytes: &[u8], bit: usize) -> Vec<u8> {
    let mut b = bytes.to_vec();
    let bit = bit % (b.len() * 8);
    b[bit / 8] ^= 0x80 >> (bit % 8);
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cmma_wire_round_trip_and_bit_flips(k in 0u32..=5, kind in kind_strategy(), dist in dist_strategy(), pick in any::<usize>(), bits in proptest::collection::vec(any::<usize>(), 1..16), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut ctr = OpCounter::new();
        let (p, b) = cmma_initialize(4, Digest::from_bytes([seed as u8; 32]), None, SCHED, &mut ctr);
        let s = set(2, k, dist);
        let (tree, ann) = p.construct(&s, 200, kind, &mut rng, &mut ctr).unwrap();
        let m = &s.messages()[pick % s.len()];
        let wire = p.prove(&tree, m, 3, &mut ctr).unwrap().encode().unwrap();
        let ann_wire = ann.encode();

        let mut sub = CmmaSubscriber::new(&b, 100);
        let back = RootAnnouncement::decode(&ann_wire, true).unwrap();
        prop_assert_eq!(&back, &ann);
        prop_assert!(sub.receive_announcement(&back, SCHED.interval_start(2) + 10).is_accept());

        for bit in bits {
            let mut fresh = sub.clone();
            if let Ok(am) = AuthenticatedMessage::decode(&flip(&wire, bit)) {
                prop_assert!(!fresh.verify(&am, &mut ctr).is_accept(), "bit {} accepted", bit);
            }
        }
        let am = AuthenticatedMessage::decode(&wire).unwrap();
        prop_assert_eq!(am.proof.depth(), tree.leaves()[pick % s.len()].depth);
        prop_assert!(sub.verify(&am, &mut ctr).is_accept());
    }

    #[test]
    fn cma_announcement_bit_flips_rejected(n in 1usize..6, k in 0u32..=4, kind in kind_strategy(), bit in any::<usize>(), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut ctr = OpCounter::new();
        let (p, subs) = cma_initialize(n, 100, &mut rng);
        let s = set(1, k, DistributionKind::Geometric);
        let (tree, ann) = p.construct(&s, 1000, kind, &mut rng, &mut ctr).unwrap();
        let bad = RootAnnouncement::decode(&flip(&ann.encode(), bit), false).unwrap();
        for sub in &subs {
            let mut honest = sub.clone();
            prop_assert!(honest.pre_verify(&ann, 1000, &mut ctr).is_accept());
            let mut fooled = sub.clone();
            let v = fooled.pre_verify(&bad, 1000, &mut ctr);
            // the interval number is routing metadata outside the MAC, and a
            // flip in another subscriber's MAC leaves this one valid
            let own = 44 + 32 * sub.index()..44 + 32 * (sub.index() + 1);
            let pos = (bit % (ann.encode().len() * 8)) / 8;
            if (4..44).contains(&pos) || own.contains(&pos) {
                prop_assert!(!v.is_accept());
            }
            let am = p.prove(&tree, &s.messages()[0], &mut ctr).unwrap();
            prop_assert!(honest.verify(&am, 1050, &mut ctr).is_accept());
        }
    }

    #[test]
    fn tagged_bit_flips_rejected(n in 1usize..6, design in proptest::sample::select(BaselineDesign::ALL.to_vec()), bit in any::<usize>(), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys = cmma_core::protocols::pairwise_keys(n, &mut rng);
        let cfg = BaselineConfig { design, k: 2, k_u: 1 };
        let mut p = BaselinePublisher::new(cfg, keys.clone()).unwrap();
        let s = set(1, 2, DistributionKind::HalfUniform);
        let mut ctr = OpCounter::new();
        p.precompute(&s, 50, &mut ctr).unwrap();
        let (tagged, _) = p.send(&s.messages()[3], &mut ctr).unwrap();
        let wire = tagged.encode().unwrap();
        let msg_len = tagged.message.canonical_encode().unwrap().len();
        let bad = MacTaggedMessage::decode(&flip(&wire, bit));
        for (index, key) in keys.into_iter().enumerate() {
            let sub = BaselineSubscriber { index, key };
            prop_assert!(sub.verify(&tagged, &mut ctr).is_accept());
            let pos = (bit % (wire.len() * 8)) / 8;
            let own = msg_len + 8 + 32 * index..msg_len + 8 + 32 * (index + 1);
            if let Ok(bad) = &bad {
                if pos < msg_len + 8 || own.contains(&pos) {
                    prop_assert!(!sub.verify(bad, &mut ctr).is_accept());
                }
            }
        }
    }
}

#[test]
fn cmma_session_over_many_intervals() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut ctr = OpCounter::new();
    let (p, b) = cmma_initialize(50, Digest::from_bytes([9; 32]), None, SCHED, &mut ctr);
    let mut sub = CmmaSubscriber::new(&b, 100);
    let mut last = 0;
    for i in 1..=50u32 {
        let s = set(i, 3, DistributionKind::NinetyUniform);
        let (tree, ann) = p.construct(&s, u64::from(i) * 100, TreeKind::Hht, &mut rng, &mut ctr).unwrap();
        assert!(sub.receive_announcement(&ann, SCHED.interval_start(i) + 5).is_accept());
        if i % 7 == 3 {
            continue;
        }
        let j = (i as usize * 5) % s.len();
        let am = p.prove(&tree, &s.messages()[j], i + 1, &mut ctr).unwrap();
        let (v, ops) = ctr.measure(|c| sub.verify(&am, c));
        assert_eq!(v, Verdict::Accept);
        assert_eq!(ops, u64::from(i - last) + 3 + tree.leaves()[j].depth as u64 + 1);
        last = i;
    }
    assert!(sub.pending_len() <= 2);
}

#[test]
fn replayed_key_from_older_interval_is_stale() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut ctr = OpCounter::new();
    let (p, b) = cmma_initialize(8, Digest::from_bytes([4; 32]), None, SCHED, &mut ctr);
    let mut sub = CmmaSubscriber::new(&b, 100);
    let s1 = set(1, 2, DistributionKind::HalfUniform);
    let s2 = set(2, 2, DistributionKind::HalfUniform);
    let (t1, a1) = p.construct(&s1, 100, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
    let (t2, a2) = p.construct(&s2, 200, TreeKind::Mht, &mut rng, &mut ctr).unwrap();
    assert!(sub.receive_announcement(&a1, SCHED.interval_start(1)).is_accept());
    assert!(sub.receive_announcement(&a2, SCHED.interval_start(2)).is_accept());
    let old = p.prove(&t1, &s1.messages()[0], 2, &mut ctr).unwrap();
    let new = p.prove(&t2, &s2.messages()[0], 3, &mut ctr).unwrap();
    assert!(sub.verify(&new, &mut ctr).is_accept());
    assert_eq!(sub.verify(&old, &mut ctr), Verdict::Reject(RejectReason::MissingAnnouncement));
    // announcements for already verified intervals are refused outright
    assert_eq!(sub.receive_announcement(&a1, SCHED.interval_start(1)), Verdict::Reject(RejectReason::Unsafe));
}
