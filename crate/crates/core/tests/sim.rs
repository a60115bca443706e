use cmma_core::hash_tree::TreeKind;
use cmma_core::message::DistributionKind;
use cmma_core::protocols::RejectReason;
use cmma_core::sim::{inject_adversary, latency_profile, run_sim, EventKind, EventTrace, Party, SchemeKind, SimConfig, Strategy};

fn cfg(scheme: SchemeKind) -> SimConfig {
    SimConfig { scheme, n: 5, k: 3, horizon: 100, ..Default::default() }
}

#[test]
fn cmma_publisher_total_matches_per_interval_formula() {
    let c = SimConfig { tree_kind: TreeKind::Mht, ..cfg(SchemeKind::Cmma) };
    let (r, _) = run_sim(&c).unwrap();
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    assert_eq!(r.hit_rate, 1.0);
    assert_eq!(r.publisher.amortized_total_ops, Some(100 * 19));
    assert_eq!(r.publisher.total_ops, 100 * 18 + 100);
    assert_eq!(r.publisher.init_ops, 100);
    assert_eq!(r.publisher.post_message_ops, 0);
    assert_eq!(r.verify_ops.mean, 8.0);
    assert_eq!(r.verify_ops.stddev, 0.0);
    assert_eq!(r.communication_values.mean, 6.0);
}

#[test]
fn cma_publisher_total_matches_per_interval_formula() {
    for kind in [TreeKind::Mht, TreeKind::Hht] {
        let c = SimConfig { tree_kind: kind, ..cfg(SchemeKind::Cma) };
        let (r, _) = run_sim(&c).unwrap();
        assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
        assert_eq!(r.publisher.total_ops, 2500);
        assert_eq!(r.publisher.amortized_total_ops, None);
        assert_eq!(r.deliveries, 500);
    }
}

#[test]
fn cma_mht_subscriber_cost_per_message() {
    let c = SimConfig { tree_kind: TreeKind::Mht, ..cfg(SchemeKind::Cma) };
    let (r, _) = run_sim(&c).unwrap();
    assert_eq!(r.subscriber_ops_per_message, 6.0);
    assert_eq!(r.communication_values.mean, 5.0 * 5.0);
}

#[test]
fn lossy_cmma_still_verifies_every_delivery() {
    for loss in [0.3, 0.9] {
        let c = SimConfig { loss_probability: loss, horizon: 300, seed: 7, ..cfg(SchemeKind::Cmma) };
        let (r, trace) = run_sim(&c).unwrap();
        assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
        assert!(r.rejections.is_empty());
        assert!(r.deliveries > 0 && r.deliveries < 1500);
        let dropped = trace.events.iter().filter(|e| e.kind == EventKind::Dropped).count() as u64;
        assert_eq!(dropped + r.deliveries, 1500);
        // a verification after a gap of g intervals pays g chain hashes
        assert!(r.verify_ops.max > r.verify_ops.min);
    }
}

#[test]
fn lost_announcements_are_expected_rejections() {
    let c = SimConfig { announcement_loss: 0.2, seed: 3, ..cfg(SchemeKind::Cmma) };
    let (r, _) = run_sim(&c).unwrap();
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    assert!(r.rejections.get(&RejectReason::MissingAnnouncement).copied().unwrap_or(0) > 0);
}

#[test]
fn identical_configs_give_identical_traces() {
    for scheme in [SchemeKind::Cma, SchemeKind::Cmma, SchemeKind::PredictOne] {
        let c = SimConfig { loss_probability: 0.1, p_change: 0.4, surprise_probability: 0.05, seed: 99, ..cfg(scheme) };
        let (r1, t1) = run_sim(&c).unwrap();
        let (r2, t2) = run_sim(&c).unwrap();
        assert_eq!(t1.to_jsonl(), t2.to_jsonl());
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
        let (_, t3) = run_sim(&SimConfig { seed: 100, ..c }).unwrap();
        assert_ne!(t1.to_jsonl(), t3.to_jsonl());
    }
}

#[test]
fn trace_round_trips_and_reconciles() {
    let c = SimConfig { messages_per_interval: 3, loss_probability: 0.2, ..cfg(SchemeKind::Cma) };
    let (r, trace) = run_sim(&c).unwrap();
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    let back = EventTrace::read_jsonl(trace.to_jsonl().as_bytes()).unwrap();
    assert_eq!(back, trace);
    assert!(trace.is_time_ordered());
    let by_party = trace.ops_by_party();
    assert_eq!(by_party[&Party::Publisher], r.publisher.total_ops);
    for (i, s) in r.subscribers.iter().enumerate() {
        assert_eq!(by_party.get(&Party::Subscriber(i)).copied().unwrap_or(0), s.total_ops);
    }
    assert_eq!(r.publisher.total_ops, r.publisher.init_ops + r.publisher.pre_message_ops + r.publisher.post_message_ops);
    assert_eq!(r.repeated_proofs, 200);
}

#[test]
fn every_verification_has_announce_and_prove_ancestors() {
    let c = cfg(SchemeKind::Cmma);
    let (_, trace) = run_sim(&c).unwrap();
    let mut announced = std::collections::HashSet::new();
    let mut proved = std::collections::HashSet::new();
    for e in &trace.events {
        match (e.party, e.kind) {
            (Party::Publisher, EventKind::AnnounceSent) => {
                announced.insert(e.slot);
            }
            (Party::Publisher, EventKind::Proved) => {
                proved.insert(e.msg_id.unwrap());
            }
            (Party::Subscriber(_), EventKind::Verified) => {
                assert!(announced.contains(&e.slot));
                assert!(proved.contains(&e.msg_id.unwrap()));
            }
            _ => {}
        }
    }
}

#[test]
fn surprise_messages_fall_back_to_pairwise_macs() {
    for scheme in [SchemeKind::Cma, SchemeKind::Cmma] {
        let c = SimConfig { surprise_probability: 0.3, seed: 5, ..cfg(scheme) };
        let (r, trace) = run_sim(&c).unwrap();
        assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
        assert!(r.misses > 0 && r.hits > 0);
        assert_eq!(r.hits + r.misses, 100);
        for e in trace.events.iter().filter(|e| e.kind == EventKind::CacheMiss) {
            assert_eq!(e.hash_ops, 10);
        }
        assert_eq!(r.publisher.post_message_ops, 10 * r.misses);
    }
}

#[test]
fn predict_one_miss_spike() {
    let c = SimConfig {
        scheme: SchemeKind::PredictOne,
        distribution: DistributionKind::HalfUniform,
        horizon: 3,
        scripted_truth: Some(vec![Some(0), Some(0), Some(1)]),
        ..cfg(SchemeKind::PredictOne)
    };
    let (r, trace) = run_sim(&c).unwrap();
    let prof = latency_profile(&trace, c.hash_op_time_ns);
    let post: Vec<u64> = (0..3).map(|id| prof.iter().find(|p| p.msg_id == id).unwrap().post_message_source_ops).collect();
    assert_eq!(post, vec![0, 0, 10]);
    assert!((r.hit_rate - 2.0 / 3.0).abs() < 1e-12);
    assert!(prof.iter().all(|p| p.accepted && p.verify_ops == 2));
    // the miss is also slower end to end
    let slow = prof.iter().filter(|p| p.msg_id == 2).map(|p| p.end_to_end_us).min().unwrap();
    assert!(slow >= c.delay_min_us + 10);
}

#[test]
fn post_message_profile_by_design() {
    let n = 5;
    let base = SimConfig { p_change: 0.5, seed: 12, ..cfg(SchemeKind::NoPrecompute) };
    let (_, t) = run_sim(&base).unwrap();
    assert!(latency_profile(&t, 0).iter().all(|p| p.post_message_source_ops == 2 * n));

    let all = SimConfig { scheme: SchemeKind::PrecomputeAll, ..base.clone() };
    let (_, t) = run_sim(&all).unwrap();
    assert!(latency_profile(&t, 0).iter().all(|p| p.post_message_source_ops == 0));

    for scheme in [SchemeKind::Cma, SchemeKind::Cmma] {
        let (_, t) = run_sim(&SimConfig { scheme, ..base.clone() }).unwrap();
        let prof = latency_profile(&t, 0);
        assert_eq!(prof.len(), 500);
        assert!(prof.iter().all(|p| p.post_message_source_ops == 0 && p.accepted));
    }

    let sc = SimConfig { scheme: SchemeKind::StateChange, k_u: 1, ..base };
    let (r, _) = run_sim(&sc).unwrap();
    assert!(r.misses > 0 && r.hits > 0);
    assert_eq!(r.publisher.pre_message_ops, 100 * 2 * n * 2);
}

#[test]
fn cma_rekey_keeps_verifying() {
    let c = SimConfig { rekey_every: Some(7), ..cfg(SchemeKind::Cma) };
    let (r, trace) = run_sim(&c).unwrap();
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    let rekeys = trace.events.iter().filter(|e| e.kind == EventKind::Initialize).count();
    assert_eq!(rekeys, 1 + 14);
}

#[test]
fn adversaries_never_succeed() {
    for scheme in [SchemeKind::Cma, SchemeKind::Cmma] {
        for strategy in Strategy::ALL {
            let c = SimConfig { surprise_probability: 0.1, ..cfg(scheme) };
            let r = inject_adversary(&c, strategy, 500).unwrap();
            let a = r.adversary.as_ref().unwrap();
            assert_eq!(a.accepted, 0, "{scheme:?} {strategy}");
            assert!(a.attempts >= 490, "{scheme:?} {strategy}: {}", a.attempts);
            assert!(r.invariant_violations.is_empty(), "{scheme:?} {strategy}: {:?}", r.invariant_violations);
        }
    }
}

#[test]
fn early_key_announcements_fail_the_safety_check() {
    let r = inject_adversary(&cfg(SchemeKind::Cmma), Strategy::EarlyKey, 200).unwrap();
    let a = r.adversary.unwrap();
    assert_eq!(a.rejections[&RejectReason::Unsafe], a.attempts);
}

#[test]
fn replayed_roots_are_stale() {
    let r = inject_adversary(&cfg(SchemeKind::Cma), Strategy::ReplayOldRoot, 200).unwrap();
    let a = r.adversary.unwrap();
    assert_eq!(a.rejections[&RejectReason::StaleTimestamp], a.attempts);
    assert_eq!(a.rejections[&RejectReason::NoMatchingRoot], a.attempts);
}

#[test]
fn invalid_config_is_rejected() {
    let c = SimConfig { n: 0, ..Default::default() };
    assert!(run_sim(&c).is_err());
    let c = SimConfig { adversary: None, ..cfg(SchemeKind::NoPrecompute) };
    assert!(inject_adversary(&c, Strategy::TamperMsg, 1).is_err());
}
