"""Smoke test for the `cmma` extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
Then run:
    python3 python/smoke_test.py
"""

import hashlib
import json

import cmma


def check_hashing():
    assert cmma.sha256(b"abc") == hashlib.sha256(b"abc").digest()


def check_trees():
    for k in range(1, 6):
        cands = cmma.CandidateSet(k, "NINETY_UNIFORM")
        assert len(cands) == 2**k
        w = cands.weights
        assert abs(sum(w) - 1.0) < 1e-9
        mht = cmma.AuthTree(cands, "MHT", seed=1)
        hht = cmma.AuthTree(cands, "HHT", seed=1)
        assert mht.build_ops == hht.build_ops == 2 ** (k + 1) - 1
        assert mht.depths == [k] * 2**k
        assert hht.expected_depth(w) <= mht.expected_depth(w) + 1e-12
        for i in range(len(cands)):
            proof = hht.prove(i)
            root, ops = cmma.root_from_proof(cands.encoding(i), proof)
            assert root == hht.root
            assert ops == hht.depths[i] + 1
            tampered = bytearray(cands.encoding(i))
            tampered[-1] ^= 1
            assert cmma.root_from_proof(bytes(tampered), proof)[0] != hht.root


def check_chain():
    chain = cmma.KeyChain(bytes(range(32)), 20)
    store = cmma.ReceiverKeyStore(chain.commitment)
    last = 0
    for i in (1, 2, 5, 6, 13, 20):
        ok, ops = store.verify(chain.key(i), i)
        assert ok and ops == i - last
        last = i
    assert cmma.ReceiverKeyStore(chain.commitment).verify(bytes(32), 4) == (False, 4)
    try:
        store.verify(chain.key(3), 3)
    except ValueError:
        pass
    else:
        raise AssertionError("stale key accepted")


def check_costs_and_sim():
    assert cmma.expected_costs("CMA-MHT", 10, 5) == (2 * 10 + 63, 0, 5 + 3, 10 * 7)
    assert cmma.expected_costs("CMMA-MHT", 10, 5) == (63 + 4, 0, 5 + 5, 5 + 3)
    report, trace = cmma.run_sim(json.dumps({"scheme": "CMMA", "tree_kind": "MHT", "k": 3, "horizon": 50}))
    report = json.loads(report)
    assert report["invariant_violations"] == []
    assert report["verify_ops"]["mean"] == 8.0
    assert len(trace.splitlines()) > 0
    adv = json.loads(cmma.inject_adversary(json.dumps({"scheme": "CMA", "horizon": 50}), "tamper_proof", 100))
    assert adv["adversary"]["accepted"] == 0
    t1 = json.loads(cmma.table1_check(json.dumps({"grid": {"N": [1, 4], "k": [1, 2, 3]}})))
    assert t1["mismatches"] == [] and t1["points"] > 0


def check_errors():
    for bad in (lambda: cmma.make_weights("NOPE", 3), lambda: cmma.AuthTree(cmma.CandidateSet(2), "XYZ"), lambda: cmma.run_sim('{"n": 0}')):
        try:
            bad()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


if __name__ == "__main__":
    check_hashing()
    check_trees()
    check_chain()
    check_costs_and_sim()
    check_errors()
    print("smoke test passed")
