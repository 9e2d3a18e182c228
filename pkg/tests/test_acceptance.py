"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the verdict lines are
printed even when output capture is on).
"""
import json
import random
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import pytest

import oracle
from bluechain import crypto_core as cc
from bluechain.adversary import AttackKind
from bluechain.chainpair import open_block, secure_pairing
from bluechain.cli import SCENARIOS, ScenarioConfig, emit_report, run_scenario, run_scenario_with_testbeds
from bluechain.ledger import (
    MemberRegistry,
    PayloadHeader,
    consensus_commit,
    export_chain,
    new_chain,
    propose_block,
    register_member,
    validate_chain,
)
from bluechain.netsim import MessageKind
from bluechain.pairing import PairingSession, run_session
from bluechain.testbed import CASE_STUDY_PAYLOAD, attack_baseline, make_testbed

HERE = Path(__file__).parent
RUNS = 100


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return emit


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_1_knob_reproduction(verdict):
    with Clock() as clk:
        report, beds = run_scenario_with_testbeds(ScenarioConfig("attack-knob", seed=1, runs=RUNS))
    outcomes = [r.outcome for r in report.records]
    rate = report.success_rate
    max_trials = max(o.trials_used for o in outcomes)
    exact = all(o.recovered_plaintext == bed.payload() for o, bed in zip(outcomes, beds))
    ok = rate == 1 and max_trials <= 256 and exact and clk.elapsed < 5
    verdict(1, ok, f"success {report.successes}/{RUNS}, max trials {max_trials}, "
                   f"plaintext exact={exact}, {clk.elapsed:.2f}s (<5s)")


def test_2_knob_mitigation(verdict):
    with Clock() as clk:
        report, beds = run_scenario_with_testbeds(ScenarioConfig("attack-knob-secured", seed=1, runs=RUNS))
    honest = [min(b.initiator.max_entropy, b.responder.max_entropy) for b in beds]
    entropy_ok = all(r.negotiated_entropy == h for r, h in zip(report.records, honest))
    ok = report.successes == 0 and entropy_ok and clk.elapsed < 30
    verdict(2, ok, f"success {report.successes}/{RUNS}, negotiated entropy honest in every run={entropy_ok}, "
                   f"{clk.elapsed:.2f}s (<30s)")


def test_3_offline_pin_recovery(verdict):
    with Clock() as clk:
        base, beds = run_scenario_with_testbeds(ScenarioConfig("attack-pincrack", seed=1, runs=RUNS))
        secured = run_scenario(ScenarioConfig("attack-pincrack-secured", seed=1, runs=RUNS))
    outs = [r.outcome for r in base.records]
    pins_ok = all(o.recovered_material.decode() == b.responder.pin for o, b in zip(outs, beds))
    keys_ok = all(o.recovered_key == b.session.keys.k_link.bytes for o, b in zip(outs, beds))
    max_trials = max(o.trials_used for o in outs)
    absent = all("lacks" in r.outcome.notes for r in secured.records)
    ok = (base.successes == RUNS and pins_ok and keys_ok and max_trials <= 10_000
          and secured.successes == 0 and absent and clk.elapsed < 10)
    verdict(3, ok, f"baseline {base.successes}/{RUNS} (pin ok={pins_ok}, k_link ok={keys_ok}, "
                   f"max candidates {max_trials}); secured {secured.successes}/{RUNS} "
                   f"(fields absent={absent}); {clk.elapsed:.2f}s (<10s)")


def test_4_bias(verdict):
    with Clock() as clk:
        one_way = run_scenario(ScenarioConfig("attack-bias", seed=1, runs=RUNS)).successes
        mutual = sum(
            attack_baseline(AttackKind.BIAS, make_testbed(1 + i, mutual_auth=True)).succeeded
            for i in range(RUNS)
        )
        secured = run_scenario(ScenarioConfig("attack-bias-secured", seed=1, runs=RUNS)).successes
    ok = one_way == RUNS and mutual == 0 and secured == 0 and clk.elapsed < 5
    verdict(4, ok, f"one-way {one_way}/{RUNS}, mutual {mutual}/{RUNS}, secured {secured}/{RUNS}, "
                   f"{clk.elapsed:.2f}s (<5s)")


FIELDS = ("index", "prev_hash", "sender", "receiver", "kind", "seq", "payload", "block_hash")


def flip(block, field, rng):
    if field == "payload":
        buf = bytearray(block.payload)
        buf[rng.randrange(len(buf))] ^= 1 << rng.randrange(8)
        return replace(block, payload=bytes(buf))
    if field in ("prev_hash", "block_hash"):
        buf = bytearray(getattr(block, field))
        buf[rng.randrange(32)] ^= 1 << rng.randrange(8)
        return replace(block, **{field: bytes(buf)})
    if field == "index":
        return replace(block, index=block.index ^ (1 << rng.randrange(64)))
    width = {"sender": 48, "receiver": 48, "kind": 8, "seq": 64}[field]
    name = "msg_kind" if field == "kind" else field
    h = block.header
    return replace(block, header=replace(h, **{name: getattr(h, name) ^ (1 << rng.randrange(width))}))


def test_5_ledger_immutability(verdict):
    rng = random.Random(2024)
    registry = MemberRegistry()
    for m in (0xA, 0xB):
        register_member(registry, m, b"k")
    chain = new_chain()
    for i in range(9):
        block = propose_block(chain, PayloadHeader(0xA, 0xB, 1 + i % 10, i), rng.randbytes(40), registry)
        assert consensus_commit([chain], block, registry)
    assert len(chain) == 10 and validate_chain(chain) == (True, None)
    campaign, caught = 2000, 0
    with Clock() as clk:
        for _ in range(campaign):
            index, field = rng.randrange(10), rng.choice(FIELDS)
            if field == "payload" and not chain.blocks[index].payload:
                field = "block_hash"
            mutated = chain.copy()
            mutated.blocks[index] = flip(chain.blocks[index], field, rng)
            ok, bad = validate_chain(mutated)
            caught += (not ok) and bad <= index
    ok = caught == campaign and clk.elapsed < 5
    verdict(5, ok, f"{caught}/{campaign} single-bit flips caught at or before their block, "
                   f"{clk.elapsed:.2f}s (<5s)")


def test_6_case_study_fidelity(verdict):
    bed = make_testbed(1, secured=True, bystanders=2)
    s = secure_pairing(bed.initiator, bed.responder, bed.replicas, bed.registry, bed.net,
                       seed=1, setup_payload=CASE_STUDY_PAYLOAD)
    blocks = [b for b in bed.replicas[0].blocks if b.header.msg_kind == MessageKind.SETUP_DATA]
    committed = len(blocks) == 1 and all(blocks[0] in r.blocks for r in bed.replicas)
    received = open_block(blocks[0], bed.responder) if committed else None
    others_fail = True
    for member in (bed.initiator, *bed.bystanders):
        try:
            open_block(blocks[0], member)
            others_fail = False
        except cc.DecryptionError:
            pass
    ok = committed and received == b"Key1=55654415, Key2=5665415564" and others_fail and not s.failed
    verdict(6, ok, f"committed on all replicas={committed}, receiver got {received!r}, "
                   f"{1 + len(bed.bystanders)} other members rejected={others_fail}")


def test_7_protocol_preservation(verdict):
    mismatches = []
    for seed in range(1, 21):
        sec = make_testbed(seed, secured=True)
        s = secure_pairing(sec.initiator, sec.responder, sec.replicas, sec.registry, sec.net,
                           seed=seed, payload=sec.payload(), setup_payload=CASE_STUDY_PAYLOAD)
        base = make_testbed(seed)
        b = run_session(PairingSession(base.initiator, base.responder, seed, mutual_auth=True),
                        base.net, base.payload(), setup_payload=CASE_STUDY_PAYLOAD)
        for dev_s, dev_b in ((s.initiator, b.initiator), (s.responder, b.responder)):
            if s.side(dev_s) != b.side(dev_b) or s.side(dev_s).k_enc is None:
                mismatches.append(seed)
    verdict(7, not mismatches, f"SessionKeys byte-equal secured vs baseline for {20 - len(set(mismatches))}/20 seeds")


def test_8_determinism(verdict):
    differing = []
    for name in SCENARIOS:
        cfg = ScenarioConfig(name, seed=11, runs=3)
        first = emit_report(run_scenario(cfg), include_timing=False)
        second = emit_report(run_scenario(cfg), include_timing=False)
        if first != second:
            differing.append(name)
    verdict(8, not differing, f"{len(SCENARIOS) - len(differing)}/{len(SCENARIOS)} scenarios byte-identical "
                              f"across repeated runs {differing or ''}")


def test_9_cross_implementation_oracle(verdict, tmp_path):
    frozen = json.loads((HERE / "data" / "kdf_vectors.json").read_text())
    vector_mismatch = int(frozen != oracle.golden_vectors())
    h = bytes.fromhex
    for v in frozen:
        if v["op"] == "init":
            got = cc.derive_init_key(h(v["in_rand"]), v["addr"], v["pin"]).bytes
        elif v["op"] == "link":
            got = cc.derive_link_key(h(v["lk_rand"]), v["addr"]).bytes
        elif v["op"] == "sres":
            got = cc.compute_sres(h(v["au_rand"]), v["addr"], h(v["k_link"]))
        elif v["op"] == "enc":
            got = cc.derive_enc_key(h(v["k_link"]), h(v["cof"]), h(v["en_rand"]), v["entropy"]).bytes
        else:
            got = cc.stream_encrypt(h(v["k_enc"]), v["counter"], bytes(32))
        vector_mismatch += got.hex() != v["out"]

    _, beds = run_scenario_with_testbeds(ScenarioConfig("pair-secured", seed=1, runs=5))
    chain_mismatch, blocks = 0, 0
    for i, bed in enumerate(beds):
        path = tmp_path / f"chain{i}.jsonl"
        path.write_text(export_chain(bed.replicas[0]))
        blocks += len(bed.replicas[0])
        proc = subprocess.run([sys.executable, str(HERE / "oracle.py"), "chain", str(path)],
                              capture_output=True, text=True)
        chain_mismatch += proc.returncode != 0
    ok = vector_mismatch == 0 and chain_mismatch == 0
    verdict(9, ok, f"{len(frozen)} KDF vectors, {vector_mismatch} mismatches; {len(beds)} exported chains "
                   f"({blocks} blocks), {chain_mismatch} rejected by the standalone oracle")
