import random
from dataclasses import replace

import pytest

from bluechain.adversary import (
    MAX_TRIALS,
    AttackKind,
    AttackOutcome,
    Eavesdropper,
    brute_force_enc_key,
    knob_attack,
    pin_crack,
)
from bluechain.crypto_core import KeyMaterial, stream_encrypt
from bluechain.pairing import PairingSession, Stage, run_session
from bluechain.testbed import KNOWN_HEADER, attack_baseline, make_testbed

PLAIN = b"known plaintext of 24 b!"


def encrypt_under(prefix: bytes, counter=0):
    key = KeyMaterial(prefix + bytes(16 - len(prefix)), len(prefix))
    return key, stream_encrypt(key, counter, PLAIN)


def test_brute_force_counts_trials():
    key, ct = encrypt_under(b"\x7f")
    found, trials = brute_force_enc_key(ct, PLAIN, 1)
    assert found == key
    assert trials == 128  # candidate index 127 is the 128th tried


def test_brute_force_misses_full_entropy_key():
    ct = stream_encrypt(bytes(range(1, 17)), 0, PLAIN)
    found, trials = brute_force_enc_key(ct, PLAIN, 1)
    assert found is None and trials == 256


def test_brute_force_two_bytes():
    key, ct = encrypt_under(b"\xbe\xef", counter=1 << 32)
    found, trials = brute_force_enc_key(ct, PLAIN, 2, counter_start=1 << 32)
    assert found == key
    assert trials == 0xBEEF + 1 <= 65536


def test_full_entropy_is_safe_at_desk_scale():
    ct = stream_encrypt(random.Random(0).randbytes(16), 0, PLAIN)
    found, trials = brute_force_enc_key(ct, PLAIN, 16)
    assert found is None and trials == MAX_TRIALS


def test_brute_force_input_checks():
    with pytest.raises(ValueError):
        brute_force_enc_key(bytes(32), bytes(8), 1)
    with pytest.raises(ValueError):
        brute_force_enc_key(bytes(8), bytes(16), 1)
    with pytest.raises(ValueError):
        brute_force_enc_key(bytes(32), bytes(16), 0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_knob_recovers_payload(seed):
    bed = make_testbed(seed)
    sent = bed.payload()
    out = attack_baseline(AttackKind.KNOB, bed)
    assert out.succeeded and out.trials_used <= 256
    assert out.recovered_plaintext == sent
    assert out.recovered_key == bed.session.keys.k_enc.bytes
    assert bed.session.received == [sent]


def test_knob_is_invisible_to_endpoints():
    honest = make_testbed(4)
    s = run_session(PairingSession(honest.initiator, honest.responder, 4), honest.net, honest.payload())
    bed = make_testbed(4)
    attack_baseline(AttackKind.KNOB, bed)
    assert bed.session.stage_trace == s.stage_trace
    assert bed.session.error is None


def test_knob_blocked_by_minimum_entropy():
    bed = make_testbed(5, min_entropy=16)
    out = attack_baseline(AttackKind.KNOB, bed)
    assert not out.succeeded
    assert "no ciphertext" in out.notes
    assert bed.session.failed


def test_knob_two_byte_downgrade_still_breaks():
    bed = make_testbed(6)
    session = PairingSession(bed.initiator, bed.responder, 6)
    out = knob_attack(bed.net, session, bed.payload(), KNOWN_HEADER, forced_entropy=2)
    assert out.succeeded and out.trials_used <= 65536


def test_pin_crack_recovers_pin_and_link_key():
    bed = make_testbed(7)
    bed.initiator.pin = bed.responder.pin = "1234"
    out = attack_baseline(AttackKind.PIN_CRACK, bed)
    assert out.succeeded
    assert out.recovered_material == b"1234"
    assert out.recovered_key == bed.session.keys.k_link.bytes
    assert out.trials_used == 10000


def test_pin_crack_one_digit_space():
    bed = make_testbed(8, pin_digits=1)
    out = attack_baseline(AttackKind.PIN_CRACK, bed, pin_digits=1)
    assert out.succeeded and out.trials_used <= 10
    assert out.recovered_material.decode() == bed.initiator.pin


def eavesdrop(seed):
    bed = make_testbed(seed)
    eve = Eavesdropper()
    bed.net.add_interceptor(eve)
    run_session(PairingSession(bed.initiator, bed.responder, seed), bed.net)
    return bed, eve.transcript({bed.initiator.bd_addr, bed.responder.bd_addr})


def test_pin_crack_with_random_sres_fails():
    bed, t = eavesdrop(9)
    t = replace(t, sres=random.Random(9).randbytes(4))
    out = pin_crack(t, bed.responder.bd_addr)
    assert not out.succeeded
    assert "0 candidate" in out.notes


def test_pin_crack_needs_full_transcript():
    bed, t = eavesdrop(10)
    out = pin_crack(replace(t, in_rand=None), bed.responder.bd_addr)
    assert not out.succeeded and out.trials_used == 0
    assert "in_rand" in out.notes


def test_bias_one_way_succeeds():
    bed = make_testbed(11)
    out = attack_baseline(AttackKind.BIAS, bed)
    assert out.succeeded
    assert bed.session.role_switched
    assert bed.session.reached(Stage.ENCRYPTION)


def test_bias_defeated_by_mutual_auth():
    bed = make_testbed(12, mutual_auth=True)
    out = attack_baseline(AttackKind.BIAS, bed)
    assert not out.succeeded
    assert bed.session.failed and not bed.session.reached(Stage.ENCRYPTION)


def test_bias_without_role_switch_fails():
    bed = make_testbed(13, allow_role_switch=False)
    out = attack_baseline(AttackKind.BIAS, bed)
    assert not out.succeeded and not bed.session.role_switched


def test_outcome_round_trip():
    out = AttackOutcome(AttackKind.PIN_CRACK, True, 10, b"1234", "n", b"k" * 16, None)
    assert AttackOutcome.from_dict(out.to_dict()) == out
