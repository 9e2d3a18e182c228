"""Attacks on baseline pairing, built only from interceptors and offline search.

No attacker here reads device-internal state: everything comes from
messages observed (or rewritten) on the channel.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, replace
from typing import Optional

from .crypto_core import KEY_LEN, SRES_LEN, KeyMaterial, addr_bytes, digest, stream_encrypt, xor_combine
from .netsim import ChannelMessage, MessageKind
from .pairing import (
    DeviceIdentity,
    IntegrityError,
    PairingSession,
    PairingTranscript,
    Stage,
    run_session,
    transcript_from_records,
    unframe_payload,
)

#: Desk-scale cap on any exhaustive enumeration.
MAX_TRIALS = 1 << 20
MIN_KNOWN_PLAINTEXT = 16


class AttackKind(enum.Enum):
    KNOB = "KNOB"
    BIAS = "BIAS"
    PIN_CRACK = "PinCrack"
    PASSIVE_EAVESDROP = "PassiveEavesdrop"


@dataclass
class AttackOutcome:
    attack_kind: AttackKind
    succeeded: bool
    trials_used: int = 0
    recovered_material: Optional[bytes] = None
    notes: str = ""
    recovered_key: Optional[bytes] = None
    recovered_plaintext: Optional[bytes] = None

    def to_dict(self) -> dict:
        def hx(b):
            return None if b is None else b.hex()

        return {
            "attack_kind": self.attack_kind.value,
            "succeeded": self.succeeded,
            "trials_used": self.trials_used,
            "recovered_material": hx(self.recovered_material),
            "recovered_key": hx(self.recovered_key),
            "recovered_plaintext": hx(self.recovered_plaintext),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackOutcome":
        def unhx(s):
            return None if s is None else bytes.fromhex(s)

        return cls(
            AttackKind(d["attack_kind"]), d["succeeded"], d["trials_used"],
            unhx(d["recovered_material"]), d["notes"], unhx(d["recovered_key"]), unhx(d["recovered_plaintext"]),
        )


class Eavesdropper:
    """Passive interceptor keeping a copy of every message it sees."""

    def __init__(self):
        self.seen: list[ChannelMessage] = []

    def __call__(self, msg: ChannelMessage) -> ChannelMessage:
        self.seen.append(msg)
        return msg

    def transcript(self, endpoints: Optional[set[int]] = None) -> PairingTranscript:
        return transcript_from_records(self.seen, endpoints)


class KnobInterceptor(Eavesdropper):
    """Rewrites both entropy proposals to ``forced_entropy`` and records traffic."""

    def __init__(self, forced_entropy: int = 1):
        super().__init__()
        self.forced_entropy = forced_entropy
        self.rewrites = 0

    def __call__(self, msg: ChannelMessage) -> ChannelMessage:
        if msg.kind in (MessageKind.ENTROPY_PROPOSAL, MessageKind.ENTROPY_ACCEPT):
            self.rewrites += 1
            msg = replace(msg, body=bytes([self.forced_entropy]))
        return super().__call__(msg)

    def data_messages(self) -> list[ChannelMessage]:
        return [m for m in self.seen if m.kind == MessageKind.DATA]


class Impersonator(DeviceIdentity):
    """Claims another device's address without knowing its link key.

    It asks for the verifier role, accepts any response it is given, and
    answers challenges with a guess.
    """

    requests_role_switch = True

    def link_key_for(self, peer_addr: int) -> KeyMaterial:
        return KeyMaterial(digest(b"guess" + peer_addr.to_bytes(6, "big"))[:KEY_LEN])

    def respond(self, au_rand: bytes, k_link) -> bytes:
        return digest(b"guess" + au_rand)[:4]

    def check_response(self, au_rand, sres, claimant_addr, k_link) -> bool:
        return True


def brute_force_enc_key(ciphertext: bytes, known_plaintext: bytes, entropy_bytes: int,
                        counter_start: int = 0, max_trials: int = MAX_TRIALS) -> tuple[Optional[KeyMaterial], int]:
    """Enumerate zero-padded key prefixes in big-endian order.

    Returns ``(key, trials)`` where ``key`` is the first candidate whose
    keystream maps ``known_plaintext`` onto the start of ``ciphertext``, or
    ``None`` once the ``256**entropy_bytes`` space (capped by ``max_trials``)
    is exhausted.
    """
    n = len(known_plaintext)
    if n < MIN_KNOWN_PLAINTEXT:
        raise ValueError(f"need at least {MIN_KNOWN_PLAINTEXT} bytes of known plaintext")
    if len(ciphertext) < n:
        raise ValueError("known plaintext longer than ciphertext")
    if not 1 <= entropy_bytes <= KEY_LEN:
        raise ValueError("entropy must be 1..16 bytes")
    target = xor_combine(ciphertext[:n], known_plaintext)
    blocks = [(counter_start + i) % (1 << 64) for i in range(-(-n // 32))]
    counters = [c.to_bytes(8, "big") for c in blocks]
    pad = bytes(KEY_LEN - entropy_bytes)
    space = min(256 ** entropy_bytes, max_trials)
    sha = hashlib.sha256
    for i in range(space):
        key = i.to_bytes(entropy_bytes, "big") + pad
        stream = b"".join(sha(key + c).digest() for c in counters)
        if stream[:n] == target:
            return KeyMaterial(key, entropy_bytes), i + 1
    return None, space


def knob_attack(net, session: PairingSession, payload: bytes, known_prefix: bytes,
                forced_entropy: int = 1, max_trials: int = MAX_TRIALS) -> AttackOutcome:
    """Downgrade the session to ``forced_entropy`` bytes and brute-force the key.

    ``known_prefix`` is the part of the payload the attacker predicts (a
    protocol header); together with the length prefix, which follows from
    the ciphertext length, it has to cover at least 16 bytes.
    """
    attacker = KnobInterceptor(forced_entropy)
    net.add_interceptor(attacker)
    run_session(session, net, payload)
    data = attacker.data_messages()
    if not data:
        reason = f"no ciphertext observed (session {session.stage.value if session.stage else 'idle'}"
        reason += f": {session.error})" if session.error else ")"
        return AttackOutcome(AttackKind.KNOB, False, 0, notes=reason)
    body = data[0].body
    counter, ciphertext = int.from_bytes(body[:8], "big"), body[8:]
    payload_len = len(ciphertext) - 8
    known = payload_len.to_bytes(4, "big") + known_prefix
    observed = attacker.transcript().entropy_proposals
    entropy = observed[-1] if observed else forced_entropy
    key, trials = brute_force_enc_key(ciphertext, known, entropy, counter, max_trials)
    notes = f"entropy on air {observed}; searched {entropy}-byte space"
    if key is None:
        return AttackOutcome(AttackKind.KNOB, False, trials, notes=notes + "; key not found")
    try:
        plaintext = unframe_payload(stream_encrypt(key, counter, ciphertext))
    except IntegrityError:
        return AttackOutcome(AttackKind.KNOB, False, trials, notes=notes + "; candidate failed frame check")
    return AttackOutcome(AttackKind.KNOB, True, trials, key.bytes, notes, key.bytes, plaintext)


def bias_attack(net, impersonator: DeviceIdentity, target_addr: int, victim: DeviceIdentity,
                seed: int = 0, mutual_auth: bool = False,
                session: Optional[PairingSession] = None) -> AttackOutcome:
    """Impersonate ``target_addr`` towards a victim that bonded with it earlier.

    The victim initiates a bonded reconnection believing it talks to the
    target. Pass ``session`` to inspect the run afterwards.
    """
    if impersonator.bd_addr != target_addr:
        raise ValueError("the impersonator must present the target's address")
    if victim.link_key_for(target_addr) is None:
        return AttackOutcome(AttackKind.BIAS, False, 0, notes="victim holds no bond for the target")
    if session is None:
        session = PairingSession(victim, impersonator, seed, mutual_auth=mutual_auth)
    run_session(session, net)
    succeeded = session.reached(Stage.ENCRYPTION)
    notes = f"role switch {'granted' if session.role_switched else 'not granted'}"
    if session.error is not None:
        notes += f"; victim aborted: {session.error}"
    return AttackOutcome(AttackKind.BIAS, succeeded, 1, notes=notes)


def pin_crack(transcript: PairingTranscript, responder_addr: int, pin_space: int = 4) -> AttackOutcome:
    """Offline PIN search against one eavesdropped pairing.

    For every ``pin_space``-digit PIN: derive the initialization key, unmask
    the link key, and test it against the observed challenge/response.
    """
    missing = [name for name in ("in_rand", "masked_link_key", "au_rand", "sres") if getattr(transcript, name) is None]
    if missing:
        return AttackOutcome(AttackKind.PIN_CRACK, False, 0, notes="transcript lacks " + ", ".join(missing))
    if not 1 <= pin_space <= 8:
        raise ValueError("pin_space must be 1..8 digits at desk scale")
    # same preimages as derive_init_key / compute_sres, with the fixed
    # prefixes hashed once
    init_prefix = hashlib.sha256(b"INIT" + transcript.in_rand + addr_bytes(responder_addr) + bytes([pin_space]))
    auth_prefix = hashlib.sha256(b"AUTH" + transcript.au_rand + addr_bytes(responder_addr))
    masked = int.from_bytes(transcript.masked_link_key, "big")
    matches = []
    trials = 10 ** pin_space
    for candidate in range(trials):
        pin = str(candidate).zfill(pin_space)
        h = init_prefix.copy()
        h.update(pin.encode())
        k_link = (masked ^ int.from_bytes(h.digest()[:KEY_LEN], "big")).to_bytes(KEY_LEN, "big")
        a = auth_prefix.copy()
        a.update(k_link)
        if a.digest()[:SRES_LEN] == transcript.sres:
            matches.append((pin, k_link))
    if len(matches) != 1:
        return AttackOutcome(AttackKind.PIN_CRACK, False, trials, notes=f"{len(matches)} candidate PINs matched")
    pin, k_link = matches[0]
    return AttackOutcome(AttackKind.PIN_CRACK, True, trials, pin.encode(), "unique PIN match", k_link)
