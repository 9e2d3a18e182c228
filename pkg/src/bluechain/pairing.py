"""Baseline (unprotected) legacy pairing: pairing, bonding, authentication,
encryption and data exchange, driven over any channel exposing
``exchange(sender, receiver, kind, body) -> bytes`` and ``log``.

Role convention: the *initiator* is device A (it sends IN_RAND and is the
default verifier), the *responder* is device B (it generates the link key
and is the default claimant).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .crypto_core import (
    KEY_LEN,
    NONCE_LEN,
    OFFSET_LEN,
    SRES_LEN,
    AsymKeyPair,
    KeyMaterial,
    SeededStreams,
    compute_sres,
    derive_enc_key,
    derive_init_key,
    derive_link_key,
    digest,
    format_addr,
    stream_encrypt,
    xor_combine,
)
from .netsim import ChannelTimeout, DeliveryRecord, MessageKind, ProtocolError

__all__ = [
    "AuthenticationFailed", "ChannelTimeout", "DeviceIdentity", "EntropyPolicyError",
    "IntegrityError", "PairingSession", "PairingTranscript", "ProtocolError", "Role",
    "SessionKeys", "Stage", "authenticate", "bond", "establish_encryption",
    "exchange_data", "negotiate_entropy", "run_init_key_phase", "run_link_key_phase",
    "run_session", "send_setup_data", "transcript_from_records",
]

CHECKSUM_LEN = 4


class AuthenticationFailed(ProtocolError):
    pass


class EntropyPolicyError(ProtocolError):
    pass


class IntegrityError(ProtocolError):
    """Decrypted data failed the length/checksum frame check."""


class Role(enum.Enum):
    MASTER = "master"
    SLAVE = "slave"


class Stage(enum.Enum):
    PAIRING = "Pairing"
    BONDING = "Bonding"
    AUTHENTICATION = "Authentication"
    ENCRYPTION = "Encryption"
    DATA_EXCHANGE = "DataExchange"
    FAILED = "Failed"


STAGE_ORDER = (Stage.PAIRING, Stage.BONDING, Stage.AUTHENTICATION, Stage.ENCRYPTION, Stage.DATA_EXCHANGE)


@dataclass(eq=False)
class DeviceIdentity:
    """An honest simulated device and its local security policy."""

    bd_addr: int
    pin: str
    keypair: Optional[AsymKeyPair] = None
    role: Role = Role.SLAVE
    bond_store: dict[int, KeyMaterial] = field(default_factory=dict)
    mutual_auth: bool = False
    allow_role_switch: bool = True
    min_entropy: int = 1
    max_entropy: int = KEY_LEN

    requests_role_switch = False

    def link_key_for(self, peer_addr: int) -> Optional[KeyMaterial]:
        return self.bond_store.get(peer_addr)

    def respond(self, au_rand: bytes, k_link: Optional[KeyMaterial]) -> bytes:
        if k_link is None:
            raise ProtocolError(f"{format_addr(self.bd_addr)} holds no link key to answer a challenge")
        return compute_sres(au_rand, self.bd_addr, k_link)

    def check_response(self, au_rand: bytes, sres: bytes, claimant_addr: int, k_link: Optional[KeyMaterial]) -> bool:
        if k_link is None or len(sres) != SRES_LEN:
            return False
        return sres == compute_sres(au_rand, claimant_addr, k_link)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({format_addr(self.bd_addr)})"


def bond(device: DeviceIdentity, peer_addr: int, k_link: KeyMaterial) -> None:
    if len(bytes(k_link)) != KEY_LEN:
        raise ValueError("link keys are 16 bytes")
    device.bond_store[peer_addr] = k_link


@dataclass
class SessionKeys:
    """One device's view of the session key material."""

    k_init: Optional[KeyMaterial] = None
    k_link: Optional[KeyMaterial] = None
    k_enc: Optional[KeyMaterial] = None
    negotiated_entropy: Optional[int] = None


@dataclass
class PairingTranscript:
    """Everything an eavesdropper on the baseline channel observes."""

    in_rand: Optional[bytes] = None
    masked_link_key: Optional[bytes] = None
    au_rand: Optional[bytes] = None
    sres: Optional[bytes] = None
    entropy_proposals: list[int] = field(default_factory=list)
    en_rand: Optional[bytes] = None
    cof: Optional[bytes] = None
    data_ciphertexts: list[bytes] = field(default_factory=list)
    challenges: list[bytes] = field(default_factory=list)
    responses: list[bytes] = field(default_factory=list)

    def on_air_bytes(self) -> bytes:
        parts = [self.in_rand, self.masked_link_key, self.en_rand, self.cof,
                 *self.challenges, *self.responses, *self.data_ciphertexts]
        return b"".join(p for p in parts if p)


def transcript_from_records(records: Iterable[DeliveryRecord], endpoints: Optional[set[int]] = None) -> PairingTranscript:
    t = PairingTranscript()
    for rec in records:
        if endpoints is not None and not {rec.sender, rec.receiver} <= endpoints:
            continue
        body = rec.body
        if rec.kind == MessageKind.IN_RAND and t.in_rand is None:
            t.in_rand = body
        elif rec.kind == MessageKind.LINK_KEY_MASKED and t.masked_link_key is None:
            t.masked_link_key = body
        elif rec.kind == MessageKind.AU_RAND:
            t.challenges.append(body)
        elif rec.kind == MessageKind.SRES:
            t.responses.append(body)
        elif rec.kind in (MessageKind.ENTROPY_PROPOSAL, MessageKind.ENTROPY_ACCEPT) and len(body) == 1:
            t.entropy_proposals.append(body[0])
        elif rec.kind == MessageKind.START_ENCRYPTION and len(body) == NONCE_LEN + OFFSET_LEN:
            t.en_rand, t.cof = body[:NONCE_LEN], body[NONCE_LEN:]
        elif rec.kind == MessageKind.DATA:
            t.data_ciphertexts.append(body)
    if t.challenges:
        t.au_rand = t.challenges[0]
    if t.responses:
        t.sres = t.responses[0]
    return t


class PairingSession:
    """State for one pairing/authentication run between two devices.

    Randomness comes from named streams of one seed; each nonce kind has its
    own stream so optional exchanges never shift later values.
    """

    def __init__(self, initiator: DeviceIdentity, responder: DeviceIdentity, seed: int = 0, mutual_auth: bool = False):
        if initiator.bd_addr == responder.bd_addr:
            raise ValueError("a device cannot pair with itself")
        self.initiator = initiator
        self.responder = responder
        self.seed = seed
        self.rand = SeededStreams(seed)
        self.mutual_auth = mutual_auth
        self.stage: Optional[Stage] = None
        self.stage_trace: list[Stage] = []
        self.sides = {initiator.bd_addr: SessionKeys(), responder.bd_addr: SessionKeys()}
        self.transcript = PairingTranscript()
        self.error: Optional[Exception] = None
        self.bonded = False
        self.role_switched = False
        self.setup_received: Optional[bytes] = None
        self.received: list[bytes] = []
        self._data_messages = 0
        self._challenges = 0

    @property
    def keys(self) -> SessionKeys:
        return self.sides[self.initiator.bd_addr]

    def side(self, device: DeviceIdentity) -> SessionKeys:
        return self.sides[device.bd_addr]

    @property
    def failed(self) -> bool:
        return self.stage is Stage.FAILED

    def enter(self, stage: Stage) -> None:
        if self.stage is Stage.FAILED:
            raise ProtocolError("session already failed")
        if stage is not Stage.FAILED and self.stage is not None:
            if STAGE_ORDER.index(stage) <= STAGE_ORDER.index(self.stage):
                raise ProtocolError(f"illegal stage transition {self.stage.value} -> {stage.value}")
        self.stage = stage
        self.stage_trace.append(stage)

    def fail(self, exc: Exception) -> None:
        self.error = exc
        if self.stage is not Stage.FAILED:
            self.stage = Stage.FAILED
            self.stage_trace.append(Stage.FAILED)

    def reached(self, stage: Stage) -> bool:
        return stage in self.stage_trace


def _expect_len(body: bytes, n: int, what: str) -> bytes:
    if len(body) != n:
        raise ProtocolError(f"malformed {what}: expected {n} bytes, got {len(body)}")
    return body


def send_setup_data(session: PairingSession, net, data: bytes) -> bytes:
    """Carry an opaque pairing-critical payload from initiator to responder."""
    got = net.exchange(session.initiator.bd_addr, session.responder.bd_addr, MessageKind.SETUP_DATA, data)
    session.setup_received = got
    return got


def run_init_key_phase(session: PairingSession, net) -> None:
    a, b = session.initiator, session.responder
    in_rand = session.rand.bytes("IN_RAND", NONCE_LEN)
    session.side(a).k_init = derive_init_key(in_rand, b.bd_addr, a.pin)
    got = _expect_len(net.exchange(a.bd_addr, b.bd_addr, MessageKind.IN_RAND, in_rand), NONCE_LEN, "IN_RAND")
    session.side(b).k_init = derive_init_key(got, b.bd_addr, b.pin)


def run_link_key_phase(session: PairingSession, net) -> None:
    a, b = session.initiator, session.responder
    kb, ka = session.side(b), session.side(a)
    if ka.k_init is None or kb.k_init is None:
        raise ProtocolError("initialization key not established")
    lk_rand = session.rand.bytes("LK_RAND", NONCE_LEN)
    kb.k_link = derive_link_key(lk_rand, b.bd_addr)
    masked = xor_combine(kb.k_link.bytes, kb.k_init.bytes)
    got = _expect_len(net.exchange(b.bd_addr, a.bd_addr, MessageKind.LINK_KEY_MASKED, masked), KEY_LEN, "masked link key")
    ka.k_link = KeyMaterial(xor_combine(got, ka.k_init.bytes))


def _challenge(session: PairingSession, net, verifier: DeviceIdentity, claimant: DeviceIdentity) -> bool:
    au_rand = session.rand.bytes(f"AU_RAND/{session._challenges}", NONCE_LEN)
    session._challenges += 1
    got = _expect_len(net.exchange(verifier.bd_addr, claimant.bd_addr, MessageKind.AU_RAND, au_rand), NONCE_LEN, "AU_RAND")
    sres = claimant.respond(got, session.side(claimant).k_link)
    answer = net.exchange(claimant.bd_addr, verifier.bd_addr, MessageKind.SRES, sres)
    return verifier.check_response(au_rand, answer, claimant.bd_addr, session.side(verifier).k_link)


def authenticate(session: PairingSession, net) -> bool:
    """One-way challenge-response, optionally preceded by a role switch.

    The verifier is the initiator unless the responder asks to switch roles
    and the initiator allows it. A reverse challenge follows only under a
    mutual-authentication policy on either device or the session.
    """
    verifier, claimant = session.initiator, session.responder
    if claimant.requests_role_switch:
        net.exchange(claimant.bd_addr, verifier.bd_addr, MessageKind.ROLE_SWITCH_REQ, b"\x01")
        grant = b"\x01" if verifier.allow_role_switch else b"\x00"
        reply = net.exchange(verifier.bd_addr, claimant.bd_addr, MessageKind.ROLE_SWITCH_RESP, grant)
        if reply == b"\x01" and grant == b"\x01":
            verifier, claimant = claimant, verifier
            session.role_switched = True
    if not _challenge(session, net, verifier, claimant):
        return False
    if session.mutual_auth or verifier.mutual_auth or claimant.mutual_auth:
        return _challenge(session, net, claimant, verifier)
    return True


def _entropy_value(body: bytes) -> int:
    if len(body) != 1 or not 1 <= body[0] <= KEY_LEN:
        raise ProtocolError(f"entropy value outside 1..16: {body.hex()}")
    return body[0]


def negotiate_entropy(session: PairingSession, net, initiator_proposal: Optional[int] = None,
                      responder_cap: Optional[int] = None) -> int:
    """Unauthenticated entropy negotiation resolving to min(proposal, cap)."""
    a, b = session.initiator, session.responder
    proposal = a.max_entropy if initiator_proposal is None else initiator_proposal
    cap = b.max_entropy if responder_cap is None else responder_cap
    for value in (proposal, cap):
        if not 1 <= value <= KEY_LEN:
            raise ProtocolError(f"entropy value outside 1..16: {value}")
    got = _entropy_value(net.exchange(a.bd_addr, b.bd_addr, MessageKind.ENTROPY_PROPOSAL, bytes([proposal])))
    if got < b.min_entropy:
        raise EntropyPolicyError(f"responder refuses {got}-byte keys (minimum {b.min_entropy})")
    answer = min(got, cap)
    accepted = _entropy_value(net.exchange(b.bd_addr, a.bd_addr, MessageKind.ENTROPY_ACCEPT, bytes([answer])))
    if accepted < a.min_entropy:
        raise EntropyPolicyError(f"initiator refuses {accepted}-byte keys (minimum {a.min_entropy})")
    if accepted > proposal:
        raise ProtocolError("responder accepted more entropy than proposed")
    session.side(a).negotiated_entropy = accepted
    session.side(b).negotiated_entropy = answer
    return accepted


def establish_encryption(session: PairingSession, net) -> None:
    a, b = session.initiator, session.responder
    ka, kb = session.side(a), session.side(b)
    for keys in (ka, kb):
        if keys.negotiated_entropy is None or keys.k_link is None:
            raise ProtocolError("encryption requires a link key and a negotiated entropy")
    en_rand = session.rand.bytes("EN_RAND", NONCE_LEN)
    cof = session.rand.bytes("COF", OFFSET_LEN)
    ka.k_enc = derive_enc_key(ka.k_link, cof, en_rand, ka.negotiated_entropy)
    got = _expect_len(
        net.exchange(a.bd_addr, b.bd_addr, MessageKind.START_ENCRYPTION, en_rand + cof),
        NONCE_LEN + OFFSET_LEN, "encryption start",
    )
    kb.k_enc = derive_enc_key(kb.k_link, got[NONCE_LEN:], got[:NONCE_LEN], kb.negotiated_entropy)


def frame_payload(payload: bytes) -> bytes:
    return len(payload).to_bytes(4, "big") + payload + digest(payload)[:CHECKSUM_LEN]


def unframe_payload(frame: bytes) -> bytes:
    if len(frame) < 4 + CHECKSUM_LEN:
        raise IntegrityError("frame too short")
    n = int.from_bytes(frame[:4], "big")
    if n != len(frame) - 4 - CHECKSUM_LEN:
        raise IntegrityError("length prefix mismatch")
    payload, checksum = frame[4:4 + n], frame[4 + n:]
    if digest(payload)[:CHECKSUM_LEN] != checksum:
        raise IntegrityError("checksum mismatch")
    return payload


def exchange_data(session: PairingSession, net, payload: bytes, sender: Optional[DeviceIdentity] = None) -> bytes:
    """Stream-encrypt ``payload`` under the sender's k_enc; return what the peer decrypts.

    Body on air: ``counter_start (8 bytes) || ciphertext``; message ``i`` of a
    session starts its keystream at ``i << 32``.
    """
    s = sender or session.initiator
    r = session.responder if s is session.initiator else session.initiator
    ks, kr = session.side(s), session.side(r)
    if ks.k_enc is None or kr.k_enc is None:
        raise ProtocolError("no encryption key established")
    counter = session._data_messages << 32
    session._data_messages += 1
    ciphertext = stream_encrypt(ks.k_enc, counter, frame_payload(bytes(payload)))
    got = net.exchange(s.bd_addr, r.bd_addr, MessageKind.DATA, counter.to_bytes(8, "big") + ciphertext)
    if len(got) < 8:
        raise IntegrityError("data message too short")
    received = unframe_payload(stream_encrypt(kr.k_enc, int.from_bytes(got[:8], "big"), got[8:]))
    session.received.append(received)
    return received


def run_session(session: PairingSession, net, payload: Optional[bytes] = None, *,
                setup_payload: Optional[bytes] = None, initiator_proposal: Optional[int] = None,
                responder_cap: Optional[int] = None, stop_after: Optional[Stage] = None) -> PairingSession:
    """Run every remaining stage; protocol failures leave the session in ``Failed``.

    A bonded pair (the initiator holds a link key for the responder) starts
    directly at authentication using each side's stored key.
    """
    a, b = session.initiator, session.responder
    try:
        stored = a.link_key_for(b.bd_addr)
        if stored is None:
            session.enter(Stage.PAIRING)
            if setup_payload is not None:
                send_setup_data(session, net, setup_payload)
            run_init_key_phase(session, net)
            run_link_key_phase(session, net)
            if stop_after is not Stage.PAIRING:
                session.enter(Stage.BONDING)
                bond(a, b.bd_addr, session.side(a).k_link)
                bond(b, a.bd_addr, session.side(b).k_link)
        else:
            session.bonded = True
            session.side(a).k_link = stored
            session.side(b).k_link = b.link_key_for(a.bd_addr)
        if stop_after in (Stage.PAIRING, Stage.BONDING):
            return session
        session.enter(Stage.AUTHENTICATION)
        if not authenticate(session, net):
            raise AuthenticationFailed("SRES mismatch")
        if stop_after is Stage.AUTHENTICATION:
            return session
        session.enter(Stage.ENCRYPTION)
        negotiate_entropy(session, net, initiator_proposal, responder_cap)
        establish_encryption(session, net)
        if stop_after is Stage.ENCRYPTION:
            return session
        session.enter(Stage.DATA_EXCHANGE)
        if payload is not None:
            exchange_data(session, net, payload)
    except ProtocolError as exc:
        session.fail(exc)
    finally:
        session.transcript = transcript_from_records(net.log, {a.bd_addr, b.bd_addr})
    return session
