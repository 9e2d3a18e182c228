"""Pairing with its critical messages carried as committed ledger blocks.

The pairing stages are unchanged; only the transport differs. A routed
message becomes::

    envelope = envelope_encrypt(body, registry key of receiver)
    payload  = len(envelope) (4, BE) || envelope || signature
    signature = sign(header.encode() || envelope, sender private key)

(the signature is empty when identity binding is off). The sender proposes
the block over the ledger overlay, replicas vote, and the receiver reads the
block from its local replica after validating the whole chain. Traffic after
encryption is set up stays on the baseline channel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .adversary import AttackKind, AttackOutcome, Eavesdropper, bias_attack, knob_attack, pin_crack
from .crypto_core import DecryptionError, envelope_decrypt, envelope_encrypt, SeededStreams, sign, verify_signature
from .ledger import (
    Block,
    Chain,
    LedgerError,
    MemberRegistry,
    PayloadHeader,
    consensus_commit,
    propose_block,
    read_blocks,
    validate_chain,
)
from .netsim import LEDGER_OVERLAY, MessageKind, ProtocolError, SimNetwork
from .pairing import DeviceIdentity, PairingSession, run_session

DEFAULT_ROUTED = frozenset({
    MessageKind.SETUP_DATA,
    MessageKind.IN_RAND,
    MessageKind.LINK_KEY_MASKED,
    MessageKind.ROLE_SWITCH_REQ,
    MessageKind.ROLE_SWITCH_RESP,
    MessageKind.AU_RAND,
    MessageKind.SRES,
    MessageKind.ENTROPY_PROPOSAL,
    MessageKind.ENTROPY_ACCEPT,
    MessageKind.START_ENCRYPTION,
})
NEVER_ROUTED = frozenset({MessageKind.DATA, MessageKind.LEDGER_PROPOSE})


class LedgerRejected(ProtocolError):
    pass


class LedgerTampered(ProtocolError):
    def __init__(self, index: int):
        super().__init__(f"local ledger copy fails validation at block {index}")
        self.index = index


class IdentityMismatch(ProtocolError):
    pass


class LedgerDecryptionFailed(ProtocolError):
    pass


@dataclass(frozen=True)
class SecuredSessionConfig:
    route_through_ledger: frozenset = DEFAULT_ROUTED
    bind_identity_to_member_key: bool = True
    mutual_auth: bool = True

    def __post_init__(self):
        routed = frozenset(MessageKind(k) for k in self.route_through_ledger)
        if routed & NEVER_ROUTED:
            raise ValueError("data and overlay traffic cannot be routed through the ledger")
        object.__setattr__(self, "route_through_ledger", routed)


def pack_payload(envelope: bytes, signature: bytes) -> bytes:
    return len(envelope).to_bytes(4, "big") + envelope + signature


def unpack_payload(payload: bytes) -> tuple[bytes, bytes]:
    if len(payload) < 4:
        raise LedgerError("payload too short")
    n = int.from_bytes(payload[:4], "big")
    if len(payload) < 4 + n:
        raise LedgerError("payload shorter than its envelope length")
    return payload[4:4 + n], payload[4 + n:]


def open_block(block: Block, device: DeviceIdentity) -> bytes:
    """Decrypt a routed block with ``device``'s private key."""
    envelope, _ = unpack_payload(block.payload)
    return envelope_decrypt(envelope, device.keypair.private_key)


class LedgerChannel:
    """Drop-in replacement for :class:`SimNetwork` inside the pairing code."""

    def __init__(self, net: SimNetwork, replicas: list[Chain], registry: MemberRegistry,
                 config: Optional[SecuredSessionConfig] = None, seed: int = 0,
                 faulty_voters: Iterable[int] = (), local_replica: int = 0):
        self.net = net
        self.replicas = replicas
        self.registry = registry
        self.config = config or SecuredSessionConfig()
        self.faulty_voters = frozenset(faulty_voters)
        self.local_replica = local_replica
        self.rng = SeededStreams(seed).stream("ENVELOPE")
        self.after_commit: list[Callable[["LedgerChannel", Block], None]] = []
        self.routed: list[tuple[MessageKind, int]] = []
        self._seq = len(replicas[0])
        net.enable_overlay()

    @property
    def log(self):
        return self.net.log

    @property
    def rounds(self) -> int:
        return self.net.rounds

    def add_interceptor(self, hook) -> None:
        self.net.add_interceptor(hook)

    def exchange(self, sender: int, receiver: int, kind: MessageKind, body: bytes) -> bytes:
        if kind not in self.config.route_through_ledger:
            return self.net.exchange(sender, receiver, kind, body)
        header = self._commit(sender, receiver, kind, body)
        return self._deliver(receiver, header)

    def _commit(self, sender: int, receiver: int, kind: MessageKind, body: bytes) -> PayloadHeader:
        try:
            envelope = envelope_encrypt(body, self.registry.key_of(receiver), self.rng)
            header = PayloadHeader(sender, receiver, int(kind), self._seq)
            signature = b""
            if self.config.bind_identity_to_member_key:
                signature = sign(header.encode() + envelope, self.net.devices[sender].keypair.private_key)
            block = propose_block(self.replicas[0], header, pack_payload(envelope, signature), self.registry)
        except LedgerError as exc:
            raise LedgerRejected(str(exc)) from exc
        self._seq += 1
        self.net.send(sender, LEDGER_OVERLAY, MessageKind.LEDGER_PROPOSE, block.encode())
        self.net.step()
        raw = self.net.receive(LEDGER_OVERLAY, MessageKind.LEDGER_PROPOSE)
        try:
            proposed = Block.decode(raw)
        except LedgerError as exc:
            raise LedgerRejected(str(exc)) from exc
        committed = consensus_commit(self.replicas, proposed, self.registry, self.faulty_voters)
        self.net.advance_round()
        if not committed:
            raise LedgerRejected(f"consensus rejected block {proposed.index} ({MessageKind(kind).name})")
        for hook in self.after_commit:
            hook(self, proposed)
        return header

    def _deliver(self, receiver: int, header: PayloadHeader) -> bytes:
        chain = self.replicas[self.local_replica]
        ok, bad = validate_chain(chain)
        if not ok:
            raise LedgerTampered(bad)
        matches = [b for b in read_blocks(chain, receiver) if b.header.seq == header.seq]
        if not matches:
            raise LedgerRejected(f"no committed block {header.seq} addressed to the receiver")
        block = matches[-1]
        envelope, signature = unpack_payload(block.payload)
        if self.config.bind_identity_to_member_key:
            signer_key = self.registry.key_of(block.header.sender)
            if not verify_signature(block.header.encode() + envelope, signature, signer_key):
                raise IdentityMismatch(f"block {block.index} is not signed by its claimed sender's member key")
        try:
            body = envelope_decrypt(envelope, self.net.devices[receiver].keypair.private_key)
        except DecryptionError as exc:
            raise LedgerDecryptionFailed(f"receiver cannot open block {block.index}") from exc
        self.routed.append((MessageKind(block.header.msg_kind), block.index))
        return body


def secure_pairing(initiator: DeviceIdentity, responder: DeviceIdentity, replicas: list[Chain],
                   registry: MemberRegistry, net: SimNetwork, config: Optional[SecuredSessionConfig] = None,
                   *, seed: int = 0, payload: Optional[bytes] = None, setup_payload: Optional[bytes] = None,
                   faulty_voters: Iterable[int] = ()) -> PairingSession:
    """Run the regular pairing stages over a :class:`LedgerChannel`.

    The channel is left on ``session.channel`` for inspection.
    """
    for dev in (initiator, responder):
        if dev.bd_addr not in registry:
            raise LedgerError(f"{dev!r} is not a registered member")
    config = config or SecuredSessionConfig()
    channel = LedgerChannel(net, replicas, registry, config, seed, faulty_voters)
    session = PairingSession(initiator, responder, seed, mutual_auth=config.mutual_auth)
    session.channel = channel
    return run_session(session, channel, payload, setup_payload=setup_payload)


def attack_secured(attack_kind: AttackKind, bed, config: Optional[SecuredSessionConfig] = None,
                   *, pin_digits: int = 4, faulty_voters: Iterable[int] = ()) -> AttackOutcome:
    """Run the baseline attacker of ``attack_kind`` against a ledger-secured testbed."""
    from .testbed import KNOWN_HEADER, make_impersonator, reconnect_network

    if not bed.secured:
        raise ValueError("attack_secured needs a testbed built with secured=True")
    config = config or SecuredSessionConfig()
    a, b = bed.initiator, bed.responder

    def channel_for(net):
        return LedgerChannel(net, bed.replicas, bed.registry, config, bed.seed, faulty_voters)

    if attack_kind is AttackKind.KNOB:
        bed.channel = channel_for(bed.net)
        bed.session = PairingSession(a, b, bed.seed, mutual_auth=config.mutual_auth)
        return knob_attack(bed.channel, bed.session, bed.payload(), KNOWN_HEADER)
    if attack_kind is AttackKind.PIN_CRACK:
        eve = Eavesdropper()
        bed.net.add_interceptor(eve)
        bed.session = secure_pairing(a, b, bed.replicas, bed.registry, bed.net, config,
                                     seed=bed.seed, faulty_voters=faulty_voters)
        bed.channel = bed.session.channel
        return pin_crack(eve.transcript({a.bd_addr, b.bd_addr}), b.bd_addr, pin_digits)
    if attack_kind is AttackKind.BIAS:
        honest = secure_pairing(a, b, bed.replicas, bed.registry, bed.net, config,
                                seed=bed.seed, faulty_voters=faulty_voters)
        if honest.failed:
            return AttackOutcome(attack_kind, False, 0, notes=f"honest pairing failed: {honest.error}")
        imp = make_impersonator(bed, b)
        bed.channel = channel_for(reconnect_network(bed, a, imp))
        bed.session = PairingSession(a, imp, bed.seed + 1, mutual_auth=config.mutual_auth)
        return bias_attack(bed.channel, imp, b.bd_addr, a, session=bed.session)
    raise ValueError(f"no secured driver for {attack_kind}")
