"""Seeded construction of simulated worlds and baseline attack drivers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .adversary import AttackKind, AttackOutcome, Eavesdropper, Impersonator, bias_attack, knob_attack, pin_crack
from .crypto_core import MAX_ADDR, SeededStreams, generate_keypair
from .ledger import Chain, MemberRegistry, new_chain, register_member
from .netsim import SimNetwork
from .pairing import DeviceIdentity, PairingSession, Role, run_session

#: Payload header a KNOB attacker is assumed to predict.
KNOWN_HEADER = b"OBEX/PUT 1.0 hdr"
CASE_STUDY_PAYLOAD = b"Key1=55654415, Key2=5665415564"


@dataclass
class Testbed:
    seed: int
    streams: SeededStreams
    net: SimNetwork
    initiator: DeviceIdentity
    responder: DeviceIdentity
    bystanders: list[DeviceIdentity] = field(default_factory=list)
    replicas: Optional[list[Chain]] = None
    registry: Optional[MemberRegistry] = None
    modulus_bits: int = 1024
    session: Optional[PairingSession] = None
    channel: object = None

    @property
    def secured(self) -> bool:
        return self.registry is not None

    def payload(self) -> bytes:
        """Scenario data: the predictable header followed by 16 secret bytes.

        Repeated calls return the same bytes.
        """
        return KNOWN_HEADER + SeededStreams(self.seed).bytes("PAYLOAD", 16)

    def keypair_for(self, label: str):
        return generate_keypair(self.modulus_bits, SeededStreams(self.seed).subseed(f"KEYPAIR/{label}"))


def _addresses(streams: SeededStreams, n: int) -> list[int]:
    rng = streams.stream("ADDR")
    out: list[int] = []
    while len(out) < n:
        addr = rng.getrandbits(48)
        if 0 < addr < MAX_ADDR and addr not in out:
            out.append(addr)
    return out


def random_pin(streams: SeededStreams, digits: int) -> str:
    rng = streams.stream("PIN")
    return "".join(str(rng.randrange(10)) for _ in range(digits))


def make_testbed(seed: int, *, pin_digits: int = 4, secured: bool = False, replicas: int = 5,
                 min_entropy: int = 1, mutual_auth: bool = False, allow_role_switch: bool = True,
                 bystanders: int = 1, modulus_bits: int = 1024) -> Testbed:
    """Two devices sharing a PIN in one piconet, plus optional bystanders.

    Addresses, PIN and nonces do not depend on ``secured``; keypairs, the
    member registry and ``replicas`` ledger copies are only built when it is
    set.
    """
    streams = SeededStreams(seed)
    addrs = _addresses(streams, 2 + bystanders)
    pin = random_pin(streams, pin_digits)
    policy = dict(min_entropy=min_entropy, mutual_auth=mutual_auth, allow_role_switch=allow_role_switch)
    a = DeviceIdentity(addrs[0], pin, role=Role.MASTER, **policy)
    b = DeviceIdentity(addrs[1], pin, **policy)
    others = [DeviceIdentity(addr, random_pin(streams, pin_digits), **policy) for addr in addrs[2:]]
    net = SimNetwork(seed)
    for dev in (a, b, *others):
        net.add_device(dev)
    net.build_piconet(a.bd_addr, [b.bd_addr, *(d.bd_addr for d in others)])
    bed = Testbed(seed, streams, net, a, b, others, modulus_bits=modulus_bits)
    if secured:
        bed.registry = MemberRegistry()
        for label, dev in (("A", a), ("B", b), *((f"C{i}", d) for i, d in enumerate(others))):
            dev.keypair = bed.keypair_for(label)
            register_member(bed.registry, dev.bd_addr, dev.keypair.public_key)
        bed.replicas = [new_chain() for _ in range(replicas)]
        net.enable_overlay()
    return bed


def reconnect_network(bed: Testbed, victim: DeviceIdentity, stranger: DeviceIdentity) -> SimNetwork:
    """A fresh medium holding only ``victim`` and ``stranger``."""
    net = SimNetwork(bed.seed)
    net.add_device(victim)
    net.add_device(stranger)
    net.build_piconet(victim.bd_addr, [stranger.bd_addr])
    if bed.secured:
        net.enable_overlay()
    return net


def make_impersonator(bed: Testbed, target: DeviceIdentity) -> Impersonator:
    imp = Impersonator(target.bd_addr, "0000")
    if bed.secured:
        imp.keypair = bed.keypair_for("IMPERSONATOR")
    return imp


def attack_baseline(kind: AttackKind, bed: Testbed, pin_digits: int = 4) -> AttackOutcome:
    """Run one attack of ``kind`` against the unprotected channel of ``bed``."""
    a, b = bed.initiator, bed.responder
    if kind is AttackKind.KNOB:
        bed.session = PairingSession(a, b, bed.seed)
        return knob_attack(bed.net, bed.session, bed.payload(), KNOWN_HEADER)
    if kind is AttackKind.PIN_CRACK:
        eve = Eavesdropper()
        bed.net.add_interceptor(eve)
        bed.session = run_session(PairingSession(a, b, bed.seed), bed.net)
        return pin_crack(eve.transcript({a.bd_addr, b.bd_addr}), b.bd_addr, pin_digits)
    if kind is AttackKind.BIAS:
        honest = run_session(PairingSession(a, b, bed.seed), bed.net)
        if honest.failed:
            return AttackOutcome(kind, False, 0, notes=f"honest pairing failed: {honest.error}")
        imp = make_impersonator(bed, b)
        net2 = reconnect_network(bed, a, imp)
        bed.session = PairingSession(a, imp, bed.seed + 1)
        outcome = bias_attack(net2, imp, b.bd_addr, a, session=bed.session)
        bed.channel = net2
        return outcome
    raise ValueError(f"no baseline driver for {kind}")
