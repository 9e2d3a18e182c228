"""Round-based, deterministic message fabric for piconets.

Messages are queued by :meth:`SimNetwork.send` and delivered in FIFO order by
:meth:`SimNetwork.step`. At delivery time every installed interceptor sees
the message in installation order and may pass it, return a rewritten copy,
or drop it by returning ``None``.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from .crypto_core import MAX_ADDR, format_addr

MAX_ACTIVE_SLAVES = 7

#: Reserved endpoint standing in for the ledger replica set.
LEDGER_OVERLAY = MAX_ADDR


class MessageKind(enum.IntEnum):
    IN_RAND = 1
    LINK_KEY_MASKED = 2
    ROLE_SWITCH_REQ = 3
    ROLE_SWITCH_RESP = 4
    AU_RAND = 5
    SRES = 6
    ENTROPY_PROPOSAL = 7
    ENTROPY_ACCEPT = 8
    START_ENCRYPTION = 9
    SETUP_DATA = 10
    DATA = 11
    LEDGER_PROPOSE = 12


OVERLAY_KINDS = frozenset({MessageKind.LEDGER_PROPOSE})


class NetworkError(ValueError):
    pass


class PiconetError(NetworkError):
    pass


class ProtocolError(Exception):
    """A pairing-protocol run cannot continue."""


class ChannelTimeout(ProtocolError):
    """An expected message was absent after a delivery round."""


@dataclass(frozen=True)
class ChannelMessage:
    sender: int
    receiver: int
    kind: MessageKind
    body: bytes
    sequence: int = 0


Interceptor = Callable[[ChannelMessage], Optional[ChannelMessage]]


@dataclass(frozen=True)
class DeliveryRecord:
    sequence: int
    sender: int
    receiver: int
    kind: MessageKind
    body: bytes
    delivered: Optional[bytes]

    def to_line(self) -> str:
        if self.delivered is None:
            fate = "-"
        elif self.delivered == self.body:
            fate = "="
        else:
            fate = self.delivered.hex() or "''"
        body = self.body.hex() or "''"
        return f"{self.sequence} {self.sender:012x} {self.receiver:012x} {self.kind.name} {body} {fate}"

    @classmethod
    def from_line(cls, line: str) -> "DeliveryRecord":
        seq, sender, receiver, kind, body, fate = line.split()
        body_b = b"" if body == "''" else bytes.fromhex(body)
        if fate == "-":
            delivered = None
        elif fate == "=":
            delivered = body_b
        else:
            delivered = b"" if fate == "''" else bytes.fromhex(fate)
        return cls(int(seq), int(sender, 16), int(receiver, 16), MessageKind[kind], body_b, delivered)


@dataclass
class Piconet:
    master: int
    active_slaves: list[int] = field(default_factory=list)

    def check(self) -> None:
        if not 1 <= len(self.active_slaves) <= MAX_ACTIVE_SLAVES:
            raise PiconetError(
                f"a piconet needs 1 to {MAX_ACTIVE_SLAVES} active slaves, got {len(self.active_slaves)}"
            )
        if self.master in self.active_slaves:
            raise PiconetError("master cannot also be an active slave")
        if len(set(self.active_slaves)) != len(self.active_slaves):
            raise PiconetError("duplicate slave")

    def members(self) -> set[int]:
        return {self.master, *self.active_slaves}

    def add_slave(self, slave: int) -> None:
        candidate = Piconet(self.master, [*self.active_slaves, slave])
        candidate.check()
        self.active_slaves.append(slave)

    def remove_slave(self, slave: int) -> None:
        if slave not in self.active_slaves:
            raise PiconetError(f"{format_addr(slave)} is not an active slave")
        if len(self.active_slaves) == 1:
            raise PiconetError("cannot remove the last slave; tear the piconet down instead")
        self.active_slaves.remove(slave)


class SimNetwork:
    """Single-threaded simulated medium shared by a set of devices."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = rng_seed
        self.devices: dict[int, object] = {}
        self.piconets: list[Piconet] = []
        self.interceptors: list[Interceptor] = []
        self.event_queue: deque[ChannelMessage] = deque()
        self.log: list[DeliveryRecord] = []
        self.rounds = 0
        self._inboxes: dict[int, deque[ChannelMessage]] = {}
        self._next_seq = 1
        self._overlay = False

    # -- topology ------------------------------------------------------

    def add_device(self, device) -> None:
        addr = device.bd_addr
        if addr in self.devices or addr == LEDGER_OVERLAY:
            raise NetworkError(f"address {format_addr(addr)} already registered")
        self.devices[addr] = device
        self._inboxes[addr] = deque()

    def enable_overlay(self) -> None:
        """Register the ledger overlay endpoint (see :data:`LEDGER_OVERLAY`)."""
        self._overlay = True
        self._inboxes.setdefault(LEDGER_OVERLAY, deque())

    def build_piconet(self, master: int, slaves: Iterable[int]) -> Piconet:
        slaves = list(slaves)
        for addr in (master, *slaves):
            if addr not in self.devices:
                raise PiconetError(f"unregistered device {format_addr(addr)}")
        piconet = Piconet(master, slaves)
        piconet.check()
        self.piconets.append(piconet)
        return piconet

    def teardown(self, piconet: Piconet) -> None:
        self.piconets.remove(piconet)

    def share_piconet(self, a: int, b: int) -> bool:
        return any({a, b} <= p.members() for p in self.piconets)

    def _registered(self, addr: int) -> bool:
        return addr in self.devices or (self._overlay and addr == LEDGER_OVERLAY)

    # -- traffic -------------------------------------------------------

    def add_interceptor(self, hook: Interceptor) -> None:
        self.interceptors.append(hook)

    def send(self, sender: int, receiver: int, kind: MessageKind, body: bytes) -> ChannelMessage:
        kind = MessageKind(kind)
        for addr in (sender, receiver):
            if not self._registered(addr):
                raise NetworkError(f"unregistered endpoint {format_addr(addr)}")
        if kind in OVERLAY_KINDS:
            if receiver != LEDGER_OVERLAY:
                raise NetworkError("ledger overlay traffic must be addressed to the overlay endpoint")
        elif not self.share_piconet(sender, receiver):
            raise NetworkError(f"{format_addr(sender)} and {format_addr(receiver)} share no piconet")
        msg = ChannelMessage(sender, receiver, kind, bytes(body), self._next_seq)
        self._next_seq += 1
        self.event_queue.append(msg)
        return msg

    def step(self) -> int:
        """Deliver every queued message; returns how many reached a receiver."""
        self.rounds += 1
        delivered = 0
        pending, self.event_queue = self.event_queue, deque()
        for original in pending:
            msg: Optional[ChannelMessage] = original
            for hook in self.interceptors:
                msg = hook(msg)
                if msg is None:
                    break
            self.log.append(
                DeliveryRecord(
                    original.sequence, original.sender, original.receiver, original.kind,
                    original.body, None if msg is None else msg.body,
                )
            )
            if msg is not None:
                self._inboxes[original.receiver].append(replace(original, body=msg.body))
                delivered += 1
        return delivered

    def advance_round(self) -> None:
        """An idle round (used to account for consensus latency)."""
        self.rounds += 1

    def receive(self, receiver: int, kind: MessageKind) -> bytes:
        inbox = self._inboxes[receiver]
        for msg in inbox:
            if msg.kind == kind:
                inbox.remove(msg)
                return msg.body
        raise ChannelTimeout(f"{format_addr(receiver)} timed out waiting for {MessageKind(kind).name}")

    def exchange(self, sender: int, receiver: int, kind: MessageKind, body: bytes) -> bytes:
        """Send one message, run a delivery round, and hand the body to the receiver."""
        self.send(sender, receiver, kind, body)
        self.step()
        return self.receive(receiver, kind)

    def export_transcript(self) -> str:
        """One line per delivery: ``seq sender receiver kind hex_body fate``.

        ``fate`` is ``=`` (delivered unchanged), ``-`` (dropped) or the hex
        of the rewritten body; ``''`` stands for an empty byte string.
        """
        return "".join(record.to_line() + "\n" for record in self.log)


def parse_transcript(text: str) -> list[DeliveryRecord]:
    return [DeliveryRecord.from_line(line) for line in text.splitlines() if line.strip()]
