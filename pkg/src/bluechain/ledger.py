"""Private hash-chained ledger with majority-vote commits.

Canonical block preimage (frozen)::

    index (8, BE) || prev_hash (32) || sender (6) || receiver (6)
      || kind (1) || seq (8, BE) || len(payload) (8, BE) || payload

``block_hash = SHA-256(preimage)``. The genesis block has index 0, an
all-zero ``prev_hash``, an all-zero header and an empty payload.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .crypto_core import DIGEST_LEN, addr_bytes, digest

ZERO_HASH = bytes(DIGEST_LEN)


class LedgerError(ValueError):
    pass


class DuplicateMember(LedgerError):
    pass


class UnregisteredMember(LedgerError):
    pass


@dataclass(frozen=True)
class PayloadHeader:
    sender: int
    receiver: int
    msg_kind: int
    seq: int

    def encode(self) -> bytes:
        return (
            addr_bytes(self.sender)
            + addr_bytes(self.receiver)
            + int(self.msg_kind).to_bytes(1, "big")
            + self.seq.to_bytes(8, "big")
        )


GENESIS_HEADER = PayloadHeader(0, 0, 0, 0)


def block_preimage(index: int, prev_hash: bytes, header: PayloadHeader, payload: bytes) -> bytes:
    return (
        index.to_bytes(8, "big")
        + bytes(prev_hash)
        + header.encode()
        + len(payload).to_bytes(8, "big")
        + bytes(payload)
    )


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    header: PayloadHeader
    payload: bytes
    block_hash: bytes

    @classmethod
    def create(cls, index: int, prev_hash: bytes, header: PayloadHeader, payload: bytes) -> "Block":
        payload = bytes(payload)
        return cls(index, bytes(prev_hash), header, payload, digest(block_preimage(index, prev_hash, header, payload)))

    def hash_ok(self) -> bool:
        try:
            preimage = block_preimage(self.index, self.prev_hash, self.header, self.payload)
        except (OverflowError, ValueError):
            return False
        return len(self.prev_hash) == DIGEST_LEN and digest(preimage) == self.block_hash

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "sender": f"{self.header.sender:012x}",
            "receiver": f"{self.header.receiver:012x}",
            "kind": int(self.header.msg_kind),
            "seq": self.header.seq,
            "payload": self.payload.hex(),
            "block_hash": self.block_hash.hex(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Block":
        header = PayloadHeader(int(rec["sender"], 16), int(rec["receiver"], 16), int(rec["kind"]), int(rec["seq"]))
        return cls(
            int(rec["index"]), bytes.fromhex(rec["prev_hash"]), header,
            bytes.fromhex(rec["payload"]), bytes.fromhex(rec["block_hash"]),
        )

    def encode(self) -> bytes:
        """Wire form used on the ledger overlay."""
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        try:
            return cls.from_record(json.loads(data))
        except (ValueError, KeyError, TypeError) as exc:
            raise LedgerError(f"undecodable block: {exc}") from exc


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def copy(self) -> "Chain":
        return Chain(list(self.blocks))


@dataclass
class MemberRegistry:
    members: dict[int, bytes] = field(default_factory=dict)

    def __contains__(self, member: int) -> bool:
        return member in self.members

    def key_of(self, member: int) -> bytes:
        try:
            return self.members[member]
        except KeyError:
            raise UnregisteredMember(f"{member:012x} is not a registered member") from None


def register_member(registry: MemberRegistry, member: int, public_key: bytes) -> None:
    if member in registry.members:
        raise DuplicateMember(f"{member:012x} is already registered")
    registry.members[member] = bytes(public_key)


def new_chain() -> Chain:
    return Chain([Block.create(0, ZERO_HASH, GENESIS_HEADER, b"")])


def _check_endpoints(header: PayloadHeader, registry: MemberRegistry) -> None:
    for member in (header.sender, header.receiver):
        if member not in registry:
            raise UnregisteredMember(f"{member:012x} is not a registered member")


def propose_block(chain: Chain, header: PayloadHeader, ciphertext: bytes, registry: MemberRegistry) -> Block:
    """Build the next block for ``chain``; appending is left to consensus."""
    _check_endpoints(header, registry)
    return Block.create(len(chain), chain.tip.block_hash, header, ciphertext)


def accepts(chain: Chain, block: Block, registry: MemberRegistry) -> bool:
    """A replica's vote: linkage, hash correctness, registered endpoints."""
    if block.index != len(chain) or block.prev_hash != chain.tip.block_hash or not block.hash_ok():
        return False
    return block.header.sender in registry and block.header.receiver in registry


def consensus_commit(replicas: list[Chain], block: Block, registry: MemberRegistry,
                     faulty_voters: Iterable[int] = ()) -> bool:
    """Majority-vote commit across replica nodes.

    Replica ``i`` votes yes iff it is not listed in ``faulty_voters`` (crashed
    or refusing) and its own validation accepts the block. On commit the
    block is appended to every replica whose local chain it extends.
    """
    faulty = set(faulty_voters)
    votes = sum(1 for i, replica in enumerate(replicas) if i not in faulty and accepts(replica, block, registry))
    if 2 * votes <= len(replicas):
        return False
    for replica in replicas:
        if accepts(replica, block, registry):
            replica.blocks.append(block)
    return True


def validate_chain(chain: Chain) -> tuple[bool, Optional[int]]:
    """Recompute linkage and hashes; returns ``(valid, first_invalid_index)``."""
    for i, block in enumerate(chain.blocks):
        if block.index != i or not block.hash_ok():
            return False, i
        expected_prev = ZERO_HASH if i == 0 else chain.blocks[i - 1].block_hash
        if block.prev_hash != expected_prev:
            return False, i
        if i == 0 and (block.header != GENESIS_HEADER or block.payload):
            return False, 0
    if not chain.blocks:
        return False, 0
    return True, None


def read_blocks(chain: Chain, receiver: Optional[int] = None) -> list[Block]:
    if receiver is None:
        return list(chain.blocks)
    return [b for b in chain.blocks[1:] if b.header.receiver == receiver]


def export_chain(chain: Chain) -> str:
    """JSON Lines, one block per line, stored fields as-is (no recomputation)."""
    return "".join(json.dumps(b.to_record(), sort_keys=True) + "\n" for b in chain.blocks)


def import_chain(text: str) -> Chain:
    return Chain([Block.from_record(json.loads(line)) for line in text.splitlines() if line.strip()])
