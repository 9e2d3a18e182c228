"""Independent re-implementation of the canonical encodings.

Uses only hashlib/json and never imports the package, so golden vectors
and exported chains can be cross-checked against it.

    python tests/oracle.py vectors            # print KDF golden vectors
    python tests/oracle.py chain FILE.jsonl   # verify an exported chain
"""
import hashlib
import json
import sys


def sha(data):
    return hashlib.sha256(data).digest()


def a6(addr):
    return addr.to_bytes(6, "big")


def init_key(in_rand, addr, pin):
    return sha(b"INIT" + in_rand + a6(addr) + bytes([len(pin)]) + pin.encode())[:16]


def link_key(lk_rand, addr):
    return sha(b"LINK" + lk_rand + a6(addr))[:16]


def sres(au_rand, addr, k_link):
    return sha(b"AUTH" + au_rand + a6(addr) + k_link)[:4]


def enc_key(k_link, cof, en_rand, entropy):
    full = sha(b"ENCR" + k_link + cof + en_rand)[:16]
    return full[:entropy] + bytes(16 - entropy)


def keystream_block(k_enc, counter):
    return sha(k_enc + counter.to_bytes(8, "big"))


def block_hash(rec):
    payload = bytes.fromhex(rec["payload"])
    pre = (
        rec["index"].to_bytes(8, "big")
        + bytes.fromhex(rec["prev_hash"])
        + bytes.fromhex(rec["sender"])
        + bytes.fromhex(rec["receiver"])
        + rec["kind"].to_bytes(1, "big")
        + rec["seq"].to_bytes(8, "big")
        + len(payload).to_bytes(8, "big")
        + payload
    )
    return sha(pre).hex()


def verify_chain(lines):
    """Return a list of (index, problem) for every record that fails."""
    problems = []
    prev = "00" * 32
    for i, line in enumerate(l for l in lines if l.strip()):
        rec = json.loads(line)
        if rec["index"] != i:
            problems.append((i, "index"))
        if rec["prev_hash"] != prev:
            problems.append((i, "linkage"))
        if block_hash(rec) != rec["block_hash"]:
            problems.append((i, "hash"))
        prev = rec["block_hash"]
    return problems


Z16 = bytes(16)
Z12 = bytes(12)
SEQ16 = bytes(range(16))
SEQ12 = bytes(range(100, 112))


def golden_vectors():
    """Deterministic KDF vectors over fixed inputs."""
    k_link = link_key(SEQ16, 0x0123456789AB)
    return [
        {"op": "init", "in_rand": Z16.hex(), "addr": 0, "pin": "0000", "out": init_key(Z16, 0, "0000").hex()},
        {"op": "init", "in_rand": Z16.hex(), "addr": 0, "pin": "0001", "out": init_key(Z16, 0, "0001").hex()},
        {"op": "init", "in_rand": SEQ16.hex(), "addr": 0x0123456789AB, "pin": "1234",
         "out": init_key(SEQ16, 0x0123456789AB, "1234").hex()},
        {"op": "link", "lk_rand": Z16.hex(), "addr": 0, "out": link_key(Z16, 0).hex()},
        {"op": "link", "lk_rand": SEQ16.hex(), "addr": 0x0123456789AB, "out": k_link.hex()},
        {"op": "link", "lk_rand": SEQ16.hex(), "addr": 0x0123456789AC, "out": link_key(SEQ16, 0x0123456789AC).hex()},
        {"op": "sres", "au_rand": Z16.hex(), "addr": 0, "k_link": Z16.hex(), "out": sres(Z16, 0, Z16).hex()},
        {"op": "sres", "au_rand": SEQ16.hex(), "addr": 0x0123456789AB, "k_link": k_link.hex(),
         "out": sres(SEQ16, 0x0123456789AB, k_link).hex()},
        {"op": "enc", "k_link": Z16.hex(), "cof": Z12.hex(), "en_rand": Z16.hex(), "entropy": 16,
         "out": enc_key(Z16, Z12, Z16, 16).hex()},
        {"op": "enc", "k_link": k_link.hex(), "cof": SEQ12.hex(), "en_rand": SEQ16.hex(), "entropy": 1,
         "out": enc_key(k_link, SEQ12, SEQ16, 1).hex()},
        {"op": "keystream", "k_enc": Z16.hex(), "counter": 0, "out": keystream_block(Z16, 0).hex()},
        {"op": "keystream", "k_enc": k_link.hex(), "counter": 7, "out": keystream_block(k_link, 7).hex()},
    ]


if __name__ == "__main__":
    if sys.argv[1:2] == ["vectors"]:
        print(json.dumps(golden_vectors(), indent=1))
    elif sys.argv[1:2] == ["chain"]:
        with open(sys.argv[2]) as fh:
            found = verify_chain(fh.read().splitlines())
        print("ok" if not found else found)
        sys.exit(1 if found else 0)
    else:
        print(__doc__)
