"""Deterministic primitives and the pairing key-derivation functions.

Every KDF is a truncated SHA-256 over a canonical preimage::

    tag (4 ASCII bytes) || fields in declaration order, big-endian,
    addresses as 6 bytes, PINs prefixed with a 1-byte length

Tags: ``INIT`` (initialization key), ``LINK`` (link key), ``AUTH`` (SRES),
``ENCR`` (encryption key). The keystream block ``i`` of :func:`stream_encrypt`
is ``SHA-256(k_enc (16 bytes) || counter_i (8 bytes))`` without a tag.
These encodings are frozen; golden vectors in the test-suite depend on them.
"""
from __future__ import annotations

import functools
import hashlib
import hmac
import random
from dataclasses import dataclass

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

KEY_LEN = 16
NONCE_LEN = 16
OFFSET_LEN = 12
SRES_LEN = 4
ADDR_LEN = 6
DIGEST_LEN = 32
MAX_ADDR = (1 << 48) - 1

SUPPORTED_MODULI = (1024, 2048)
PUBLIC_EXPONENT = 65537


class DecryptionError(ValueError):
    """Ciphertext does not decrypt under the given private key."""


class PlaintextTooLarge(ValueError):
    pass


class UnsupportedKeySize(ValueError):
    pass


def _check_len(name: str, value: bytes, n: int) -> bytes:
    value = bytes(value)
    if len(value) != n:
        raise ValueError(f"{name} must be {n} bytes, got {len(value)}")
    return value


def addr_bytes(bd_addr: int) -> bytes:
    """Big-endian 6-byte encoding of a 48-bit device address."""
    if not 0 <= bd_addr <= MAX_ADDR:
        raise ValueError(f"address out of 48-bit range: {bd_addr:#x}")
    return bd_addr.to_bytes(ADDR_LEN, "big")


def format_addr(bd_addr: int) -> str:
    return ":".join(f"{b:02X}" for b in addr_bytes(bd_addr))


@dataclass(frozen=True)
class KeyMaterial:
    """A 128-bit symmetric key with a declared entropy of 1..16 bytes.

    Bytes past ``declared_entropy_bytes`` must be zero.
    """

    bytes: bytes
    declared_entropy_bytes: int = KEY_LEN

    def __post_init__(self):
        object.__setattr__(self, "bytes", _check_len("key", self.bytes, KEY_LEN))
        if not 1 <= self.declared_entropy_bytes <= KEY_LEN:
            raise ValueError("declared entropy must be in [1, 16] bytes")
        if any(self.bytes[self.declared_entropy_bytes:]):
            raise ValueError("bytes beyond the declared entropy must be zero")

    def __bytes__(self) -> bytes:
        return self.bytes

    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class AsymKeyPair:
    public_key: bytes  # DER SubjectPublicKeyInfo
    private_key: bytes  # DER PKCS#8
    modulus_bits: int


class SeededStreams:
    """Named, independent random streams derived from one root seed.

    Each stream is a :class:`random.Random` seeded with
    ``SHA-256(root seed || name)``, so adding draws to one stream never
    shifts the values another stream produces.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            material = self.seed.to_bytes(16, "big", signed=True) + name.encode()
            rng = random.Random(int.from_bytes(hashlib.sha256(material).digest(), "big"))
            self._streams[name] = rng
        return rng

    def bytes(self, name: str, n: int) -> bytes:
        return self.stream(name).randbytes(n)

    def subseed(self, name: str) -> int:
        return self.stream(name).getrandbits(64)


def digest(data: bytes) -> bytes:
    return hashlib.sha256(bytes(data)).digest()


def xor_combine(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


def _pin_field(pin: str) -> bytes:
    if not isinstance(pin, str) or not 1 <= len(pin) <= 16 or not pin.isascii() or not pin.isdigit():
        raise ValueError("PIN must be 1-16 ASCII digits")
    return bytes([len(pin)]) + pin.encode("ascii")


def derive_init_key(in_rand: bytes, bd_addr: int, pin: str) -> KeyMaterial:
    preimage = b"INIT" + _check_len("IN_RAND", in_rand, NONCE_LEN) + addr_bytes(bd_addr) + _pin_field(pin)
    return KeyMaterial(digest(preimage)[:KEY_LEN])


def derive_link_key(lk_rand: bytes, bd_addr: int) -> KeyMaterial:
    preimage = b"LINK" + _check_len("LK_RAND", lk_rand, NONCE_LEN) + addr_bytes(bd_addr)
    return KeyMaterial(digest(preimage)[:KEY_LEN])


def compute_sres(au_rand: bytes, claimant_addr: int, k_link: KeyMaterial | bytes) -> bytes:
    """Claimant's 4-byte response to an authentication challenge."""
    preimage = (
        b"AUTH"
        + _check_len("AU_RAND", au_rand, NONCE_LEN)
        + addr_bytes(claimant_addr)
        + _check_len("link key", bytes(k_link), KEY_LEN)
    )
    return digest(preimage)[:SRES_LEN]


def reduce_entropy(key: bytes, entropy_bytes: int) -> KeyMaterial:
    if not 1 <= entropy_bytes <= KEY_LEN:
        raise ValueError(f"entropy must be 1..16 bytes, got {entropy_bytes}")
    return KeyMaterial(key[:entropy_bytes] + bytes(KEY_LEN - entropy_bytes), entropy_bytes)


def derive_enc_key(k_link: KeyMaterial | bytes, cof: bytes, en_rand: bytes, entropy_bytes: int) -> KeyMaterial:
    if not 1 <= entropy_bytes <= KEY_LEN:
        raise ValueError(f"entropy must be 1..16 bytes, got {entropy_bytes}")
    preimage = (
        b"ENCR"
        + _check_len("link key", bytes(k_link), KEY_LEN)
        + _check_len("COF", cof, OFFSET_LEN)
        + _check_len("EN_RAND", en_rand, NONCE_LEN)
    )
    return reduce_entropy(digest(preimage)[:KEY_LEN], entropy_bytes)


def keystream(k_enc: KeyMaterial | bytes, counter_start: int, length: int) -> bytes:
    key = _check_len("encryption key", bytes(k_enc), KEY_LEN)
    out = bytearray()
    counter = counter_start
    while len(out) < length:
        out += hashlib.sha256(key + (counter % (1 << 64)).to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def stream_encrypt(k_enc: KeyMaterial | bytes, counter_start: int, payload: bytes) -> bytes:
    """XOR ``payload`` with the hash keystream; applying it twice is the identity."""
    payload = bytes(payload)
    return xor_combine(payload, keystream(k_enc, counter_start, len(payload)))


# -- asymmetric ------------------------------------------------------------


def generate_keypair(modulus_bits: int, rng_seed: int) -> AsymKeyPair:
    """Seeded RSA keypair generation (e = 65537)."""
    if modulus_bits not in SUPPORTED_MODULI:
        raise UnsupportedKeySize(f"unsupported modulus size {modulus_bits}; use one of {SUPPORTED_MODULI}")
    return _generate_keypair(modulus_bits, rng_seed)


@functools.lru_cache(maxsize=512)
def _generate_keypair(modulus_bits: int, rng_seed: int) -> AsymKeyPair:
    rng = random.Random(rng_seed)
    half = modulus_bits // 2

    def prime() -> int:
        while True:
            # top two bits set so that p*q has exactly modulus_bits bits
            start = rng.getrandbits(half) | (0b11 << (half - 2))
            p = int(gmpy2.next_prime(start))
            if p.bit_length() == half and (p - 1) % PUBLIC_EXPONENT != 0:
                return p

    while True:
        p, q = prime(), prime()
        if p != q and (p * q).bit_length() == modulus_bits:
            break
    if p < q:
        p, q = q, p
    e = PUBLIC_EXPONENT
    d = pow(e, -1, (p - 1) * (q - 1) // gmpy2.gcd(p - 1, q - 1))
    d = int(d)
    numbers = rsa.RSAPrivateNumbers(
        p=p, q=q, d=d,
        dmp1=d % (p - 1), dmq1=d % (q - 1), iqmp=pow(q, -1, p),
        public_numbers=rsa.RSAPublicNumbers(e, p * q),
    )
    key = numbers.private_key(unsafe_skip_rsa_key_validation=True)
    private_der = key.private_bytes(
        serialization.Encoding.DER, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )
    public_der = key.public_key().public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    return AsymKeyPair(public_der, private_der, modulus_bits)


@functools.lru_cache(maxsize=512)
def _load_public(public_key: bytes) -> rsa.RSAPublicKey:
    key = serialization.load_der_public_key(public_key)
    if not isinstance(key, rsa.RSAPublicKey):
        raise ValueError("not an RSA public key")
    return key


@functools.lru_cache(maxsize=512)
def _load_private(private_key: bytes) -> rsa.RSAPrivateKey:
    key = serialization.load_der_private_key(private_key, password=None, unsafe_skip_rsa_key_validation=True)
    if not isinstance(key, rsa.RSAPrivateKey):
        raise ValueError("not an RSA private key")
    return key


def _mgf1(seed: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:length])


def oaep_chunk_limit(modulus_bytes: int) -> int:
    return modulus_bytes - 2 * DIGEST_LEN - 2


def _oaep_encrypt(message: bytes, label: bytes, n: int, e: int, k: int, seed: bytes) -> bytes:
    # RSAES-OAEP (RFC 8017 7.1.1), SHA-256 / MGF1-SHA-256, caller-supplied seed
    ps = bytes(k - len(message) - 2 * DIGEST_LEN - 2)
    db = hashlib.sha256(label).digest() + ps + b"\x01" + message
    masked_db = xor_combine(db, _mgf1(seed, len(db)))
    masked_seed = xor_combine(seed, _mgf1(masked_db, DIGEST_LEN))
    em = b"\x00" + masked_seed + masked_db
    return pow(int.from_bytes(em, "big"), e, n).to_bytes(k, "big")


def _oaep_decrypt(chunk: bytes, label: bytes, key: rsa.RSAPrivateKey, k: int) -> bytes:
    nums = key.private_numbers()
    c = int.from_bytes(chunk, "big")
    if c >= nums.public_numbers.n:
        raise DecryptionError("ciphertext representative out of range")
    m1 = pow(c, nums.dmp1, nums.p)
    m2 = pow(c, nums.dmq1, nums.q)
    m = m2 + nums.q * ((nums.iqmp * (m1 - m2)) % nums.p)
    em = m.to_bytes(k, "big")
    masked_seed, masked_db = em[1:1 + DIGEST_LEN], em[1 + DIGEST_LEN:]
    seed = xor_combine(masked_seed, _mgf1(masked_db, DIGEST_LEN))
    db = xor_combine(masked_db, _mgf1(seed, len(masked_db)))
    l_hash, rest = db[:DIGEST_LEN], db[DIGEST_LEN:]
    sep = rest.find(b"\x01")
    if (
        em[0] != 0
        or not hmac.compare_digest(l_hash, hashlib.sha256(label).digest())
        or sep < 0
        or any(rest[:sep])
    ):
        raise DecryptionError("OAEP decoding failed")
    return rest[sep + 1:]


def _chunk_label(index: int, total: int) -> bytes:
    return b"bluechain-envelope" + index.to_bytes(4, "big") + total.to_bytes(4, "big")


def envelope_encrypt(
    plaintext: bytes,
    public_key: bytes,
    rng: random.Random | None = None,
    chunked: bool = True,
) -> bytes:
    """Encrypt ``plaintext`` to the holder of ``public_key``.

    Layout: ``chunk count (4 bytes) || chunk_0 || ... || chunk_{n-1}``, every
    chunk one RSA-OAEP block. The OAEP label binds each chunk to its
    position and the total count, so reordered or truncated envelopes fail
    to decrypt. An empty plaintext still yields one chunk. OAEP seeds come
    from ``rng`` (system randomness when omitted).
    """
    plaintext = bytes(plaintext)
    pub = _load_public(bytes(public_key))
    nums = pub.public_numbers()
    k = (pub.key_size + 7) // 8
    limit = oaep_chunk_limit(k)
    if len(plaintext) > limit and not chunked:
        raise PlaintextTooLarge(f"{len(plaintext)} bytes exceeds the {limit}-byte block limit")
    pieces = [plaintext[i:i + limit] for i in range(0, len(plaintext), limit)] or [b""]
    draw = rng.randbytes if rng is not None else random.SystemRandom().randbytes
    total = len(pieces)
    out = [total.to_bytes(4, "big")]
    for i, piece in enumerate(pieces):
        out.append(_oaep_encrypt(piece, _chunk_label(i, total), nums.n, nums.e, k, draw(DIGEST_LEN)))
    return b"".join(out)


def envelope_decrypt(ciphertext: bytes, private_key: bytes) -> bytes:
    ciphertext = bytes(ciphertext)
    try:
        key = _load_private(bytes(private_key))
    except ValueError as exc:
        raise DecryptionError(f"unusable private key: {exc}") from exc
    k = (key.key_size + 7) // 8
    if len(ciphertext) < 4:
        raise DecryptionError("truncated envelope")
    total = int.from_bytes(ciphertext[:4], "big")
    body = ciphertext[4:]
    if total < 1 or len(body) != total * k:
        raise DecryptionError("envelope length does not match chunk count")
    return b"".join(
        _oaep_decrypt(body[i * k:(i + 1) * k], _chunk_label(i, total), key, k) for i in range(total)
    )


def sign(message: bytes, private_key: bytes) -> bytes:
    """Deterministic RSASSA-PKCS1-v1_5 / SHA-256 signature."""
    return _load_private(bytes(private_key)).sign(bytes(message), padding.PKCS1v15(), hashes.SHA256())


def verify_signature(message: bytes, signature: bytes, public_key: bytes) -> bool:
    try:
        _load_public(bytes(public_key)).verify(bytes(signature), bytes(message), padding.PKCS1v15(), hashes.SHA256())
    except (InvalidSignature, ValueError):
        return False
    return True
