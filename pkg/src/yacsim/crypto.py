"""
Signature schemes behind one interface.

``SimulatedCrypto`` is a keyed-digest scheme: a signature is a blake2b MAC under
the signer's secret, and a shared keyring maps each public key to its secret so
verification only needs the signer's public key. Nothing outside the keyring can
produce a valid signature, which is all the simulator requires.

``Ed25519Crypto`` fills the real-signature slot using pycryptodome and is only
imported on demand.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

from yacsim.model import PeerId, Signature

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KeyPair:
    peer: PeerId
    secret: bytes = field(repr=False)


class CryptoProvider(ABC):
    """Pluggable signing boundary used by clients, peers and verifiers."""

    name: str = "abstract"

    @abstractmethod
    def generate_keypair(self, display_name: str, seed: bytes) -> KeyPair:
        """Deterministically derive a key pair from ``seed``."""
        raise NotImplementedError("Subclasses must implement this method")

    @abstractmethod
    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        raise NotImplementedError("Subclasses must implement this method")

    @abstractmethod
    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        """Return True iff ``sig`` was made by ``peer`` over exactly ``payload``.

        Malformed signatures verify as False; they are never an error.
        """
        raise NotImplementedError("Subclasses must implement this method")


class SimulatedCrypto(CryptoProvider):
    """Fast deterministic keyed-digest signatures for simulation."""

    name = "simulated"
    SIGNATURE_SIZE = 32

    def __init__(self):
        self._keyring: dict[bytes, bytes] = {}

    def generate_keypair(self, display_name: str, seed: bytes) -> KeyPair:
        secret = hashlib.blake2b(seed, digest_size=32, person=b"yac-secret").digest()
        public = hashlib.blake2b(secret, digest_size=32, person=b"yac-public").digest()
        self._keyring[public] = secret
        return KeyPair(PeerId(public, display_name), secret)

    def register(self, key: KeyPair) -> None:
        """Make a key pair created by another provider instance verifiable here."""
        self._keyring[key.peer.public_key] = key.secret

    def _mac(self, secret: bytes, payload: bytes) -> bytes:
        return hashlib.blake2b(payload, key=secret, digest_size=self.SIGNATURE_SIZE).digest()

    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        return Signature(self._mac(key.secret, payload), key.peer)

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        if sig.signer != peer:
            return False
        secret = self._keyring.get(peer.public_key)
        if secret is None or len(sig.data) != self.SIGNATURE_SIZE:
            return False
        return hmac.compare_digest(self._mac(secret, payload), sig.data)


class Ed25519Crypto(CryptoProvider):
    """Ed25519 (RFC 8032) signatures through pycryptodome."""

    name = "ed25519"

    def __init__(self):
        try:
            from Crypto.Signature import eddsa
        except ImportError as e:
            raise RuntimeError(
                "Ed25519Crypto needs pycryptodome. Install the 'ed25519' extra: pip install yacsim[ed25519]"
            ) from e
        self._eddsa = eddsa

    def generate_keypair(self, display_name: str, seed: bytes) -> KeyPair:
        secret = hashlib.blake2b(seed, digest_size=32, person=b"yac-secret").digest()
        key = self._eddsa.import_private_key(secret)
        public = key.public_key().export_key(format="raw")
        return KeyPair(PeerId(public, display_name), secret)

    def sign(self, key: KeyPair, payload: bytes) -> Signature:
        signer = self._eddsa.new(self._eddsa.import_private_key(key.secret), "rfc8032")
        return Signature(signer.sign(payload), key.peer)

    def verify(self, peer: PeerId, payload: bytes, sig: Signature) -> bool:
        if sig.signer != peer:
            return False
        try:
            public = self._eddsa.import_public_key(peer.public_key)
            self._eddsa.new(public, "rfc8032").verify(payload, sig.data)
            return True
        except ValueError:
            return False


def create_crypto(name: str) -> CryptoProvider:
    if name == SimulatedCrypto.name:
        return SimulatedCrypto()
    if name == Ed25519Crypto.name:
        return Ed25519Crypto()
    raise ValueError(f"Unknown crypto provider: {name}")
