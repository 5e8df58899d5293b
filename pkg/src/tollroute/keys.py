"""Node identity keys.

Each node holds one Ed25519 keypair used both for forwarding-proof chain
links and for channel-update signatures.  Key derivation is deterministic
from a seed so simulation runs are reproducible; public keys are assumed
to be pre-distributed (the key directory is a plain address-to-key map).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .wire import NodeAddr


@dataclass(frozen=True)
class KeyPair:
    """A node's signing identity."""

    owner: NodeAddr
    public: bytes
    _private: Ed25519PrivateKey = field(repr=False, compare=False)

    @classmethod
    def from_seed(cls, owner: NodeAddr, seed: bytes) -> "KeyPair":
        """Derive the node's keypair from an arbitrary seed string."""
        material = hashlib.sha256(b"tollroute-key:" + seed + owner.octets).digest()
        private = Ed25519PrivateKey.from_private_bytes(material)
        public = private.public_key().public_bytes_raw()
        return cls(owner, public, private)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """True when signature is a valid Ed25519 signature by public over
    message.  Malformed keys or signatures simply verify false."""
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


KeyDirectory = dict[NodeAddr, bytes]
